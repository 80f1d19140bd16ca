#include "ape/explain.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

#include "ape/errors.hpp"
#include "text.hpp"

namespace ape {

namespace {

Matrix to_matrix(const ad::Tensor& t, std::span<const double> values) {
  return Matrix{t.rows(), t.cols(), std::vector<double>(values.begin(), values.end())};
}

void check_target(const Network& net, std::size_t target) {
  if (target >= net.num_classes()) {
    throw IndexError("target class " + std::to_string(target) + " out of range for " +
                     std::to_string(net.num_classes()) + " classes");
  }
}

// Gradient of the cross entropy for target w.r.t. every input coordinate.
std::vector<double> input_gradients(const Network& net, const PointCloud& cloud, std::size_t target) {
  check_target(net, target);
  ad::Tape tape;
  auto out = net.forward(tape, cloud);
  auto loss = ad::softmax_cross_entropy(out.logits, target);
  auto g = tape.backward(loss);
  auto pg = g.of(out.points);
  return {pg.begin(), pg.end()};
}

double median(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

}  // namespace

FeaturePass feature_pass(const Network& net, const PointCloud& cloud, std::size_t target) {
  check_target(net, target);
  ad::Tape tape;
  auto out = net.forward(tape, cloud);
  auto score = ad::select(out.logits, target);
  auto g = tape.backward(score);

  FeaturePass pass;
  pass.features = to_matrix(out.feature_maps, out.feature_maps.values());
  if (g.has(out.feature_maps)) {
    pass.gradients = to_matrix(out.feature_maps, g.of(out.feature_maps));
  } else {
    pass.gradients = Matrix{pass.features.rows, pass.features.cols,
                            std::vector<double>(pass.features.data.size(), 0.0)};
  }
  pass.association = std::move(out.association);
  auto lv = out.logits.values();
  pass.logits.assign(lv.begin(), lv.end());
  return pass;
}

Matrix feature_gradients(const Network& net, const PointCloud& cloud, std::size_t target) {
  return feature_pass(net, cloud, target).gradients;
}

std::vector<double> gap_weights(const Matrix& grads) {
  std::vector<double> alpha(grads.cols, 0.0);
  if (grads.rows == 0) return alpha;
  for (std::size_t r = 0; r < grads.rows; ++r)
    for (std::size_t k = 0; k < grads.cols; ++k) alpha[k] += grads.at(r, k);
  for (double& a : alpha) a /= static_cast<double>(grads.rows);
  return alpha;
}

PartialHeatmap partial_heatmap(const Matrix& features, std::span<const double> alpha,
                               std::span<const std::size_t> association) {
  if (association.size() != features.rows) {
    throw ContractError("association has " + std::to_string(association.size()) + " entries for " +
                        std::to_string(features.rows) + " feature rows");
  }
  if (alpha.size() != features.cols) {
    throw ContractError("alpha has " + std::to_string(alpha.size()) + " weights for " +
                        std::to_string(features.cols) + " feature maps");
  }
  PartialHeatmap piece;
  piece.explained_indices.assign(association.begin(), association.end());
  piece.neuron_values.resize(features.rows);
  for (std::size_t r = 0; r < features.rows; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < features.cols; ++k) s += alpha[k] * features.at(r, k);
    piece.neuron_values[r] = std::max(0.0, s);
  }
  return piece;
}

Heatmap assemble_heatmap(std::span<const PartialHeatmap> pieces, std::size_t n) {
  std::vector<double> raw(n, 0.0);
  std::vector<std::uint8_t> seen(n, 0);
  for (const auto& p : pieces) {
    if (p.neuron_values.size() != p.explained_indices.size()) throw ContractError("partial heatmap length mismatch");
    for (std::size_t i = 0; i < p.explained_indices.size(); ++i) {
      const std::size_t idx = p.explained_indices[i];
      if (idx >= n) throw ContractError("explained index " + std::to_string(idx) + " out of range");
      if (seen[idx]) throw ContractError("point " + std::to_string(idx) + " explained twice");
      seen[idx] = 1;
      raw[idx] = p.neuron_values[i];
    }
  }
  return Heatmap::from_raw(raw);
}

InitialHeatmap initial_heatmap(const Network& net, const PointCloud& cloud, std::size_t target) {
  check_target(net, target);
  if (cloud.alive_count() == 0) throw PreconditionError("initial heatmap needs at least one alive point");

  InitialHeatmap result;
  PointCloud working = cloud;
  while (working.unexplained_alive_count() > 0) {
    auto pass = feature_pass(net, working, target);
    auto full = partial_heatmap(pass.features, gap_weights(pass.gradients), pass.association);
    ++result.iterations;

    // Rows sampled from already explained or dropped points carry no new information.
    PartialHeatmap fresh;
    for (std::size_t r = 0; r < full.explained_indices.size(); ++r) {
      const std::size_t idx = full.explained_indices[r];
      if (!working.alive(idx) || working.explained(idx)) continue;
      fresh.explained_indices.push_back(idx);
      fresh.neuron_values.push_back(full.neuron_values[r]);
    }
    if (fresh.explained_indices.empty()) {
      result.warnings.push_back("iteration " + std::to_string(result.iterations) + " explained no new point; " +
                                std::to_string(working.unexplained_alive_count()) + " points set to 0");
      break;
    }
    working = working.mark_explained(fresh.explained_indices).drop(fresh.explained_indices);
    result.pieces.push_back(std::move(fresh));
  }

  result.raw.assign(cloud.size(), 0.0);
  for (const auto& p : result.pieces)
    for (std::size_t i = 0; i < p.explained_indices.size(); ++i) result.raw[p.explained_indices[i]] = p.neuron_values[i];
  result.heatmap = assemble_heatmap(result.pieces, cloud.size());
  return result;
}

void ApeConfig::validate() const {
  if (lambda < 1) throw ConfigError("lambda must be >= 1");
  if (!weights.empty()) {
    if (weights.size() != lambda) {
      throw ConfigError("expected " + std::to_string(lambda) + " merge weights, got " + std::to_string(weights.size()));
    }
    for (double w : weights)
      if (!(w > 0.0) || !std::isfinite(w)) throw ConfigError("merge weights must be positive");
  }
}

std::size_t ApeConfig::drop_count(std::size_t n) const { return low_drop_count.value_or(n / lambda); }

ApeResult ape_explain(const Network& net, const PointCloud& cloud, const ApeConfig& cfg) {
  cfg.validate();
  ApeResult result;
  result.predicted = predict(net, cloud).label;
  result.target = cfg.target.value_or(result.predicted);
  check_target(net, result.target);

  const std::size_t n = cloud.size();
  const std::size_t n_low = cfg.drop_count(n);
  PointCloud current = cloud;
  std::vector<double> merged(n, 0.0);
  for (std::size_t i = 0; i < cfg.lambda; ++i) {
    if (current.alive_count() == 0) {
      result.warnings.push_back("outer iteration " + std::to_string(i + 1) + " has no alive point; heatmap is 0");
      result.initial.emplace_back(std::vector<double>(n, 0.0));
      result.inner_iterations.push_back(0);
      continue;
    }
    auto init = initial_heatmap(net, current, result.target);
    for (auto& w : init.warnings) result.warnings.push_back("outer iteration " + std::to_string(i + 1) + ": " + w);
    result.inner_iterations.push_back(init.iterations);

    const auto values = init.heatmap.values();
    for (std::size_t j = 0; j < n; ++j) merged[j] = std::max(merged[j], cfg.weight(i) * values[j]);

    std::vector<std::size_t> alive;
    for (std::size_t j = 0; j < n; ++j)
      if (current.alive(j)) alive.push_back(j);
    const std::size_t count = std::min(n_low, alive.size());
    std::stable_sort(alive.begin(), alive.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    alive.resize(count);
    current = current.drop(alive);
    result.initial.push_back(std::move(init.heatmap));
  }
  result.never_dropped = current.alive_count();

  const bool uniform = std::all_of(cfg.weights.begin(), cfg.weights.end(), [](double w) { return w == 1.0; });
  result.heatmap = uniform ? Heatmap(std::move(merged)) : Heatmap::from_raw(merged);
  return result;
}

Heatmap gradients_baseline(const Network& net, const PointCloud& cloud, std::size_t target) {
  const auto g = input_gradients(net, cloud, target);
  std::vector<double> score(cloud.size());
  for (std::size_t i = 0; i < score.size(); ++i)
    score[i] = std::sqrt(g[3 * i] * g[3 * i] + g[3 * i + 1] * g[3 * i + 1] + g[3 * i + 2] * g[3 * i + 2]);
  return Heatmap::from_raw(score);
}

Heatmap pcsn_baseline(const Network& net, const PointCloud& cloud, std::size_t target) {
  const auto g = input_gradients(net, cloud, target);
  const auto pts = cloud.points();
  Point3 med{};
  for (std::size_t d = 0; d < 3; ++d) {
    std::vector<double> coord(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) coord[i] = pts[i][d];
    med[d] = median(std::move(coord));
  }
  std::vector<double> score(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double dot = 0.0;
    for (std::size_t d = 0; d < 3; ++d) dot += (pts[i][d] - med[d]) * g[3 * i + d];
    score[i] = std::max(0.0, -dot);
  }
  return Heatmap::from_raw(score);
}

std::string to_string(ExplainMethod m) {
  switch (m) {
    case ExplainMethod::ape:
      return "ape";
    case ExplainMethod::gradients:
      return "gradients";
    case ExplainMethod::pcsn:
      return "pcsn";
  }
  return "?";
}

std::vector<std::string> explain_method_names() { return {"ape", "gradients", "pcsn"}; }

ExplainMethod parse_explain_method(const std::string& name) {
  if (name == "ape") return ExplainMethod::ape;
  if (name == "gradients") return ExplainMethod::gradients;
  if (name == "pcsn") return ExplainMethod::pcsn;
  throw ConfigError("unknown method '" + name + "' (valid: ape, gradients, pcsn)");
}

Explanation explain(const Network& net, const PointCloud& cloud, ExplainMethod method, const ApeConfig& cfg) {
  Explanation e;
  e.method = method;
  if (method == ExplainMethod::ape) {
    auto r = ape_explain(net, cloud, cfg);
    e.heatmap = std::move(r.heatmap);
    e.target = r.target;
    e.predicted = r.predicted;
    e.inner_iterations = std::move(r.inner_iterations);
    e.never_dropped = r.never_dropped;
    e.warnings = std::move(r.warnings);
    return e;
  }
  e.predicted = predict(net, cloud).label;
  e.target = cfg.target.value_or(e.predicted);
  e.heatmap = method == ExplainMethod::gradients ? gradients_baseline(net, cloud, e.target)
                                                 : pcsn_baseline(net, cloud, e.target);
  return e;
}

void save_heatmap_csv(const PointCloud& cloud, const Heatmap& heatmap, const std::filesystem::path& path) {
  if (heatmap.size() != cloud.size()) {
    throw ContractError("heatmap has " + std::to_string(heatmap.size()) + " values for " +
                        std::to_string(cloud.size()) + " points");
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write heatmap '" + path.string() + "'");
  out << "x,y,z,value\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.point(i);
    out << detail::format_real(p[0]) << ',' << detail::format_real(p[1]) << ',' << detail::format_real(p[2]) << ','
        << detail::format_real(heatmap[i]) << '\n';
  }
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Heatmap load_heatmap_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open heatmap '" + path.string() + "'");
  std::vector<double> values;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = detail::trim(raw);
    if (line.empty() || (line_no == 1 && line == "x,y,z,value")) continue;
    double fields[4] = {};
    std::size_t count = 0, start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      const auto field = detail::trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
      if (count == 4) throw ParseError("expected x,y,z,value", line_no);
      auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), fields[count]);
      if (field.empty() || ec != std::errc{} || ptr != field.data() + field.size()) {
        throw ParseError("malformed number '" + std::string(field) + "'", line_no);
      }
      ++count;
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
    if (count != 4) throw ParseError("expected x,y,z,value", line_no);
    const double v = fields[3];
    values.push_back(v);
  }
  if (values.empty()) throw PreconditionError("heatmap file '" + path.string() + "' is empty");
  return Heatmap(std::move(values));
}

}  // namespace ape
