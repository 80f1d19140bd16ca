#include "ape/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "ape/errors.hpp"

namespace ape {

std::string to_string(DropMode mode) { return mode == DropMode::high ? "high_drop" : "low_drop"; }

std::string short_label(DropMode mode) { return mode == DropMode::high ? "H.D." : "L.D."; }

std::vector<double> fraction_grid(std::size_t steps) {
  if (steps < 2) throw PreconditionError("a drop curve needs at least 2 steps, got " + std::to_string(steps));
  std::vector<double> f(steps);
  for (std::size_t i = 0; i < steps; ++i) f[i] = static_cast<double>(i) / static_cast<double>(steps - 1);
  return f;
}

std::vector<std::size_t> drop_order(const Heatmap& heatmap, DropMode mode) {
  std::vector<std::size_t> order(heatmap.size());
  std::iota(order.begin(), order.end(), 0);
  const auto v = heatmap.values();
  if (mode == DropMode::high) {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  } else {
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  }
  return order;
}

PointCloud drop_by_heatmap(const PointCloud& cloud, const Heatmap& heatmap, DropMode mode, std::size_t count) {
  if (heatmap.size() != cloud.size()) {
    throw ContractError("heatmap has " + std::to_string(heatmap.size()) + " values for " +
                        std::to_string(cloud.size()) + " points");
  }
  auto order = drop_order(heatmap, mode);
  order.resize(std::min(count, order.size()));
  return cloud.drop(order);
}

PdcCurve point_drop_curve(const Network& net, std::span<const PointCloud> clouds, std::span<const Heatmap> heatmaps,
                          DropMode mode, std::size_t steps) {
  if (heatmaps.size() != clouds.size()) {
    throw ContractError("got " + std::to_string(heatmaps.size()) + " heatmaps for " + std::to_string(clouds.size()) +
                        " clouds");
  }
  if (clouds.empty()) throw PreconditionError("drop curve over an empty cloud set");
  PdcCurve curve;
  curve.mode = mode;
  curve.fractions = fraction_grid(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    std::size_t correct = 0;
    for (std::size_t c = 0; c < clouds.size(); ++c) {
      if (!clouds[c].label()) throw ContractError("drop curves need labeled clouds");
      const std::size_t n = clouds[c].size();
      const std::size_t count = s * n / (steps - 1);
      const auto dropped = drop_by_heatmap(clouds[c], heatmaps[c], mode, count);
      correct += predict(net, dropped).label == *clouds[c].label();
    }
    curve.accuracies.push_back(static_cast<double>(correct) / static_cast<double>(clouds.size()));
  }
  return curve;
}

double auc(const PdcCurve& curve) {
  const auto& f = curve.fractions;
  const auto& a = curve.accuracies;
  if (f.size() < 2 || a.size() != f.size()) throw PreconditionError("AUC needs at least 2 aligned samples");
  double area = 0.0;
  for (std::size_t i = 1; i < f.size(); ++i) area += 0.5 * (a[i] + a[i - 1]) * (f[i] - f[i - 1]);
  const double span = f.back() - f.front();
  if (!(span > 0.0)) throw PreconditionError("AUC needs strictly increasing fractions");
  return area / span;
}

Heatmap random_heatmap(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return Heatmap::from_raw(v);
}

CurveBand curve_band(std::span<const PdcCurve> curves) {
  if (curves.empty()) throw PreconditionError("band over no curves");
  CurveBand band;
  band.fractions = curves.front().fractions;
  const std::size_t steps = band.fractions.size();
  band.mean.assign(steps, 0.0);
  band.sd.assign(steps, 0.0);
  for (const auto& c : curves) {
    if (c.fractions != band.fractions) throw ContractError("curves in a band must share the fraction grid");
    for (std::size_t i = 0; i < steps; ++i) band.mean[i] += c.accuracies[i];
  }
  const double count = static_cast<double>(curves.size());
  for (double& m : band.mean) m /= count;
  for (const auto& c : curves)
    for (std::size_t i = 0; i < steps; ++i) band.sd[i] += (c.accuracies[i] - band.mean[i]) * (c.accuracies[i] - band.mean[i]);
  for (double& s : band.sd) s = std::sqrt(s / count);
  return band;
}

bool bands_overlap(const CurveBand& a, const CurveBand& b) {
  if (a.fractions != b.fractions) throw ContractError("bands must share the fraction grid");
  for (std::size_t i = 0; i < a.fractions.size(); ++i) {
    if (a.mean[i] + a.sd[i] < b.mean[i] - b.sd[i]) return false;
    if (b.mean[i] + b.sd[i] < a.mean[i] - a.sd[i]) return false;
  }
  return true;
}

// ---- comparison -----------------------------------------------------------

void ComparisonTable::add(PdcCurve high, PdcCurve low) {
  if (high.mode != DropMode::high || low.mode != DropMode::low) throw ContractError("expected a high and a low curve");
  if (high.method != low.method || high.network != low.network) {
    throw ContractError("high and low curves belong to different rows");
  }
  if (auc(high.method, high.network, DropMode::high)) {
    throw ContractError("duplicate entry for " + high.method + " on " + high.network);
  }
  if (std::find(methods_.begin(), methods_.end(), high.method) == methods_.end()) methods_.push_back(high.method);
  if (std::find(networks_.begin(), networks_.end(), high.network) == networks_.end()) networks_.push_back(high.network);
  curves_.push_back(std::move(high));
  curves_.push_back(std::move(low));
}

void ComparisonTable::merge(const ComparisonTable& other) {
  for (std::size_t i = 0; i + 1 < other.curves_.size(); i += 2) add(other.curves_[i], other.curves_[i + 1]);
}

std::optional<double> ComparisonTable::auc(const std::string& method, const std::string& network,
                                           DropMode mode) const {
  for (const auto& c : curves_)
    if (c.method == method && c.network == network && c.mode == mode) return ape::auc(c);
  return std::nullopt;
}

std::optional<std::string> ComparisonTable::best(const std::string& network, DropMode mode) const {
  std::optional<std::string> winner;
  double best_value = 0.0;
  for (const auto& m : methods_) {
    auto v = auc(m, network, mode);
    if (!v) continue;
    const bool better = mode == DropMode::high ? *v < best_value : *v > best_value;
    if (!winner || better) {
      winner = m;
      best_value = *v;
    }
  }
  return winner;
}

ComparisonTable compare_methods(const Network& net, const std::string& network_name,
                                std::span<const PointCloud> clouds, std::span<const MethodHeatmaps> methods,
                                std::size_t steps) {
  if (methods.empty()) throw PreconditionError("comparison needs at least one method");
  ComparisonTable table;
  for (const auto& m : methods) {
    auto high = point_drop_curve(net, clouds, m.heatmaps, DropMode::high, steps);
    auto low = point_drop_curve(net, clouds, m.heatmaps, DropMode::low, steps);
    for (auto* c : {&high, &low}) {
      c->method = m.method;
      c->network = network_name;
    }
    table.add(std::move(high), std::move(low));
  }
  return table;
}

namespace {

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

}  // namespace

nlohmann::ordered_json report_json(const ComparisonTable& table) {
  nlohmann::ordered_json curves = nlohmann::ordered_json::array();
  for (const auto& c : table.curves()) {
    curves.push_back({{"method", c.method},
                      {"network", c.network},
                      {"mode", to_string(c.mode)},
                      {"fractions", c.fractions},
                      {"accuracies", c.accuracies},
                      {"auc", auc(c)}});
  }
  nlohmann::ordered_json best = nlohmann::ordered_json::object();
  for (const auto& n : table.networks()) {
    best[n] = {{"high_drop", *table.best(n, DropMode::high)}, {"low_drop", *table.best(n, DropMode::low)}};
  }
  return {{"methods", table.methods()}, {"networks", table.networks()}, {"curves", curves}, {"best", best}};
}

std::string report_markdown(const ComparisonTable& table) {
  std::string out = "| Method | Mode |";
  std::string rule = "|---|---|";
  for (const auto& n : table.networks()) {
    out += " " + n + " |";
    rule += "---|";
  }
  out += "\n" + rule + "\n";
  for (const auto& m : table.methods()) {
    for (DropMode mode : {DropMode::high, DropMode::low}) {
      out += "| " + std::string(mode == DropMode::high ? m : "") + " | " + short_label(mode) + " |";
      for (const auto& n : table.networks()) {
        const auto v = table.auc(m, n, mode);
        if (!v) {
          out += " - |";
          continue;
        }
        const bool is_best = table.best(n, mode) == m;
        out += is_best ? " **" + fixed4(*v) + "** |" : " " + fixed4(*v) + " |";
      }
      out += "\n";
    }
  }
  return out;
}

}  // namespace ape
