#include "ape/networks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "ape/errors.hpp"

namespace ape {

Dense::Dense(std::size_t in, std::size_t out) : in(in), out(out), weight(in * out, 0.0), bias(out, 0.0) {}

std::string to_string(NetworkKind kind) { return kind == NetworkKind::fixed ? "fixed" : "variable"; }

NetworkKind parse_network_kind(const std::string& name) {
  if (name == "fixed") return NetworkKind::fixed;
  if (name == "variable") return NetworkKind::variable;
  throw ConfigError("unknown network kind '" + name + "' (valid: fixed, variable)");
}

// ---- Network --------------------------------------------------------------

Network::Network(std::size_t num_classes, std::vector<Dense> feature_layers) : layers_(std::move(feature_layers)) {
  if (num_classes < 1) throw ConfigError("network needs at least one class");
  if (layers_.empty()) throw ConfigError("network needs at least one feature layer");
  const std::size_t k = layers_.back().out;
  if (k < num_classes) throw ConfigError("feature count K must be >= number of classes");
  feature_layers_ = layers_.size();
  layers_.emplace_back(k, 32);
  layers_.emplace_back(32, num_classes);
}

std::size_t Network::parameter_count() const {
  std::size_t total = 0;
  for (const auto& l : layers_) total += l.weight.size() + l.bias.size();
  return total;
}

void Network::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& l : layers_) {
    const double bound = std::sqrt(6.0 / static_cast<double>(l.in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& w : l.weight) w = dist(rng);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
}

std::vector<ad::Tensor> Network::register_parameters(ad::Tape& tape) const {
  std::vector<ad::Tensor> params;
  params.reserve(layers_.size() * 2);
  for (const auto& l : layers_) {
    if (l.weight.size() != l.in * l.out || l.bias.size() != l.out) {
      throw ContractError("layer parameter block does not match its declared shape");
    }
    params.push_back(tape.variable({l.in, l.out}, l.weight));
    params.push_back(tape.variable({l.out}, l.bias));
  }
  return params;
}

namespace {

ad::Tensor dense(const ad::Tensor& x, std::span<const ad::Tensor> params, std::size_t layer) {
  return ad::add_bias(ad::matmul(x, params[2 * layer]), params[2 * layer + 1]);
}

}  // namespace

ad::Tensor Network::feature_mlp(const ad::Tensor& x, std::span<const ad::Tensor> params, std::size_t first,
                                std::size_t last) const {
  ad::Tensor h = x;
  for (std::size_t l = first; l < last; ++l) h = ad::relu(dense(h, params, l));
  return h;
}

ad::Tensor Network::head(const ad::Tensor& pooled, std::span<const ad::Tensor> params) const {
  auto row = ad::reshape(pooled, {1, pooled.size()});
  auto hidden = ad::relu(dense(row, params, feature_layers_));
  auto logits = dense(hidden, params, feature_layers_ + 1);
  return ad::reshape(logits, {num_classes()});
}

// ---- FixedNet -------------------------------------------------------------

FixedNet::FixedNet(std::size_t num_classes, std::size_t feature_count)
    : Network(num_classes, {Dense(3, 32), Dense(32, 64), Dense(64, feature_count)}) {}

NetworkOutput FixedNet::forward(ad::Tape& tape, const PointCloud& cloud) const {
  NetworkOutput out;
  const std::size_t n = cloud.size();
  out.points = tape.variable({n, 3}, cloud.flat());
  out.parameters = register_parameters(tape);
  out.feature_maps = feature_mlp(out.points, out.parameters, 0, feature_layer_count());
  out.logits = head(ad::max_pool_points(out.feature_maps).values, out.parameters);
  out.association.resize(n);
  std::iota(out.association.begin(), out.association.end(), 0);
  return out;
}

// ---- VariableNet ----------------------------------------------------------

VariableNet::VariableNet(std::size_t num_classes, GroupingConfig grouping, std::size_t feature_count)
    : Network(num_classes, {Dense(4, 32), Dense(32, 64), Dense(64, feature_count), Dense(3, feature_count)}),
      grouping_(grouping) {
  if (grouping_.ratio < 2) throw ConfigError("grouping ratio must be >= 2 so that n' < n");
  if (grouping_.neighbors < 1) throw ConfigError("grouping needs at least one neighbor");
}

std::size_t VariableNet::centroid_count(std::size_t n) const { return std::max<std::size_t>(1, n / grouping_.ratio); }

NetworkOutput VariableNet::forward(ad::Tape& tape, const PointCloud& cloud) const {
  const std::size_t n = cloud.size();
  if (n < grouping_.neighbors) {
    throw PreconditionError("variable net needs at least " + std::to_string(grouping_.neighbors) + " points, got " +
                            std::to_string(n));
  }
  const auto pts = cloud.points();

  std::vector<std::vector<std::size_t>> tiers(3);
  for (std::size_t i = 0; i < n; ++i) tiers[!cloud.alive(i) ? 2 : cloud.explained(i) ? 1 : 0].push_back(i);
  const std::size_t n_centroids = centroid_count(n);
  auto centroids = farthest_point_sampling_tiered(pts, tiers, n_centroids);

  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < n; ++i)
    if (cloud.alive(i)) pool.push_back(i);
  if (pool.empty()) {
    pool.resize(n);
    std::iota(pool.begin(), pool.end(), 0);
  }
  const std::size_t k = std::min(grouping_.neighbors, pool.size());

  std::vector<std::size_t> members, centers;
  members.reserve(n_centroids * k);
  centers.reserve(n_centroids * k);
  std::vector<std::size_t> others;
  for (std::size_t c : centroids) {
    // The centroid always leads its own group.
    others.clear();
    for (std::size_t i : pool)
      if (i != c) others.push_back(i);
    auto nn = nearest_neighbors(pts, pts[c], others, k - 1);
    members.push_back(c);
    members.insert(members.end(), nn.begin(), nn.end());
    centers.insert(centers.end(), k, c);
  }

  NetworkOutput out;
  out.points = tape.variable({n, 3}, cloud.flat());
  out.parameters = register_parameters(tape);
  auto lifted = ad::concat_cols(out.points, ad::row_squared_norm(out.points));
  auto point_features = dense(feature_mlp(lifted, out.parameters, 0, 2), out.parameters, 2);
  auto offsets = ad::sub(ad::gather_rows(out.points, members), ad::gather_rows(out.points, centers));
  auto grouped = ad::relu(ad::add(ad::gather_rows(point_features, members), dense(offsets, out.parameters, 3)));
  out.feature_maps = ad::max_pool_groups(grouped, k).values;
  out.logits = head(ad::max_pool_points(out.feature_maps).values, out.parameters);
  out.association = std::move(centroids);
  return out;
}

// ---- sampling -------------------------------------------------------------

namespace {

double squared_distance(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace

std::vector<std::size_t> farthest_point_sampling_tiered(std::span<const Point3> points,
                                                        std::span<const std::vector<std::size_t>> tiers,
                                                        std::size_t count) {
  std::size_t available = 0;
  for (const auto& t : tiers) available += t.size();
  if (count < 1 || count > available) {
    throw PreconditionError("farthest point sampling of " + std::to_string(count) + " from " +
                            std::to_string(available) + " candidates");
  }
  std::vector<double> min_dist(points.size(), std::numeric_limits<double>::infinity());
  std::vector<std::uint8_t> taken(points.size(), 0);
  std::vector<std::size_t> selected;
  selected.reserve(count);
  auto take = [&](std::size_t idx) {
    selected.push_back(idx);
    taken[idx] = 1;
    for (std::size_t i = 0; i < points.size(); ++i)
      min_dist[i] = std::min(min_dist[i], squared_distance(points[i], points[idx]));
  };

  for (const auto& tier : tiers) {
    std::vector<std::size_t> sorted = tier;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t picked = 0; picked < sorted.size() && selected.size() < count; ++picked) {
      std::size_t best = points.size();
      for (std::size_t i : sorted) {
        if (taken[i]) continue;
        if (best == points.size() || min_dist[i] > min_dist[best]) best = i;
      }
      take(best);
    }
  }
  return selected;
}

std::vector<std::size_t> farthest_point_sampling(std::span<const Point3> points, std::size_t count,
                                                 std::size_t start) {
  if (count < 1 || count > points.size()) {
    throw PreconditionError("farthest point sampling needs 1 <= n' <= n, got n'=" + std::to_string(count) +
                            ", n=" + std::to_string(points.size()));
  }
  if (start >= points.size()) throw IndexError("FPS start index out of range");
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < points.size(); ++i)
    if (i != start) rest.push_back(i);
  const std::vector<std::vector<std::size_t>> tiers = {{start}, rest};
  return farthest_point_sampling_tiered(points, tiers, count);
}

std::vector<std::size_t> nearest_neighbors(std::span<const Point3> points, const Point3& center,
                                           std::span<const std::size_t> candidates, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> scored;
  scored.reserve(candidates.size());
  for (std::size_t i : candidates) scored.emplace_back(squared_distance(points[i], center), i);
  k = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k), scored.end());
  std::vector<std::size_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = scored[i].second;
  return out;
}

// ---- inference ------------------------------------------------------------

Prediction predict_from_logits(std::span<const double> logits) {
  Prediction p;
  p.probabilities = ad::softmax(logits);
  p.label = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  return p;
}

Prediction predict(const Network& net, const PointCloud& cloud) {
  ad::Tape tape;
  auto out = net.forward(tape, cloud);
  return predict_from_logits(out.logits.values());
}

double accuracy(const Network& net, std::span<const PointCloud> clouds) {
  if (clouds.empty()) return 0.0;
  std::size_t correct = 0;
  for (const auto& c : clouds) {
    if (!c.label()) throw ContractError("accuracy needs labeled clouds");
    correct += predict(net, c).label == *c.label();
  }
  return static_cast<double>(correct) / static_cast<double>(clouds.size());
}

std::unique_ptr<Network> make_network(NetworkKind kind, std::size_t num_classes, std::uint64_t seed) {
  std::unique_ptr<Network> net;
  if (kind == NetworkKind::fixed)
    net = std::make_unique<FixedNet>(num_classes);
  else
    net = std::make_unique<VariableNet>(num_classes);
  net->initialize(seed);
  return net;
}

}  // namespace ape
