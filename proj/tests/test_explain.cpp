#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "ape/errors.hpp"
#include "ape/explain.hpp"
#include "test_support.hpp"

using namespace ape;

namespace {

std::vector<double> vec(std::span<const double> s) { return {s.begin(), s.end()}; }

// Small sphere-vs-box fixed net shared by the tests that need a trained model.
const Network& trained_fixed() {
  static const auto net = [] {
    auto data = generate_dataset({{ShapeClass::sphere, ShapeClass::box}, 20, 64, 2, 0.25});
    TrainConfig cfg;
    cfg.epochs = 15;
    cfg.seed = 2;
    auto n = make_network(NetworkKind::fixed, 2, 2);
    train(*n, data, cfg);
    return n;
  }();
  return *net;
}

// y^c recomputed from A alone, mirroring the classifier head.
double head_logit(const Network& net, const Matrix& a, std::size_t target) {
  const auto& layers = net.layers();
  const auto& fc1 = layers[net.feature_layer_count()];
  const auto& fc2 = layers[net.feature_layer_count() + 1];
  std::vector<double> pooled(a.cols, -INFINITY);
  for (std::size_t r = 0; r < a.rows; ++r)
    for (std::size_t c = 0; c < a.cols; ++c) pooled[c] = std::max(pooled[c], a.at(r, c));
  double y = fc2.bias[target];
  for (std::size_t j = 0; j < fc1.out; ++j) {
    double h = fc1.bias[j];
    for (std::size_t i = 0; i < fc1.in; ++i) h += pooled[i] * fc1.weight[i * fc1.out + j];
    y += std::max(0.0, h) * fc2.weight[j * fc2.out + target];
  }
  return y;
}

PointCloud random_cloud(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  std::vector<Point3> pts(n);
  for (auto& p : pts) p = {d(rng), d(rng), d(rng)};
  return PointCloud(pts);
}

void expect_valid_heatmap(const Heatmap& h) {
  for (double v : h.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  if (!h.all_zero()) {
    EXPECT_EQ(*std::max_element(h.values().begin(), h.values().end()), 1.0);
  }
}

}  // namespace

TEST(GapWeights, ColumnMeans) {
  EXPECT_EQ(gap_weights({2, 2, {1, 2, 3, 4}}), (std::vector<double>{2, 3}));
  EXPECT_EQ(gap_weights({3, 2, {0.5, 0.5, 0.5, 0.5, 0.5, 0.5}}), (std::vector<double>{0.5, 0.5}));
  EXPECT_EQ(gap_weights({1, 3, {1, -2, 7}}), (std::vector<double>{1, -2, 7}));
}

TEST(PartialHeatmap, Examples) {
  std::vector<std::size_t> assoc = {4, 9};
  auto p = partial_heatmap({2, 1, {2, -3}}, std::vector<double>{1}, assoc);
  EXPECT_EQ(p.neuron_values, (std::vector<double>{2, 0}));
  EXPECT_EQ(p.explained_indices, assoc);
  EXPECT_EQ(partial_heatmap({2, 1, {2, -3}}, std::vector<double>{0}, assoc).neuron_values,
            (std::vector<double>{0, 0}));
  EXPECT_EQ(partial_heatmap({2, 2, {1, 0, 0, 1}}, std::vector<double>{2, 3}, assoc).neuron_values,
            (std::vector<double>{2, 3}));
}

TEST(PartialHeatmap, LengthMismatch) {
  std::vector<std::size_t> one = {0};
  EXPECT_THROW(partial_heatmap({2, 1, {1, 2}}, std::vector<double>{1}, one), ContractError);
  std::vector<std::size_t> two = {0, 1};
  EXPECT_THROW(partial_heatmap({2, 1, {1, 2}}, std::vector<double>{1, 1}, two), ContractError);
}

TEST(AssembleHeatmap, NormalizesTheConcatenationOnce) {
  std::vector<PartialHeatmap> pieces = {{{1, 2}, {0, 1}}, {{3, 4}, {2, 3}}};
  auto h = assemble_heatmap(pieces, 5);
  EXPECT_EQ(vec(h.values()), (std::vector<double>{0.25, 0.5, 0.75, 1.0, 0.0}));
}

// Normalizing each piece before concatenating loses the relative scale between
// iterations; the result must differ from the single normalization.
TEST(AssembleHeatmap, PerPieceNormalizationIsNotEquivalent) {
  std::vector<PartialHeatmap> pieces = {{{1, 2}, {0, 1}}, {{3, 4}, {2, 3}}};
  std::vector<double> wrong(4, 0.0);
  for (const auto& p : pieces) {
    auto local = Heatmap::from_raw(p.neuron_values);
    for (std::size_t i = 0; i < p.explained_indices.size(); ++i) wrong[p.explained_indices[i]] = local[i];
  }
  auto right = assemble_heatmap(pieces, 4);
  EXPECT_NE(vec(right.values()), wrong);
  EXPECT_EQ(vec(right.values()), (std::vector<double>{0, 1.0 / 3, 2.0 / 3, 1}));
}

TEST(AssembleHeatmap, RejectsDuplicateAndOutOfRange) {
  std::vector<PartialHeatmap> dup = {{{1}, {0}}, {{2}, {0}}};
  EXPECT_THROW(assemble_heatmap(dup, 3), ContractError);
  std::vector<PartialHeatmap> far = {{{1}, {3}}};
  EXPECT_THROW(assemble_heatmap(far, 3), ContractError);
}

TEST(FeatureGradients, ShapeForBothKinds) {
  for (auto kind : {NetworkKind::fixed, NetworkKind::variable}) {
    auto net = make_network(kind, 2, 1);
    auto g = feature_gradients(*net, random_cloud(64, 2), 1);
    EXPECT_EQ(g.rows, kind == NetworkKind::fixed ? 64u : 16u);
    EXPECT_EQ(g.cols, net->feature_count());
  }
}

TEST(FeatureGradients, MatchHeadFiniteDifferences) {
  for (auto kind : {NetworkKind::fixed, NetworkKind::variable}) {
    auto net = make_network(kind, 3, 5);
    for (std::size_t target = 0; target < 3; ++target) {
      auto pass = feature_pass(*net, random_cloud(32, 6), target);
      ASSERT_NEAR(head_logit(*net, pass.features, target), pass.logits[target], 1e-12);
      auto a = pass.features;
      const double eps = 1e-6;
      double worst = 0.0;
      for (std::size_t i = 0; i < a.data.size(); ++i) {
        // Skip max-pool ties (dead columns), where the logit has a kink.
        const std::size_t col = i % a.cols;
        std::size_t at_max = 0;
        double top = -INFINITY;
        for (std::size_t r = 0; r < a.rows; ++r) top = std::max(top, a.at(r, col));
        for (std::size_t r = 0; r < a.rows; ++r) at_max += a.at(r, col) > top - 1e-9;
        if (at_max > 1) continue;
        const double keep = a.data[i];
        a.data[i] = keep + eps;
        const double up = head_logit(*net, a, target);
        a.data[i] = keep - eps;
        const double down = head_logit(*net, a, target);
        a.data[i] = keep;
        const double numeric = (up - down) / (2 * eps);
        worst = std::max(worst, std::abs(numeric - pass.gradients.data[i]) / std::max(1.0, std::abs(numeric)));
      }
      EXPECT_LT(worst, 1e-5) << to_string(kind) << " target " << target;
    }
  }
}

TEST(FeatureGradients, RejectsUnknownClass) {
  auto net = make_network(NetworkKind::fixed, 2, 1);
  EXPECT_THROW(feature_gradients(*net, random_cloud(8, 1), 2), IndexError);
}

TEST(InitialHeatmap, FixedNetRunsOnceAndCoversEveryPoint) {
  auto cloud = make_shape(ShapeClass::box, 128, 4);
  auto init = initial_heatmap(trained_fixed(), cloud, 1);
  EXPECT_EQ(init.iterations, 1u);
  ASSERT_EQ(init.pieces.size(), 1u);
  std::vector<std::size_t> identity(128);
  std::iota(identity.begin(), identity.end(), 0);
  EXPECT_EQ(init.pieces[0].explained_indices, identity);
  expect_valid_heatmap(init.heatmap);
  EXPECT_TRUE(init.warnings.empty());
}

TEST(InitialHeatmap, VariableNetTakesFourIterationsWithDisjointPieces) {
  auto net = make_network(NetworkKind::variable, 2, 3);
  auto init = initial_heatmap(*net, make_shape(ShapeClass::flange8, 256, 1), 0);
  EXPECT_EQ(init.iterations, 4u);
  std::set<std::size_t> seen;
  std::size_t total = 0;
  for (const auto& p : init.pieces) {
    EXPECT_EQ(p.explained_indices.size(), 64u);
    for (double v : p.neuron_values) EXPECT_GE(v, 0.0);
    seen.insert(p.explained_indices.begin(), p.explained_indices.end());
    total += p.explained_indices.size();
  }
  EXPECT_EQ(total, 256u);
  EXPECT_EQ(seen.size(), 256u);
  for (double v : init.raw) EXPECT_GE(v, 0.0);
  EXPECT_EQ(vec(init.heatmap.values()), vec(Heatmap::from_raw(init.raw).values()));
  expect_valid_heatmap(init.heatmap);
}

TEST(InitialHeatmap, DroppedPointsGetZero) {
  auto cloud = make_shape(ShapeClass::sphere, 64, 3);
  std::vector<std::size_t> gone = {0, 5, 9};
  auto init = initial_heatmap(trained_fixed(), cloud.drop(gone), 0);
  for (std::size_t i : gone) EXPECT_EQ(init.raw[i], 0.0);
  std::vector<std::size_t> all(64);
  std::iota(all.begin(), all.end(), 0);
  EXPECT_THROW(initial_heatmap(trained_fixed(), cloud.drop(all), 0), PreconditionError);
}

TEST(ApeExplain, SingleOuterIterationEqualsInitialHeatmap) {
  for (auto kind : {NetworkKind::fixed, NetworkKind::variable}) {
    auto net = make_network(kind, 2, 8);
    auto cloud = make_shape(ShapeClass::flange4, 128, 2);
    ApeConfig cfg;
    cfg.lambda = 1;
    cfg.target = 1;
    auto r = ape_explain(*net, cloud, cfg);
    EXPECT_EQ(r.heatmap, initial_heatmap(*net, cloud, 1).heatmap);
  }
}

TEST(ApeExplain, MergeDominatesEveryIteration) {
  auto net = make_network(NetworkKind::variable, 2, 4);
  auto r = ape_explain(*net, make_shape(ShapeClass::flange8, 256, 5));
  ASSERT_EQ(r.initial.size(), 4u);
  EXPECT_EQ(r.inner_iterations.front(), 4u);
  for (const auto& init : r.initial)
    for (std::size_t j = 0; j < 256; ++j) EXPECT_GE(r.heatmap[j], init[j]);
  expect_valid_heatmap(r.heatmap);
  EXPECT_EQ(r.never_dropped, 0u);
}

TEST(ApeExplain, DropScheduleCoversTheCloud) {
  auto cloud = make_shape(ShapeClass::sphere, 64, 9);
  auto r = ape_explain(trained_fixed(), cloud);
  ASSERT_EQ(r.initial.size(), 4u);
  // Iteration i sees 64 - 16 i alive points; dropped points read 0.
  for (std::size_t i = 0; i < 4; ++i) {
    const auto zeros = std::count(r.initial[i].values().begin(), r.initial[i].values().end(), 0.0);
    EXPECT_GE(static_cast<std::size_t>(zeros), 16 * i);
  }
  EXPECT_EQ(r.never_dropped, 0u);
}

TEST(ApeExplain, LowDropShortfallIsRecorded) {
  ApeConfig cfg;
  cfg.lambda = 2;
  cfg.low_drop_count = 10;
  auto r = ape_explain(trained_fixed(), make_shape(ShapeClass::box, 64, 1), cfg);
  EXPECT_EQ(r.never_dropped, 44u);
  expect_valid_heatmap(r.heatmap);
}

TEST(ApeExplain, WeightsRescaleAndRenormalize) {
  auto cloud = make_shape(ShapeClass::box, 64, 2);
  ApeConfig cfg;
  cfg.weights = {2, 2, 2, 2};
  auto scaled = ape_explain(trained_fixed(), cloud, cfg);
  auto plain = ape_explain(trained_fixed(), cloud);
  expect_valid_heatmap(scaled.heatmap);
  for (std::size_t j = 0; j < 64; ++j) EXPECT_NEAR(scaled.heatmap[j], plain.heatmap[j], 1e-12);
}

TEST(ApeExplain, InvalidConfig) {
  auto cloud = make_shape(ShapeClass::box, 64, 2);
  ApeConfig cfg;
  cfg.lambda = 0;
  EXPECT_THROW(ape_explain(trained_fixed(), cloud, cfg), ConfigError);
  cfg = {};
  cfg.weights = {1, 1};
  EXPECT_THROW(ape_explain(trained_fixed(), cloud, cfg), ConfigError);
  cfg.weights = {1, 1, 0, 1};
  EXPECT_THROW(ape_explain(trained_fixed(), cloud, cfg), ConfigError);
  cfg = {};
  cfg.target = 2;
  EXPECT_THROW(ape_explain(trained_fixed(), cloud, cfg), IndexError);
}

TEST(ApeExplain, Deterministic) {
  auto net = make_network(NetworkKind::variable, 2, 4);
  auto cloud = make_shape(ShapeClass::flange4, 256, 3);
  EXPECT_EQ(ape_explain(*net, cloud).heatmap, ape_explain(*net, cloud).heatmap);
}

TEST(ApeExplain, DependsOnTargetClass) {
  auto cloud = make_shape(ShapeClass::sphere, 64, 11);
  auto pass = feature_pass(trained_fixed(), cloud, 0);
  ASSERT_NE(pass.logits[0], pass.logits[1]);
  ApeConfig c0, c1;
  c0.target = 0;
  c1.target = 1;
  EXPECT_NE(ape_explain(trained_fixed(), cloud, c0).heatmap, ape_explain(trained_fixed(), cloud, c1).heatmap);
}

TEST(Baselines, ConstantNetworkGivesZeroHeatmaps) {
  FixedNet zero(2);
  auto cloud = random_cloud(20, 1);
  EXPECT_TRUE(gradients_baseline(zero, cloud, 0).all_zero());
  EXPECT_TRUE(pcsn_baseline(zero, cloud, 1).all_zero());
}

TEST(Baselines, GradientsMatchFiniteDifferences) {
  const auto& net = trained_fixed();
  auto cloud = make_shape(ShapeClass::box, 32, 7);
  auto loss = [&](const std::vector<Point3>& pts) {
    ad::Tape t;
    return ad::softmax_cross_entropy(net.forward(t, PointCloud(pts)).logits, 1).item();
  };
  std::vector<Point3> pts(cloud.points().begin(), cloud.points().end());
  std::vector<double> norms(pts.size());
  const double eps = 1e-6;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double sq = 0.0;
    for (int d = 0; d < 3; ++d) {
      auto s = pts;
      s[i][d] += eps;
      const double up = loss(s);
      s[i][d] -= 2 * eps;
      const double g = (up - loss(s)) / (2 * eps);
      sq += g * g;
    }
    norms[i] = std::sqrt(sq);
  }
  auto expected = Heatmap::from_raw(norms);
  auto got = gradients_baseline(net, cloud, 1);
  for (std::size_t i = 0; i < pts.size(); ++i) EXPECT_NEAR(got[i], expected[i], 1e-4) << i;
  expect_valid_heatmap(got);
}

TEST(Baselines, PcsnIgnoresThePointAtTheMedian) {
  std::vector<Point3> pts = {{0, 0, 0}};
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> d(0.1, 1.0);
  for (int i = 0; i < 20; ++i) {
    Point3 p{d(rng), -d(rng), d(rng)};
    pts.push_back(p);
    pts.push_back({-p[0], -p[1], -p[2]});
  }
  auto h = pcsn_baseline(trained_fixed(), PointCloud(pts), 0);
  EXPECT_EQ(h[0], 0.0);
  expect_valid_heatmap(h);
}

TEST(Explain, DispatchesAndHonorsTarget) {
  auto cloud = make_shape(ShapeClass::sphere, 64, 1);
  ApeConfig cfg;
  cfg.target = 1;
  for (auto m : {ExplainMethod::ape, ExplainMethod::gradients, ExplainMethod::pcsn}) {
    auto e = explain(trained_fixed(), cloud, m, cfg);
    EXPECT_EQ(e.method, m);
    EXPECT_EQ(e.target, 1u);
    EXPECT_EQ(e.predicted, predict(trained_fixed(), cloud).label);
    EXPECT_EQ(e.heatmap.size(), 64u);
    EXPECT_EQ(e.inner_iterations.empty(), m != ExplainMethod::ape);
  }
  EXPECT_EQ(explain(trained_fixed(), cloud, ExplainMethod::gradients, cfg).heatmap,
            gradients_baseline(trained_fixed(), cloud, 1));
}

TEST(Explain, MethodNames) {
  for (const auto& name : explain_method_names()) EXPECT_EQ(to_string(parse_explain_method(name)), name);
  try {
    parse_explain_method("lrp");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("pcsn"), std::string::npos);
  }
}

TEST(HeatmapCsv, RoundTrip) {
  test::TempDir dir;
  auto cloud = make_shape(ShapeClass::box, 64, 1);
  auto h = ape_explain(trained_fixed(), cloud).heatmap;
  const auto path = dir.path() / "h.csv";
  save_heatmap_csv(cloud, h, path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "x,y,z,value");
  EXPECT_EQ(load_heatmap_csv(path), h);
}

TEST(HeatmapCsv, Errors) {
  test::TempDir dir;
  const auto bad = dir.path() / "bad.csv";
  std::ofstream(bad) << "x,y,z,value\n0,0,0,0.5\n0,0,zero,1\n";
  try {
    load_heatmap_csv(bad);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  const auto empty = dir.path() / "empty.csv";
  std::ofstream(empty) << "x,y,z,value\n";
  EXPECT_THROW(load_heatmap_csv(empty), PreconditionError);
  auto cloud = make_shape(ShapeClass::box, 32, 1);
  EXPECT_THROW(save_heatmap_csv(cloud, Heatmap(std::vector<double>(3, 0.0)), dir.path() / "x.csv"), ContractError);
}
