#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "ape/errors.hpp"
#include "ape/eval.hpp"
#include "ape/explain.hpp"

using namespace ape;

namespace {

PdcCurve curve(std::vector<double> f, std::vector<double> a, DropMode mode = DropMode::high, std::string method = "m",
               std::string network = "fixed") {
  PdcCurve c;
  c.method = std::move(method);
  c.network = std::move(network);
  c.mode = mode;
  c.fractions = std::move(f);
  c.accuracies = std::move(a);
  return c;
}

struct Toy {
  std::unique_ptr<Network> net;
  std::vector<PointCloud> test;
};

const Toy& toy() {
  static const Toy t = [] {
    auto data = generate_dataset({{ShapeClass::sphere, ShapeClass::box}, 30, 64, 4, 0.34});
    TrainConfig cfg;
    cfg.epochs = 20;
    cfg.seed = 4;
    Toy out{make_network(NetworkKind::fixed, 2, 4), data.subset(Split::test)};
    train(*out.net, data, cfg);
    return out;
  }();
  return t;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Auc, Examples) {
  EXPECT_DOUBLE_EQ(auc(curve({0, 0.5, 1}, {1, 1, 1})), 1.0);
  EXPECT_DOUBLE_EQ(auc(curve({0, 1}, {1, 0})), 0.5);
  EXPECT_DOUBLE_EQ(auc(curve({0, 0.5, 1}, {1, 0.5, 0})), 0.5);
  EXPECT_DOUBLE_EQ(auc(curve({0, 0.5}, {1, 0})), 0.5);
  EXPECT_THROW(auc(curve({0}, {1})), PreconditionError);
}

TEST(Auc, InvariantUnderGridRefinementForLinearTruth) {
  auto truth = [](double f) { return f < 0.4 ? 1.0 - f : 0.6 - 0.5 * (f - 0.4); };
  auto coarse = fraction_grid(6);
  auto fine = fraction_grid(11);
  std::vector<double> ca, fa;
  for (double f : coarse) ca.push_back(truth(f));
  for (double f : fine) fa.push_back(truth(f));
  EXPECT_NEAR(auc(curve(coarse, ca)), auc(curve(fine, fa)), 1e-12);
}

TEST(FractionGrid, EvenSteps) {
  auto g = fraction_grid(11);
  ASSERT_EQ(g.size(), 11u);
  EXPECT_EQ(g.front(), 0.0);
  EXPECT_EQ(g.back(), 1.0);
  for (std::size_t i = 0; i < 11; ++i) EXPECT_NEAR(g[i], i / 10.0, 1e-15);
  EXPECT_EQ(fraction_grid(2), (std::vector<double>{0, 1}));
  EXPECT_THROW(fraction_grid(1), PreconditionError);
}

TEST(DropOrder, TiesByIndex) {
  Heatmap h(std::vector<double>{0.5, 1, 0.5, 0});
  EXPECT_EQ(drop_order(h, DropMode::high), (std::vector<std::size_t>{1, 0, 2, 3}));
  EXPECT_EQ(drop_order(h, DropMode::low), (std::vector<std::size_t>{3, 0, 2, 1}));
}

TEST(DropByHeatmap, DropsTheRequestedPoints) {
  auto cloud = make_shape(ShapeClass::box, 32, 1);
  auto h = random_heatmap(32, 3);
  auto dropped = drop_by_heatmap(cloud, h, DropMode::high, 5);
  EXPECT_EQ(dropped.alive_count(), 27u);
  auto order = drop_order(h, DropMode::high);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_FALSE(dropped.alive(order[i]));
  EXPECT_EQ(drop_by_heatmap(cloud, h, DropMode::low, 32).alive_count(), 0u);
}

TEST(RandomHeatmap, DeterministicAndNormalized) {
  auto a = random_heatmap(100, 7);
  EXPECT_EQ(a, random_heatmap(100, 7));
  EXPECT_NE(a, random_heatmap(100, 8));
  EXPECT_EQ(*std::max_element(a.values().begin(), a.values().end()), 1.0);
  EXPECT_EQ(*std::min_element(a.values().begin(), a.values().end()), 0.0);
}

TEST(PointDropCurve, StartsAtBaselineAccuracy) {
  const auto& t = toy();
  std::vector<Heatmap> maps;
  for (std::size_t i = 0; i < t.test.size(); ++i) maps.push_back(random_heatmap(t.test[i].size(), i));
  auto c = point_drop_curve(*t.net, t.test, maps, DropMode::high);
  EXPECT_EQ(c.fractions, fraction_grid(11));
  EXPECT_EQ(c.accuracies.front(), accuracy(*t.net, t.test));
  for (double a : c.accuracies) {
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
  // With every point at the core, the classifier is close to a constant guess.
  EXPECT_LE(c.accuracies.back(), 0.5 + 0.1);
}

TEST(PointDropCurve, HeatmapsAreRequired) {
  const auto& t = toy();
  std::vector<Heatmap> maps(t.test.size() - 1, random_heatmap(64, 1));
  EXPECT_THROW(point_drop_curve(*t.net, t.test, maps, DropMode::low), ContractError);
  std::vector<Heatmap> none;
  std::vector<PointCloud> no_clouds;
  EXPECT_THROW(point_drop_curve(*t.net, no_clouds, none, DropMode::low), PreconditionError);
  std::vector<Heatmap> full(t.test.size(), random_heatmap(64, 1));
  EXPECT_THROW(point_drop_curve(*t.net, t.test, full, DropMode::low, 1), PreconditionError);
}

TEST(PointDropCurve, ApeHighDropFallsFasterThanLowDrop) {
  const auto& t = toy();
  std::vector<Heatmap> maps;
  for (const auto& c : t.test) maps.push_back(ape_explain(*t.net, c).heatmap);
  const double high = auc(point_drop_curve(*t.net, t.test, maps, DropMode::high));
  const double low = auc(point_drop_curve(*t.net, t.test, maps, DropMode::low));
  EXPECT_LT(high, low);
}

TEST(CurveBand, MeanAndPopulationSd) {
  std::vector<PdcCurve> cs = {curve({0, 1}, {1, 0.2}), curve({0, 1}, {1, 0.6})};
  auto b = curve_band(cs);
  EXPECT_EQ(b.fractions, (std::vector<double>{0, 1}));
  EXPECT_DOUBLE_EQ(b.mean[1], 0.4);
  EXPECT_DOUBLE_EQ(b.sd[0], 0.0);
  EXPECT_NEAR(b.sd[1], 0.2, 1e-15);
  std::vector<PdcCurve> bad = {curve({0, 1}, {1, 0}), curve({0, 0.5, 1}, {1, 0, 0})};
  EXPECT_THROW(curve_band(bad), ContractError);
}

TEST(CurveBand, Overlap) {
  CurveBand a{{0, 1}, {1, 0.5}, {0, 0.1}};
  CurveBand b{{0, 1}, {1, 0.65}, {0, 0.05}};
  EXPECT_TRUE(bands_overlap(a, b));
  b.mean[1] = 0.7;
  EXPECT_FALSE(bands_overlap(a, b));
}

TEST(ComparisonTable, BestAndDuplicates) {
  ComparisonTable t;
  t.add(curve({0, 1}, {1, 0.2}, DropMode::high, "ape"), curve({0, 1}, {1, 0.9}, DropMode::low, "ape"));
  t.add(curve({0, 1}, {1, 0.4}, DropMode::high, "gradients"), curve({0, 1}, {1, 0.9}, DropMode::low, "gradients"));
  EXPECT_EQ(t.best("fixed", DropMode::high), "ape");
  EXPECT_EQ(t.best("fixed", DropMode::low), "ape");
  EXPECT_DOUBLE_EQ(*t.auc("gradients", "fixed", DropMode::high), 0.7);
  EXPECT_FALSE(t.auc("pcsn", "fixed", DropMode::high));
  EXPECT_FALSE(t.best("variable", DropMode::high));
  EXPECT_THROW(t.add(curve({0, 1}, {1, 0}, DropMode::high, "ape"), curve({0, 1}, {1, 0}, DropMode::low, "ape")),
               ContractError);
  EXPECT_THROW(t.add(curve({0, 1}, {1, 0}, DropMode::low, "x"), curve({0, 1}, {1, 0}, DropMode::low, "x")),
               ContractError);
}

TEST(ComparisonTable, MergeAddsNetworkColumns) {
  ComparisonTable a, b;
  a.add(curve({0, 1}, {1, 0}, DropMode::high, "ape"), curve({0, 1}, {1, 1}, DropMode::low, "ape"));
  b.add(curve({0, 1}, {1, 0}, DropMode::high, "ape", "variable"),
        curve({0, 1}, {1, 1}, DropMode::low, "ape", "variable"));
  a.merge(b);
  EXPECT_EQ(a.networks(), (std::vector<std::string>{"fixed", "variable"}));
  EXPECT_EQ(a.curves().size(), 4u);
}

TEST(Report, MarkdownLayout) {
  ComparisonTable t;
  t.add(curve({0, 1}, {1, 0.2}, DropMode::high, "ape"), curve({0, 1}, {1, 0.9}, DropMode::low, "ape"));
  t.add(curve({0, 1}, {1, 0.4}, DropMode::high, "gradients"), curve({0, 1}, {1, 0.8}, DropMode::low, "gradients"));
  auto md = lines(report_markdown(t));
  ASSERT_EQ(md.size(), 6u);
  EXPECT_EQ(md[0], "| Method | Mode | fixed |");
  EXPECT_EQ(md[1], "|---|---|---|");
  EXPECT_EQ(md[2], "| ape | H.D. | **0.6000** |");
  EXPECT_EQ(md[3], "|  | L.D. | **0.9500** |");
  EXPECT_EQ(md[4], "| gradients | H.D. | 0.7000 |");
  EXPECT_EQ(md[5], "|  | L.D. | 0.9000 |");

  ComparisonTable single;
  single.add(curve({0, 1}, {1, 1}, DropMode::high, "ape"), curve({0, 1}, {1, 1}, DropMode::low, "ape"));
  EXPECT_EQ(lines(report_markdown(single)).size(), 4u);
}

TEST(Report, JsonCarriesCurvesAndAuc) {
  ComparisonTable t;
  t.add(curve({0, 1}, {1, 0.2}, DropMode::high, "ape"), curve({0, 1}, {1, 0.9}, DropMode::low, "ape"));
  auto j = report_json(t);
  EXPECT_EQ(j["methods"], nlohmann::json::array({"ape"}));
  ASSERT_EQ(j["curves"].size(), 2u);
  EXPECT_EQ(j["curves"][0]["mode"], "high_drop");
  EXPECT_DOUBLE_EQ(j["curves"][0]["auc"].get<double>(), 0.6);
  EXPECT_EQ(j["best"]["fixed"]["low_drop"], "ape");
}

TEST(CompareMethods, TwoByTwoTable) {
  const auto& t = toy();
  std::vector<MethodHeatmaps> methods(2);
  methods[0].method = "gradients";
  methods[1].method = "random";
  for (std::size_t i = 0; i < t.test.size(); ++i) {
    methods[0].heatmaps.push_back(gradients_baseline(*t.net, t.test[i], predict(*t.net, t.test[i]).label));
    methods[1].heatmaps.push_back(random_heatmap(t.test[i].size(), i));
  }
  auto table = compare_methods(*t.net, "fixed", t.test, methods, 5);
  EXPECT_EQ(table.methods(), (std::vector<std::string>{"gradients", "random"}));
  EXPECT_EQ(table.curves().size(), 4u);
  for (const auto& c : table.curves()) {
    EXPECT_EQ(c.fractions.size(), 5u);
    const double a = auc(c);
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
  }
}
