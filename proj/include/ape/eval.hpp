#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ape/networks.hpp"
#include "ape/pointcloud.hpp"
#include "json.hpp"

namespace ape {

enum class DropMode { high, low };

std::string to_string(DropMode mode);
// "H.D." / "L.D."
std::string short_label(DropMode mode);

struct PdcCurve {
  std::string method;
  std::string network;
  DropMode mode = DropMode::high;
  std::vector<double> fractions;
  std::vector<double> accuracies;
};

// steps evenly spaced fractions from 0 to 1. Throws PreconditionError for steps < 2.
std::vector<double> fraction_grid(std::size_t steps);

// Point indices by relevance: descending for high, ascending for low; ties by
// ascending index in both modes.
std::vector<std::size_t> drop_order(const Heatmap& heatmap, DropMode mode);

// Shift-drops the first count points of drop_order.
PointCloud drop_by_heatmap(const PointCloud& cloud, const Heatmap& heatmap, DropMode mode, std::size_t count);

// Accuracy after dropping floor(i·n / (steps-1)) points of every cloud, for
// i = 0..steps-1. Heatmaps are used as given and never recomputed.
PdcCurve point_drop_curve(const Network& net, std::span<const PointCloud> clouds, std::span<const Heatmap> heatmaps,
                          DropMode mode, std::size_t steps = 11);

// Trapezoidal area normalized by the fraction span.
double auc(const PdcCurve& curve);

// Uniform random relevance, min-max normalized.
Heatmap random_heatmap(std::size_t n, std::uint64_t seed);

// Per-fraction mean and population standard deviation over curves sharing a grid.
struct CurveBand {
  std::vector<double> fractions;
  std::vector<double> mean;
  std::vector<double> sd;
};

CurveBand curve_band(std::span<const PdcCurve> curves);
// True when the mean±sd intervals intersect at every fraction.
bool bands_overlap(const CurveBand& a, const CurveBand& b);

struct MethodHeatmaps {
  std::string method;
  std::vector<Heatmap> heatmaps;  // one per cloud
};

// AUC of both drop modes for every (method, network) pair.
class ComparisonTable {
 public:
  void add(PdcCurve high, PdcCurve low);
  void merge(const ComparisonTable& other);

  const std::vector<std::string>& methods() const { return methods_; }
  const std::vector<std::string>& networks() const { return networks_; }
  const std::vector<PdcCurve>& curves() const { return curves_; }

  std::optional<double> auc(const std::string& method, const std::string& network, DropMode mode) const;
  // Lowest H.D. / highest L.D. method for a network; first listed wins ties.
  std::optional<std::string> best(const std::string& network, DropMode mode) const;

 private:
  std::vector<std::string> methods_;
  std::vector<std::string> networks_;
  std::vector<PdcCurve> curves_;
};

ComparisonTable compare_methods(const Network& net, const std::string& network_name,
                                std::span<const PointCloud> clouds, std::span<const MethodHeatmaps> methods,
                                std::size_t steps = 11);

// Full curves plus AUC and best flags.
nlohmann::ordered_json report_json(const ComparisonTable& table);
// Method rows with H.D./L.D. sub-rows and one column per network; best values in bold.
std::string report_markdown(const ComparisonTable& table);

}  // namespace ape
