#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ape/networks.hpp"
#include "ape/pointcloud.hpp"

namespace ape {

// Dense row-major matrix used for feature maps and their gradients.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

// One forward/backward pass: A, dy^c/dA and the row -> point association.
struct FeaturePass {
  Matrix features;
  Matrix gradients;
  std::vector<std::size_t> association;
  std::vector<double> logits;
};

// y^c is the pre-softmax logit of class target. Throws IndexError for an
// out-of-range target.
FeaturePass feature_pass(const Network& net, const PointCloud& cloud, std::size_t target);
Matrix feature_gradients(const Network& net, const PointCloud& cloud, std::size_t target);

// Column means of the gradient matrix.
std::vector<double> gap_weights(const Matrix& grads);

// Raw (unnormalized) relevance of the n' neuron rows and the points they explain.
struct PartialHeatmap {
  std::vector<double> neuron_values;
  std::vector<std::size_t> explained_indices;
};

// neuron_values[i] = max(0, sum_k alpha[k] * A[i,k]).
PartialHeatmap partial_heatmap(const Matrix& features, std::span<const double> alpha,
                               std::span<const std::size_t> association);

// Writes raw piece values into a length-n vector (unlisted points get 0) and
// normalizes the whole vector once. Throws ContractError when a point index
// is out of range or listed twice.
Heatmap assemble_heatmap(std::span<const PartialHeatmap> pieces, std::size_t n);

struct InitialHeatmap {
  Heatmap heatmap;
  std::vector<double> raw;
  std::vector<PartialHeatmap> pieces;  // only the points newly explained by each iteration
  std::size_t iterations = 0;          // m
  std::vector<std::string> warnings;
};

// Explains every alive point of cloud: forward, partial heatmap, then mark and
// shift-drop the newly explained points until none is left. Dropped points of
// the input get 0. Throws PreconditionError when no point is alive.
InitialHeatmap initial_heatmap(const Network& net, const PointCloud& cloud, std::size_t target);

struct ApeConfig {
  std::size_t lambda = 4;
  std::optional<std::size_t> low_drop_count;  // n_L, default floor(n / lambda)
  std::vector<double> weights;                // w_i, empty means all 1
  std::optional<std::size_t> target;          // empty means the predicted class

  // Throws ConfigError.
  void validate() const;
  std::size_t drop_count(std::size_t n) const;
  double weight(std::size_t i) const { return weights.empty() ? 1.0 : weights[i]; }
};

struct ApeResult {
  Heatmap heatmap;
  std::vector<Heatmap> initial;             // one per outer iteration
  std::vector<std::size_t> inner_iterations;  // m per outer iteration
  std::size_t target = 0;
  std::size_t predicted = 0;
  std::size_t never_dropped = 0;
  std::vector<std::string> warnings;
};

ApeResult ape_explain(const Network& net, const PointCloud& cloud, const ApeConfig& cfg = {});

// Per-point norm of d CE(target) / d P_i, min-max normalized.
Heatmap gradients_baseline(const Network& net, const PointCloud& cloud, std::size_t target);
// Per-point max(0, -(P_i - median(P)) . d CE(target) / d P_i), min-max normalized.
Heatmap pcsn_baseline(const Network& net, const PointCloud& cloud, std::size_t target);

enum class ExplainMethod { ape, gradients, pcsn };

std::string to_string(ExplainMethod m);
// Throws ConfigError listing the valid methods.
ExplainMethod parse_explain_method(const std::string& name);
std::vector<std::string> explain_method_names();

struct Explanation {
  ExplainMethod method = ExplainMethod::ape;
  Heatmap heatmap;
  std::size_t target = 0;
  std::size_t predicted = 0;
  std::vector<std::size_t> inner_iterations;  // empty for the baselines
  std::size_t never_dropped = 0;
  std::vector<std::string> warnings;
};

// cfg.target selects the class for every method; cfg's other fields only
// affect ape.
Explanation explain(const Network& net, const PointCloud& cloud, ExplainMethod method, const ApeConfig& cfg = {});

// CSV with header x,y,z,value.
void save_heatmap_csv(const PointCloud& cloud, const Heatmap& heatmap, const std::filesystem::path& path);
// Returns the value column. Throws ParseError for malformed rows.
Heatmap load_heatmap_csv(const std::filesystem::path& path);

}  // namespace ape
