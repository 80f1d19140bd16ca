#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ape/autodiff.hpp"
#include "ape/dataset.hpp"
#include "ape/pointcloud.hpp"

namespace ape {

// Fully connected layer: y = x·W + b with W stored row-major in×out.
struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  Dense() = default;
  Dense(std::size_t in, std::size_t out);
};

// Result of one forward pass. feature_maps is the final per-point /
// per-centroid layer before global pooling (the explained layer A, n'×K);
// row r of A corresponds to input point association[r].
struct NetworkOutput {
  ad::Tensor points;        // n×3 input leaf
  ad::Tensor feature_maps;  // n'×K
  ad::Tensor logits;        // C
  std::vector<std::size_t> association;
  std::vector<ad::Tensor> parameters;  // weight, bias per layer, in layer order
};

enum class NetworkKind { fixed, variable };

std::string to_string(NetworkKind kind);
NetworkKind parse_network_kind(const std::string& name);

class Network {
 public:
  virtual ~Network() = default;

  virtual NetworkKind kind() const = 0;
  virtual NetworkOutput forward(ad::Tape& tape, const PointCloud& cloud) const = 0;
  virtual std::unique_ptr<Network> clone() const = 0;

  std::size_t num_classes() const { return layers_.back().out; }
  std::size_t feature_count() const { return layers_[feature_layers_ - 1].out; }
  // Layers before global pooling; the rest form the two-layer head.
  std::size_t feature_layer_count() const { return feature_layers_; }

  std::vector<Dense>& layers() { return layers_; }
  const std::vector<Dense>& layers() const { return layers_; }
  std::size_t parameter_count() const;

  // He-uniform weights, zero biases.
  void initialize(std::uint64_t seed);

  std::vector<std::string> class_names;

 protected:
  // feature_layers precede global pooling; the head K -> 32 -> C is appended.
  Network(std::size_t num_classes, std::vector<Dense> feature_layers);

  // Registers every parameter on the tape and returns the handles.
  std::vector<ad::Tensor> register_parameters(ad::Tape& tape) const;
  // ReLU(dense) through feature layers [first, last).
  ad::Tensor feature_mlp(const ad::Tensor& x, std::span<const ad::Tensor> params, std::size_t first,
                         std::size_t last) const;
  // Shared classifier head: K -> 32 -> C on the pooled feature vector.
  ad::Tensor head(const ad::Tensor& pooled, std::span<const ad::Tensor> params) const;

  // mlp1 .. mlpN, fc1 (K->32), fc2 (32->C)
  std::vector<Dense> layers_;
  std::size_t feature_layers_ = 0;
};

// Fixed architecture: shared per-point MLP 3->32->64->K, so n' = n and the
// association is the identity.
class FixedNet final : public Network {
 public:
  explicit FixedNet(std::size_t num_classes, std::size_t feature_count = 64);

  NetworkKind kind() const override { return NetworkKind::fixed; }
  NetworkOutput forward(ad::Tape& tape, const PointCloud& cloud) const override;
  std::unique_ptr<Network> clone() const override { return std::make_unique<FixedNet>(*this); }
};

struct GroupingConfig {
  std::size_t ratio = 4;       // n' = n / ratio
  std::size_t neighbors = 16;  // k
};

// Variable architecture: farthest-point sampled centroids and kNN groups,
// n' < n. A point feature F = MLP(x, y, z, |p|^2) (4->32->64->K, last layer
// linear) is computed once per point; a group member contributes
// ReLU(F[member] + (member - centroid)·W), and A is the per-group max. The
// layer on concatenated [F, offset] is split this way so F is not recomputed
// for every group a point belongs to.
//
// Centroid candidates are tiered: alive unexplained points first, then alive
// explained points, then dropped points. Neighbors are searched among alive
// points only (all points once none is alive), with k clamped to the pool.
class VariableNet final : public Network {
 public:
  explicit VariableNet(std::size_t num_classes, GroupingConfig grouping = {}, std::size_t feature_count = 64);

  NetworkKind kind() const override { return NetworkKind::variable; }
  NetworkOutput forward(ad::Tape& tape, const PointCloud& cloud) const override;
  std::unique_ptr<Network> clone() const override { return std::make_unique<VariableNet>(*this); }

  const GroupingConfig& grouping() const { return grouping_; }
  std::size_t centroid_count(std::size_t n) const;

 private:
  GroupingConfig grouping_;
};

// ---- sampling -------------------------------------------------------------

// Greedy max-min selection of count indices starting at start. Ties go to the
// lowest index.
std::vector<std::size_t> farthest_point_sampling(std::span<const Point3> points, std::size_t count,
                                                 std::size_t start = 0);

// FPS that exhausts each tier of candidate indices before moving to the next.
// Distances are measured against everything selected so far.
std::vector<std::size_t> farthest_point_sampling_tiered(std::span<const Point3> points,
                                                        std::span<const std::vector<std::size_t>> tiers,
                                                        std::size_t count);

// k nearest candidates of center by Euclidean distance, ties by lowest index.
std::vector<std::size_t> nearest_neighbors(std::span<const Point3> points, const Point3& center,
                                           std::span<const std::size_t> candidates, std::size_t k);

// ---- inference ------------------------------------------------------------

struct Prediction {
  std::size_t label = 0;
  std::vector<double> probabilities;
};

// argmax of softmax(logits), ties to the lowest class index.
Prediction predict_from_logits(std::span<const double> logits);
Prediction predict(const Network& net, const PointCloud& cloud);
double accuracy(const Network& net, std::span<const PointCloud> clouds);

// ---- training -------------------------------------------------------------

enum class Optimizer { gradient_descent, adam };

std::string to_string(Optimizer opt);
Optimizer parse_optimizer(const std::string& name);

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double step = 1e-3;
  std::uint64_t seed = 0;
  Optimizer optimizer = Optimizer::adam;

  void validate() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double loss = 0.0;  // mean training loss over the epoch
  double train_accuracy = 0.0;  // running accuracy of the forward passes made while training
  double test_accuracy = 0.0;
};

// Minimizes softmax cross entropy over the train split. Deterministic in
// cfg.seed. Throws TrainingError when the loss stops being finite.
std::vector<EpochMetrics> train(Network& net, const LabeledDataset& data, const TrainConfig& cfg);

std::unique_ptr<Network> make_network(NetworkKind kind, std::size_t num_classes, std::uint64_t seed);

// ---- checkpoints ----------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

// One JSON header line followed by the little-endian float64 parameter block.
void save_model(const Network& net, const std::filesystem::path& path);
std::unique_ptr<Network> load_model(const std::filesystem::path& path);

}  // namespace ape
