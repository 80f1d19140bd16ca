#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ape/errors.hpp"
#include "ape/networks.hpp"

namespace ape {

std::string to_string(Optimizer opt) { return opt == Optimizer::adam ? "adam" : "sgd"; }

Optimizer parse_optimizer(const std::string& name) {
  if (name == "adam") return Optimizer::adam;
  if (name == "sgd" || name == "gd") return Optimizer::gradient_descent;
  throw ConfigError("unknown optimizer '" + name + "' (valid: adam, sgd)");
}

void TrainConfig::validate() const {
  if (epochs == 0) throw ConfigError("epochs must be positive");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (!(step > 0.0) || !std::isfinite(step)) throw ConfigError("step size must be positive");
}

namespace {

// Flattened view over all parameters of a network, in layer order.
std::vector<double*> parameter_slots(Network& net) {
  std::vector<double*> slots;
  for (auto& l : net.layers()) {
    for (double& w : l.weight) slots.push_back(&w);
    for (double& b : l.bias) slots.push_back(&b);
  }
  return slots;
}

class AdamState {
 public:
  explicit AdamState(std::size_t size) : m_(size, 0.0), v_(size, 0.0) {}

  void apply(std::span<double* const> params, std::span<const double> grad, double step) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grad[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grad[i] * grad[i];
      *params[i] -= step * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  std::vector<double> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace

std::vector<EpochMetrics> train(Network& net, const LabeledDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  data.validate();
  if (data.num_classes() < 2) throw ConfigError("training needs at least two classes");
  if (net.num_classes() != data.num_classes()) throw ConfigError("network class count does not match dataset");
  const auto train_set = data.subset(Split::train);
  const auto test_set = data.subset(Split::test);
  if (train_set.empty()) throw ConfigError("training split is empty");

  auto slots = parameter_slots(net);
  AdamState adam(slots.size());
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad(slots.size());
  std::vector<EpochMetrics> history;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      for (std::size_t b = start; b < end; ++b) {
        const auto& cloud = train_set[order[b]];
        ad::Tape tape;
        auto out = net.forward(tape, cloud);
        auto loss = ad::softmax_cross_entropy(out.logits, *cloud.label());
        const double value = loss.item();
        if (!std::isfinite(value)) throw TrainingError("loss is not finite", epoch);
        loss_sum += value;
        correct += predict_from_logits(out.logits.values()).label == *cloud.label();
        auto g = tape.backward(loss);
        std::size_t offset = 0;
        for (const auto& p : out.parameters) {
          auto pg = g.of(p);
          for (std::size_t i = 0; i < pg.size(); ++i) grad[offset + i] += pg[i];
          offset += pg.size();
        }
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (double& v : grad) v *= scale;
      if (cfg.optimizer == Optimizer::adam) {
        adam.apply(slots, grad, cfg.step);
      } else {
        for (std::size_t i = 0; i < slots.size(); ++i) *slots[i] -= cfg.step * grad[i];
      }
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.loss = loss_sum / static_cast<double>(order.size());
    if (!std::isfinite(m.loss)) throw TrainingError("loss diverged", epoch);
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    m.test_accuracy = accuracy(net, test_set);
    history.push_back(m);
  }
  return history;
}

}  // namespace ape
