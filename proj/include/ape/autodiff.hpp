#pragma once

// Minimal define-by-run reverse-mode automatic differentiation.
//
// A Tape owns every value produced during one forward pass. Tensors are
// lightweight handles (tape + node id) into that tape. Node ids are assigned
// in creation order, so reverse id order is a valid reverse topological order
// and backward() needs no graph search.

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ape::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tape;

class Tensor {
 public:
  Tensor() = default;

  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const;

  const Shape& shape() const;
  std::span<const double> values() const;
  bool requires_grad() const;

  std::size_t size() const { return values().size(); }
  std::size_t rows() const;
  std::size_t cols() const;
  double at(std::size_t row, std::size_t col) const;
  // Value of a single-element tensor.
  double item() const;

 private:
  friend class Tape;
  Tensor(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Gradient store produced by Tape::backward. Holds a gradient for every node
// that requires grad and lies on a path to the differentiated output,
// intermediate nodes included.
class Gradients {
 public:
  bool has(const Tensor& t) const;
  std::span<const double> of(const Tensor& t) const&;
  // The span would dangle once the temporary is gone.
  std::span<const double> of(const Tensor& t) const&& = delete;

 private:
  friend class Tape;
  std::vector<std::vector<double>> grads_;
  std::vector<bool> present_;
};

// Receives the upstream gradient of a node and accumulates into the gradients
// of its inputs. input_grads[i] is empty when input i does not require grad.
using BackwardFn =
    std::function<void(std::span<const double> upstream, std::span<const std::span<double>> input_grads)>;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor variable(Shape shape, std::vector<double> values);
  Tensor constant(Shape shape, std::vector<double> values);

  // Appends an op node. requires_grad is inherited from the inputs.
  Tensor record(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, BackwardFn backward);

  // Seeds d(output)/d(output) = 1 and propagates to every node on the path.
  // Read-only on the tape: repeated calls return identical gradients.
  Gradients backward(const Tensor& output) const;

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  friend class Tensor;

  struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  const Node& node(const Tensor& t) const;
  Tensor push(Node node);

  std::deque<Node> nodes_;
};

// ---- operations -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// a[m×p] + bias[p] broadcast over rows.
Tensor add_bias(const Tensor& a, const Tensor& bias);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
// ReLU with subgradient 0 at 0.
Tensor relu(const Tensor& x);
Tensor sum(const Tensor& x);
// Same values under a new shape of equal element count.
Tensor reshape(const Tensor& x, Shape shape);
// Single element of a vector as a scalar.
Tensor select(const Tensor& x, std::size_t index);
// [m×p] | [m×q] -> [m×(p+q)]
Tensor concat_cols(const Tensor& a, const Tensor& b);
// [m×p] -> [m×1] of squared row norms.
Tensor row_squared_norm(const Tensor& x);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor global_avg_pool(const Tensor& x);

struct MaxPoolResult {
  Tensor values;
  std::vector<std::size_t> argmax;  // winning row per column (or per group×column)
};

// Column-wise max over the point axis of an n×K tensor. Lowest row wins ties.
MaxPoolResult max_pool_points(const Tensor& x);
// Max over consecutive blocks of group_size rows: (g·k)×K -> g×K.
// argmax holds absolute row indices, laid out row-major g×K.
MaxPoolResult max_pool_groups(const Tensor& x, std::size_t group_size);

// Stable log-sum-exp cross entropy of a length-C logit vector.
Tensor softmax_cross_entropy(const Tensor& logits, std::size_t label);

std::vector<double> softmax(std::span<const double> logits);

// Max over coordinates of |analytic - central difference| / max(1, |central difference|).
double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Shape& shape,
                  std::span<const double> x, double eps = 1e-5);

}  // namespace ape::ad
