#include "ape/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "ape/errors.hpp"

namespace ape::ad {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? "×" : "") << shape[i];
  out << ']';
  return out.str();
}

// ---- Tensor ---------------------------------------------------------------

Tape& Tensor::tape() const {
  if (!tape_) throw ContractError("tensor handle is not attached to a tape");
  return *tape_;
}

const Shape& Tensor::shape() const { return tape().node(*this).shape; }

std::span<const double> Tensor::values() const { return tape().node(*this).values; }

bool Tensor::requires_grad() const { return tape().node(*this).requires_grad; }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  return s.empty() ? 1 : s[0];
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  return s.size() < 2 ? 1 : s[1];
}

double Tensor::at(std::size_t row, std::size_t col) const { return values()[row * cols() + col]; }

double Tensor::item() const {
  auto v = values();
  if (v.size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return v[0];
}

// ---- Gradients ------------------------------------------------------------

bool Gradients::has(const Tensor& t) const { return t.id() < present_.size() && present_[t.id()]; }

std::span<const double> Gradients::of(const Tensor& t) const& {
  if (!has(t)) throw ContractError("no gradient recorded for node " + std::to_string(t.id()));
  return grads_[t.id()];
}

// ---- Tape -----------------------------------------------------------------

const Tape::Node& Tape::node(const Tensor& t) const {
  if (t.tape_ != this || t.id_ >= nodes_.size()) throw ContractError("tensor does not belong to this tape");
  return nodes_[t.id_];
}

Tensor Tape::push(Node n) {
  if (n.values.size() != numel(n.shape)) {
    throw DimensionError("value count " + std::to_string(n.values.size()) + " does not match shape " +
                         to_string(n.shape));
  }
  nodes_.push_back(std::move(n));
  return Tensor(this, nodes_.size() - 1);
}

Tensor Tape::variable(Shape shape, std::vector<double> values) {
  return push(Node{std::move(shape), std::move(values), {}, {}, true});
}

Tensor Tape::constant(Shape shape, std::vector<double> values) {
  return push(Node{std::move(shape), std::move(values), {}, {}, false});
}

Tensor Tape::record(Shape shape, std::vector<double> values, std::vector<Tensor> inputs, BackwardFn backward) {
  Node n{std::move(shape), std::move(values), {}, std::move(backward), false};
  n.inputs.reserve(inputs.size());
  for (const auto& in : inputs) {
    node(in);
    n.inputs.push_back(in.id());
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  return push(std::move(n));
}

Gradients Tape::backward(const Tensor& output) const {
  const Node& out = node(output);
  if (out.values.size() != 1) {
    throw ContractError("backward needs a scalar output, got shape " + to_string(out.shape));
  }

  Gradients g;
  g.grads_.resize(nodes_.size());
  g.present_.assign(nodes_.size(), false);
  if (!out.requires_grad) return g;

  g.grads_[output.id()] = {1.0};
  g.present_[output.id()] = true;

  std::vector<std::span<double>> input_grads;
  for (std::size_t id = output.id() + 1; id-- > 0;) {
    if (!g.present_[id]) continue;
    const Node& n = nodes_[id];
    if (!n.backward) continue;
    input_grads.clear();
    for (std::size_t in : n.inputs) {
      const Node& src = nodes_[in];
      if (!src.requires_grad) {
        input_grads.emplace_back();
        continue;
      }
      if (!g.present_[in]) {
        g.grads_[in].assign(src.values.size(), 0.0);
        g.present_[in] = true;
      }
      input_grads.emplace_back(g.grads_[in]);
    }
    n.backward(g.grads_[id], input_grads);
  }
  return g;
}

// ---- operations -----------------------------------------------------------

namespace {

void require_matrix(const Tensor& t, const char* op) {
  if (t.shape().size() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got shape " + to_string(t.shape()));
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul shape mismatch: " + to_string(a.shape()) + " × " + to_string(b.shape()));
  }
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(m * p, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const double ail = av[i * k + l];
      if (ail == 0.0) continue;
      const double* brow = &bv[l * p];
      double* orow = &out[i * p];
      for (std::size_t j = 0; j < p; ++j) orow[j] += ail * brow[j];
    }
  }
  return a.tape().record({m, p}, std::move(out), {a, b}, [a, b, m, k, p](auto up, auto grads) {
    auto av = a.values();
    auto bv = b.values();
    if (!grads[0].empty()) {
      // dA = dY · Bᵀ
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
          double s = 0.0;
          for (std::size_t j = 0; j < p; ++j) s += up[i * p + j] * bv[l * p + j];
          grads[0][i * k + l] += s;
        }
    }
    if (!grads[1].empty()) {
      // dB = Aᵀ · dY
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t l = 0; l < k; ++l) {
          const double ail = av[i * k + l];
          if (ail == 0.0) continue;
          for (std::size_t j = 0; j < p; ++j) grads[1][l * p + j] += ail * up[i * p + j];
        }
    }
  });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  require_matrix(a, "add_bias");
  const std::size_t m = a.rows(), p = a.cols();
  if (bias.size() != p) {
    throw DimensionError("add_bias shape mismatch: " + to_string(a.shape()) + " + " + to_string(bias.shape()));
  }
  auto av = a.values();
  auto bv = bias.values();
  std::vector<double> out(av.begin(), av.end());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j) out[i * p + j] += bv[j];
  return a.tape().record(a.shape(), std::move(out), {a, bias}, [m, p](auto up, auto grads) {
    if (!grads[0].empty())
      for (std::size_t i = 0; i < up.size(); ++i) grads[0][i] += up[i];
    if (!grads[1].empty())
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) grads[1][j] += up[i * p + j];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add shape mismatch: " + to_string(a.shape()) + " + " + to_string(b.shape()));
  }
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  return a.tape().record(a.shape(), std::move(out), {a, b}, [](auto up, auto grads) {
    for (auto g : grads)
      if (!g.empty())
        for (std::size_t i = 0; i < up.size(); ++i) g[i] += up[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("sub shape mismatch: " + to_string(a.shape()) + " - " + to_string(b.shape()));
  }
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  return a.tape().record(a.shape(), std::move(out), {a, b}, [](auto up, auto grads) {
    if (!grads[0].empty())
      for (std::size_t i = 0; i < up.size(); ++i) grads[0][i] += up[i];
    if (!grads[1].empty())
      for (std::size_t i = 0; i < up.size(); ++i) grads[1][i] -= up[i];
  });
}

Tensor relu(const Tensor& x) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  return x.tape().record(x.shape(), std::move(out), {x}, [x](auto up, auto grads) {
    auto xv = x.values();
    for (std::size_t i = 0; i < up.size(); ++i)
      if (xv[i] > 0.0) grads[0][i] += up[i];
  });
}

Tensor sum(const Tensor& x) {
  auto xv = x.values();
  const double s = std::accumulate(xv.begin(), xv.end(), 0.0);
  return x.tape().record({}, {s}, {x}, [](auto up, auto grads) {
    for (double& g : grads[0]) g += up[0];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
  }
  auto xv = x.values();
  return x.tape().record(std::move(shape), std::vector<double>(xv.begin(), xv.end()), {x}, [](auto up, auto grads) {
    for (std::size_t i = 0; i < up.size(); ++i) grads[0][i] += up[i];
  });
}

Tensor select(const Tensor& x, std::size_t index) {
  if (index >= x.size()) {
    throw IndexError("select index " + std::to_string(index) + " out of range for shape " + to_string(x.shape()));
  }
  return x.tape().record({}, {x.values()[index]}, {x}, [index](auto up, auto grads) { grads[0][index] += up[0]; });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_matrix(a, "concat_cols");
  require_matrix(b, "concat_cols");
  const std::size_t m = a.rows(), p = a.cols(), q = b.cols();
  if (b.rows() != m) {
    throw DimensionError("concat_cols row mismatch: " + to_string(a.shape()) + " | " + to_string(b.shape()));
  }
  auto av = a.values();
  auto bv = b.values();
  std::vector<double> out(m * (p + q));
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(&av[i * p], p, &out[i * (p + q)]);
    std::copy_n(&bv[i * q], q, &out[i * (p + q) + p]);
  }
  return a.tape().record({m, p + q}, std::move(out), {a, b}, [m, p, q](auto up, auto grads) {
    for (std::size_t i = 0; i < m; ++i) {
      if (!grads[0].empty())
        for (std::size_t j = 0; j < p; ++j) grads[0][i * p + j] += up[i * (p + q) + j];
      if (!grads[1].empty())
        for (std::size_t j = 0; j < q; ++j) grads[1][i * q + j] += up[i * (p + q) + p + j];
    }
  });
}

Tensor row_squared_norm(const Tensor& x) {
  require_matrix(x, "row_squared_norm");
  const std::size_t m = x.rows(), p = x.cols();
  auto xv = x.values();
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < p; ++j) out[i] += xv[i * p + j] * xv[i * p + j];
  return x.tape().record({m, 1}, std::move(out), {x}, [x, m, p](auto up, auto grads) {
    auto xv = x.values();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < p; ++j) grads[0][i * p + j] += 2.0 * xv[i * p + j] * up[i];
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_matrix(x, "gather_rows");
  const std::size_t n = x.rows(), c = x.cols();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  auto xv = x.values();
  std::vector<double> out(idx.size() * c);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n) throw IndexError("gather_rows index " + std::to_string(idx[r]) + " out of range");
    std::copy_n(&xv[idx[r] * c], c, &out[r * c]);
  }
  return x.tape().record({idx.size(), c}, std::move(out), {x}, [idx, c](auto up, auto grads) {
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t j = 0; j < c; ++j) grads[0][idx[r] * c + j] += up[r * c + j];
  });
}

Tensor global_avg_pool(const Tensor& x) {
  require_matrix(x, "global_avg_pool");
  const std::size_t n = x.rows(), k = x.cols();
  if (n == 0) throw PreconditionError("global_avg_pool over an empty point axis");
  auto xv = x.values();
  std::vector<double> out(k, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) out[j] += xv[i * k + j];
  for (double& v : out) v /= static_cast<double>(n);
  return x.tape().record({k}, std::move(out), {x}, [n, k](auto up, auto grads) {
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) grads[0][i * k + j] += up[j] * inv;
  });
}

namespace {

MaxPoolResult pool_blocks(const Tensor& x, std::size_t group_size, bool flatten) {
  const std::size_t n = x.rows(), k = x.cols();
  if (n == 0 || group_size == 0) throw PreconditionError("max pool over an empty point axis");
  if (n % group_size != 0) {
    throw DimensionError("max_pool_groups: " + std::to_string(n) + " rows not divisible into groups of " +
                         std::to_string(group_size));
  }
  const std::size_t groups = n / group_size;
  auto xv = x.values();
  std::vector<double> out(groups * k);
  std::vector<std::size_t> argmax(groups * k);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t j = 0; j < k; ++j) {
      std::size_t best = g * group_size;
      for (std::size_t r = best + 1; r < (g + 1) * group_size; ++r)
        if (xv[r * k + j] > xv[best * k + j]) best = r;
      argmax[g * k + j] = best;
      out[g * k + j] = xv[best * k + j];
    }
  }
  Shape shape = flatten ? Shape{k} : Shape{groups, k};
  Tensor values = x.tape().record(std::move(shape), std::move(out), {x}, [argmax, k](auto up, auto grads) {
    for (std::size_t i = 0; i < argmax.size(); ++i) grads[0][argmax[i] * k + i % k] += up[i];
  });
  return {values, std::move(argmax)};
}

}  // namespace

MaxPoolResult max_pool_groups(const Tensor& x, std::size_t group_size) {
  require_matrix(x, "max_pool_groups");
  return pool_blocks(x, group_size, false);
}

MaxPoolResult max_pool_points(const Tensor& x) {
  require_matrix(x, "max_pool_points");
  return pool_blocks(x, x.rows(), true);
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double mx = *std::max_element(p.begin(), p.end());
  double z = 0.0;
  for (double& v : p) z += (v = std::exp(v - mx));
  for (double& v : p) v /= z;
  return p;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::size_t label) {
  const std::size_t c = logits.size();
  if (label >= c) {
    throw IndexError("label " + std::to_string(label) + " out of range for " + std::to_string(c) + " classes");
  }
  auto lv = logits.values();
  const double mx = *std::max_element(lv.begin(), lv.end());
  double z = 0.0;
  for (double v : lv) z += std::exp(v - mx);
  const double loss = mx + std::log(z) - lv[label];
  return logits.tape().record({}, {loss}, {logits}, [logits, label](auto up, auto grads) {
    auto p = softmax(logits.values());
    for (std::size_t i = 0; i < p.size(); ++i) grads[0][i] += up[0] * (p[i] - (i == label ? 1.0 : 0.0));
  });
}

double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Shape& shape,
                  std::span<const double> x, double eps) {
  std::vector<double> point(x.begin(), x.end());
  Tape tape;
  Tensor input = tape.variable(shape, point);
  Tensor y = f(tape, input);
  Gradients g = tape.backward(y);
  std::vector<double> analytic = g.has(input) ? std::vector<double>(g.of(input).begin(), g.of(input).end())
                                              : std::vector<double>(point.size(), 0.0);

  auto eval = [&](const std::vector<double>& at) {
    Tape t;
    return f(t, t.constant(shape, at)).item();
  };

  double worst = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    auto plus = point, minus = point;
    plus[i] += eps;
    minus[i] -= eps;
    const double numeric = (eval(plus) - eval(minus)) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace ape::ad
