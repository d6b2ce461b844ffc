#include "mvcc/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <Eigen/Core>

namespace mvcc {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

}  // namespace

namespace detail {
struct Node {
  std::uint64_t id = 0;
  std::string op;
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};
}  // namespace detail

namespace {

std::atomic<std::uint64_t> g_next_id{1};

std::shared_ptr<detail::Node> new_node(std::string op, Shape shape, std::vector<double> data,
                                       bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  auto node = std::make_shared<detail::Node>();
  node->id = g_next_id.fetch_add(1);
  node->op = std::move(op);
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return node;
}

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
  }
}

enum class Broadcast { kSame, kScalarA, kScalarB };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (b.size() == 1) return Broadcast::kScalarB;
  if (a.size() == 1) return Broadcast::kScalarA;
  throw DimensionError(std::string(what) + ": incompatible shapes " + shape_str(a.shape()) +
                       " and " + shape_str(b.shape()));
}

// Generic binary elementwise op. fwd(x, y) computes the value; dx/dy give the
// local partials at (x, y).
template <class Fwd, class Dx, class Dy>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Dx dx, Dy dy) {
  const Broadcast kind = broadcast_kind(a, b, name);
  const Shape out_shape = kind == Broadcast::kScalarA ? b.shape() : a.shape();
  const std::size_t n = shape_numel(out_shape);
  auto ia = [kind](std::size_t i) { return kind == Broadcast::kScalarA ? 0 : i; };
  auto ib = [kind](std::size_t i) { return kind == Broadcast::kScalarB ? 0 : i; };
  std::vector<double> out(n);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ad[ia(i)], bd[ib(i)]);
  return make_result(name, out_shape, std::move(out), {a, b},
                     [a, b, ia, ib, n, dx, dy](std::span<const double> g, GradSinks sinks) {
                       auto ad = a.data();
                       auto bd = b.data();
                       if (!sinks[0].empty()) {
                         for (std::size_t i = 0; i < n; ++i)
                           sinks[0][ia(i)] += g[i] * dx(ad[ia(i)], bd[ib(i)]);
                       }
                       if (!sinks[1].empty()) {
                         for (std::size_t i = 0; i < n; ++i)
                           sinks[1][ib(i)] += g[i] * dy(ad[ia(i)], bd[ib(i)]);
                       }
                     });
}

template <class Fwd, class Deriv>
Tensor unary_op(const char* name, const Tensor& a, Fwd fwd, Deriv deriv) {
  const std::size_t n = a.size();
  std::vector<double> out(n);
  auto ad = a.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ad[i]);
  return make_result(name, a.shape(), std::move(out), {a},
                     [a, n, deriv](std::span<const double> g, GradSinks sinks) {
                       auto ad = a.data();
                       for (std::size_t i = 0; i < n; ++i) sinks[0][i] += g[i] * deriv(ad[i]);
                     });
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor handle

Tensor::Tensor() : node_(new_node("const", {1}, {0.0}, false)) {}

Tensor Tensor::constant(Shape shape, std::vector<double> data) {
  return Tensor(new_node("const", std::move(shape), std::move(data), false));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> data) {
  return Tensor(new_node("param", std::move(shape), std::move(data), true));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
  std::vector<double> data(shape_numel(shape), value);
  return requires_grad ? parameter(std::move(shape), std::move(data))
                       : constant(std::move(shape), std::move(data));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return filled({1}, value, requires_grad); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= node_->shape.size()) throw DimensionError("axis out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::size() const { return node_->data.size(); }
std::span<const double> Tensor::data() const { return node_->data; }

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
  return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

std::optional<std::span<const double>> Tensor::grad() const {
  if (!node_->has_grad) return std::nullopt;
  return std::span<const double>(node_->grad);
}

void Tensor::zero_grad() {
  node_->grad.assign(node_->data.size(), 0.0);
  node_->has_grad = node_->requires_grad;
}

std::uint64_t Tensor::node_id() const { return node_->id; }
const std::string& Tensor::op() const { return node_->op; }
const std::vector<Tensor>& Tensor::inputs() const { return node_->inputs; }

Tensor Tensor::detach() const { return constant(shape(), node_->data); }

std::span<double> Tensor::mutable_data() { return node_->data; }

Tensor make_result(std::string op, Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                   BackwardFn backward) {
  for (double v : data) {
    if (!std::isfinite(v)) throw NumericError(op + ": produced a non-finite value");
  }
  const bool needs_grad =
      std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  auto node = new_node(std::move(op), std::move(shape), std::move(data), needs_grad);
  if (needs_grad) {
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

std::vector<Tensor> collect_graph(const Tensor& root) {
  std::vector<Tensor> order;
  std::unordered_set<const detail::Node*> seen;
  std::vector<Tensor> stack{root};
  while (!stack.empty()) {
    Tensor t = std::move(stack.back());
    stack.pop_back();
    if (!seen.insert(t.node_.get()).second) continue;
    for (const Tensor& in : t.inputs()) stack.push_back(in);
    order.push_back(std::move(t));
  }
  std::sort(order.begin(), order.end(),
            [](const Tensor& a, const Tensor& b) { return a.node_id() < b.node_id(); });
  return order;
}

void backward(const Tensor& loss) {
  if (loss.size() != 1) throw DimensionError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;
  std::vector<Tensor> order = collect_graph(loss);
  for (Tensor& t : order) {
    detail::Node& n = *t.node_;
    if (!n.requires_grad) continue;
    if (!n.inputs.empty() || !n.has_grad) {
      n.grad.assign(n.data.size(), 0.0);
      n.has_grad = true;
    }
  }
  loss.node_->grad[0] += 1.0;

  std::vector<std::span<double>> sinks;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node& n = *it->node_;
    if (n.inputs.empty() || !n.backward) continue;
    sinks.clear();
    for (const Tensor& in : n.inputs) {
      if (in.requires_grad()) {
        sinks.emplace_back(in.node_->grad);
      } else {
        sinks.emplace_back();
      }
    }
    n.backward(n.grad, sinks);
  }
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " · " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(m * p);
  MutMap(out.data(), m, p).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, p);
  return make_result("matmul", {m, p}, std::move(out), {a, b},
                     [a, b, m, k, p](std::span<const double> g, GradSinks sinks) {
                       const ConstMap gm(g.data(), m, p);
                       if (!sinks[0].empty()) {
                         MutMap(sinks[0].data(), m, k).noalias() += gm * ConstMap(b.data().data(), k, p).transpose();
                       }
                       if (!sinks[1].empty()) {
                         MutMap(sinks[1].data(), k, p).noalias() += ConstMap(a.data().data(), m, k).transpose() * gm;
                       }
                     });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  auto ad = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = ad[i * c + j];
  return make_result("transpose", {c, r}, std::move(out), {a},
                     [r, c](std::span<const double> g, GradSinks sinks) {
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j) sinks[0][i * c + j] += g[j * r + i];
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  auto ad = a.data();
  return make_result("reshape", std::move(shape), std::vector<double>(ad.begin(), ad.end()), {a},
                     [](std::span<const double> g, GradSinks sinks) {
                       for (std::size_t i = 0; i < g.size(); ++i) sinks[0][i] += g[i];
                     });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t cols = parts[0].rank() == 2 ? parts[0].dim(1) : 0;
  std::size_t rows = 0;
  std::vector<double> out;
  for (const Tensor& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != cols) throw DimensionError("concat_rows: column counts differ");
    rows += p.dim(0);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result("concat_rows", {rows, cols}, std::move(out), inputs,
                     [inputs](std::span<const double> g, GradSinks sinks) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < inputs.size(); ++k) {
                         const std::size_t n = inputs[k].size();
                         if (!sinks[k].empty())
                           for (std::size_t i = 0; i < n; ++i) sinks[k][i] += g[offset + i];
                         offset += n;
                       }
                     });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_rank(a, 2, "gather_rows");
  const std::size_t cols = a.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * cols);
  auto ad = a.data();
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= a.dim(0)) throw DimensionError("gather_rows: row index out of range");
    std::copy_n(ad.data() + idx[r] * cols, cols, out.data() + r * cols);
  }
  const std::size_t n = idx.size();
  return make_result("gather_rows", {n, cols}, std::move(out), {a},
                     [idx = std::move(idx), cols](std::span<const double> g, GradSinks sinks) {
                       for (std::size_t r = 0; r < idx.size(); ++r)
                         for (std::size_t j = 0; j < cols; ++j) sinks[0][idx[r] * cols + j] += g[r * cols + j];
                     });
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  for (double v : b.data()) {
    if (v == 0.0) throw DomainError("div: division by zero");
  }
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor scale(const Tensor& a, double factor) {
  return unary_op(
      "scale", a, [factor](double x) { return factor * x; }, [factor](double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary_op(
      "add_scalar", a, [value](double x) { return x + value; }, [](double) { return 1.0; });
}

Tensor square(const Tensor& a) {
  return unary_op(
      "square", a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input");
  }
  return unary_op(
      "log", a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Tensor exp(const Tensor& a) {
  return unary_op(
      "exp", a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Tensor relu(const Tensor& a) {
  return unary_op(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& a) {
  auto ad = a.data();
  const double s = std::accumulate(ad.begin(), ad.end(), 0.0);
  return make_result("sum", {1}, {s}, {a}, [](std::span<const double> g, GradSinks sinks) {
    for (double& v : sinks[0]) v += g[0];
  });
}

Tensor mean(const Tensor& a) {
  auto ad = a.data();
  const double n = static_cast<double>(ad.size());
  const double s = std::accumulate(ad.begin(), ad.end(), 0.0) / n;
  return make_result("mean", {1}, {s}, {a}, [n](std::span<const double> g, GradSinks sinks) {
    for (double& v : sinks[0]) v += g[0] / n;
  });
}

Tensor frobenius_sq(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v * v;
  return make_result("frobenius_sq", {1}, {s}, {a}, [a](std::span<const double> g, GradSinks sinks) {
    auto ad = a.data();
    for (std::size_t i = 0; i < ad.size(); ++i) sinks[0][i] += 2.0 * ad[i] * g[0];
  });
}

// ---------------------------------------------------------------------------
// Row-wise

Tensor softmax_rows(const Tensor& a) {
  require_rank(a, 2, "softmax_rows");
  const std::size_t n = a.dim(0), m = a.dim(1);
  std::vector<double> out(n * m);
  auto ad = a.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = ad.data() + i * m;
    double* y = out.data() + i * m;
    const double mx = *std::max_element(x, x + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < m; ++j) y[j] /= z;
  }
  std::vector<double> saved = out;
  return make_result("softmax_rows", {n, m}, std::move(out), {a},
                     [saved = std::move(saved), n, m](std::span<const double> g, GradSinks sinks) {
                       for (std::size_t i = 0; i < n; ++i) {
                         const double* y = saved.data() + i * m;
                         const double* gi = g.data() + i * m;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < m; ++j) dot += gi[j] * y[j];
                         for (std::size_t j = 0; j < m; ++j) sinks[0][i * m + j] += y[j] * (gi[j] - dot);
                       }
                     });
}

Tensor log_softmax_rows(const Tensor& a) {
  require_rank(a, 2, "log_softmax_rows");
  const std::size_t n = a.dim(0), m = a.dim(1);
  std::vector<double> out(n * m);
  auto ad = a.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = ad.data() + i * m;
    const double mx = *std::max_element(x, x + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = x[j] - lse;
  }
  std::vector<double> saved = out;
  return make_result("log_softmax_rows", {n, m}, std::move(out), {a},
                     [saved = std::move(saved), n, m](std::span<const double> g, GradSinks sinks) {
                       for (std::size_t i = 0; i < n; ++i) {
                         const double* gi = g.data() + i * m;
                         double gsum = 0.0;
                         for (std::size_t j = 0; j < m; ++j) gsum += gi[j];
                         for (std::size_t j = 0; j < m; ++j)
                           sinks[0][i * m + j] += gi[j] - std::exp(saved[i * m + j]) * gsum;
                       }
                     });
}

Tensor l2_normalize_rows(const Tensor& a, double eps) {
  require_rank(a, 2, "l2_normalize_rows");
  const std::size_t n = a.dim(0), m = a.dim(1);
  std::vector<double> out(n * m);
  std::vector<double> norms(n);
  auto ad = a.data();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += ad[i * m + j] * ad[i * m + j];
    norms[i] = std::sqrt(s);
    const double denom = std::max(norms[i], eps);
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = ad[i * m + j] / denom;
  }
  std::vector<double> saved = out;
  return make_result(
      "l2_normalize_rows", {n, m}, std::move(out), {a},
      [saved = std::move(saved), norms = std::move(norms), n, m, eps](std::span<const double> g, GradSinks sinks) {
        for (std::size_t i = 0; i < n; ++i) {
          const double* y = saved.data() + i * m;
          const double* gi = g.data() + i * m;
          if (norms[i] > eps) {
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) dot += y[j] * gi[j];
            for (std::size_t j = 0; j < m; ++j) sinks[0][i * m + j] += (gi[j] - y[j] * dot) / norms[i];
          } else {
            for (std::size_t j = 0; j < m; ++j) sinks[0][i * m + j] += gi[j] / eps;
          }
        }
      });
}

Tensor normalize_rows_sum(const Tensor& a, double eps) {
  require_rank(a, 2, "normalize_rows_sum");
  const std::size_t n = a.dim(0), m = a.dim(1);
  std::vector<double> out(n * m);
  std::vector<double> sums(n);
  auto ad = a.data();
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) s += ad[i * m + j];
    sums[i] = s;
    const double denom = std::max(s, eps);
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = ad[i * m + j] / denom;
  }
  std::vector<double> saved = out;
  return make_result(
      "normalize_rows_sum", {n, m}, std::move(out), {a},
      [saved = std::move(saved), sums = std::move(sums), n, m, eps](std::span<const double> g, GradSinks sinks) {
        for (std::size_t i = 0; i < n; ++i) {
          const double* y = saved.data() + i * m;
          const double* gi = g.data() + i * m;
          if (sums[i] > eps) {
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) dot += y[j] * gi[j];
            for (std::size_t j = 0; j < m; ++j) sinks[0][i * m + j] += (gi[j] - dot) / sums[i];
          } else {
            for (std::size_t j = 0; j < m; ++j) sinks[0][i * m + j] += gi[j] / eps;
          }
        }
      });
}

Tensor softmax_channels(const Tensor& a) {
  require_rank(a, 3, "softmax_channels");
  const std::size_t c = a.dim(0), hw = a.dim(1) * a.dim(2);
  std::vector<double> out(c * hw);
  auto ad = a.data();
  for (std::size_t p = 0; p < hw; ++p) {
    double mx = ad[p];
    for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, ad[k * hw + p]);
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += (out[k * hw + p] = std::exp(ad[k * hw + p] - mx));
    for (std::size_t k = 0; k < c; ++k) out[k * hw + p] /= z;
  }
  std::vector<double> saved = out;
  return make_result("softmax_channels", a.shape(), std::move(out), {a},
                     [saved = std::move(saved), c, hw](std::span<const double> g, GradSinks sinks) {
                       for (std::size_t p = 0; p < hw; ++p) {
                         double dot = 0.0;
                         for (std::size_t k = 0; k < c; ++k) dot += g[k * hw + p] * saved[k * hw + p];
                         for (std::size_t k = 0; k < c; ++k)
                           sinks[0][k * hw + p] += saved[k * hw + p] * (g[k * hw + p] - dot);
                       }
                     });
}

Tensor pixel_rows(const Tensor& a) {
  require_rank(a, 3, "pixel_rows");
  const std::size_t c = a.dim(0), hw = a.dim(1) * a.dim(2);
  std::vector<double> out(c * hw);
  auto ad = a.data();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t p = 0; p < hw; ++p) out[p * c + k] = ad[k * hw + p];
  return make_result("pixel_rows", {hw, c}, std::move(out), {a},
                     [c, hw](std::span<const double> g, GradSinks sinks) {
                       for (std::size_t k = 0; k < c; ++k)
                         for (std::size_t p = 0; p < hw; ++p) sinks[0][k * hw + p] += g[p * c + k];
                     });
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

// Zero-padded patch matrix: row (ci, ky, kx), column p = y·W + x.
std::vector<double> im2col(std::span<const double> in, std::size_t cin, std::size_t h, std::size_t w,
                           std::size_t k) {
  const long r = static_cast<long>(k / 2);
  const long hl = static_cast<long>(h), wl = static_cast<long>(w);
  std::vector<double> col(cin * k * k * h * w, 0.0);
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < cin; ++ci)
    for (long ky = 0; ky < static_cast<long>(k); ++ky)
      for (long kx = 0; kx < static_cast<long>(k); ++kx, ++row) {
        const long dy = ky - r, dx = kx - r;
        const long x0 = std::max(0L, -dx), x1 = std::min(wl, wl - dx);
        double* dst = col.data() + row * h * w;
        for (long y = std::max(0L, -dy); y < std::min(hl, hl - dy); ++y) {
          const double* src = in.data() + (ci * h + static_cast<std::size_t>(y + dy)) * w;
          double* drow = dst + static_cast<std::size_t>(y) * w;
          for (long x = x0; x < x1; ++x) drow[x] = src[x + dx];
        }
      }
  return col;
}

}  // namespace

Tensor conv2d_same(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 3, "conv2d_same input");
  require_rank(weight, 4, "conv2d_same weight");
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin || weight.dim(3) != k || k % 2 == 0) {
    throw DimensionError("conv2d_same: weight " + shape_str(weight.shape()) + " incompatible with input " +
                         shape_str(input.shape()));
  }
  if (bias.size() != cout) throw DimensionError("conv2d_same: bias size mismatch");
  const std::size_t hw = h * w, taps = cin * k * k;

  auto col = std::make_shared<std::vector<double>>(im2col(input.data(), cin, h, w, k));
  std::vector<double> out(cout * hw);
  auto bs = bias.data();
  MutMap om(out.data(), cout, hw);
  om.noalias() = ConstMap(weight.data().data(), cout, taps) * ConstMap(col->data(), taps, hw);
  for (std::size_t o = 0; o < cout; ++o) om.row(o).array() += bs[o];

  return make_result(
      "conv2d_same", {cout, h, w}, std::move(out), {input, weight, bias},
      [=](std::span<const double> g, GradSinks sinks) {
        if (!sinks[2].empty()) {
          for (std::size_t o = 0; o < cout; ++o) {
            double s = 0.0;
            for (std::size_t p = 0; p < hw; ++p) s += g[o * hw + p];
            sinks[2][o] += s;
          }
        }
        const ConstMap gm(g.data(), cout, hw);
        if (!sinks[1].empty()) {
          MutMap(sinks[1].data(), cout, taps).noalias() += gm * ConstMap(col->data(), taps, hw).transpose();
        }
        if (!sinks[0].empty()) {
          RowMatrix dcol = ConstMap(weight.data().data(), cout, taps).transpose() * gm;
          const long r = static_cast<long>(k / 2);
          const long hl = static_cast<long>(h), wl = static_cast<long>(w);
          for (std::size_t j = 0; j < taps; ++j) {
            const std::size_t ci = j / (k * k);
            const long dy = static_cast<long>((j / k) % k) - r, dx = static_cast<long>(j % k) - r;
            const long x0 = std::max(0L, -dx), x1 = std::min(wl, wl - dx);
            const double* drow = dcol.data() + j * hw;
            for (long y = std::max(0L, -dy); y < std::min(hl, hl - dy); ++y) {
              double* dst = sinks[0].data() + (ci * h + static_cast<std::size_t>(y + dy)) * w;
              const double* src = drow + static_cast<std::size_t>(y) * w;
              for (long x = x0; x < x1; ++x) dst[x + dx] += src[x];
            }
          }
        }
      });
}

}  // namespace mvcc
