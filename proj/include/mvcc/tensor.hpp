#pragma once

// Dense 64-bit tensors with tape-style reverse-mode differentiation.
//
// A Tensor is a cheap handle onto an immutable node. Operations on tensors
// that require gradients record their inputs and a backward closure; the
// resulting DAG is rebuilt every training step and discarded afterwards.
// Node ids are drawn from a global monotonic counter, so every input of a
// node has a smaller id than the node itself and sorting by id yields a
// topological order.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvcc {

using Shape = std::vector<std::size_t>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

namespace detail {
struct Node;
}

/// Gradient sinks handed to a backward closure, one per input. A sink is an
/// empty span when that input does not require a gradient.
using GradSinks = std::span<const std::span<double>>;
using BackwardFn = std::function<void(std::span<const double> grad_out, GradSinks grad_in)>;

class Tensor {
 public:
  Tensor();

  static Tensor constant(Shape shape, std::vector<double> data);
  static Tensor parameter(Shape shape, std::vector<double> data);
  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor filled(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::span<const double> data() const;
  double item() const;
  double operator[](std::size_t flat) const { return data()[flat]; }

  bool requires_grad() const;
  /// Gradient accumulated by backward(); nullopt when never reached.
  std::optional<std::span<const double>> grad() const;
  void zero_grad();

  std::uint64_t node_id() const;
  const std::string& op() const;
  /// Recorded inputs. Empty for leaves and for results that need no gradient.
  const std::vector<Tensor>& inputs() const;
  bool is_leaf() const { return inputs().empty(); }

  /// Same values, cut from the graph.
  Tensor detach() const;

  /// In-place access for optimizer updates of leaf parameters.
  std::span<double> mutable_data();

  friend Tensor make_result(std::string op, Shape shape, std::vector<double> data,
                            std::vector<Tensor> inputs, BackwardFn backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend void backward(const Tensor& loss);
  friend std::vector<Tensor> collect_graph(const Tensor& root);

  std::shared_ptr<detail::Node> node_;
};

/// Builds an op result. Records the inputs and backward closure only when at
/// least one input requires a gradient. Throws NumericError if any output
/// value is non-finite.
Tensor make_result(std::string op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, BackwardFn backward);

/// Reverse sweep from a scalar loss. Leaf gradients accumulate (+=).
void backward(const Tensor& loss);

/// All nodes reachable from root, in topological (id) order.
std::vector<Tensor> collect_graph(const Tensor& root);

// Linear algebra and layout.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);

// Elementwise. Binary ops accept equal shapes or a single-element operand.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor square(const Tensor& a);
Tensor log(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor relu(const Tensor& a);

// Reductions to a scalar.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor frobenius_sq(const Tensor& a);

// Row-wise ops on N×M tensors.
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);
Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-12);
/// Divides each row by its sum (clamped below by eps). Rows are assumed
/// non-negative.
Tensor normalize_rows_sum(const Tensor& a, double eps = 1e-12);

/// Channel softmax of a C×H×W map, returned in the same layout.
Tensor softmax_channels(const Tensor& a);
/// C×H×W → (H·W)×C, one row per pixel.
Tensor pixel_rows(const Tensor& a);

/// Stride-1 "same" 2-D convolution. input C×H×W, weight O×C×K×K (K odd),
/// bias O. Zero padding.
Tensor conv2d_same(const Tensor& input, const Tensor& weight, const Tensor& bias);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

}  // namespace mvcc
