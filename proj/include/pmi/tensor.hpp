// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense f64 tensors with reverse-mode automatic differentiation.
//
// Storage is row-major and contiguous; 2-D operations map the buffer onto
// Eigen row-major matrices. Every operation whose inputs participate in the
// graph appends one node to the thread-local Graph, and Graph::backward walks
// the nodes in reverse append order.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pmi {

using Index = std::ptrdiff_t;
using Shape = std::vector<Index>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string shape_str(const Shape& s);
Index shape_numel(const Shape& s);

namespace detail {
struct TensorImpl {
  Shape shape;
  Vector data;
  Vector grad;  // empty until the first gradient contribution
  bool requires_grad = false;
  bool tracked = false;  // leaf with requires_grad, or output of a recorded op

  void accumulate(const Vector& g);
  void accumulate(Index i, double g);
};
}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Vector data, bool requires_grad = false);

  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor from_matrix(const RowMatrix& m);
  static Tensor parameter(Shape shape, Vector data);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  Index rank() const { return static_cast<Index>(impl_->shape.size()); }
  Index dim(Index axis) const;
  Index size() const { return impl_->data.size(); }
  Index rows() const;
  Index cols() const;

  const Vector& values() const { return impl_->data; }
  // Parameter updates only; tensors consumed by recorded ops must not change
  // until the graph is cleared.
  Vector& mutable_values() { return impl_->data; }
  double operator[](Index i) const { return impl_->data[i]; }
  double at(Index r, Index c) const;
  double item() const;
  RowMatrix matrix() const;
  Eigen::Map<const RowMatrix> map() const;

  bool requires_grad() const { return impl_->requires_grad; }
  bool tracked() const { return impl_->tracked; }
  bool has_grad() const { return impl_->grad.size() != 0; }
  // Zero-filled when no gradient has reached this tensor.
  Vector grad() const;
  RowMatrix grad_matrix() const;
  void zero_grad() const { impl_->grad.resize(0); }

  // Fresh leaf with the same values, detached from any graph.
  Tensor detach() const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  bool same(const Tensor& o) const { return impl_ == o.impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Append-only record of operations. Backward visits nodes in strict reverse
// order; a node runs only when its output received gradient.
class Graph {
 public:
  using BackwardFn = std::function<void(const Vector& grad_out)>;

  struct Node {
    std::string_view op;
    std::vector<Tensor> inputs;
    Tensor output;
    BackwardFn backward;
  };

  static Graph& current();

  void record(std::string_view op, std::vector<Tensor> inputs, const Tensor& output, BackwardFn fn);
  void backward(const Tensor& loss, bool clear_after = true);
  void clear() { nodes_.clear(); }
  std::size_t size() const { return nodes_.size(); }
  std::map<std::string, int> census() const;
  const std::vector<Node>& nodes() const { return nodes_; }

 private:
  std::vector<Node> nodes_;
};

void backward(const Tensor& loss);

// Disables recording on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

// Records which side of each non-differentiable point the nonsmooth ops
// (relu, leaky_relu, huber) landed on. The gradient checker compares the
// pattern between the +eps and -eps evaluations to skip straddled kinks.
class KinkRecorder {
 public:
  KinkRecorder();
  ~KinkRecorder();
  KinkRecorder(const KinkRecorder&) = delete;
  KinkRecorder& operator=(const KinkRecorder&) = delete;
  const std::vector<bool>& sides() const { return sides_; }
  static void note(bool side);
  static bool active();

 private:
  std::vector<bool> sides_;
  KinkRecorder* previous_;
};

enum class Elementwise {
  add, sub, mul, div,
  relu, sigmoid, tanh, exp, log, leaky_relu, huber,
  neg, square, sqrt
};

// Unary kinds ignore `b`; `param` is the huber delta or the leaky slope.
Tensor elementwise(const Tensor& a, Elementwise kind, const Tensor& b = {}, double param = 0.0);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.01);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor square(const Tensor& a);
Tensor huber(const Tensor& a, double delta);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

Tensor softmax(const Tensor& t, Index axis);
Tensor log_softmax(const Tensor& t, Index axis);

enum class Reduce { sum, mean };
Tensor reduce(const Tensor& t, Reduce kind, Index axis);
inline Tensor sum(const Tensor& t, Index axis) { return reduce(t, Reduce::sum, axis); }
inline Tensor mean(const Tensor& t, Index axis) { return reduce(t, Reduce::mean, axis); }
Tensor sum_all(const Tensor& t);
Tensor mean_all(const Tensor& t);

Tensor concat(const std::vector<Tensor>& parts, Index axis);
Tensor slice(const Tensor& t, Index axis, Index begin, Index length);
std::vector<Tensor> split(const Tensor& t, Index axis, std::span<const Index> extents);
Tensor reshape(const Tensor& t, Shape shape);

// Gathers slices along axis 0; backward scatter-adds, so repeated indices
// accumulate.
Tensor index_select(const Tensor& t, std::span<const Index> indices);

// out[i, bucket(i, j)] += t[i, j] for a rows x cols matrix; `buckets` is
// row-major with the same extent as `t`.
Tensor bucket_sum(const Tensor& t, std::span<const Index> buckets, Index num_buckets);

}  // namespace pmi
