// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0

#include "pmi/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace pmi {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

Index shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), Index{1}, std::multiplies<>());
}

namespace detail {
void TensorImpl::accumulate(const Vector& g) {
  if (grad.size() == 0)
    grad = g;
  else
    grad += g;
}
void TensorImpl::accumulate(Index i, double g) {
  if (grad.size() == 0) grad = Vector::Zero(data.size());
  grad[i] += g;
}
}  // namespace detail

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(Shape shape, Vector data, bool requires_grad)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  for (Index d : shape)
    if (d < 0) throw ShapeError("negative dimension in " + shape_str(shape));
  if (shape_numel(shape) != data.size())
    throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                     " values");
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
  impl_->tracked = requires_grad;
}

Tensor Tensor::zeros(Shape shape) {
  Index n = shape_numel(shape);
  return Tensor(std::move(shape), Vector::Zero(n));
}
Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }
Tensor Tensor::full(Shape shape, double value) {
  Index n = shape_numel(shape);
  return Tensor(std::move(shape), Vector::Constant(n, value));
}
Tensor Tensor::scalar(double value) { return Tensor({}, Vector::Constant(1, value)); }
Tensor Tensor::from(Shape shape, std::vector<double> values) {
  Vector v = Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
  return Tensor(std::move(shape), std::move(v));
}
Tensor Tensor::from_matrix(const RowMatrix& m) {
  Vector v = Eigen::Map<const Vector>(m.data(), m.size());
  return Tensor({m.rows(), m.cols()}, std::move(v));
}
Tensor Tensor::parameter(Shape shape, Vector data) {
  return Tensor(std::move(shape), std::move(data), true);
}

Index Tensor::dim(Index axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank())
    throw ShapeError("axis out of range for " + shape_str(shape()));
  return impl_->shape[static_cast<std::size_t>(axis)];
}

Index Tensor::rows() const {
  if (rank() != 2) throw ShapeError("expected a matrix, got " + shape_str(shape()));
  return impl_->shape[0];
}
Index Tensor::cols() const {
  if (rank() != 2) throw ShapeError("expected a matrix, got " + shape_str(shape()));
  return impl_->shape[1];
}

double Tensor::at(Index r, Index c) const { return impl_->data[r * cols() + c]; }

double Tensor::item() const {
  if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

RowMatrix Tensor::matrix() const { return map(); }

Eigen::Map<const RowMatrix> Tensor::map() const {
  if (rank() == 1) return {impl_->data.data(), 1, impl_->shape[0]};
  return {impl_->data.data(), rows(), cols()};
}

Vector Tensor::grad() const {
  if (has_grad()) return impl_->grad;
  return Vector::Zero(size());
}

RowMatrix Tensor::grad_matrix() const {
  Vector g = grad();
  if (rank() == 1) return Eigen::Map<const RowMatrix>(g.data(), 1, g.size());
  return Eigen::Map<const RowMatrix>(g.data(), rows(), cols());
}

Tensor Tensor::detach() const { return Tensor(shape(), values()); }

// ---------------------------------------------------------------- Graph

namespace {
thread_local bool g_grad_enabled = true;
thread_local KinkRecorder* g_kinks = nullptr;
}  // namespace

Graph& Graph::current() {
  thread_local Graph graph;
  return graph;
}

void Graph::record(std::string_view op, std::vector<Tensor> inputs, const Tensor& output,
                   BackwardFn fn) {
  output.impl()->tracked = true;
  nodes_.push_back(Node{op, std::move(inputs), output, std::move(fn)});
}

void Graph::backward(const Tensor& loss, bool clear_after) {
  if (!loss.defined() || loss.size() != 1)
    throw ContractError("backward() requires a scalar loss, got " +
                        (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  loss.impl()->accumulate(Vector::Ones(1));
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    const auto* out = it->output.impl();
    if (out->grad.size() == 0) continue;
    it->backward(out->grad);
  }
  if (clear_after) clear();
}

std::map<std::string, int> Graph::census() const {
  std::map<std::string, int> counts;
  for (const auto& n : nodes_) ++counts[std::string(n.op)];
  return counts;
}

void backward(const Tensor& loss) { Graph::current().backward(loss); }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

KinkRecorder::KinkRecorder() : previous_(g_kinks) { g_kinks = this; }
KinkRecorder::~KinkRecorder() { g_kinks = previous_; }
void KinkRecorder::note(bool side) {
  if (g_kinks) g_kinks->sides_.push_back(side);
}
bool KinkRecorder::active() { return g_kinks != nullptr; }

namespace {

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : inputs)
    if (t->defined() && t->tracked()) return true;
  return false;
}

bool should_record(const std::vector<Tensor>& inputs) {
  if (!g_grad_enabled) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.tracked(); });
}

void accumulate_if_tracked(const Tensor& t, const Vector& g) {
  if (t.tracked()) t.impl()->accumulate(g);
}

Index normalize_axis(Index axis, Index rank, const Shape& s) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank)
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return axis;
}

struct AxisSplit {
  Index outer, len, inner;
};

AxisSplit split_axis(const Shape& s, Index axis) {
  AxisSplit r{1, s[static_cast<std::size_t>(axis)], 1};
  for (Index i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  for (Index i = axis + 1; i < static_cast<Index>(s.size()); ++i) r.inner *= s[static_cast<std::size_t>(i)];
  return r;
}

// Maps every flat output index to the flat operand index under numpy-style
// broadcasting (ranks left-padded with ones).
struct Broadcast {
  Shape out;
  std::vector<Index> a_index, b_index;
  bool identical = false;
};

Broadcast make_broadcast(const Shape& sa, const Shape& sb) {
  Broadcast bc;
  if (sa == sb) {
    bc.out = sa;
    bc.identical = true;
    return bc;
  }
  std::size_t rank = std::max(sa.size(), sb.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(sa.begin(), sa.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - sa.size()));
  std::copy(sb.begin(), sb.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - sb.size()));
  bc.out.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1)
      throw ShapeError("cannot broadcast " + shape_str(sa) + " with " + shape_str(sb));
    bc.out[i] = std::max(pa[i], pb[i]);
    if (pa[i] == 0 || pb[i] == 0) bc.out[i] = 0;
  }
  std::vector<Index> stride_a(rank, 0), stride_b(rank, 0);
  Index ra = 1, rb = 1;
  for (std::size_t k = rank; k-- > 0;) {
    stride_a[k] = pa[k] == 1 ? 0 : ra;
    stride_b[k] = pb[k] == 1 ? 0 : rb;
    ra *= pa[k];
    rb *= pb[k];
  }
  Index n = shape_numel(bc.out);
  bc.a_index.resize(static_cast<std::size_t>(n));
  bc.b_index.resize(static_cast<std::size_t>(n));
  std::vector<Index> counter(rank, 0);
  Index ia = 0, ib = 0;
  for (Index flat = 0; flat < n; ++flat) {
    bc.a_index[static_cast<std::size_t>(flat)] = ia;
    bc.b_index[static_cast<std::size_t>(flat)] = ib;
    for (std::size_t k = rank; k-- > 0;) {
      ++counter[k];
      ia += stride_a[k];
      ib += stride_b[k];
      if (counter[k] < bc.out[k]) break;
      ia -= stride_a[k] * counter[k];
      ib -= stride_b[k] * counter[k];
      counter[k] = 0;
    }
  }
  return bc;
}

Vector reduce_to(const Vector& g, const std::vector<Index>& index, Index size) {
  Vector r = Vector::Zero(size);
  for (Index k = 0; k < g.size(); ++k) r[index[static_cast<std::size_t>(k)]] += g[k];
  return r;
}

Tensor binary(const Tensor& a, const Tensor& b, Elementwise kind) {
  if (!a.defined() || !b.defined()) throw ContractError("binary elementwise op needs two operands");
  Broadcast bc = make_broadcast(a.shape(), b.shape());
  const Vector& va = a.values();
  const Vector& vb = b.values();
  Index n = shape_numel(bc.out);
  Vector out(n);
  auto ea = [&](Index k) { return bc.identical ? va[k] : va[bc.a_index[static_cast<std::size_t>(k)]]; };
  auto eb = [&](Index k) { return bc.identical ? vb[k] : vb[bc.b_index[static_cast<std::size_t>(k)]]; };
  switch (kind) {
    case Elementwise::add:
      if (bc.identical) out = va + vb;
      else for (Index k = 0; k < n; ++k) out[k] = ea(k) + eb(k);
      break;
    case Elementwise::sub:
      if (bc.identical) out = va - vb;
      else for (Index k = 0; k < n; ++k) out[k] = ea(k) - eb(k);
      break;
    case Elementwise::mul:
      if (bc.identical) out = va.cwiseProduct(vb);
      else for (Index k = 0; k < n; ++k) out[k] = ea(k) * eb(k);
      break;
    case Elementwise::div:
      for (Index k = 0; k < n; ++k) out[k] = ea(k) / eb(k);
      break;
    default:
      throw ContractError("not a binary kind");
  }
  Tensor result(bc.out, std::move(out));
  if (!should_record({&a, &b})) return result;

  static constexpr std::string_view names[] = {"add", "sub", "mul", "div"};
  Graph::current().record(
      names[static_cast<int>(kind)], {a, b}, result,
      [a, b, kind, bc = std::move(bc)](const Vector& g) {
        Index n = g.size();
        Vector ga(n), gb(n);
        const Vector& va = a.values();
        const Vector& vb = b.values();
        auto ea = [&](Index k) { return bc.identical ? va[k] : va[bc.a_index[static_cast<std::size_t>(k)]]; };
        auto eb = [&](Index k) { return bc.identical ? vb[k] : vb[bc.b_index[static_cast<std::size_t>(k)]]; };
        for (Index k = 0; k < n; ++k) {
          switch (kind) {
            case Elementwise::add: ga[k] = g[k]; gb[k] = g[k]; break;
            case Elementwise::sub: ga[k] = g[k]; gb[k] = -g[k]; break;
            case Elementwise::mul: ga[k] = g[k] * eb(k); gb[k] = g[k] * ea(k); break;
            default: {
              double q = eb(k);
              ga[k] = g[k] / q;
              gb[k] = -g[k] * ea(k) / (q * q);
            }
          }
        }
        if (bc.identical) {
          accumulate_if_tracked(a, ga);
          accumulate_if_tracked(b, gb);
        } else {
          if (a.tracked()) a.impl()->accumulate(reduce_to(ga, bc.a_index, a.size()));
          if (b.tracked()) b.impl()->accumulate(reduce_to(gb, bc.b_index, b.size()));
        }
      });
  return result;
}

double huber_value(double x, double delta) {
  double ax = std::abs(x);
  return ax <= delta ? 0.5 * x * x : delta * (ax - 0.5 * delta);
}

Tensor unary(const Tensor& a, Elementwise kind, double param) {
  const Vector& v = a.values();
  Vector out(v.size());
  bool kinks = KinkRecorder::active();
  switch (kind) {
    case Elementwise::relu:
      out = v.cwiseMax(0.0);
      if (kinks) for (Index k = 0; k < v.size(); ++k) KinkRecorder::note(v[k] > 0);
      break;
    case Elementwise::leaky_relu:
      for (Index k = 0; k < v.size(); ++k) out[k] = v[k] > 0 ? v[k] : param * v[k];
      if (kinks) for (Index k = 0; k < v.size(); ++k) KinkRecorder::note(v[k] > 0);
      break;
    case Elementwise::sigmoid:
      for (Index k = 0; k < v.size(); ++k) {
        double x = v[k];
        out[k] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      }
      break;
    case Elementwise::tanh:
      out = v.array().tanh();
      break;
    case Elementwise::exp:
      out = v.array().exp();
      break;
    case Elementwise::log:
      for (Index k = 0; k < v.size(); ++k) {
        if (std::isnan(v[k])) throw NonFiniteError("log of NaN");
        if (!(v[k] > 0)) throw DomainError("log of non-positive value " + std::to_string(v[k]));
        out[k] = std::log(v[k]);
      }
      break;
    case Elementwise::sqrt:
      for (Index k = 0; k < v.size(); ++k) {
        if (v[k] < 0) throw DomainError("sqrt of negative value " + std::to_string(v[k]));
        out[k] = std::sqrt(v[k]);
      }
      break;
    case Elementwise::square:
      out = v.array().square();
      break;
    case Elementwise::neg:
      out = -v;
      break;
    case Elementwise::huber:
      if (!(param > 0)) throw DomainError("huber delta must be positive");
      for (Index k = 0; k < v.size(); ++k) out[k] = huber_value(v[k], param);
      if (kinks)
        for (Index k = 0; k < v.size(); ++k) {
          KinkRecorder::note(v[k] > param);
          KinkRecorder::note(v[k] < -param);
        }
      break;
    default:
      throw ContractError("not a unary kind");
  }
  Tensor result(a.shape(), std::move(out));
  if (!should_record({&a})) return result;

  static constexpr std::string_view names[] = {"add",  "sub",       "mul",   "div",        "relu",
                                               "sigmoid", "tanh",   "exp",   "log",        "leaky_relu",
                                               "huber", "neg",      "square", "sqrt"};
  Graph::current().record(
      names[static_cast<int>(kind)], {a}, result,
      [a, kind, param, y = result.values()](const Vector& g) {
        const Vector& x = a.values();
        Vector gi(g.size());
        for (Index k = 0; k < g.size(); ++k) {
          switch (kind) {
            case Elementwise::relu: gi[k] = x[k] > 0 ? g[k] : 0.0; break;
            case Elementwise::leaky_relu: gi[k] = x[k] > 0 ? g[k] : param * g[k]; break;
            case Elementwise::sigmoid: gi[k] = g[k] * y[k] * (1.0 - y[k]); break;
            case Elementwise::tanh: gi[k] = g[k] * (1.0 - y[k] * y[k]); break;
            case Elementwise::exp: gi[k] = g[k] * y[k]; break;
            case Elementwise::log: gi[k] = g[k] / x[k]; break;
            case Elementwise::sqrt: gi[k] = g[k] * 0.5 / y[k]; break;
            case Elementwise::square: gi[k] = g[k] * 2.0 * x[k]; break;
            case Elementwise::neg: gi[k] = -g[k]; break;
            default: {
              double xv = x[k];
              gi[k] = g[k] * (std::abs(xv) <= param ? xv : (xv > 0 ? param : -param));
            }
          }
        }
        accumulate_if_tracked(a, gi);
      });
  return result;
}

}  // namespace

Tensor elementwise(const Tensor& a, Elementwise kind, const Tensor& b, double param) {
  switch (kind) {
    case Elementwise::add:
    case Elementwise::sub:
    case Elementwise::mul:
    case Elementwise::div:
      return binary(a, b, kind);
    default:
      return unary(a, kind, param);
  }
}

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Elementwise::add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Elementwise::sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Elementwise::mul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, Elementwise::div); }
Tensor neg(const Tensor& a) { return unary(a, Elementwise::neg, 0); }
Tensor relu(const Tensor& a) { return unary(a, Elementwise::relu, 0); }
Tensor leaky_relu(const Tensor& a, double slope) { return unary(a, Elementwise::leaky_relu, slope); }
Tensor sigmoid(const Tensor& a) { return unary(a, Elementwise::sigmoid, 0); }
Tensor tanh(const Tensor& a) { return unary(a, Elementwise::tanh, 0); }
Tensor exp(const Tensor& a) { return unary(a, Elementwise::exp, 0); }
Tensor log(const Tensor& a) { return unary(a, Elementwise::log, 0); }
Tensor sqrt(const Tensor& a) { return unary(a, Elementwise::sqrt, 0); }
Tensor square(const Tensor& a) { return unary(a, Elementwise::square, 0); }
Tensor huber(const Tensor& a, double delta) { return unary(a, Elementwise::huber, delta); }

Tensor scale(const Tensor& a, double s) {
  Tensor result(a.shape(), a.values() * s);
  if (should_record({&a}))
    Graph::current().record("scale", {a}, result,
                            [a, s](const Vector& g) { accumulate_if_tracked(a, g * s); });
  return result;
}

Tensor add_scalar(const Tensor& a, double s) {
  Tensor result(a.shape(), a.values().array() + s);
  if (should_record({&a}))
    Graph::current().record("add_scalar", {a}, result,
                            [a](const Vector& g) { accumulate_if_tracked(a, g); });
  return result;
}

// ---------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw ShapeError("matmul dimension mismatch: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  RowMatrix c = a.map() * b.map();
  Tensor result = Tensor::from_matrix(c);
  if (should_record({&a, &b}))
    Graph::current().record("matmul", {a, b}, result, [a, b](const Vector& g) {
      Eigen::Map<const RowMatrix> gc(g.data(), a.rows(), b.cols());
      if (a.tracked()) {
        RowMatrix ga = gc * b.map().transpose();
        a.impl()->accumulate(Eigen::Map<const Vector>(ga.data(), ga.size()));
      }
      if (b.tracked()) {
        RowMatrix gb = a.map().transpose() * gc;
        b.impl()->accumulate(Eigen::Map<const Vector>(gb.data(), gb.size()));
      }
    });
  return result;
}

Tensor transpose(const Tensor& a) {
  RowMatrix t = a.map().transpose();
  Tensor result = Tensor::from_matrix(t);
  if (should_record({&a}))
    Graph::current().record("transpose", {a}, result, [a](const Vector& g) {
      Eigen::Map<const RowMatrix> gm(g.data(), a.cols(), a.rows());
      RowMatrix gt = gm.transpose();
      accumulate_if_tracked(a, Eigen::Map<const Vector>(gt.data(), gt.size()));
    });
  return result;
}

// ---------------------------------------------------------------- softmax

namespace {
Vector softmax_values(const Vector& v, const AxisSplit& s, bool log_space) {
  Vector out(v.size());
  for (Index o = 0; o < s.outer; ++o)
    for (Index in = 0; in < s.inner; ++in) {
      Index base = o * s.len * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (Index k = 0; k < s.len; ++k) mx = std::max(mx, v[base + k * s.inner]);
      double z = 0;
      for (Index k = 0; k < s.len; ++k) z += std::exp(v[base + k * s.inner] - mx);
      double lz = std::log(z);
      for (Index k = 0; k < s.len; ++k) {
        double shifted = v[base + k * s.inner] - mx;
        out[base + k * s.inner] = log_space ? shifted - lz : std::exp(shifted) / z;
      }
    }
  return out;
}
}  // namespace

Tensor softmax(const Tensor& t, Index axis) {
  axis = normalize_axis(axis, t.rank(), t.shape());
  AxisSplit s = split_axis(t.shape(), axis);
  Tensor result(t.shape(), softmax_values(t.values(), s, false));
  if (should_record({&t}))
    Graph::current().record("softmax", {t}, result, [t, s, y = result.values()](const Vector& g) {
      Vector gi(g.size());
      for (Index o = 0; o < s.outer; ++o)
        for (Index in = 0; in < s.inner; ++in) {
          Index base = o * s.len * s.inner + in;
          double dot = 0;
          for (Index k = 0; k < s.len; ++k) dot += g[base + k * s.inner] * y[base + k * s.inner];
          for (Index k = 0; k < s.len; ++k) {
            Index i = base + k * s.inner;
            gi[i] = y[i] * (g[i] - dot);
          }
        }
      accumulate_if_tracked(t, gi);
    });
  return result;
}

Tensor log_softmax(const Tensor& t, Index axis) {
  axis = normalize_axis(axis, t.rank(), t.shape());
  AxisSplit s = split_axis(t.shape(), axis);
  Tensor result(t.shape(), softmax_values(t.values(), s, true));
  if (should_record({&t}))
    Graph::current().record("log_softmax", {t}, result, [t, s, y = result.values()](const Vector& g) {
      Vector gi(g.size());
      for (Index o = 0; o < s.outer; ++o)
        for (Index in = 0; in < s.inner; ++in) {
          Index base = o * s.len * s.inner + in;
          double total = 0;
          for (Index k = 0; k < s.len; ++k) total += g[base + k * s.inner];
          for (Index k = 0; k < s.len; ++k) {
            Index i = base + k * s.inner;
            gi[i] = g[i] - std::exp(y[i]) * total;
          }
        }
      accumulate_if_tracked(t, gi);
    });
  return result;
}

// ---------------------------------------------------------------- reduce

Tensor reduce(const Tensor& t, Reduce kind, Index axis) {
  axis = normalize_axis(axis, t.rank(), t.shape());
  AxisSplit s = split_axis(t.shape(), axis);
  Shape out_shape = t.shape();
  out_shape.erase(out_shape.begin() + axis);
  const Vector& v = t.values();
  Vector out = Vector::Zero(s.outer * s.inner);
  for (Index o = 0; o < s.outer; ++o)
    for (Index k = 0; k < s.len; ++k)
      for (Index in = 0; in < s.inner; ++in) out[o * s.inner + in] += v[(o * s.len + k) * s.inner + in];
  double factor = kind == Reduce::mean ? 1.0 / static_cast<double>(s.len) : 1.0;
  if (kind == Reduce::mean) out *= factor;
  Tensor result(std::move(out_shape), std::move(out));
  if (should_record({&t}))
    Graph::current().record(kind == Reduce::mean ? "mean" : "sum", {t}, result,
                            [t, s, factor](const Vector& g) {
                              Vector gi(t.size());
                              for (Index o = 0; o < s.outer; ++o)
                                for (Index k = 0; k < s.len; ++k)
                                  for (Index in = 0; in < s.inner; ++in)
                                    gi[(o * s.len + k) * s.inner + in] = g[o * s.inner + in] * factor;
                              accumulate_if_tracked(t, gi);
                            });
  return result;
}

Tensor sum_all(const Tensor& t) {
  Tensor result = Tensor::scalar(t.values().sum());
  if (should_record({&t}))
    Graph::current().record("sum_all", {t}, result, [t](const Vector& g) {
      accumulate_if_tracked(t, Vector::Constant(t.size(), g[0]));
    });
  return result;
}

Tensor mean_all(const Tensor& t) {
  if (t.size() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum_all(t), 1.0 / static_cast<double>(t.size()));
}

// ---------------------------------------------------------------- layout

Tensor concat(const std::vector<Tensor>& parts, Index axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  axis = normalize_axis(axis, static_cast<Index>(first.size()), first);
  Shape out_shape = first;
  out_shape[static_cast<std::size_t>(axis)] = 0;
  std::vector<Index> extents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i)
      if (static_cast<Index>(i) != axis && s[i] != first[i]) ok = false;
    if (!ok)
      throw ShapeError("concat side dimensions differ: " + shape_str(first) + " vs " + shape_str(s));
    extents.push_back(s[static_cast<std::size_t>(axis)]);
    out_shape[static_cast<std::size_t>(axis)] += s[static_cast<std::size_t>(axis)];
  }
  AxisSplit os = split_axis(out_shape, axis);
  Vector out(shape_numel(out_shape));
  Index offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Vector& v = parts[p].values();
    Index block = extents[p] * os.inner;
    for (Index o = 0; o < os.outer; ++o)
      out.segment(o * os.len * os.inner + offset * os.inner, block) = v.segment(o * block, block);
    offset += extents[p];
  }
  Tensor result(std::move(out_shape), std::move(out));
  if (should_record(parts))
    Graph::current().record("concat", parts, result, [parts, extents, os](const Vector& g) {
      Index offset = 0;
      for (std::size_t p = 0; p < parts.size(); ++p) {
        Index block = extents[p] * os.inner;
        if (parts[p].tracked()) {
          Vector gp(parts[p].size());
          for (Index o = 0; o < os.outer; ++o)
            gp.segment(o * block, block) = g.segment(o * os.len * os.inner + offset * os.inner, block);
          parts[p].impl()->accumulate(gp);
        }
        offset += extents[p];
      }
    });
  return result;
}

Tensor slice(const Tensor& t, Index axis, Index begin, Index length) {
  axis = normalize_axis(axis, t.rank(), t.shape());
  AxisSplit s = split_axis(t.shape(), axis);
  if (begin < 0 || length < 0 || begin + length > s.len)
    throw ShapeError("slice [" + std::to_string(begin) + ", +" + std::to_string(length) +
                     ") out of range for " + shape_str(t.shape()));
  Shape out_shape = t.shape();
  out_shape[static_cast<std::size_t>(axis)] = length;
  Vector out(s.outer * length * s.inner);
  Index block = length * s.inner;
  for (Index o = 0; o < s.outer; ++o)
    out.segment(o * block, block) = t.values().segment(o * s.len * s.inner + begin * s.inner, block);
  Tensor result(std::move(out_shape), std::move(out));
  if (should_record({&t}))
    Graph::current().record("slice", {t}, result, [t, s, begin, block](const Vector& g) {
      Vector gi = Vector::Zero(t.size());
      for (Index o = 0; o < s.outer; ++o)
        gi.segment(o * s.len * s.inner + begin * s.inner, block) = g.segment(o * block, block);
      accumulate_if_tracked(t, gi);
    });
  return result;
}

std::vector<Tensor> split(const Tensor& t, Index axis, std::span<const Index> extents) {
  std::vector<Tensor> parts;
  Index begin = 0;
  for (Index e : extents) {
    parts.push_back(slice(t, axis, begin, e));
    begin += e;
  }
  if (begin != t.dim(axis))
    throw ShapeError("split extents do not cover " + shape_str(t.shape()));
  return parts;
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (shape_numel(shape) != t.size())
    throw ShapeError("cannot reshape " + shape_str(t.shape()) + " to " + shape_str(shape));
  Tensor result(std::move(shape), t.values());
  if (should_record({&t}))
    Graph::current().record("reshape", {t}, result,
                            [t](const Vector& g) { accumulate_if_tracked(t, g); });
  return result;
}

Tensor index_select(const Tensor& t, std::span<const Index> indices) {
  if (t.rank() < 1) throw ShapeError("index_select on a scalar");
  Index rows = t.dim(0);
  Index width = rows == 0 ? 0 : t.size() / rows;
  Shape out_shape = t.shape();
  out_shape[0] = static_cast<Index>(indices.size());
  Vector out(static_cast<Index>(indices.size()) * width);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    Index i = indices[r];
    if (i < 0 || i >= rows)
      throw ShapeError("index " + std::to_string(i) + " out of range for " + shape_str(t.shape()));
    out.segment(static_cast<Index>(r) * width, width) = t.values().segment(i * width, width);
  }
  Tensor result(std::move(out_shape), std::move(out));
  if (should_record({&t}))
    Graph::current().record(
        "index_select", {t}, result,
        [t, width, idx = std::vector<Index>(indices.begin(), indices.end())](const Vector& g) {
          if (!t.tracked()) return;
          Vector gi = Vector::Zero(t.size());
          for (std::size_t r = 0; r < idx.size(); ++r)
            gi.segment(idx[r] * width, width) += g.segment(static_cast<Index>(r) * width, width);
          t.impl()->accumulate(gi);
        });
  return result;
}

Tensor bucket_sum(const Tensor& t, std::span<const Index> buckets, Index num_buckets) {
  Index rows = t.rows(), cols = t.cols();
  if (static_cast<Index>(buckets.size()) != rows * cols)
    throw ShapeError("bucket map size does not match " + shape_str(t.shape()));
  Vector out = Vector::Zero(rows * num_buckets);
  const Vector& v = t.values();
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) {
      Index b = buckets[static_cast<std::size_t>(i * cols + j)];
      if (b < 0 || b >= num_buckets) throw ShapeError("bucket index out of range");
      out[i * num_buckets + b] += v[i * cols + j];
    }
  Tensor result({rows, num_buckets}, std::move(out));
  if (should_record({&t}))
    Graph::current().record(
        "bucket_sum", {t}, result,
        [t, rows, cols, num_buckets,
         map = std::vector<Index>(buckets.begin(), buckets.end())](const Vector& g) {
          Vector gi(rows * cols);
          for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < cols; ++j)
              gi[i * cols + j] = g[i * num_buckets + map[static_cast<std::size_t>(i * cols + j)]];
          accumulate_if_tracked(t, gi);
        });
  return result;
}

}  // namespace pmi
