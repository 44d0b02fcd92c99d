// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0

#include "pmi/nn.hpp"

#include "pmi/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace pmi {

// ---------------------------------------------------------------- ParameterSet

Tensor ParameterSet::add(const std::string& name, Tensor t, bool trainable) {
  if (index_.contains(name)) throw ContractError("duplicate parameter name " + name);
  if (!t.requires_grad()) t = Tensor::parameter(t.shape(), t.values());
  index_.emplace(name, entries_.size());
  entries_.push_back({name, t, trainable});
  return t;
}

const Tensor& ParameterSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter " + name);
  return entries_[it->second].tensor;
}

bool ParameterSet::trainable(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter " + name);
  return entries_[it->second].trainable;
}

void ParameterSet::set_trainable(const std::string& name, bool trainable) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter " + name);
  entries_[it->second].trainable = trainable;
}

Index ParameterSet::num_values() const {
  Index n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

NamedTensors ParameterSet::named() const {
  NamedTensors out;
  for (const auto& e : entries_) out.emplace_back(e.name, e.tensor);
  return out;
}

NamedTensors ParameterSet::trainable_named() const {
  NamedTensors out;
  for (const auto& e : entries_)
    if (e.trainable) out.emplace_back(e.name, e.tensor);
  return out;
}

void ParameterSet::zero_grad() const {
  for (const auto& e : entries_) e.tensor.zero_grad();
}

// ---------------------------------------------------------------- init

Vector xavier_uniform(Rng& rng, Index fan_in, Index fan_out) {
  double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Vector v(fan_in * fan_out);
  for (Index i = 0; i < v.size(); ++i) v[i] = rng.uniform(-a, a);
  return v;
}

Vector normal_fill(Rng& rng, Index n, double stddev) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.normal(0.0, stddev);
  return v;
}

// ---------------------------------------------------------------- linear / ffn

Linear Linear::create(ParameterSet& ps, const std::string& name, Index in, Index out, Rng& rng,
                      bool with_bias) {
  Linear l;
  l.weight = ps.add(name + ".weight", Tensor({in, out}, xavier_uniform(rng, in, out)));
  if (with_bias) l.bias = ps.add(name + ".bias", Tensor::zeros({1, out}));
  return l;
}

Tensor linear(const Tensor& x, const Linear& p) {
  Index in = p.in_dim();
  if (x.rank() < 1 || x.dim(-1) != in)
    throw ShapeError("linear expects last dimension " + std::to_string(in) + ", got " +
                     shape_str(x.shape()));
  Tensor flat = x.rank() == 2 ? x : reshape(x, {x.size() / in, in});
  Tensor y = matmul(flat, p.weight);
  if (p.bias.defined()) y = add(y, p.bias);
  if (x.rank() == 2) return y;
  Shape out_shape = x.shape();
  out_shape.back() = p.out_dim();
  return reshape(y, out_shape);
}

FFN FFN::create(ParameterSet& ps, const std::string& name, Index in, Index out, Rng& rng) {
  FFN f;
  f.inner = Linear::create(ps, name + ".inner", in, in, rng);
  f.outer = Linear::create(ps, name + ".outer", in, out, rng);
  return f;
}

Tensor ffn(const Tensor& x, const FFN& p) { return linear(relu(linear(x, p.inner)), p.outer); }

// ---------------------------------------------------------------- recurrent

RecurrentParams RecurrentParams::create(ParameterSet& ps, const std::string& name, Index in,
                                        Index hidden, Rng& rng) {
  RecurrentParams p;
  p.w_input = ps.add(name + ".w_input", Tensor({in, 4 * hidden}, xavier_uniform(rng, in, 4 * hidden)));
  p.w_hidden =
      ps.add(name + ".w_hidden", Tensor({hidden, 4 * hidden}, xavier_uniform(rng, hidden, 4 * hidden)));
  p.bias = ps.add(name + ".bias", Tensor::zeros({1, 4 * hidden}));
  return p;
}

RecurrentState zero_state(Index batch, Index hidden) {
  return {Tensor::zeros({batch, hidden}), Tensor::zeros({batch, hidden})};
}

RecurrentState recurrent_step(const Tensor& x, const RecurrentState& state, const RecurrentParams& p) {
  Index h = p.hidden();
  if (x.rank() != 2 || x.cols() != p.w_input.dim(0))
    throw ShapeError("recurrent input " + shape_str(x.shape()) + " does not match " +
                     shape_str(p.w_input.shape()));
  Tensor gates = add(add(matmul(x, p.w_input), matmul(state.h, p.w_hidden)), p.bias);
  Tensor in_gate = sigmoid(slice(gates, 1, 0, h));
  Tensor forget_gate = sigmoid(slice(gates, 1, h, h));
  Tensor out_gate = sigmoid(slice(gates, 1, 2 * h, h));
  Tensor candidate = tanh(slice(gates, 1, 3 * h, h));
  Tensor c = add(mul(forget_gate, state.c), mul(in_gate, candidate));
  return {mul(out_gate, tanh(c)), c};
}

Tensor bidirectional_encode(const Tensor& x, const RecurrentParams& forward,
                            const RecurrentParams& backward) {
  Index n = x.rows();
  if (n < 1) throw ShapeError("bidirectional_encode on an empty sequence");
  std::vector<Tensor> fwd(static_cast<std::size_t>(n)), bwd(static_cast<std::size_t>(n));
  RecurrentState s = zero_state(1, forward.hidden());
  for (Index t = 0; t < n; ++t) {
    s = recurrent_step(slice(x, 0, t, 1), s, forward);
    fwd[static_cast<std::size_t>(t)] = s.h;
  }
  s = zero_state(1, backward.hidden());
  for (Index t = n; t-- > 0;) {
    s = recurrent_step(slice(x, 0, t, 1), s, backward);
    bwd[static_cast<std::size_t>(t)] = s.h;
  }
  return concat({concat(fwd, 0), concat(bwd, 0)}, 1);
}

// ---------------------------------------------------------------- instance norm

Tensor instance_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  if (!(eps > 0)) throw DomainError("instance_norm eps must be positive");
  Index c = x.cols();
  Tensor mu = reshape(mean(x, 0), {1, c});
  Tensor centered = sub(x, mu);
  Tensor var = reshape(mean(square(centered), 0), {1, c});
  Tensor normalized = div(centered, sqrt(add_scalar(var, eps)));
  return add(mul(normalized, gain), bias);
}

// ---------------------------------------------------------------- rel pos / embedding

RelPosTable RelPosTable::create(ParameterSet& ps, const std::string& name, Index k_max, Index dim,
                                Rng& rng) {
  RelPosTable r;
  r.k_max = k_max;
  r.table = ps.add(name + ".table", Tensor({2 * k_max + 1, dim}, normal_fill(rng, (2 * k_max + 1) * dim, 0.01)));
  return r;
}

Index RelPosTable::bucket(Index i, Index j) const { return std::clamp(j - i, -k_max, k_max) + k_max; }

Embedding make_embedding(ParameterSet& ps, const std::string& name, Index vocab, Index dim, Rng& rng,
                         bool trainable) {
  Vector v = normal_fill(rng, vocab * dim, 0.01);
  v.head(dim).setZero();
  Embedding e;
  e.table = ps.add(name + ".table", Tensor({vocab, dim}, std::move(v)), trainable);
  return e;
}

Tensor embed(std::span<const Index> ids, const Embedding& e) {
  Index vocab = e.vocab_size();
  std::vector<Index> rows;
  rows.reserve(ids.size());
  bool has_pad = false;
  for (Index id : ids) {
    Index r = (id < 0 || id >= vocab) ? kUnkId : id;
    has_pad |= r == kPadId;
    rows.push_back(r);
  }
  Tensor out = index_select(e.table, rows);
  if (!has_pad) return out;
  Vector mask(static_cast<Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) mask[static_cast<Index>(i)] = rows[i] == kPadId ? 0.0 : 1.0;
  return mul(out, Tensor({static_cast<Index>(rows.size()), 1}, mask));
}

EmbeddingTable load_embedding_table(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open embedding table " + path.string());
  EmbeddingTable table;
  std::vector<std::vector<double>> rows;
  std::string line;
  Index line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string token;
    ls >> token;
    std::vector<double> values;
    double v;
    while (ls >> v) values.push_back(v);
    if (!ls.eof())
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": malformed value");
    if (!rows.empty() && values.size() != rows.front().size())
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                               ": inconsistent embedding dimension");
    if (values.empty())
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": no values");
    table.tokens.push_back(token);
    rows.push_back(std::move(values));
  }
  Index dim = rows.empty() ? 0 : static_cast<Index>(rows.front().size());
  table.vectors.resize(static_cast<Index>(rows.size()), dim);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (Index c = 0; c < dim; ++c) table.vectors(static_cast<Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
  return table;
}

void save_embedding_table(const std::filesystem::path& path, const EmbeddingTable& table) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write embedding table " + path.string());
  out << std::setprecision(9);
  for (std::size_t r = 0; r < table.tokens.size(); ++r) {
    out << table.tokens[r];
    for (Index c = 0; c < table.vectors.cols(); ++c) out << ' ' << table.vectors(static_cast<Index>(r), c);
    out << '\n';
  }
}

// ---------------------------------------------------------------- Adam

double Adam::step(const ParameterSet& params) {
  NamedTensors trainable = params.trainable_named();
  double sq = 0;
  for (const auto& [name, p] : trainable)
    if (p.has_grad()) sq += p.grad().squaredNorm();
  double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) {
    params.zero_grad();
    return norm;
  }
  double factor = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (const auto& [name, p] : trainable) {
    if (!p.has_grad()) continue;
    auto [it, inserted] = moments_.try_emplace(name, Vector::Zero(p.size()), Vector::Zero(p.size()));
    if (inserted) order_.push_back(name);
    auto& [m, v] = it->second;
    Vector g = p.grad() * factor;
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    Tensor handle = p;
    handle.mutable_values().array() -=
        cfg_.lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.eps);
  }
  params.zero_grad();
  return norm;
}

NamedTensors Adam::state() const {
  NamedTensors out;
  out.emplace_back("adam.t", Tensor::scalar(static_cast<double>(t_)));
  for (const auto& name : order_) {
    const auto& [m, v] = moments_.at(name);
    out.emplace_back("adam.m." + name, Tensor({m.size()}, m));
    out.emplace_back("adam.v." + name, Tensor({v.size()}, v));
  }
  return out;
}

void Adam::load_state(const NamedTensors& state) {
  moments_.clear();
  order_.clear();
  t_ = 0;
  for (const auto& [name, t] : state) {
    if (name == "adam.t") {
      t_ = static_cast<long>(t.item());
    } else if (name.starts_with("adam.m.")) {
      std::string key = name.substr(7);
      auto [it, inserted] = moments_.try_emplace(key, t.values(), Vector::Zero(t.size()));
      if (inserted) order_.push_back(key);
      it->second.first = t.values();
    } else if (name.starts_with("adam.v.")) {
      std::string key = name.substr(7);
      auto [it, inserted] = moments_.try_emplace(key, Vector::Zero(t.size()), t.values());
      if (inserted) order_.push_back(key);
      it->second.second = t.values();
    }
  }
}

}  // namespace pmi
