// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0

#include "pmi/interaction.hpp"

#include <algorithm>
#include <set>

namespace pmi {

namespace {

constexpr std::pair<ModalityTag, std::string_view> kTagNames[] = {
    {ModalityTag::visual, "visual"}, {ModalityTag::motion, "motion"}, {ModalityTag::audio, "audio"},
    {ModalityTag::latent, "latent"}, {ModalityTag::text, "text"}};

constexpr std::pair<PmiMode, std::string_view> kModeNames[] = {
    {PmiMode::full, "full"},
    {PmiMode::intra_only, "intra_only"},
    {PmiMode::inter_only, "inter_only"},
    {PmiMode::concat_interact, "concat_interact"},
    {PmiMode::baseline_concat, "baseline_concat"}};

constexpr std::pair<FusionKind, std::string_view> kFusionNames[] = {
    {FusionKind::concat, "concat"}, {FusionKind::sum, "sum"}, {FusionKind::weighted, "weighted"}};

template <typename E, std::size_t K>
std::string_view name_of(const std::pair<E, std::string_view> (&table)[K], E value) {
  for (const auto& [v, name] : table)
    if (v == value) return name;
  return "?";
}

template <typename E, std::size_t K>
E parse_name(const std::pair<E, std::string_view> (&table)[K], std::string_view name, const char* what) {
  for (const auto& [v, n] : table)
    if (n == name) return v;
  throw ContractError(std::string("unknown ") + what + " '" + std::string(name) + "'");
}

void require_features(const Tensor& x, Index d, const char* what) {
  if (x.rank() != 2 || x.dim(0) == 0 || x.dim(1) != d)
    throw ShapeError(std::string(what) + " must be a non-empty sequence of width " + std::to_string(d) +
                     ", got " + shape_str(x.shape()));
}

std::vector<Index> all_slots(Index count) {
  std::vector<Index> v(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) v[static_cast<std::size_t>(i)] = i;
  return v;
}

}  // namespace

std::string_view to_string(ModalityTag tag) { return name_of(kTagNames, tag); }
ModalityTag parse_modality(std::string_view name) { return parse_name(kTagNames, name, "modality"); }
std::string_view to_string(PmiMode mode) { return name_of(kModeNames, mode); }
PmiMode parse_pmi_mode(std::string_view name) { return parse_name(kModeNames, name, "interaction mode"); }
std::string_view to_string(FusionKind kind) { return name_of(kFusionNames, kind); }
FusionKind parse_fusion_kind(std::string_view name) { return parse_name(kFusionNames, name, "fusion kind"); }

// ---------------------------------------------------------------- bundle

Index ModalityBundle::length() const {
  if (modalities.empty()) throw ContractError("empty modality bundle");
  return modalities.front().second.dim(0);
}

void ModalityBundle::validate() const {
  if (modalities.empty() || modalities.size() > 5)
    throw ContractError("a bundle holds between 1 and 5 modalities, got " +
                        std::to_string(modalities.size()));
  std::set<ModalityTag> seen;
  Index n = length();
  for (const auto& [tag, x] : modalities) {
    if (!seen.insert(tag).second) throw ContractError("duplicate modality " + std::string(to_string(tag)));
    if (x.rank() != 2 || x.dim(0) != n)
      throw ShapeError("modality " + std::string(to_string(tag)) + " has shape " + shape_str(x.shape()) +
                       ", expected " + std::to_string(n) + " rows");
  }
}

// ---------------------------------------------------------------- bilinear attention

BilinearParams BilinearParams::create(ParameterSet& ps, const std::string& name, const InteractionDims& dims,
                                      Rng& rng) {
  if (dims.heads < 1 || dims.d_low % dims.heads != 0 || dims.d % dims.heads != 0)
    throw ContractError("heads must divide both d and d_low");
  if (dims.d_low >= dims.d) throw ContractError("the bilinear rank d_low must be below d");
  BilinearParams p;
  p.u_p = Linear::create(ps, name + ".u_p", dims.d, dims.d_low, rng, false);
  p.u_q = Linear::create(ps, name + ".u_q", dims.d, dims.d_low, rng, false);
  Index dh = dims.d_low / dims.heads;
  p.head_vectors = ps.add(name + ".head_vectors", Tensor({dims.heads, dh}, xavier_uniform(rng, dims.heads, dh)));
  p.value = Linear::create(ps, name + ".value", dims.d, dims.d, rng, false);
  p.rel = RelPosTable::create(ps, name + ".rel", dims.k_max, dims.d, rng);
  p.merge = Linear::create(ps, name + ".merge", dims.d, dims.d, rng);
  return p;
}

Tensor head_logits(const Tensor& q_low, const Tensor& k_low, const BilinearParams& p, Index h) {
  Index dh = p.head_vectors.dim(1);
  Tensor q = mul(slice(q_low, 1, h * dh, dh), slice(p.head_vectors, 0, h, 1));
  return matmul(q, transpose(slice(k_low, 1, h * dh, dh)));
}

Tensor sequence_interaction(const Tensor& xp, const Tensor& xq, const BilinearParams& p,
                            bool relative_positions, std::vector<Tensor>* attention) {
  Index d = p.u_p.in_dim();
  require_features(xp, d, "query sequence");
  require_features(xq, d, "key sequence");
  Index n = xp.dim(0);
  Index l = xq.dim(0);
  Index heads = p.heads();
  Index dv = p.dim() / heads;

  Tensor q_low = relu(linear(xp, p.u_p));
  Tensor k_low = relu(linear(xq, p.u_q));
  Tensor values = linear(xq, p.value);

  std::vector<Index> buckets;
  Index num_buckets = 2 * p.rel.k_max + 1;
  if (relative_positions) {
    buckets.resize(static_cast<std::size_t>(n * l));
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < l; ++j) buckets[static_cast<std::size_t>(i * l + j)] = p.rel.bucket(i, j);
  }

  std::vector<Tensor> outputs;
  outputs.reserve(static_cast<std::size_t>(heads));
  for (Index h = 0; h < heads; ++h) {
    Tensor a = softmax(head_logits(q_low, k_low, p, h), 1);
    if (attention) attention->push_back(a);
    Tensor out = matmul(a, slice(values, 1, h * dv, dv));
    // sum_j a_ij R_{ij} groups the attention mass by relative-distance bucket.
    if (relative_positions)
      out = add(out, matmul(bucket_sum(a, buckets, num_buckets), slice(p.rel.table, 1, h * dv, dv)));
    outputs.push_back(out);
  }
  return linear(heads == 1 ? outputs.front() : concat(outputs, 1), p.merge);
}

// ---------------------------------------------------------------- channel gate

GateParams GateParams::create(ParameterSet& ps, const std::string& name, const InteractionDims& dims, Rng& rng) {
  GateParams g;
  g.v_p = Linear::create(ps, name + ".v_p", dims.d, dims.d_c, rng, false);
  g.v_q = Linear::create(ps, name + ".v_q", dims.d, dims.d_c, rng, false);
  g.ffn = FFN::create(ps, name + ".ffn", dims.d_c, dims.d, rng);
  return g;
}

namespace {

struct ChannelMap {
  Tensor projected;  // X^p V^p
  Tensor map;        // d_c x d_c
};

ChannelMap channel_map_parts(const Tensor& xp, const Tensor& xq, const GateParams& p) {
  Index d = p.v_p.in_dim();
  require_features(xp, d, "gate query sequence");
  require_features(xq, d, "gate key sequence");
  Index dc = p.v_p.out_dim();
  Tensor pp = linear(xp, p.v_p);
  Tensor mp = reshape(mean(pp, 0), {dc, 1});
  Tensor mq = reshape(mean(linear(xq, p.v_q), 0), {1, dc});
  Tensor s = neg(square(sub(mp, mq)));
  return {pp, softmax(s, 0)};
}

}  // namespace

Tensor channel_map(const Tensor& xp, const Tensor& xq, const GateParams& p) {
  return channel_map_parts(xp, xq, p).map;
}

Tensor channel_gate(const Tensor& xp, const Tensor& xq, const GateParams& p) {
  ChannelMap cm = channel_map_parts(xp, xq, p);
  return sigmoid(ffn(matmul(cm.projected, cm.map), p.ffn));
}

// ---------------------------------------------------------------- cgmi

CGMIParams CGMIParams::create(ParameterSet& ps, const std::string& name, const InteractionDims& dims, Rng& rng) {
  CGMIParams c;
  c.attention = BilinearParams::create(ps, name + ".ba", dims, rng);
  c.gate = GateParams::create(ps, name + ".cg", dims, rng);
  c.out = FFN::create(ps, name + ".out", dims.d, dims.d, rng);
  return c;
}

Tensor cgmi(const Tensor& xp, const Tensor& xq, const CGMIParams& p, bool relative_positions, CGMITrace* trace) {
  Tensor ba = sequence_interaction(xp, xq, p.attention, relative_positions, trace ? &trace->attention : nullptr);
  Tensor gate = channel_gate(xp, xq, p.gate);
  if (trace) trace->gate = gate;
  return ffn(add(mul(ba, gate), xp), p.out);
}

// ---------------------------------------------------------------- tiling and fusion

std::vector<std::pair<Index, Index>> pair_slots(Index num_modalities, PmiMode mode) {
  std::vector<std::pair<Index, Index>> slots;
  if (mode == PmiMode::concat_interact || mode == PmiMode::baseline_concat) return slots;
  for (Index p = 0; p < num_modalities; ++p)
    for (Index q = 0; q < num_modalities; ++q) {
      bool keep = mode == PmiMode::full || (mode == PmiMode::intra_only && p == q) ||
                  (mode == PmiMode::inter_only && p != q);
      if (keep) slots.emplace_back(p, q);
    }
  return slots;
}

Tensor pairwise_tile(const std::vector<Tensor>& projected, const std::vector<CGMIParams>& params,
                     const std::vector<std::pair<Index, Index>>& slots, std::vector<CGMITrace>* traces) {
  Index m = static_cast<Index>(projected.size());
  if (m < 1) throw ContractError("pairwise_tile needs at least one modality");
  if (static_cast<Index>(params.size()) != m * m)
    throw ContractError("expected " + std::to_string(m * m) + " pair parameter sets, got " +
                        std::to_string(params.size()));
  if (slots.empty()) throw ContractError("no pair slots to tile");
  std::vector<Tensor> parts;
  for (auto [p, q] : slots) {
    const Tensor& xp = projected[static_cast<std::size_t>(p)];
    const Tensor& xq = projected[static_cast<std::size_t>(q)];
    CGMITrace* t = nullptr;
    if (traces) t = &traces->emplace_back();
    Tensor y = cgmi(xp, xq, params[static_cast<std::size_t>(p * m + q)], true, t);
    parts.push_back(reshape(y, {y.dim(0), 1, y.dim(1)}));
  }
  return parts.size() == 1 ? parts.front() : concat(parts, 1);
}

FusionParams FusionParams::create(ParameterSet& ps, const std::string& name, Index d, Index num_pairs, Rng& rng,
                                  std::optional<Index> positions) {
  FusionParams f;
  f.per_position = positions.has_value();
  if (f.per_position) {
    Index n = *positions;
    f.weight = ps.add(name + ".weight", Tensor({n, d}, xavier_uniform(rng, d, n)));
    f.bias = ps.add(name + ".bias", Tensor::zeros({n, num_pairs}));
  } else {
    f.weight = ps.add(name + ".weight", Tensor({d, 1}, xavier_uniform(rng, d, 1)));
    f.bias = ps.add(name + ".bias", Tensor::zeros({num_pairs}));
  }
  return f;
}

Fused fuse(const Tensor& x_mi, const FusionParams& p, std::span<const Index> bias_slots) {
  if (x_mi.rank() != 3) throw ShapeError("fuse expects N x S x d, got " + shape_str(x_mi.shape()));
  Index n = x_mi.dim(0);
  Index s = x_mi.dim(1);
  Index d = x_mi.dim(2);
  Index num_pairs = p.bias.dim(-1);
  std::vector<Index> slots = bias_slots.empty() ? all_slots(num_pairs)
                                                : std::vector<Index>(bias_slots.begin(), bias_slots.end());
  if (static_cast<Index>(slots.size()) != s)
    throw ShapeError("fuse has " + std::to_string(s) + " slots but " + std::to_string(slots.size()) +
                     " bias entries");
  bool selected = !bias_slots.empty() && s != num_pairs;

  Tensor scores;
  if (p.per_position) {
    if (p.weight.dim(0) != n)
      throw ShapeError("per-position fusion weights are fixed to " + std::to_string(p.weight.dim(0)) +
                       " positions, got " + std::to_string(n));
    scores = sum(mul(x_mi, reshape(p.weight, {n, 1, d})), 2);
    Tensor b = selected ? transpose(index_select(transpose(p.bias), slots)) : p.bias;
    scores = add(scores, b);
  } else {
    scores = reshape(matmul(reshape(x_mi, {n * s, d}), p.weight), {n, s});
    Tensor b = selected ? reshape(index_select(reshape(p.bias, {num_pairs, 1}), slots), {s}) : p.bias;
    scores = add(scores, b);
  }
  Tensor alpha = softmax(scores, 1);
  Tensor value = sum(mul(x_mi, reshape(alpha, {n, s, 1})), 1);
  return {alpha, value};
}

Tensor fuse_variant(const Tensor& x_mi, FusionKind kind, const FusionParams& p, const Linear& concat_projection,
                    std::span<const Index> bias_slots) {
  if (x_mi.rank() != 3) throw ShapeError("fuse expects N x S x d, got " + shape_str(x_mi.shape()));
  switch (kind) {
    case FusionKind::weighted:
      return fuse(x_mi, p, bias_slots).value;
    case FusionKind::sum:
      return mean(x_mi, 1);
    case FusionKind::concat: {
      Index n = x_mi.dim(0);
      Index s = x_mi.dim(1);
      Index d = x_mi.dim(2);
      Tensor flat = reshape(x_mi, {n, s * d});
      Tensor w = concat_projection.weight;
      if (w.dim(0) != s * d) {
        // Keep the weight blocks of the tiled slots only.
        if (bias_slots.size() != static_cast<std::size_t>(s))
          throw ShapeError("concat fusion needs slot indices for a partial tile");
        std::vector<Index> rows;
        for (Index slot : bias_slots)
          for (Index c = 0; c < d; ++c) rows.push_back(slot * d + c);
        w = index_select(w, rows);
      }
      Tensor y = matmul(flat, w);
      return concat_projection.bias.defined() ? add(y, concat_projection.bias) : y;
    }
  }
  throw ContractError("unknown fusion kind");
}

// ---------------------------------------------------------------- encoder

PmiEncoder PmiEncoder::create(ParameterSet& ps, const std::string& name, std::vector<ModalityTag> tags,
                              std::vector<Index> input_dims, const PmiConfig& config, Rng& rng) {
  if (tags.empty() || tags.size() != input_dims.size())
    throw ContractError("one input dimension per modality tag is required");
  PmiEncoder e;
  e.config = config;
  e.tags = std::move(tags);
  e.input_dims = std::move(input_dims);
  Index m = e.num_modalities();
  Index d = config.dims.d;
  for (Index i = 0; i < m; ++i)
    e.project.push_back(Linear::create(ps, name + ".project." + std::string(to_string(e.tags[static_cast<std::size_t>(i)])),
                                       e.input_dims[static_cast<std::size_t>(i)], d, rng));
  for (Index p = 0; p < m; ++p)
    for (Index q = 0; q < m; ++q)
      e.pairs.push_back(CGMIParams::create(ps, name + ".pair" + std::to_string(p) + std::to_string(q), config.dims, rng));
  e.fusion = FusionParams::create(ps, name + ".fusion", d, m * m, rng, config.fusion_positions);
  e.fusion_concat = Linear::create(ps, name + ".fusion_concat", m * m * d, d, rng);
  Index total = 0;
  for (Index dim : e.input_dims) total += dim;
  e.concat_project = Linear::create(ps, name + ".concat_project", total, d, rng);
  e.concat_self = CGMIParams::create(ps, name + ".concat_self", config.dims, rng);
  return e;
}

std::vector<Tensor> input_project(const ModalityBundle& bundle, const std::vector<Linear>& project) {
  if (static_cast<Index>(project.size()) != bundle.size())
    throw ContractError("one projection per modality is required");
  std::vector<Tensor> out;
  for (Index m = 0; m < bundle.size(); ++m) out.push_back(linear(bundle.features(m), project[static_cast<std::size_t>(m)]));
  return out;
}

Tensor pmi_encode(const ModalityBundle& bundle, const PmiEncoder& enc, PmiMode mode, InteractionTrace* trace) {
  bundle.validate();
  Index m = bundle.size();
  if (m != enc.num_modalities()) throw ShapeError("bundle has " + std::to_string(m) + " modalities, encoder expects " +
                                                  std::to_string(enc.num_modalities()));
  for (Index i = 0; i < m; ++i)
    if (bundle.modalities[static_cast<std::size_t>(i)].first != enc.tags[static_cast<std::size_t>(i)])
      throw ContractError("bundle modality order differs from the encoder's");

  if (mode == PmiMode::baseline_concat || mode == PmiMode::concat_interact) {
    std::vector<Tensor> parts;
    for (Index i = 0; i < m; ++i) parts.push_back(bundle.features(i));
    Tensor joined = linear(m == 1 ? parts.front() : concat(parts, 1), enc.concat_project);
    if (mode == PmiMode::baseline_concat) return joined;
    CGMITrace* t = nullptr;
    if (trace) {
      trace->slots = {{0, 0}};
      t = &trace->pairs.emplace_back();
    }
    return cgmi(joined, joined, enc.concat_self, true, t);
  }

  auto slots = pair_slots(m, mode);
  if (slots.empty()) throw ContractError("mode " + std::string(to_string(mode)) + " needs at least two modalities");
  std::vector<Index> indices;
  for (auto [p, q] : slots) indices.push_back(p * m + q);

  std::vector<Tensor> projected = input_project(bundle, enc.project);
  Tensor x_mi = pairwise_tile(projected, enc.pairs, slots, trace ? &trace->pairs : nullptr);
  if (trace) {
    trace->slots = slots;
    trace->x_mi = x_mi;
  }
  if (enc.config.fusion == FusionKind::weighted) {
    Fused f = fuse(x_mi, enc.fusion, indices);
    if (trace) trace->alpha = f.alpha;
    return f.value;
  }
  return fuse_variant(x_mi, enc.config.fusion, enc.fusion, enc.fusion_concat, indices);
}

}  // namespace pmi
