// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0
//
// Channel-gated interaction between ordered pairs of feature sequences, and
// the fusion of all pair outputs into one N x d encoding.

#pragma once

#include "pmi/nn.hpp"

#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace pmi {

enum class ModalityTag { visual, motion, audio, latent, text };

std::string_view to_string(ModalityTag tag);
ModalityTag parse_modality(std::string_view name);

// Feature sequences of one video, all of length N.
struct ModalityBundle {
  std::vector<std::pair<ModalityTag, Tensor>> modalities;

  Index size() const { return static_cast<Index>(modalities.size()); }
  Index length() const;
  const Tensor& features(Index m) const { return modalities[static_cast<std::size_t>(m)].second; }
  // Throws ShapeError on mismatched lengths, ContractError on duplicate tags
  // or M outside [1, 5].
  void validate() const;
};

struct InteractionDims {
  Index d = 512;
  Index d_low = 256;
  Index d_c = 64;
  Index heads = 8;
  Index k_max = 16;
};

// Low-rank multi-head bilinear attention. Heads partition both d_low (scores)
// and d (values); each head owns one scoring vector.
struct BilinearParams {
  Linear u_p;           // d x d_low, no bias
  Linear u_q;           // d x d_low, no bias
  Tensor head_vectors;  // heads x (d_low / heads)
  Linear value;         // d x d, no bias
  RelPosTable rel;      // (2 k_max + 1) x d
  Linear merge;         // d x d

  static BilinearParams create(ParameterSet& ps, const std::string& name, const InteractionDims& dims,
                               Rng& rng);
  Index heads() const { return head_vectors.dim(0); }
  Index dim() const { return value.out_dim(); }
};

// Pre-softmax scores of head h for every (query, key) row pair. q_low and
// k_low are already rectified projections.
Tensor head_logits(const Tensor& q_low, const Tensor& k_low, const BilinearParams& p, Index h);

// Rows are queries (length N), columns keys (length L). `attention` receives
// one N x L map per head when non-null.
Tensor sequence_interaction(const Tensor& xp, const Tensor& xq, const BilinearParams& p,
                            bool relative_positions = true, std::vector<Tensor>* attention = nullptr);

struct GateParams {
  Linear v_p;  // d x d_c, no bias
  Linear v_q;  // d x d_c, no bias
  FFN ffn;     // d_c -> d

  static GateParams create(ParameterSet& ps, const std::string& name, const InteractionDims& dims,
                           Rng& rng);
};

// d_c x d_c channel map, normalized over its first axis.
Tensor channel_map(const Tensor& xp, const Tensor& xq, const GateParams& p);
Tensor channel_gate(const Tensor& xp, const Tensor& xq, const GateParams& p);

struct CGMIParams {
  BilinearParams attention;
  GateParams gate;
  FFN out;  // d -> d

  static CGMIParams create(ParameterSet& ps, const std::string& name, const InteractionDims& dims,
                           Rng& rng);
};

struct CGMITrace {
  std::vector<Tensor> attention;
  Tensor gate;
};

Tensor cgmi(const Tensor& xp, const Tensor& xq, const CGMIParams& p, bool relative_positions = true,
            CGMITrace* trace = nullptr);

enum class PmiMode { full, intra_only, inter_only, concat_interact, baseline_concat };
enum class FusionKind { concat, sum, weighted };

std::string_view to_string(PmiMode mode);
PmiMode parse_pmi_mode(std::string_view name);
std::string_view to_string(FusionKind kind);
FusionKind parse_fusion_kind(std::string_view name);

// Pair slots in row-major (p, q) order restricted to the mode; empty for the
// modes that do not tile pairs.
std::vector<std::pair<Index, Index>> pair_slots(Index num_modalities, PmiMode mode);

// N x S x d stack of cgmi(X^p, X^q) over `slots`; `params` is indexed by the
// row-major pair index p * M + q.
Tensor pairwise_tile(const std::vector<Tensor>& projected, const std::vector<CGMIParams>& params,
                     const std::vector<std::pair<Index, Index>>& slots,
                     std::vector<CGMITrace>* traces = nullptr);

// Importance scores: one d-vector and one bias per pair slot. Shared across
// positions unless per_position, in which case the weight is N x d and the
// bias N x M^2 for a fixed N.
struct FusionParams {
  Tensor weight;  // d x 1, or N x d
  Tensor bias;    // M^2, or N x M^2
  bool per_position = false;

  static FusionParams create(ParameterSet& ps, const std::string& name, Index d, Index num_pairs,
                             Rng& rng, std::optional<Index> positions = std::nullopt);
};

struct Fused {
  Tensor alpha;  // N x S
  Tensor value;  // N x d
};

// `bias_slots` picks the bias entries for the slots of x_mi; all M^2 when
// empty.
Fused fuse(const Tensor& x_mi, const FusionParams& p, std::span<const Index> bias_slots = {});

// `concat_projection` maps S * d -> d and is only read for FusionKind::concat.
Tensor fuse_variant(const Tensor& x_mi, FusionKind kind, const FusionParams& p,
                    const Linear& concat_projection, std::span<const Index> bias_slots = {});

struct InteractionTrace {
  std::vector<std::pair<Index, Index>> slots;
  std::vector<CGMITrace> pairs;
  Tensor x_mi;
  Tensor alpha;
};

struct PmiConfig {
  InteractionDims dims;
  FusionKind fusion = FusionKind::weighted;
  std::optional<Index> fusion_positions;  // set for per-position fusion weights
};

// Parameters for every mode are created up front so that variants built from
// the same seed share their common weights.
struct PmiEncoder {
  PmiConfig config;
  std::vector<ModalityTag> tags;
  std::vector<Index> input_dims;
  std::vector<Linear> project;  // per modality, d_mod -> d
  std::vector<CGMIParams> pairs;  // M^2, row-major
  FusionParams fusion;
  Linear fusion_concat;   // M^2 d -> d
  Linear concat_project;  // sum d_mod -> d
  CGMIParams concat_self;

  static PmiEncoder create(ParameterSet& ps, const std::string& name, std::vector<ModalityTag> tags,
                           std::vector<Index> input_dims, const PmiConfig& config, Rng& rng);
  Index num_modalities() const { return static_cast<Index>(tags.size()); }
};

std::vector<Tensor> input_project(const ModalityBundle& bundle, const std::vector<Linear>& project);

Tensor pmi_encode(const ModalityBundle& bundle, const PmiEncoder& enc, PmiMode mode,
                  InteractionTrace* trace = nullptr);

}  // namespace pmi
