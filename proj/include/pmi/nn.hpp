// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0
//
// Parameterized building blocks shared by the interaction, localization and
// captioning models.

#pragma once

#include "pmi/gradcheck.hpp"
#include "pmi/random.hpp"
#include "pmi/tensor.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace pmi {

inline constexpr Index kPadId = 0;
inline constexpr Index kUnkId = 1;
inline constexpr Index kBosId = 2;
inline constexpr Index kEosId = 3;
inline constexpr Index kNumReservedIds = 4;

// Ordered registry of named parameters. Insertion order is the serialization
// and optimizer order.
class ParameterSet {
 public:
  Tensor add(const std::string& name, Tensor t, bool trainable = true);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.contains(name); }
  bool trainable(const std::string& name) const;
  void set_trainable(const std::string& name, bool trainable);

  std::size_t size() const { return entries_.size(); }
  Index num_values() const;
  NamedTensors named() const;
  NamedTensors trainable_named() const;
  void zero_grad() const;

 private:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool trainable;
  };
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

Vector xavier_uniform(Rng& rng, Index fan_in, Index fan_out);
Vector normal_fill(Rng& rng, Index n, double stddev);

struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // 1 x out, undefined when the layer has no bias

  static Linear create(ParameterSet& ps, const std::string& name, Index in, Index out, Rng& rng,
                       bool with_bias = true);
  Index in_dim() const { return weight.dim(0); }
  Index out_dim() const { return weight.dim(1); }
};

// x . W + b over the last axis of x.
Tensor linear(const Tensor& x, const Linear& p);

struct FFN {
  Linear inner;
  Linear outer;

  static FFN create(ParameterSet& ps, const std::string& name, Index in, Index out, Rng& rng);
};

// linear -> ReLU -> linear, identical parameters at every position.
Tensor ffn(const Tensor& x, const FFN& p);

// Gates are packed [input | forget | output | candidate] along the columns.
struct RecurrentParams {
  Tensor w_input;   // d_in x 4h
  Tensor w_hidden;  // h x 4h
  Tensor bias;      // 1 x 4h

  static RecurrentParams create(ParameterSet& ps, const std::string& name, Index in, Index hidden,
                                Rng& rng);
  Index hidden() const { return w_hidden.dim(0); }
};

struct RecurrentState {
  Tensor h;
  Tensor c;
};

RecurrentState zero_state(Index batch, Index hidden);
RecurrentState recurrent_step(const Tensor& x, const RecurrentState& state, const RecurrentParams& p);

// [forward pass over 0..N-1 | backward pass over N-1..0] at each position.
Tensor bidirectional_encode(const Tensor& x, const RecurrentParams& forward,
                            const RecurrentParams& backward);

// Per-channel normalization over the temporal axis of one N x C instance.
Tensor instance_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

struct RelPosTable {
  Tensor table;  // (2 k_max + 1) x d
  Index k_max = 16;

  static RelPosTable create(ParameterSet& ps, const std::string& name, Index k_max, Index dim,
                            Rng& rng);
  Index bucket(Index i, Index j) const;
};

struct Embedding {
  Tensor table;  // V x d_w; row 0 is the PAD vector and stays zero

  Index vocab_size() const { return table.dim(0); }
  Index dim() const { return table.dim(1); }
};

Embedding make_embedding(ParameterSet& ps, const std::string& name, Index vocab, Index dim, Rng& rng,
                         bool trainable = true);
// Out-of-range ids map to UNK; PAD rows come out zero and receive no gradient.
Tensor embed(std::span<const Index> ids, const Embedding& e);

struct EmbeddingTable {
  std::vector<std::string> tokens;
  RowMatrix vectors;
};

// "token v1 v2 ... v_d" per line, whitespace separated.
EmbeddingTable load_embedding_table(const std::filesystem::path& path);
void save_embedding_table(const std::filesystem::path& path, const EmbeddingTable& table);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 5.0;  // global gradient norm; <= 0 disables clipping
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Clips, updates every trainable parameter and clears gradients. Returns
  // the pre-clip global gradient norm.
  double step(const ParameterSet& params);
  long steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

  // Moment buffers as named tensors ("adam.m.<param>", "adam.v.<param>",
  // "adam.t") for checkpointing.
  NamedTensors state() const;
  void load_state(const NamedTensors& state);

 private:
  AdamConfig cfg_;
  long t_ = 0;
  std::vector<std::string> order_;
  std::unordered_map<std::string, std::pair<Vector, Vector>> moments_;
};

}  // namespace pmi
