// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0
//
// Event captioning: bidirectional encoding of the fused video features, a
// two-layer recurrent decoder with temporal attention, decoding, and corpus
// BLEU and CIDEr.

#pragma once

#include "pmi/interaction.hpp"
#include "pmi/synth.hpp"
#include "pmi/train.hpp"
#include "pmi/vocab.hpp"

#include <array>

namespace pmi {

// ---------------------------------------------------------------- decoder

struct AttentionParams {
  Linear state;  // H -> a, no bias
  Linear video;  // d -> a, carries the bias b
  Tensor v;      // a x 1

  static AttentionParams create(ParameterSet& ps, const std::string& name, Index hidden, Index d, Index a, Rng& rng);
};

struct Attended {
  Tensor context;  // 1 x d
  Tensor weights;  // N
};

// scores_i = v^T tanh(W_h h + W_x V_i + b), weights = softmax(scores),
// context = sum_i weights_i V_i. `keys` may pass a precomputed V W_x + b.
Attended temporal_attention(const Tensor& h, const Tensor& video, const AttentionParams& p,
                            const Tensor* keys = nullptr);

struct DecoderParams {
  Embedding words;
  AttentionParams attention;
  RecurrentParams layer1;  // [embedding | context] -> H
  RecurrentParams layer2;  // H -> H
  Linear out;              // H -> vocabulary

  static DecoderParams create(ParameterSet& ps, const std::string& name, Index vocab, Index embed_dim, Index d,
                              Index hidden, Index attention_dim, Rng& rng);
  Index hidden() const { return layer1.hidden(); }
  Index vocab_size() const { return out.out_dim(); }
};

struct DecoderState {
  RecurrentState layer1;
  RecurrentState layer2;
  Index prev = kBosId;
  Index step = 0;
};

DecoderState initial_state(const DecoderParams& p);

struct StepOutput {
  Tensor logits;  // vocabulary
  DecoderState state;
  Tensor weights;  // attention over the video, N
};

// Attention is driven by the top-layer state of the previous step.
StepOutput decode_step(const DecoderState& state, const Tensor& video, const DecoderParams& p,
                       const Tensor* keys = nullptr);

// Teacher-forced cross-entropy averaged over non-PAD reference tokens. The
// reference must be non-empty and end with EOS.
Tensor train_caption_loss(const Tensor& video, std::span<const Index> reference, const DecoderParams& p);

inline constexpr Index kDefaultMaxLen = 30;

// Token ids without BOS and EOS. beam == 1 is greedy decoding. Beam scores
// are summed log-probabilities; finished hypotheses are ranked after
// dividing by their token count (EOS included).
std::vector<Index> generate(const Tensor& video, const DecoderParams& p, Index beam = 1,
                            Index max_len = kDefaultMaxLen);

// ---------------------------------------------------------------- metrics

using TokenList = std::vector<std::string>;

// Corpus BLEU-1..4 on a 0..100 scale with clipped n-gram counts and the
// closest-reference brevity penalty. references[i] holds the references of
// candidates[i].
std::array<double, 4> bleu(std::span<const TokenList> candidates, std::span<const std::vector<TokenList>> references);

// Mean TF-IDF n-gram cosine for n = 1..4 with document frequencies over the
// reference sets, times 10.
double cider(std::span<const TokenList> candidates, std::span<const std::vector<TokenList>> references);

// ---------------------------------------------------------------- model

struct CaptionConfig {
  InteractionDims dims{.d = 32, .d_low = 16, .d_c = 8, .heads = 8, .k_max = 16};
  PmiMode mode = PmiMode::full;
  FusionKind fusion = FusionKind::weighted;
  Index positions = 32;
  Index embed_dim = 32;
  Index hidden = 64;
  Index attention_dim = 32;
  Index max_len = kDefaultMaxLen;
  bool attend_fused = false;  // attend over the fused features instead of the encoder output
};

struct CapSample {
  std::string id;
  ModalityBundle video;  // `positions` rows per modality
  std::vector<Index> tokens;  // ends with EOS
  std::string reference;
};

Vocabulary caption_vocabulary(const CaptionDataset& data);
std::vector<CapSample> prepare_caption_samples(const CaptionDataset& data, const Vocabulary& vocab, Index positions);

class Captioner {
 public:
  Captioner(const CaptionConfig& cfg, std::vector<ModalityTag> tags, std::vector<Index> dims, Index vocab_size,
            std::uint64_t seed);

  // The sequence the decoder attends over.
  Tensor encode(const ModalityBundle& video, InteractionTrace* trace = nullptr) const;
  Tensor loss(const CapSample& s) const;
  std::vector<Index> caption(const CapSample& s, Index beam = 1) const;

  const CaptionConfig& config() const { return cfg_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }
  const PmiEncoder& encoder() const { return encoder_; }

 private:
  CaptionConfig cfg_;
  ParameterSet params_;
  PmiEncoder encoder_;
  RecurrentParams forward_;
  RecurrentParams backward_;
  DecoderParams decoder_;
};

std::vector<StepLog> train_captioner(Captioner& model, std::span<const CapSample> train, const TrainOptions& opt,
                                     Adam* optimizer = nullptr);

struct CapEval {
  std::array<double, 4> bleu{};
  double cider = 0.0;
  std::vector<std::pair<std::string, std::string>> captions;  // id, generated text
};

CapEval evaluate_captioner(const Captioner& model, std::span<const CapSample> samples, const Vocabulary& vocab,
                           Index beam = 1);

// "video_id<TAB>sentence" per line; sentences are lowercased on read.
void write_captions(const std::filesystem::path& path, std::span<const std::pair<std::string, std::string>> rows);
std::vector<std::pair<std::string, std::string>> read_captions(const std::filesystem::path& path);

}  // namespace pmi
