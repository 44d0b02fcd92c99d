// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0
//
// The end-to-end localization model and its training and evaluation loops.

#pragma once

#include "pmi/localization.hpp"
#include "pmi/synth.hpp"
#include "pmi/train.hpp"
#include "pmi/vocab.hpp"

#include <array>

namespace pmi {

struct LocConfig {
  InteractionDims dims{.d = 32, .d_low = 16, .d_c = 8, .heads = 8, .k_max = 16};
  PmiMode mode = PmiMode::full;
  FusionKind fusion = FusionKind::weighted;
  bool per_position_fusion = false;
  bool use_pmi = true;   // off: concatenated projection without interaction
  bool use_vtli = true;  // off: the head reads the fused video features directly
  bool use_norm = true;
  Index window = 2;
  Index head_layers = 3;
  Index kernel = 3;
  Index positions = 128;
  double lambda_r = 5.0;
  double lambda_n = 0.001;
  double huber_delta = 1.0;
  double beta = 1.0;
  bool freeze_embeddings = true;

  PmiMode effective_mode() const { return use_pmi ? mode : PmiMode::baseline_concat; }
};

struct LocSample {
  ModalityBundle video;  // `positions` rows per modality
  std::vector<Index> tokens;
  std::array<double, 2> b_hat{};  // boundary fractions
  std::vector<double> r_hat;
  Annotation annotation;
};

Vocabulary localization_vocabulary(const LocDataset& data);
std::vector<LocSample> prepare_samples(const LocDataset& data, const Vocabulary& vocab, Index positions);
std::array<double, 2> mean_boundaries(std::span<const LocSample> samples);

struct LocLoss {
  Tensor total;
  Tensor pred;
  Tensor norm;
};

class Localizer {
 public:
  Localizer(const LocConfig& cfg, std::vector<ModalityTag> tags, std::vector<Index> dims, const Vocabulary& vocab,
            const EmbeddingTable& embeddings, std::uint64_t seed);

  Tensor encode_text(std::span<const Index> tokens) const;
  LocalizationOutput forward(const LocSample& s, InteractionTrace* trace = nullptr) const;
  LocLoss loss(const LocSample& s) const;
  LocPrediction predict(const LocSample& s) const;

  // Sets the boundary bias so that a uniform r decodes to `fractions`, the
  // mean training segment; used once at initialization.
  void set_boundary_prior(std::array<double, 2> fractions);

  const LocConfig& config() const { return cfg_; }
  const ParameterSet& params() const { return params_; }
  ParameterSet& params() { return params_; }
  const PmiEncoder& encoder() const { return encoder_; }

 private:
  LocConfig cfg_;
  ParameterSet params_;
  Embedding words_;
  Linear text_project_;
  CGMIParams text_self_;
  PmiEncoder encoder_;
  VtliParams vtli_;
  HeadParams head_;
};

// Gradients of the batch-mean loss are accumulated sample by sample. Throws
// NonFiniteError on a non-finite loss; the parameters are left at the last
// finite step.
std::vector<StepLog> train_localizer(Localizer& model, std::span<const LocSample> train, const TrainOptions& opt,
                                     Adam* optimizer = nullptr);

struct LocEval {
  RecallTriple recall;
  std::vector<LocPrediction> predictions;
};

LocEval evaluate_localizer(const Localizer& model, std::span<const LocSample> samples);

}  // namespace pmi
