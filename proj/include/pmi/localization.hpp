// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0
//
// Sentence localization: text self-interaction, local video-text interaction,
// the convolutional relevance head, losses, decoding and Recall@IoU.

#pragma once

#include "pmi/interaction.hpp"

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace pmi {

// ---------------------------------------------------------------- layers

Tensor text_self_interact(const Tensor& y, const Linear& project, const CGMIParams& p);

// Row indices t-w .. t+w of every position, clamped to [0, N) (replication
// padding); N x (2w+1) row-major.
std::vector<Index> window_indices(Index n, Index w);
Tensor local_window(const Tensor& x, Index t, Index w);

// W^T [a | b | a*b | a+b] row by row.
struct MMParams {
  Linear w;  // 4d -> d

  static MMParams create(ParameterSet& ps, const std::string& name, Index d, Rng& rng, bool with_bias = false);
};
Tensor mm_unit(const Tensor& a, const Tensor& b, const MMParams& p);

struct VtliParams {
  BilinearParams video_to_text;
  BilinearParams text_to_video;
  MMParams mm_video;
  MMParams mm_text;

  static VtliParams create(ParameterSet& ps, const std::string& name, const InteractionDims& dims, Rng& rng);
};

// All N windows at once. Queries are single rows in both directions, so no
// relative-position term enters.
Tensor vtli(const Tensor& x, const Tensor& y, Index w, const VtliParams& p);

// One temporal convolution with replication padding; weight rows are
// grouped by tap: [tap 0 channels | tap 1 channels | ...].
struct Conv1d {
  Tensor weight;  // (kernel * in) x out
  Tensor bias;    // 1 x out
  Index kernel = 3;

  static Conv1d create(ParameterSet& ps, const std::string& name, Index in, Index out, Index kernel, Rng& rng);
  Index in_dim() const { return weight.dim(0) / kernel; }
  Index out_dim() const { return weight.dim(1); }
};
Tensor conv1d(const Tensor& x, const Conv1d& p);

struct HeadParams {
  std::vector<Conv1d> convs;
  std::vector<Tensor> norm_gain;  // one per layer except the last
  std::vector<Tensor> norm_bias;
  Linear boundary;  // N -> 2

  // `channels` lists the output width of each layer and must end in 1.
  static HeadParams create(ParameterSet& ps, const std::string& name, Index d, std::span<const Index> channels,
                           Index kernel, Index positions, Rng& rng);
  Index layers() const { return static_cast<Index>(convs.size()); }
};

// Default plan d -> d/2 -> d/4 -> ... -> 1 with K layers.
std::vector<Index> default_channel_plan(Index d, Index layers);

struct LocalizationOutput {
  std::vector<Tensor> layers;  // C^1 .. C^K, N x C_k
  Tensor r;                    // N
  Tensor b;                    // 2
};

LocalizationOutput loc_head(const Tensor& z, const Tensor& y, const HeadParams& p);

// ---------------------------------------------------------------- losses

Tensor norm_loss(std::span<const Tensor> layers, double beta);
Tensor pred_loss(const Tensor& b, const Tensor& r, std::span<const double> b_hat, std::span<const double> r_hat,
                 double lambda_r, double delta);
Tensor total_loss(const Tensor& pred, const Tensor& norm, double lambda_n);

// ---------------------------------------------------------------- decoding and metrics

struct Segment {
  double start = 0.0;
  double end = 0.0;
  double length() const { return end - start; }
};

Segment decode_segment(double b0, double b1, double duration);
double iou(const Segment& a, const Segment& b);
double recall_at_iou(std::span<const Segment> preds, std::span<const Segment> truths, double m);

// Position n covers time ((n + 0.5) / N) * duration; it is relevant when that
// instant lies inside the segment. Throws ContractError when no position is.
std::vector<double> relevance_mask(const Segment& truth, double duration, Index n);

// ---------------------------------------------------------------- files

struct Annotation {
  std::string video_id;
  Segment segment;  // seconds
  double duration = 0.0;
  std::string sentence;
};

std::vector<Annotation> read_annotations(const std::filesystem::path& path);
void write_annotations(const std::filesystem::path& path, std::span<const Annotation> rows);

struct LocPrediction {
  std::string video_id;
  Segment segment;
  std::vector<double> relevance;
};

void write_predictions(const std::filesystem::path& path, std::span<const LocPrediction> rows);
std::vector<LocPrediction> read_predictions(const std::filesystem::path& path);

// ---------------------------------------------------------------- random baselines

inline constexpr double kIouThresholds[] = {0.3, 0.5, 0.7};

struct RecallTriple {
  double r03 = 0.0, r05 = 0.0, r07 = 0.0;
};

// Sliding-window proposals: each trial picks one window uniformly among all
// windows of the given frame lengths at `fps` with stride of half a window.
RecallTriple random_window_baseline(std::span<const Annotation> truths, Rng& rng, int trials,
                                    std::span<const int> window_frames = std::array<int, 4>{64, 128, 256, 512},
                                    double fps = 30.0);

// Uniform proposals: start and end drawn as two sorted uniform fractions.
RecallTriple random_uniform_baseline(std::span<const Annotation> truths, Rng& rng, int trials);

// Permutation null: predictions scored against the annotations of other
// videos, averaged over `trials` random derangements.
RecallTriple shuffled_baseline(std::span<const Segment> preds, std::span<const Annotation> truths, Rng& rng,
                               int trials);

RecallTriple recall_triple(std::span<const Segment> preds, std::span<const Segment> truths);

}  // namespace pmi
