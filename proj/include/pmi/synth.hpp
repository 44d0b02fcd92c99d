// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic benchmarks with planted ground truth, and the
// binary feature file format.

#pragma once

#include "pmi/interaction.hpp"
#include "pmi/io.hpp"
#include "pmi/localization.hpp"
#include "pmi/vocab.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace pmi {

// ---------------------------------------------------------------- feature files

struct BadMagicError : FormatError {
  using FormatError::FormatError;
};
struct VersionError : FormatError {
  using FormatError::FormatError;
};
struct TruncatedError : FormatError {
  using FormatError::FormatError;
};

inline constexpr std::uint16_t kFeatureVersion = 1;
// "PMIF", u16 version, u16 reserved (zero), u32 N, u32 d, then N*d f32.
inline constexpr std::size_t kFeatureHeaderBytes = 16;

void write_feature(const std::filesystem::path& path, const RowMatrix& m);
RowMatrix read_feature(const std::filesystem::path& path);

// Nearest-index temporal resampling: output row n copies input row
// floor((n + 0.5) * T / N).
std::vector<Index> subsample_indices(Index raw_length, Index n);
RowMatrix subsample(const RowMatrix& x, Index n);

// ---------------------------------------------------------------- localization set

enum class Coupling { xor_pair, single_modality, all_modality };
std::string_view to_string(Coupling c);
Coupling parse_coupling(std::string_view name);

struct SynthSpec {
  std::uint64_t seed = 7;
  Index num_videos = 250;
  Index raw_length = 256;
  std::vector<ModalityTag> tags{ModalityTag::visual, ModalityTag::audio};
  std::vector<Index> dims{16, 16};
  double seg_min = 0.12;  // segment length as a fraction of the video
  double seg_max = 0.25;
  double noise = 0.5;
  Coupling coupling = Coupling::xor_pair;
  Index signal_channels = 8;
  double duration_min = 20.0;
  double duration_max = 40.0;
  Index embed_dim = 16;

  // Throws DomainError for infeasible ranges or negative noise and
  // ContractError when xor_pair has fewer than two modalities.
  void validate() const;
};

// Each video holds two pattern-carrying shots: the target and a decoy.
// Modality 1 carries bit a and modality 2 bit b as +-1 on the first
// signal_channels channels. The sentence names a relation between the bits
// ("agree": a == b, "differ": a != b); the target satisfies it and the decoy
// satisfies the opposite. Marginally every shot's a and b are uniform, so
// neither stream alone separates target from decoy.
struct LocVideo {
  std::string id;
  ModalityBundle raw;  // raw_length rows per modality, values rounded to f32
  Annotation annotation;
  bool differ = false;  // relation named by the sentence
  Segment decoy;        // seconds
};

struct LocDataset {
  std::vector<ModalityTag> tags;
  std::vector<Index> dims;
  std::vector<LocVideo> videos;
  EmbeddingTable embeddings;
};

LocDataset gen_localization_set(const SynthSpec& spec);

// features/<id>.<tag>.pmif, manifest.tsv, annotations.tsv, embeddings.txt.
void write_localization_set(const std::filesystem::path& dir, const LocDataset& data);
LocDataset read_localization_set(const std::filesystem::path& dir);

// The query relation as a sign: +1 for "agree", -1 for "differ", 0 when the
// sentence names neither.
double relation_sign(std::string_view sentence);

struct ProbeReport {
  double single_auc = 0.0;   // linear probe on [x1, s*x1, s]
  double product_auc = 0.0;  // linear probe on s*(x1 .* x2)
};

// Least-squares probes fitted on the first half of the videos and scored by
// AUC on the second half; positions are labelled by the target mask after
// subsampling to `positions`.
ProbeReport probe_certificate(const LocDataset& data, Index positions);

double roc_auc(std::span<const double> scores, std::span<const int> labels);

// ---------------------------------------------------------------- caption set

struct CaptionSpec {
  std::uint64_t seed = 11;
  Index num_videos = 10;
  Index raw_length = 64;
  std::vector<ModalityTag> tags{ModalityTag::visual, ModalityTag::motion, ModalityTag::audio};
  std::vector<Index> dims{16, 16, 16};
  double noise = 0.3;
  Index embed_dim = 16;
};

struct CaptionFactors {
  Index object = 0;
  Index action = 0;
  Index sound = 0;
};

struct CapVideo {
  std::string id;
  ModalityBundle raw;
  CaptionFactors factors;
  std::string reference;
};

struct CaptionDataset {
  std::vector<ModalityTag> tags;
  std::vector<Index> dims;
  std::vector<CapVideo> videos;
  EmbeddingTable embeddings;
};

// Words of each factor slot, index-aligned with the factor values.
const std::vector<std::string>& object_words();
const std::vector<std::string>& action_words();
const std::vector<std::string>& sound_words();
std::string render_caption(const CaptionFactors& f);

// Object lives in the visual stream, action in motion and sound in audio;
// each value lights its own block of channels.
CaptionDataset gen_caption_set(const CaptionSpec& spec);

// features/<id>.<tag>.pmif, manifest.tsv, captions.tsv, embeddings.txt.
void write_caption_set(const std::filesystem::path& dir, const CaptionDataset& data);
CaptionDataset read_caption_set(const std::filesystem::path& dir);

// Shared by both sets: "#video_id<TAB>tag..." header, then relative paths.
struct Manifest {
  std::vector<ModalityTag> tags;
  std::vector<std::pair<std::string, std::vector<std::string>>> rows;
};
void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);

}  // namespace pmi
