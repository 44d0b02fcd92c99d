// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0
//
// The experiment drivers behind the command-line tool: data loading, the
// training run with checkpoints and a run log, evaluation, ablations and
// explanation dumps.

#pragma once

#include "pmi/captioning.hpp"
#include "pmi/checkpoint.hpp"
#include "pmi/config.hpp"
#include "pmi/localizer.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace pmi {

// Sets the run seed. It drives initialization and sample order, and data
// generated in memory is drawn with the synthetic seed plus the run seed, so
// each run seed sees its own draw of the benchmark.
Config seeded(const Config& cfg, std::uint64_t seed);

struct LocData {
  std::vector<ModalityTag> tags;
  std::vector<Index> dims;
  Vocabulary vocab;
  EmbeddingTable embeddings;
  std::vector<LocSample> train;
  std::vector<LocSample> test;
};

struct CapData {
  std::vector<ModalityTag> tags;
  std::vector<Index> dims;
  Vocabulary vocab;
  std::vector<CapSample> train;
  std::vector<CapSample> test;
};

// Reads data.dir when set, otherwise generates the configured set. The
// leading train_count videos train and the rest evaluate; with train_count 0
// or not smaller than the set, every video is used for both.
LocData load_loc_data(const Config& cfg);
CapData load_cap_data(const Config& cfg);

// A freshly initialized model for the task, including the boundary prior
// when configured.
std::unique_ptr<Localizer> make_localizer(const Config& cfg, const LocData& data);
std::unique_ptr<Captioner> make_captioner(const Config& cfg, const CapData& data);

// Column names and values of one evaluation. Localization columns are the IoU
// thresholds "0.3 0.5 0.7"; captioning columns are B@1..B@4 and CIDEr.
struct Metrics {
  std::vector<std::string> names;
  std::vector<std::string> keys;  // run-log field names, e.g. r05 or bleu4
  std::vector<double> values;

  double at(std::string_view name) const;
};

Metrics loc_metrics(const LocEval& e);
Metrics cap_metrics(const CapEval& e);

// In-memory train-then-evaluate on the test split, without files.
struct LocRun {
  LocData data;
  std::unique_ptr<Localizer> model;
  std::vector<StepLog> logs;
  LocEval eval;
};
LocRun train_loc(const Config& cfg, const std::function<void(const StepLog&)>& on_step = {});

struct CapRun {
  CapData data;
  std::unique_ptr<Captioner> model;
  std::vector<StepLog> logs;
  CapEval eval;
};
CapRun train_cap(const Config& cfg, const std::function<void(const StepLog&)>& on_step = {});

struct TrainSummary {
  std::vector<StepLog> logs;
  Metrics final_metrics;
  Index resumed_from = 0;
};

// Writes config.ini, runlog.txt and checkpoint.pmic under `out`. With
// `resume`, continues from out/checkpoint.pmic including optimizer state.
// A non-finite loss rethrows NonFiniteError after saving the last finite
// parameters and noting the abort in the run log.
TrainSummary run_training(const Config& cfg, const std::filesystem::path& out, bool resume,
                          std::ostream* progress = nullptr);

enum class Split { train, test, all };
Split parse_split(std::string_view name);

struct EvalSummary {
  Metrics model;
  std::vector<std::pair<std::string, Metrics>> baselines;  // localization only
};

// Loads `checkpoint` into a model built from `cfg` (CheckpointMismatch when
// the shapes disagree), evaluates the split and writes predictions.tsv or
// captions.tsv plus metrics.tsv under `out`.
EvalSummary run_evaluation(const Config& cfg, const std::filesystem::path& checkpoint, const std::filesystem::path& out,
                           Split split = Split::test);

std::string format_metrics_table(const std::vector<std::pair<std::string, Metrics>>& rows);

// ---------------------------------------------------------------- ablations

enum class AblationAxis { fusion, interaction, loc_components };
AblationAxis parse_axis(std::string_view name);
std::string_view to_string(AblationAxis axis);

struct AblationVariant {
  std::string label;
  Config config;
};

// In the row order of the published tables: fusion concat, sum, weighted;
// the eight interaction strategies; the four localizer component settings
// (PMI, VTLI, norm) = 000, 100, 110, 111.
std::vector<AblationVariant> ablation_variants(const Config& base, AblationAxis axis);

struct AblationRow {
  std::string label;
  std::vector<std::uint64_t> seeds;
  std::vector<Metrics> per_seed;
  Metrics mean;
};

// Trains and evaluates one variant per seed; `on_run` sees each finished
// (row, seed) evaluation.
using AblationProgress = std::function<void(const std::string& label, std::uint64_t seed, const Metrics& m)>;
AblationRow run_variant(const AblationVariant& v, std::span<const std::uint64_t> seeds,
                        const AblationProgress& on_run = {});
std::vector<AblationRow> run_ablation(const Config& base, AblationAxis axis, std::span<const std::uint64_t> seeds,
                                      const AblationProgress& on_run = {});

// Header "# label <metric names> seeds", one row per variant with seed means
// and the comma-separated seed set.
std::string format_ablation(const std::vector<AblationRow>& rows);

// ---------------------------------------------------------------- explanations

// Pair labels "p>q" over the slots of `trace`, p the query modality.
std::vector<std::string> pair_labels(const InteractionTrace& trace, std::span<const ModalityTag> tags);

// Writes alpha.tsv (N x slots with a header of pair labels), one
// attention_<p>_<q>.tsv per slot (mean over heads), gate_<p>_<q>.tsv,
// gate_stats.tsv and, for localization, relevance.tsv. Returns the files.
std::vector<std::filesystem::path> run_explain(const Config& cfg, const std::filesystem::path& checkpoint,
                                               const std::string& example_id, const std::filesystem::path& out);

// Mean cross-pair and intra-pair fusion weight over the in-segment positions
// of `samples`, for a two-modality localizer.
struct PairWeightSplit {
  double cross = 0.0;
  double intra = 0.0;
};
PairWeightSplit in_segment_pair_weights(const Localizer& model, std::span<const LocSample> samples);

}  // namespace pmi
