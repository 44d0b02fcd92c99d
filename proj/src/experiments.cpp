// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0

#include "pmi/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

namespace pmi {

namespace fs = std::filesystem;

Config seeded(const Config& cfg, std::uint64_t seed) {
  Config c = cfg;
  c.seed = seed;
  return c;
}

namespace {

template <class Sample>
void split_samples(std::vector<Sample> all, Index train_count, std::vector<Sample>& train, std::vector<Sample>& test) {
  auto n = static_cast<Index>(all.size());
  if (train_count == 0 || train_count >= n) {
    train = all;
    test = std::move(all);
    return;
  }
  train.assign(all.begin(), all.begin() + train_count);
  test.assign(all.begin() + train_count, all.end());
}

TrainOptions train_options(const Config& cfg) {
  TrainOptions opt;
  opt.steps = cfg.steps;
  opt.batch = cfg.batch;
  opt.adam = cfg.adam;
  opt.seed = cfg.seed;
  return opt;
}

std::vector<Annotation> annotations(std::span<const LocSample> samples) {
  std::vector<Annotation> out;
  for (const auto& s : samples) out.push_back(s.annotation);
  return out;
}

Metrics recall_metrics(const RecallTriple& r) {
  return {{"0.3", "0.5", "0.7"}, {"r03", "r05", "r07"}, {r.r03, r.r05, r.r07}};
}

std::vector<std::pair<std::string, double>> log_fields(const Metrics& m, Index step) {
  std::vector<std::pair<std::string, double>> f{{"step", static_cast<double>(step)}};
  for (std::size_t i = 0; i < m.values.size(); ++i) f.emplace_back(m.keys[i], m.values[i]);
  return f;
}

void write_text(const fs::path& path, const std::string& text) {
  write_atomic(path, [&](std::ostream& out) { out << text; });
}

void write_matrix(const fs::path& path, const RowMatrix& m, const std::vector<std::string>& header = {}) {
  write_atomic(path, [&](std::ostream& out) {
    if (!header.empty()) {
      out << '#';
      for (std::size_t i = 0; i < header.size(); ++i) out << (i ? "\t" : "") << header[i];
      out << '\n';
    }
    for (Index r = 0; r < m.rows(); ++r) {
      for (Index c = 0; c < m.cols(); ++c) out << (c ? "\t" : "") << format_double(m(r, c));
      out << '\n';
    }
  });
}

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

double Metrics::at(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name || keys[i] == name) return values[i];
  throw ContractError("no metric named " + std::string(name));
}

Metrics loc_metrics(const LocEval& e) { return recall_metrics(e.recall); }

Metrics cap_metrics(const CapEval& e) {
  return {{"B@1", "B@2", "B@3", "B@4", "CIDEr"},
          {"bleu1", "bleu2", "bleu3", "bleu4", "cider"},
          {e.bleu[0], e.bleu[1], e.bleu[2], e.bleu[3], e.cider}};
}

LocData load_loc_data(const Config& cfg) {
  LocDataset ds;
  if (!cfg.data_dir.empty()) {
    ds = read_localization_set(cfg.data_dir);
  } else {
    SynthSpec spec = cfg.synth;
    spec.seed = cfg.synth.seed + cfg.seed;
    ds = gen_localization_set(spec);
  }
  LocData d;
  d.tags = ds.tags;
  d.dims = ds.dims;
  d.vocab = localization_vocabulary(ds);
  d.embeddings = ds.embeddings;
  split_samples(prepare_samples(ds, d.vocab, cfg.loc.positions), cfg.train_count, d.train, d.test);
  return d;
}

CapData load_cap_data(const Config& cfg) {
  CaptionDataset ds;
  if (!cfg.data_dir.empty()) {
    ds = read_caption_set(cfg.data_dir);
  } else {
    CaptionSpec spec = cfg.captions;
    spec.seed = cfg.captions.seed + cfg.seed;
    ds = gen_caption_set(spec);
  }
  CapData d;
  d.tags = ds.tags;
  d.dims = ds.dims;
  d.vocab = caption_vocabulary(ds);
  split_samples(prepare_caption_samples(ds, d.vocab, cfg.cap.positions), cfg.train_count, d.train, d.test);
  return d;
}

std::unique_ptr<Localizer> make_localizer(const Config& cfg, const LocData& data) {
  auto model = std::make_unique<Localizer>(cfg.loc, data.tags, data.dims, data.vocab, data.embeddings, cfg.seed);
  if (cfg.boundary_prior) model->set_boundary_prior(mean_boundaries(data.train));
  return model;
}

std::unique_ptr<Captioner> make_captioner(const Config& cfg, const CapData& data) {
  return std::make_unique<Captioner>(cfg.cap, data.tags, data.dims, data.vocab.size(), cfg.seed);
}

LocRun train_loc(const Config& cfg, const std::function<void(const StepLog&)>& on_step) {
  LocRun run;
  run.data = load_loc_data(cfg);
  run.model = make_localizer(cfg, run.data);
  TrainOptions opt = train_options(cfg);
  opt.on_step = on_step;
  run.logs = train_localizer(*run.model, run.data.train, opt);
  run.eval = evaluate_localizer(*run.model, run.data.test);
  return run;
}

CapRun train_cap(const Config& cfg, const std::function<void(const StepLog&)>& on_step) {
  CapRun run;
  run.data = load_cap_data(cfg);
  run.model = make_captioner(cfg, run.data);
  TrainOptions opt = train_options(cfg);
  opt.on_step = on_step;
  run.logs = train_captioner(*run.model, run.data.train, opt);
  run.eval = evaluate_captioner(*run.model, run.data.test, run.data.vocab, cfg.beam);
  return run;
}

// ---------------------------------------------------------------- training

namespace {

// The task-independent part of a training run.
template <class Model, class TrainFn, class EvalFn>
TrainSummary train_with_files(const Config& cfg, const fs::path& out, bool resume, std::ostream* progress, Model& model, TrainFn train, EvalFn evaluate) {
  fs::create_directories(out);
  fs::path ckpt = out / "checkpoint.pmic";
  fs::path log_path = out / "runlog.txt";
  Adam adam(cfg.adam);
  TrainSummary summary;
  if (resume) {
    if (!fs::exists(ckpt)) throw ConfigError("nothing to resume: " + ckpt.string() + " does not exist");
    restore_checkpoint(load_checkpoint(ckpt), model.params(), &adam);
    summary.resumed_from = adam.steps();
  } else {
    fs::remove(log_path);
    fs::remove(ckpt);
  }
  write_text(out / "config.ini", cfg.render());
  RunLog log(log_path);
  log.note("run", {{"task", std::string(to_string(cfg.task))},
                   {"seed", std::to_string(cfg.seed)},
                   {"start", std::to_string(adam.steps())},
                   {"steps", std::to_string(cfg.steps)}});

  TrainOptions opt = train_options(cfg);
  opt.steps = std::max<Index>(0, cfg.steps - adam.steps());
  opt.on_step = [&](const StepLog& s) {
    if (s.step == 1 || s.step % cfg.log_every == 0 || s.step == cfg.steps) {
      log.write("step", {{"step", static_cast<double>(s.step)},
                         {"loss", s.loss},
                         {"pred", s.pred},
                         {"norm", s.norm},
                         {"grad_norm", s.grad_norm},
                         {"seconds", s.seconds}});
      if (progress) {
        char line[160];
        std::snprintf(line, sizeof line, "step %6ld  loss %.6f  grad_norm %.3f  %.1fs\n", static_cast<long>(s.step),
                      s.loss, s.grad_norm, s.seconds);
        *progress << line << std::flush;
      }
    }
    if (s.step % cfg.checkpoint_every == 0) save_checkpoint(ckpt, checkpoint_records(model.params(), &adam));
    if (cfg.eval_every > 0 && s.step % cfg.eval_every == 0 && s.step != cfg.steps)
      log.write("eval", log_fields(evaluate(), s.step));
  };
  try {
    summary.logs = train(opt, adam);
  } catch (const NonFiniteError&) {
    // The update that would have used the bad gradient never ran, so the
    // parameters are those of the last finite step.
    save_checkpoint(ckpt, checkpoint_records(model.params(), &adam));
    log.note("abort", {{"step", std::to_string(adam.steps())}, {"reason", "non-finite"}});
    throw;
  }
  save_checkpoint(ckpt, checkpoint_records(model.params(), &adam));
  summary.final_metrics = evaluate();
  log.write("eval", log_fields(summary.final_metrics, adam.steps()));
  return summary;
}

}  // namespace

TrainSummary run_training(const Config& cfg, const fs::path& out, bool resume, std::ostream* progress) {
  if (cfg.task == Task::loc) {
    LocData data = load_loc_data(cfg);
    auto model = make_localizer(cfg, data);
    return train_with_files(
        cfg, out, resume, progress, *model,
        [&](const TrainOptions& opt, Adam& adam) { return train_localizer(*model, data.train, opt, &adam); },
        [&] { return loc_metrics(evaluate_localizer(*model, data.test)); });
  }
  CapData data = load_cap_data(cfg);
  auto model = make_captioner(cfg, data);
  return train_with_files(
      cfg, out, resume, progress, *model,
      [&](const TrainOptions& opt, Adam& adam) { return train_captioner(*model, data.train, opt, &adam); },
      [&] { return cap_metrics(evaluate_captioner(*model, data.test, data.vocab, cfg.beam)); });
}

// ---------------------------------------------------------------- evaluation

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "test") return Split::test;
  if (name == "all") return Split::all;
  throw ConfigError("split must be train, test or all");
}

namespace {

template <class Sample>
std::vector<Sample> pick(const std::vector<Sample>& train, const std::vector<Sample>& test, Split split) {
  if (split == Split::train) return train;
  if (split == Split::test) return test;
  // Without a held-out part both lists hold every video.
  if (train.size() == test.size()) return test;
  std::vector<Sample> all = train;
  all.insert(all.end(), test.begin(), test.end());
  return all;
}

std::string metrics_tsv(const std::vector<std::pair<std::string, Metrics>>& rows) {
  std::ostringstream out;
  out << "method";
  for (const auto& n : rows.front().second.names) out << '\t' << n;
  out << '\n';
  for (const auto& [name, m] : rows) {
    out << name;
    for (double v : m.values) out << '\t' << format_double(v);
    out << '\n';
  }
  return out.str();
}

}  // namespace

std::string format_metrics_table(const std::vector<std::pair<std::string, Metrics>>& rows) {
  if (rows.empty()) return {};
  std::ostringstream out;
  out << "method";
  for (const auto& n : rows.front().second.names) out << ' ' << n;
  out << '\n';
  for (const auto& [name, m] : rows) {
    out << name;
    for (double v : m.values) out << ' ' << fixed2(v);
    out << '\n';
  }
  return out.str();
}

EvalSummary run_evaluation(const Config& cfg, const fs::path& checkpoint, const fs::path& out, Split split) {
  NamedTensors records = load_checkpoint(checkpoint);
  fs::create_directories(out);
  EvalSummary summary;
  if (cfg.task == Task::loc) {
    LocData data = load_loc_data(cfg);
    auto model = make_localizer(cfg, data);
    restore_checkpoint(records, model->params());
    auto samples = pick(data.train, data.test, split);
    LocEval e = evaluate_localizer(*model, samples);
    summary.model = loc_metrics(e);
    write_predictions(out / "predictions.tsv", e.predictions);

    std::vector<Annotation> truths = annotations(samples);
    std::vector<Segment> preds;
    for (const auto& p : e.predictions) preds.push_back(p.segment);
    Rng rng(cfg.seed);
    summary.baselines.emplace_back("random_window", recall_metrics(random_window_baseline(truths, rng, cfg.baseline_trials)));
    summary.baselines.emplace_back("random_uniform", recall_metrics(random_uniform_baseline(truths, rng, cfg.baseline_trials)));
    if (samples.size() > 1)
      summary.baselines.emplace_back("shuffled", recall_metrics(shuffled_baseline(preds, truths, rng, cfg.baseline_trials)));
  } else {
    CapData data = load_cap_data(cfg);
    auto model = make_captioner(cfg, data);
    restore_checkpoint(records, model->params());
    CapEval e = evaluate_captioner(*model, pick(data.train, data.test, split), data.vocab, cfg.beam);
    summary.model = cap_metrics(e);
    write_captions(out / "captions.tsv", e.captions);
  }
  std::vector<std::pair<std::string, Metrics>> rows{{"model", summary.model}};
  rows.insert(rows.end(), summary.baselines.begin(), summary.baselines.end());
  write_text(out / "metrics.tsv", metrics_tsv(rows));
  return summary;
}

// ---------------------------------------------------------------- ablations

AblationAxis parse_axis(std::string_view name) {
  if (name == "fusion") return AblationAxis::fusion;
  if (name == "interaction") return AblationAxis::interaction;
  if (name == "loc_components") return AblationAxis::loc_components;
  throw ConfigError("axis must be fusion, interaction or loc_components");
}

std::string_view to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::fusion: return "fusion";
    case AblationAxis::interaction: return "interaction";
    case AblationAxis::loc_components: return "loc_components";
  }
  return "?";
}

std::vector<AblationVariant> ablation_variants(const Config& base, AblationAxis axis) {
  auto variant = [&](std::string label, PmiMode mode, FusionKind fusion) {
    Config c = base;
    c.loc.use_pmi = true;
    c.loc.mode = c.cap.mode = mode;
    c.loc.fusion = c.cap.fusion = fusion;
    return AblationVariant{std::move(label), std::move(c)};
  };
  std::vector<AblationVariant> rows;
  switch (axis) {
    case AblationAxis::fusion:
      rows.push_back(variant("concat", PmiMode::full, FusionKind::concat));
      rows.push_back(variant("sum", PmiMode::full, FusionKind::sum));
      rows.push_back(variant("weighted", PmiMode::full, FusionKind::weighted));
      break;
    case AblationAxis::interaction:
      rows.push_back(variant("concat_without_interaction", PmiMode::baseline_concat, FusionKind::weighted));
      rows.push_back(variant("concat_with_interaction", PmiMode::concat_interact, FusionKind::weighted));
      rows.push_back(variant("pairwise_concat_fusion", PmiMode::full, FusionKind::concat));
      rows.push_back(variant("pairwise_sum_fusion", PmiMode::full, FusionKind::sum));
      rows.push_back(variant("pairwise_weighted_fusion", PmiMode::full, FusionKind::weighted));
      rows.push_back(variant("intra_only", PmiMode::intra_only, FusionKind::weighted));
      rows.push_back(variant("inter_only", PmiMode::inter_only, FusionKind::weighted));
      rows.push_back(variant("intra_and_inter", PmiMode::full, FusionKind::weighted));
      break;
    case AblationAxis::loc_components: {
      if (base.task != Task::loc) throw ConfigError("the loc_components axis needs task kind = loc");
      const std::array<std::array<bool, 3>, 4> toggles{{{false, false, false},
                                                       {true, false, false},
                                                       {true, true, false},
                                                       {true, true, true}}};
      for (const auto& [pmi, vtli, norm] : toggles) {
        Config c = base;
        c.loc.use_pmi = pmi;
        c.loc.use_vtli = vtli;
        c.loc.use_norm = norm;
        std::string label = std::string("pmi=") + (pmi ? "1" : "0") + ",vtli=" + (vtli ? "1" : "0") +
                            ",norm=" + (norm ? "1" : "0");
        rows.push_back({label, c});
      }
      break;
    }
  }
  return rows;
}

AblationRow run_variant(const AblationVariant& v, std::span<const std::uint64_t> seeds, const AblationProgress& on_run) {
  if (seeds.empty()) throw ConfigError("an ablation needs at least one seed");
  AblationRow row;
  row.label = v.label;
  row.seeds.assign(seeds.begin(), seeds.end());
  for (std::uint64_t seed : seeds) {
    Config c = seeded(v.config, seed);
    Metrics m = c.task == Task::loc ? loc_metrics(train_loc(c).eval) : cap_metrics(train_cap(c).eval);
    if (on_run) on_run(v.label, seed, m);
    row.per_seed.push_back(std::move(m));
  }
  row.mean = row.per_seed.front();
  for (std::size_t k = 0; k < row.mean.values.size(); ++k) {
    double total = 0.0;
    for (const auto& m : row.per_seed) total += m.values[k];
    row.mean.values[k] = total / static_cast<double>(row.per_seed.size());
  }
  return row;
}

std::vector<AblationRow> run_ablation(const Config& base, AblationAxis axis, std::span<const std::uint64_t> seeds,
                                      const AblationProgress& on_run) {
  std::vector<AblationRow> rows;
  for (const auto& v : ablation_variants(base, axis)) rows.push_back(run_variant(v, seeds, on_run));
  return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  if (rows.empty()) return {};
  std::ostringstream out;
  out << "# row label";
  for (const auto& n : rows.front().mean.names) out << ' ' << n;
  out << " seeds\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out << i << ' ' << rows[i].label;
    for (double v : rows[i].mean.values) out << ' ' << fixed2(v);
    out << ' ';
    for (std::size_t s = 0; s < rows[i].seeds.size(); ++s) out << (s ? "," : "") << rows[i].seeds[s];
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------- explanations

std::vector<std::string> pair_labels(const InteractionTrace& trace, std::span<const ModalityTag> tags) {
  std::vector<std::string> out;
  bool concatenated = trace.slots.size() == 1 && tags.size() > 1;
  for (const auto& [p, q] : trace.slots) {
    if (concatenated) out.push_back("concat>concat");
    else out.push_back(std::string(to_string(tags[static_cast<std::size_t>(p)])) + ">" +
                       std::string(to_string(tags[static_cast<std::size_t>(q)])));
  }
  return out;
}

namespace {

std::vector<fs::path> write_trace(const InteractionTrace& trace, std::span<const ModalityTag> tags, const fs::path& out) {
  std::vector<fs::path> files;
  std::vector<std::string> labels = pair_labels(trace, tags);
  if (trace.alpha.defined()) {
    files.push_back(out / "alpha.tsv");
    write_matrix(files.back(), trace.alpha.matrix(), labels);
  }
  std::ostringstream stats;
  stats << "pair\tmin\tmax\tmean\tstd\n";
  for (std::size_t s = 0; s < trace.pairs.size(); ++s) {
    std::string stem = labels[s];
    std::replace(stem.begin(), stem.end(), '>', '_');
    const CGMITrace& t = trace.pairs[s];
    if (!t.attention.empty()) {
      RowMatrix mean_map = RowMatrix::Zero(t.attention.front().rows(), t.attention.front().cols());
      for (const auto& head : t.attention) mean_map += head.matrix();
      mean_map /= static_cast<double>(t.attention.size());
      files.push_back(out / ("attention_" + stem + ".tsv"));
      write_matrix(files.back(), mean_map);
    }
    if (t.gate.defined()) {
      RowMatrix g = t.gate.matrix();
      files.push_back(out / ("gate_" + stem + ".tsv"));
      write_matrix(files.back(), g);
      double mean = g.mean();
      double sd = std::sqrt((g.array() - mean).square().mean());
      stats << labels[s] << '\t' << format_double(g.minCoeff()) << '\t' << format_double(g.maxCoeff()) << '\t'
            << format_double(mean) << '\t' << format_double(sd) << '\n';
    }
  }
  files.push_back(out / "gate_stats.tsv");
  write_text(files.back(), stats.str());
  return files;
}

}  // namespace

std::vector<fs::path> run_explain(const Config& cfg, const fs::path& checkpoint, const std::string& example_id,
                                  const fs::path& out) {
  NamedTensors records = load_checkpoint(checkpoint);
  fs::create_directories(out);
  if (cfg.task == Task::loc) {
    LocData data = load_loc_data(cfg);
    auto model = make_localizer(cfg, data);
    restore_checkpoint(records, model->params());
    const LocSample* sample = nullptr;
    for (const auto* list : {&data.train, &data.test})
      for (const auto& s : *list)
        if (s.annotation.video_id == example_id) sample = &s;
    if (!sample) throw ConfigError("no example with id " + example_id);
    NoGradGuard guard;
    InteractionTrace trace;
    LocalizationOutput o = model->forward(*sample, &trace);
    auto files = write_trace(trace, data.tags, out);
    RowMatrix rel(o.r.size(), 2);
    for (Index n = 0; n < o.r.size(); ++n) {
      rel(n, 0) = o.r[n];
      rel(n, 1) = sample->r_hat[static_cast<std::size_t>(n)];
    }
    files.push_back(out / "relevance.tsv");
    write_matrix(files.back(), rel, {"r", "target_mask"});
    return files;
  }
  CapData data = load_cap_data(cfg);
  auto model = make_captioner(cfg, data);
  restore_checkpoint(records, model->params());
  const CapSample* sample = nullptr;
  for (const auto* list : {&data.train, &data.test})
    for (const auto& s : *list)
      if (s.id == example_id) sample = &s;
  if (!sample) throw ConfigError("no example with id " + example_id);
  NoGradGuard guard;
  InteractionTrace trace;
  model->encode(sample->video, &trace);
  auto files = write_trace(trace, data.tags, out);
  files.push_back(out / "caption.txt");
  write_text(files.back(), data.vocab.decode(model->caption(*sample, cfg.beam)) + "\n");
  return files;
}

PairWeightSplit in_segment_pair_weights(const Localizer& model, std::span<const LocSample> samples) {
  NoGradGuard guard;
  double cross = 0.0, intra = 0.0;
  Index cross_n = 0, intra_n = 0;
  for (const auto& s : samples) {
    InteractionTrace trace;
    model.forward(s, &trace);
    if (!trace.alpha.defined()) throw ContractError("pair weights need weighted fusion");
    RowMatrix alpha = trace.alpha.matrix();
    for (Index n = 0; n < alpha.rows(); ++n) {
      if (s.r_hat[static_cast<std::size_t>(n)] <= 0.0) continue;
      for (std::size_t k = 0; k < trace.slots.size(); ++k) {
        bool same = trace.slots[k].first == trace.slots[k].second;
        (same ? intra : cross) += alpha(n, static_cast<Index>(k));
        ++(same ? intra_n : cross_n);
      }
    }
  }
  if (cross_n == 0 || intra_n == 0) throw ContractError("no in-segment positions with both pair kinds");
  return {cross / static_cast<double>(cross_n), intra / static_cast<double>(intra_n)};
}

}  // namespace pmi
