// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0
//
// pmi gradcheck | gen-data | train | eval | ablate | explain
//
// Exit codes: 0 success, 1 invalid input (config, paths, shapes, files),
// 2 numerical failure (non-finite values, failed gradient checks).

#include "CLI11.hpp"

#include "pmi/experiments.hpp"
#include "pmi/gradcheck_suite.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace pmi;

namespace {

constexpr int kInvalid = 1;
constexpr int kNumerical = 2;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

Config load(const Common& c, bool check) {
  Config cfg = load_config(c.config, check);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

int cmd_gradcheck(double tolerance) {
  auto results = run_gradcheck_suite(gradcheck_components(), tolerance, &std::cout);
  int failed = 0;
  for (const auto& r : results)
    if (!r.passed(tolerance)) {
      ++failed;
      std::cerr << "gradcheck failed: " << r.name << (r.failure.empty() ? "" : ": " + r.failure) << '\n';
    }
  std::printf("%zu components, %d failed, tolerance %.0e\n", results.size(), failed, tolerance);
  return failed ? kNumerical : 0;
}

int cmd_gen_data(const Common& c) {
  Config cfg = load(c, false);
  fs::path out = c.out;
  if (cfg.task == Task::loc) {
    SynthSpec spec = cfg.synth;
    spec.seed = cfg.synth.seed + cfg.seed;
    LocDataset data = gen_localization_set(spec);
    write_localization_set(out, data);
    ProbeReport probe = probe_certificate(data, cfg.loc.positions);
    std::printf("wrote %zu localization videos to %s\nprobe auc: single stream %.3f, product %.3f\n",
                data.videos.size(), out.string().c_str(), probe.single_auc, probe.product_auc);
  } else {
    CaptionSpec spec = cfg.captions;
    spec.seed = cfg.captions.seed + cfg.seed;
    CaptionDataset data = gen_caption_set(spec);
    write_caption_set(out, data);
    std::printf("wrote %zu caption videos to %s\n", data.videos.size(), out.string().c_str());
  }
  return 0;
}

int cmd_train(const Common& c, bool resume) {
  Config cfg = load(c, true);
  TrainSummary s = run_training(cfg, c.out, resume, &std::cout);
  if (s.resumed_from > 0) std::printf("resumed from step %ld\n", static_cast<long>(s.resumed_from));
  std::cout << format_metrics_table({{"model", s.final_metrics}});
  return 0;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& split) {
  Config cfg = load(c, true);
  if (!fs::exists(checkpoint)) throw ConfigError("checkpoint does not exist: " + checkpoint);
  EvalSummary s = run_evaluation(cfg, checkpoint, c.out, parse_split(split));
  std::vector<std::pair<std::string, Metrics>> rows{{"model", s.model}};
  rows.insert(rows.end(), s.baselines.begin(), s.baselines.end());
  std::cout << format_metrics_table(rows);
  return 0;
}

int cmd_ablate(const Common& c, const std::string& axis_name, const std::vector<std::uint64_t>& seeds_flag) {
  Config cfg = load(c, true);
  AblationAxis axis = parse_axis(axis_name);
  std::vector<std::uint64_t> seeds = seeds_flag.empty() ? cfg.ablate_seeds : seeds_flag;
  auto rows = run_ablation(cfg, axis, seeds, [](const std::string& label, std::uint64_t seed, const Metrics& m) {
    std::printf("%s seed %llu:", label.c_str(), static_cast<unsigned long long>(seed));
    for (std::size_t i = 0; i < m.values.size(); ++i) std::printf(" %s %.2f", m.names[i].c_str(), m.values[i]);
    std::printf("\n");
    std::fflush(stdout);
  });
  std::string table = "# axis " + std::string(to_string(axis)) + "\n" + format_ablation(rows);
  std::cout << table;
  if (!c.out.empty()) {
    fs::create_directories(c.out);
    write_atomic(fs::path(c.out) / ("ablation_" + std::string(to_string(axis)) + ".txt"),
                 [&](std::ostream& out) { out << table; });
  }
  return 0;
}

int cmd_explain(const Common& c, const std::string& checkpoint, const std::string& example) {
  Config cfg = load(c, true);
  if (!fs::exists(checkpoint)) throw ConfigError("checkpoint does not exist: " + checkpoint);
  for (const auto& f : run_explain(cfg, checkpoint, example, c.out)) std::cout << f.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pairwise modality interaction: training, evaluation and diagnostics"};
  app.require_subcommand(1);

  double tolerance = 1e-4;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every layer and both models");
  gradcheck->add_option("--tolerance", tolerance, "maximum relative error")->check(CLI::PositiveNumber);

  Common common;
  auto add_common = [&](CLI::App* sub, bool out_required) {
    sub->add_option("--config", common.config, "configuration file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", common.seed, "run seed; overrides [task] seed");
    auto* out = sub->add_option("--out", common.out, "output directory");
    if (out_required) out->required();
  };

  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
  add_common(gen, true);

  bool resume = false;
  auto* train = app.add_subcommand("train", "train a model; writes checkpoint, run log and config");
  add_common(train, true);
  train->add_flag("--resume", resume, "continue from the checkpoint in --out");

  std::string checkpoint, split = "test";
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(eval, true);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--split", split, "train, test or all");

  std::string axis;
  std::vector<std::uint64_t> seeds;
  auto* ablate = app.add_subcommand("ablate", "train every variant of one axis");
  add_common(ablate, false);
  ablate->add_option("--axis", axis, "fusion, interaction or loc_components")->required();
  ablate->add_option("--seeds", seeds, "seed set; overrides [run] ablate_seeds")->delimiter(',');

  std::string example;
  auto* explain = app.add_subcommand("explain", "dump fusion weights, attention maps, gates and relevance");
  add_common(explain, true);
  explain->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  explain->add_option("--example", example, "video id")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kInvalid;
  }

  try {
    if (*gradcheck) return cmd_gradcheck(tolerance);
    if (*gen) return cmd_gen_data(common);
    if (*train) return cmd_train(common, resume);
    if (*eval) return cmd_eval(common, checkpoint, split);
    if (*ablate) return cmd_ablate(common, axis, seeds);
    if (*explain) return cmd_explain(common, checkpoint, example);
  } catch (const NonFiniteError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInvalid;
  }
  return kInvalid;
}
