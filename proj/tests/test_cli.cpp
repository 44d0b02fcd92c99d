// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0

#include "doctest.h"

#include "pmi/experiments.hpp"
#include "pmi/gradcheck_suite.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sys/wait.h>

using namespace pmi;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("pmi_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const char* kTinyLoc = R"(
[task]
kind = loc
seed = 3

[data]
train_count = 8

[synth]
videos = 12
raw_length = 32

[model]
d = 8
d_low = 4
d_c = 2
heads = 2
k_max = 3
loc_positions = 16

[optim]
lr = 0.002
batch = 2
steps = 4

[run]
log_every = 1
checkpoint_every = 2
baseline_trials = 20
)";

const char* kTinyCap = R"(
[task]
kind = cap

[captions]
videos = 4
raw_length = 16
modalities = visual:16,motion:16,audio:16

[model]
d = 8
d_low = 4
d_c = 2
heads = 2
k_max = 3
cap_positions = 4
embed_dim = 4
hidden = 6
attention_dim = 4

[optim]
lr = 0.01
batch = 2
steps = 3
)";

std::vector<double> all_values(const NamedTensors& records) {
  std::vector<double> out;
  for (const auto& [name, t] : records) out.insert(out.end(), t.values().begin(), t.values().end());
  return out;
}

int run_tool(const std::string& args) {
  std::string cmd = std::string(PMI_TOOL) + " " + args + " > /dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config defaults and parsing") {
  Config c = parse_config("");
  CHECK(c.batch == 32);
  CHECK(c.adam.lr == 1e-4);
  CHECK(c.adam.beta1 == 0.9);
  CHECK(c.adam.beta2 == 0.999);
  CHECK(c.adam.eps == 1e-8);
  CHECK(c.adam.clip_norm == 5.0);
  CHECK(c.loc.dims.heads == 8);
  CHECK(c.loc.lambda_r == 5.0);
  CHECK(c.loc.lambda_n == 0.001);
  CHECK(c.loc.positions == 128);
  CHECK(c.cap.positions == 32);

  Config t = parse_config(kTinyLoc);
  CHECK(t.loc.dims.d == 8);
  CHECK(t.cap.dims.d == 8);
  CHECK(t.synth.num_videos == 12);
  CHECK(t.steps == 4);

  // Rendering is a fixed point of parsing.
  std::string text = t.render();
  CHECK(parse_config(text).render() == text);
  Config cap = parse_config(kTinyCap);
  CHECK(cap.task == Task::cap);
  CHECK(cap.captions.tags.size() == 3);
  CHECK(parse_config(cap.render()).render() == cap.render());

  CHECK(parse_config("# comment\n[optim]\nlr = 0.5  # trailing\n").adam.lr == 0.5);
}

TEST_CASE("config rejects what it does not know") {
  auto message = [](const std::string& text) {
    try {
      parse_config(text, "x.ini");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message("[optim]\nlearning_rate = 0.1\n").find("optim.learning_rate") != std::string::npos);
  CHECK(message("lr = 0.1\n").find("unknown key") != std::string::npos);
  CHECK(message("[optim]\nlr = 0.1\nlr = 0.2\n").find("duplicate") != std::string::npos);
  CHECK(message("[optim]\nlr = fast\n").find("x.ini:2") != std::string::npos);
  CHECK(message("[model]\nfusion = product\n") != "");
  CHECK(message("[model]\npmi = maybe\n") != "");
  CHECK(message("[optim]\noptimizer = sgd\n") != "");
  CHECK(message("[model]\nheads = 3\n").find("divisible") != std::string::npos);
  CHECK(message("[synth]\nseg_max = 0.6\n") != "");
  CHECK(message("[optim\n") != "");

  fs::path dir = scratch_dir("config");
  std::ofstream(dir / "missing_data.ini") << "[data]\ndir = nowhere\n";
  CHECK_THROWS_AS(load_config(dir / "missing_data.ini"), ConfigError);
  CHECK_NOTHROW(load_config(dir / "missing_data.ini", false));
  CHECK_THROWS_AS(load_config(dir / "absent.ini"), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("checkpoint files") {
  fs::path dir = scratch_dir("checkpoint");
  Rng rng(3);
  ParameterSet ps;
  Linear a = Linear::create(ps, "a", 3, 2, rng);
  Linear b = Linear::create(ps, "b", 2, 4, rng, false);
  Adam adam;
  backward(sum_all(linear(linear(Tensor::ones({2, 3}), a), b)));
  adam.step(ps);

  save_checkpoint(dir / "c.pmic", checkpoint_records(ps, &adam));
  std::string bytes = slurp(dir / "c.pmic");
  CHECK(bytes.substr(0, 4) == "PMIC");
  NamedTensors back = load_checkpoint(dir / "c.pmic");
  NamedTensors expected = checkpoint_records(ps, &adam);
  REQUIRE(back.size() == expected.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].first == expected[i].first);
    CHECK(back[i].second.shape() == expected[i].second.shape());
    CHECK(back[i].second.values() == expected[i].second.values());
  }

  SUBCASE("restore into a fresh model") {
    Rng other(99);
    ParameterSet fresh;
    Linear::create(fresh, "a", 3, 2, other);
    Linear::create(fresh, "b", 2, 4, other, false);
    Adam resumed;
    restore_checkpoint(back, fresh, &resumed);
    CHECK(all_values(fresh.named()) == all_values(ps.named()));
    CHECK(resumed.steps() == 1);
    CHECK(all_values(resumed.state()) == all_values(adam.state()));
  }
  SUBCASE("shape mismatch names the parameters") {
    Rng other(99);
    ParameterSet wrong;
    Linear::create(wrong, "a", 3, 5, other);
    Linear::create(wrong, "c", 2, 4, other);
    std::string msg;
    try {
      restore_checkpoint(back, wrong);
    } catch (const CheckpointMismatch& e) {
      msg = e.what();
    }
    CHECK(msg.find("a.weight: checkpoint [3x2], model [3x5]") != std::string::npos);
    CHECK(msg.find("missing c.weight") != std::string::npos);
    CHECK(msg.find("unexpected b.weight") != std::string::npos);
  }
  SUBCASE("damaged files") {
    std::ofstream(dir / "t.pmic", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
    CHECK_THROWS_AS(load_checkpoint(dir / "t.pmic"), FormatError);
    std::string bad = bytes;
    bad[1] = 'X';
    std::ofstream(dir / "m.pmic", std::ios::binary) << bad;
    CHECK_THROWS_AS(load_checkpoint(dir / "m.pmic"), FormatError);
    std::ofstream(dir / "x.pmic", std::ios::binary) << bytes << "junk";
    CHECK_THROWS_AS(load_checkpoint(dir / "x.pmic"), FormatError);
  }
  fs::remove_all(dir);
}

TEST_CASE("run log") {
  fs::path dir = scratch_dir("runlog");
  {
    RunLog log(dir / "run.txt");
    log.note("run", {{"task", "loc"}});
    log.write("step", {{"step", 1}, {"loss", 0.1}});
    log.write("step", {{"step", 2}, {"loss", 1.0 / 3.0}});
  }
  {
    RunLog log(dir / "run.txt");  // appends
    log.write("eval", {{"step", 2}, {"r05", 50}});
    CHECK_THROWS_AS(log.note("bad", {{"k", "two words"}}), ContractError);
  }
  auto entries = read_runlog(dir / "run.txt");
  REQUIRE(entries.size() == 4);
  CHECK(entries[0].fields.at("task") == "loc");
  auto loss = runlog_column(entries, "step", "loss");
  REQUIRE(loss.size() == 2);
  CHECK(loss[0] == 0.1);
  CHECK(loss[1] == 1.0 / 3.0);  // 17 significant digits round-trip
  CHECK(runlog_column(entries, "eval", "r05") == std::vector<double>{50});
  CHECK_THROWS_AS(entries[0].number("loss"), FormatError);
  std::ofstream(dir / "bad.txt") << "step loss\n";
  CHECK_THROWS_AS(read_runlog(dir / "bad.txt"), FormatError);
  fs::remove_all(dir);
}

namespace {

// y = 2x with a backward rule that is off by a factor, or poisoned.
Tensor faulty_double(const Tensor& x, double factor) {
  Tensor y(x.shape(), 2.0 * x.values());
  if (grad_enabled() && x.tracked()) {
    y.impl()->tracked = true;
    detail::TensorImpl* in = x.impl();
    Graph::current().record("faulty_double", {x}, y, [in, factor](const Vector& g) { in->accumulate(factor * g); });
  }
  return y;
}

GradCheckReport check_faulty(double factor) {
  Rng rng(1);
  Vector v(4);
  for (Index i = 0; i < 4; ++i) v[i] = rng.uniform(-1, 1);
  Tensor x({4}, v, true);
  return finite_diff_check([&] { return sum_all(square(faulty_double(x, factor))); }, {{"x", x}});
}

}  // namespace

TEST_CASE("gradient check suite") {
  auto components = gradcheck_components();
  CHECK(components.size() >= 12);
  std::set<std::string> names;
  for (const auto& c : components) names.insert(c.name);
  CHECK(names.size() == components.size());
  CHECK(names.contains("localizer_model"));
  CHECK(names.contains("captioner_model"));

  SUBCASE("harness self-test") {
    std::vector<GradCheckComponent> fixture{
        {"honest_double", [] { return check_faulty(2.0); }},
        {"corrupted_double", [] { return check_faulty(2.5); }},
        {"poisoned_double", [] { return check_faulty(std::nan("")); }},
    };
    std::ostringstream out;
    auto results = run_gradcheck_suite(fixture, 1e-4, &out);
    REQUIRE(results.size() == 3);
    CHECK(results[0].passed(1e-4));
    CHECK_FALSE(results[1].passed(1e-4));
    CHECK(results[1].report.max_rel_error > 0.1);
    CHECK_FALSE(results[2].passed(1e-4));
    CHECK(results[2].failure.find("non-finite") != std::string::npos);
    std::string text = out.str();
    CHECK(text.find("corrupted_double") != std::string::npos);
    CHECK(text.find("FAIL") != std::string::npos);
  }
}

TEST_CASE("training writes a reproducible run") {
  fs::path dir = scratch_dir("train");
  Config cfg = parse_config(kTinyLoc);
  TrainSummary a = run_training(cfg, dir / "a", false);
  TrainSummary b = run_training(cfg, dir / "b", false);
  REQUIRE(a.logs.size() == 4);
  for (const char* f : {"config.ini", "runlog.txt", "checkpoint.pmic"}) CHECK(fs::exists(dir / "a" / f));
  auto col_a = runlog_column(read_runlog(dir / "a" / "runlog.txt"), "step", "loss");
  auto col_b = runlog_column(read_runlog(dir / "b" / "runlog.txt"), "step", "loss");
  CHECK(col_a.size() == 4);
  CHECK(col_a == col_b);
  CHECK(slurp(dir / "a" / "checkpoint.pmic") == slurp(dir / "b" / "checkpoint.pmic"));
  CHECK(load_config(dir / "a" / "config.ini").render() == cfg.render());

  SUBCASE("resuming matches an uninterrupted run") {
    Config half = cfg;
    half.steps = 2;
    run_training(half, dir / "c", false);
    TrainSummary rest = run_training(cfg, dir / "c", true);
    CHECK(rest.resumed_from == 2);
    CHECK(rest.logs.size() == 2);
    CHECK(all_values(load_checkpoint(dir / "c" / "checkpoint.pmic")) ==
          all_values(load_checkpoint(dir / "a" / "checkpoint.pmic")));
    auto entries = read_runlog(dir / "c" / "runlog.txt");
    CHECK(runlog_column(entries, "step", "loss") == col_a);
    CHECK(runlog_column(entries, "run", "start") == std::vector<double>{0, 2});
  }
  SUBCASE("evaluation round trip") {
    EvalSummary e1 = run_evaluation(cfg, dir / "a" / "checkpoint.pmic", dir / "e1");
    EvalSummary e2 = run_evaluation(cfg, dir / "a" / "checkpoint.pmic", dir / "e2");
    CHECK(e1.model.values == e2.model.values);
    CHECK(e1.model.values == a.final_metrics.values);
    CHECK(slurp(dir / "e1" / "predictions.tsv") == slurp(dir / "e2" / "predictions.tsv"));
    CHECK(read_predictions(dir / "e1" / "predictions.tsv").size() == 4);
    CHECK(e1.baselines.size() == 3);
    std::string metrics = slurp(dir / "e1" / "metrics.tsv");
    CHECK(metrics.rfind("method\t0.3\t0.5\t0.7\n", 0) == 0);
    CHECK(format_metrics_table({{"model", e1.model}}).rfind("method 0.3 0.5 0.7\n", 0) == 0);

    Config wider = cfg;
    wider.loc.dims.d = 16;
    wider.loc.dims.d_low = 8;
    CHECK_THROWS_AS(run_evaluation(wider, dir / "a" / "checkpoint.pmic", dir / "e3"), CheckpointMismatch);
  }
  SUBCASE("a diverging run keeps its last finite parameters") {
    Config wild = cfg;
    wild.adam.lr = 1e300;
    wild.adam.clip_norm = 0.0;
    wild.steps = 50;
    CHECK_THROWS_AS(run_training(wild, dir / "d", false), NonFiniteError);
    auto entries = read_runlog(dir / "d" / "runlog.txt");
    CHECK(entries.back().kind == "abort");
    for (double v : all_values(load_checkpoint(dir / "d" / "checkpoint.pmic"))) REQUIRE(std::isfinite(v));
  }
  fs::remove_all(dir);
}

TEST_CASE("captioning runs") {
  fs::path dir = scratch_dir("cap");
  Config cfg = parse_config(kTinyCap);
  TrainSummary s = run_training(cfg, dir / "run", false);
  CHECK(s.final_metrics.names == std::vector<std::string>{"B@1", "B@2", "B@3", "B@4", "CIDEr"});
  EvalSummary e = run_evaluation(cfg, dir / "run" / "checkpoint.pmic", dir / "eval", Split::all);
  CHECK(e.model.values == s.final_metrics.values);
  CHECK(read_captions(dir / "eval" / "captions.tsv").size() == 4);

  auto files = run_explain(cfg, dir / "run" / "checkpoint.pmic", "c00000", dir / "explain");
  int maps = 0;
  for (const auto& f : files) maps += f.filename().string().starts_with("attention_");
  CHECK(maps == 9);  // M = 3
  CHECK(fs::exists(dir / "explain" / "caption.txt"));
  fs::remove_all(dir);
}

TEST_CASE("ablation axes") {
  Config base = parse_config(kTinyLoc);
  auto fusion = ablation_variants(base, AblationAxis::fusion);
  REQUIRE(fusion.size() == 3);
  CHECK(fusion[0].config.loc.fusion == FusionKind::concat);
  CHECK(fusion[1].config.loc.fusion == FusionKind::sum);
  CHECK(fusion[2].config.loc.fusion == FusionKind::weighted);

  auto interaction = ablation_variants(base, AblationAxis::interaction);
  REQUIRE(interaction.size() == 8);
  CHECK(interaction[0].config.loc.mode == PmiMode::baseline_concat);
  CHECK(interaction[1].config.loc.mode == PmiMode::concat_interact);
  CHECK(interaction[5].config.loc.mode == PmiMode::intra_only);
  CHECK(interaction[6].config.loc.mode == PmiMode::inter_only);
  CHECK(interaction[7].config.loc.mode == PmiMode::full);

  auto parts = ablation_variants(base, AblationAxis::loc_components);
  REQUIRE(parts.size() == 4);
  const bool toggles[4][3] = {{false, false, false}, {true, false, false}, {true, true, false}, {true, true, true}};
  for (int i = 0; i < 4; ++i) {
    CHECK(parts[static_cast<std::size_t>(i)].config.loc.use_pmi == toggles[i][0]);
    CHECK(parts[static_cast<std::size_t>(i)].config.loc.use_vtli == toggles[i][1]);
    CHECK(parts[static_cast<std::size_t>(i)].config.loc.use_norm == toggles[i][2]);
  }
  CHECK_THROWS_AS(ablation_variants(parse_config(kTinyCap), AblationAxis::loc_components), ConfigError);
  CHECK_THROWS_AS(parse_axis("depth"), ConfigError);

  base.steps = 1;
  std::vector<std::uint64_t> seeds{4, 5};
  auto rows = run_ablation(base, AblationAxis::fusion, seeds);
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) {
    CHECK(r.seeds == seeds);
    CHECK(r.per_seed.size() == 2);
    CHECK(r.mean.values[1] == doctest::Approx((r.per_seed[0].values[1] + r.per_seed[1].values[1]) / 2));
  }
  std::string table = format_ablation(rows);
  CHECK(table.rfind("# row label 0.3 0.5 0.7 seeds\n0 concat ", 0) == 0);
  CHECK(table.find(" 4,5\n") != std::string::npos);
}

TEST_CASE("explanation dump") {
  fs::path dir = scratch_dir("explain");
  Config cfg = parse_config(kTinyLoc);
  cfg.steps = 1;
  run_training(cfg, dir / "run", false);
  auto files = run_explain(cfg, dir / "run" / "checkpoint.pmic", "v00009", dir / "out");
  std::set<std::string> names;
  for (const auto& f : files) names.insert(f.filename().string());
  for (const char* n : {"alpha.tsv", "relevance.tsv", "gate_stats.tsv", "attention_visual_audio.tsv",
                        "attention_audio_visual.tsv", "gate_visual_visual.tsv"})
    CHECK(names.contains(n));

  auto lines = read_lines(dir / "out" / "alpha.tsv");
  REQUIRE(lines.size() == 17);
  CHECK(lines[0] == "#visual>visual\tvisual>audio\taudio>visual\taudio>audio");
  for (std::size_t i = 1; i < lines.size(); ++i) {
    double total = 0;
    for (auto field : split(lines[i], '\t')) total += parse_double(field, "alpha");
    CHECK(std::abs(total - 1.0) < 1e-12);
  }
  CHECK_THROWS_AS(run_explain(cfg, dir / "run" / "checkpoint.pmic", "nope", dir / "out"), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("command-line exit codes") {
  fs::path dir = scratch_dir("tool");
  std::ofstream(dir / "tiny.ini") << kTinyLoc;
  std::ofstream(dir / "unknown.ini") << "[optim]\nmomentum = 0.9\n";
  std::ofstream(dir / "nodata.ini") << "[data]\ndir = absent\n";
  std::string tiny = (dir / "tiny.ini").string();

  CHECK(run_tool("train --config " + (dir / "unknown.ini").string() + " --out " + (dir / "x").string()) == 1);
  CHECK(run_tool("train --config " + (dir / "nodata.ini").string() + " --out " + (dir / "x").string()) == 1);
  CHECK(run_tool("train --config " + (dir / "absent.ini").string() + " --out " + (dir / "x").string()) == 1);
  CHECK(run_tool("ablate --config " + tiny + " --axis depth") == 1);
  CHECK(run_tool("frobnicate") == 1);

  CHECK(run_tool("gen-data --config " + tiny + " --out " + (dir / "data").string()) == 0);
  CHECK(fs::exists(dir / "data" / "manifest.tsv"));
  std::ofstream(dir / "disk.ini") << std::string(kTinyLoc).replace(std::string(kTinyLoc).find("train_count"), 0,
                                                                    "dir = data\n");
  CHECK(run_tool("train --config " + (dir / "disk.ini").string() + " --out " + (dir / "run").string()) == 0);
  CHECK(run_tool("eval --config " + (dir / "disk.ini").string() + " --checkpoint " +
                 (dir / "run" / "checkpoint.pmic").string() + " --out " + (dir / "eval").string()) == 0);
  CHECK(fs::exists(dir / "eval" / "predictions.tsv"));

  std::string wild = std::string(kTinyLoc).replace(std::string(kTinyLoc).find("lr = 0.002"), 10, "lr = 1e300\nclip_norm = 0");
  std::ofstream(dir / "wild.ini") << wild << "\n";
  CHECK(run_tool("train --config " + (dir / "wild.ini").string() + " --out " + (dir / "wild").string()) == 2);
  fs::remove_all(dir);
}
