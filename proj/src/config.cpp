// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0

#include "pmi/config.hpp"

#include "pmi/io.hpp"

#include <fstream>
#include <functional>
#include <set>
#include <sstream>

namespace pmi {

std::string_view to_string(Task t) { return t == Task::loc ? "loc" : "cap"; }

namespace {

using Getter = std::function<std::string(const Config&)>;
using Setter = std::function<void(Config&, std::string_view)>;

struct Field {
  std::string section;
  std::string key;
  Getter get;
  Setter set;
};

std::string fmt(double v) { return format_double(v); }
std::string fmt(Index v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

bool parse_bool(std::string_view s) {
  if (s == "true" || s == "on" || s == "1") return true;
  if (s == "false" || s == "off" || s == "0") return false;
  throw ConfigError("expected true or false, got '" + std::string(s) + "'");
}

Index parse_index(std::string_view s) { return static_cast<Index>(parse_int(s, "integer")); }

Index parse_positive(std::string_view s) {
  Index v = parse_index(s);
  if (v <= 0) throw ConfigError("expected a positive integer, got '" + std::string(s) + "'");
  return v;
}

std::uint64_t parse_seed(std::string_view s) {
  long long v = parse_int(s, "seed");
  if (v < 0) throw ConfigError("seed must be non-negative");
  return static_cast<std::uint64_t>(v);
}

// "visual:16,audio:16"
std::string fmt_modalities(const std::vector<ModalityTag>& tags, const std::vector<Index>& dims) {
  std::string out;
  for (std::size_t i = 0; i < tags.size(); ++i)
    out += (i ? "," : "") + std::string(to_string(tags[i])) + ":" + std::to_string(dims[i]);
  return out;
}

void parse_modalities(std::string_view s, std::vector<ModalityTag>& tags, std::vector<Index>& dims) {
  tags.clear();
  dims.clear();
  for (std::string_view part : split(s, ',')) {
    auto kv = split(trim(part), ':');
    if (kv.size() != 2) throw ConfigError("expected tag:dim, got '" + std::string(part) + "'");
    tags.push_back(parse_modality(trim(kv[0])));
    dims.push_back(parse_positive(kv[1]));
  }
  if (tags.empty()) throw ConfigError("empty modality list");
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    auto add = [&](std::string section, std::string key, Getter g, Setter s) {
      f.push_back({std::move(section), std::move(key), std::move(g), std::move(s)});
    };
    // Model dimensions, mode and fusion are shared by both tasks.
    auto dims = [&](std::string key, Index InteractionDims::*member) {
      add("model", std::move(key), [member](const Config& c) { return fmt(c.loc.dims.*member); },
          [member](Config& c, std::string_view v) { c.loc.dims.*member = c.cap.dims.*member = parse_positive(v); });
    };
    auto real = [&](std::string section, std::string key, auto member_of) {
      add(std::move(section), std::move(key), [member_of](const Config& c) { return fmt(member_of(c)); },
          [member_of](Config& c, std::string_view v) { member_of(c) = parse_double(v, "value"); });
    };
    auto integer = [&](std::string section, std::string key, auto member_of) {
      add(std::move(section), std::move(key), [member_of](const Config& c) { return fmt(member_of(c)); },
          [member_of](Config& c, std::string_view v) { member_of(c) = parse_positive(v); });
    };
    auto flag = [&](std::string section, std::string key, auto member_of) {
      add(std::move(section), std::move(key), [member_of](const Config& c) { return fmt(member_of(c)); },
          [member_of](Config& c, std::string_view v) { member_of(c) = parse_bool(v); });
    };

    add("task", "kind", [](const Config& c) { return std::string(to_string(c.task)); },
        [](Config& c, std::string_view v) {
          if (v == "loc") c.task = Task::loc;
          else if (v == "cap") c.task = Task::cap;
          else throw ConfigError("task must be loc or cap");
        });
    add("task", "seed", [](const Config& c) { return std::to_string(c.seed); },
        [](Config& c, std::string_view v) { c.seed = parse_seed(v); });

    add("data", "dir", [](const Config& c) { return c.data_dir.string(); },
        [](Config& c, std::string_view v) { c.data_dir = std::string(v); });
    add("data", "train_count", [](const Config& c) { return fmt(c.train_count); },
        [](Config& c, std::string_view v) {
          c.train_count = parse_index(v);
          if (c.train_count < 0) throw ConfigError("train_count must be non-negative");
        });

    add("synth", "seed", [](const Config& c) { return std::to_string(c.synth.seed); },
        [](Config& c, std::string_view v) { c.synth.seed = parse_seed(v); });
    integer("synth", "videos", [](auto& c) -> auto& { return c.synth.num_videos; });
    integer("synth", "raw_length", [](auto& c) -> auto& { return c.synth.raw_length; });
    add("synth", "modalities", [](const Config& c) { return fmt_modalities(c.synth.tags, c.synth.dims); },
        [](Config& c, std::string_view v) { parse_modalities(v, c.synth.tags, c.synth.dims); });
    real("synth", "seg_min", [](auto& c) -> auto& { return c.synth.seg_min; });
    real("synth", "seg_max", [](auto& c) -> auto& { return c.synth.seg_max; });
    real("synth", "noise", [](auto& c) -> auto& { return c.synth.noise; });
    add("synth", "coupling", [](const Config& c) { return std::string(to_string(c.synth.coupling)); },
        [](Config& c, std::string_view v) { c.synth.coupling = parse_coupling(v); });
    integer("synth", "signal_channels", [](auto& c) -> auto& { return c.synth.signal_channels; });
    real("synth", "duration_min", [](auto& c) -> auto& { return c.synth.duration_min; });
    real("synth", "duration_max", [](auto& c) -> auto& { return c.synth.duration_max; });
    integer("synth", "embed_dim", [](auto& c) -> auto& { return c.synth.embed_dim; });

    add("captions", "seed", [](const Config& c) { return std::to_string(c.captions.seed); },
        [](Config& c, std::string_view v) { c.captions.seed = parse_seed(v); });
    integer("captions", "videos", [](auto& c) -> auto& { return c.captions.num_videos; });
    integer("captions", "raw_length", [](auto& c) -> auto& { return c.captions.raw_length; });
    add("captions", "modalities", [](const Config& c) { return fmt_modalities(c.captions.tags, c.captions.dims); },
        [](Config& c, std::string_view v) { parse_modalities(v, c.captions.tags, c.captions.dims); });
    real("captions", "noise", [](auto& c) -> auto& { return c.captions.noise; });
    integer("captions", "embed_dim", [](auto& c) -> auto& { return c.captions.embed_dim; });

    dims("d", &InteractionDims::d);
    dims("d_low", &InteractionDims::d_low);
    dims("d_c", &InteractionDims::d_c);
    dims("heads", &InteractionDims::heads);
    dims("k_max", &InteractionDims::k_max);
    add("model", "mode", [](const Config& c) { return std::string(to_string(c.loc.mode)); },
        [](Config& c, std::string_view v) { c.loc.mode = c.cap.mode = parse_pmi_mode(v); });
    add("model", "fusion", [](const Config& c) { return std::string(to_string(c.loc.fusion)); },
        [](Config& c, std::string_view v) { c.loc.fusion = c.cap.fusion = parse_fusion_kind(v); });
    flag("model", "per_position_fusion", [](auto& c) -> auto& { return c.loc.per_position_fusion; });
    flag("model", "pmi", [](auto& c) -> auto& { return c.loc.use_pmi; });
    flag("model", "vtli", [](auto& c) -> auto& { return c.loc.use_vtli; });
    flag("model", "norm", [](auto& c) -> auto& { return c.loc.use_norm; });
    integer("model", "window", [](auto& c) -> auto& { return c.loc.window; });
    integer("model", "layers", [](auto& c) -> auto& { return c.loc.head_layers; });
    integer("model", "kernel", [](auto& c) -> auto& { return c.loc.kernel; });
    integer("model", "loc_positions", [](auto& c) -> auto& { return c.loc.positions; });
    integer("model", "cap_positions", [](auto& c) -> auto& { return c.cap.positions; });
    flag("model", "freeze_embeddings", [](auto& c) -> auto& { return c.loc.freeze_embeddings; });
    flag("model", "boundary_prior", [](auto& c) -> auto& { return c.boundary_prior; });
    integer("model", "embed_dim", [](auto& c) -> auto& { return c.cap.embed_dim; });
    integer("model", "hidden", [](auto& c) -> auto& { return c.cap.hidden; });
    integer("model", "attention_dim", [](auto& c) -> auto& { return c.cap.attention_dim; });
    integer("model", "max_len", [](auto& c) -> auto& { return c.cap.max_len; });
    flag("model", "attend_fused", [](auto& c) -> auto& { return c.cap.attend_fused; });

    real("loss", "lambda_r", [](auto& c) -> auto& { return c.loc.lambda_r; });
    real("loss", "lambda_n", [](auto& c) -> auto& { return c.loc.lambda_n; });
    real("loss", "huber_delta", [](auto& c) -> auto& { return c.loc.huber_delta; });
    real("loss", "beta", [](auto& c) -> auto& { return c.loc.beta; });

    add("optim", "optimizer", [](const Config&) { return std::string("adam"); },
        [](Config&, std::string_view v) {
          if (v != "adam") throw ConfigError("only adam is supported");
        });
    real("optim", "lr", [](auto& c) -> auto& { return c.adam.lr; });
    real("optim", "beta1", [](auto& c) -> auto& { return c.adam.beta1; });
    real("optim", "beta2", [](auto& c) -> auto& { return c.adam.beta2; });
    real("optim", "eps", [](auto& c) -> auto& { return c.adam.eps; });
    real("optim", "clip_norm", [](auto& c) -> auto& { return c.adam.clip_norm; });
    integer("optim", "batch", [](auto& c) -> auto& { return c.batch; });
    integer("optim", "steps", [](auto& c) -> auto& { return c.steps; });

    integer("run", "log_every", [](auto& c) -> auto& { return c.log_every; });
    add("run", "eval_every", [](const Config& c) { return fmt(c.eval_every); },
        [](Config& c, std::string_view v) {
          c.eval_every = parse_index(v);
          if (c.eval_every < 0) throw ConfigError("eval_every must be non-negative");
        });
    integer("run", "checkpoint_every", [](auto& c) -> auto& { return c.checkpoint_every; });
    integer("run", "beam", [](auto& c) -> auto& { return c.beam; });
    add("run", "baseline_trials", [](const Config& c) { return std::to_string(c.baseline_trials); },
        [](Config& c, std::string_view v) { c.baseline_trials = static_cast<int>(parse_positive(v)); });
    add("run", "ablate_seeds",
        [](const Config& c) {
          std::string out;
          for (std::size_t i = 0; i < c.ablate_seeds.size(); ++i) out += (i ? "," : "") + std::to_string(c.ablate_seeds[i]);
          return out;
        },
        [](Config& c, std::string_view v) {
          c.ablate_seeds.clear();
          for (std::string_view s : split(v, ',')) c.ablate_seeds.push_back(parse_seed(s));
          if (c.ablate_seeds.empty()) throw ConfigError("ablate_seeds is empty");
        });
    return f;
  }();
  return table;
}

void validate(const Config& c) {
  if (c.loc.dims.d_low % c.loc.dims.heads != 0 || c.loc.dims.d % c.loc.dims.heads != 0)
    throw ConfigError("d and d_low must be divisible by heads");
  if (c.task == Task::cap && c.cap.dims.d % 2 != 0) throw ConfigError("captioning needs an even d");
  if (c.adam.lr <= 0.0) throw ConfigError("lr must be positive");
  if (c.data_dir.empty()) {
    if (c.task == Task::loc && c.train_count >= c.synth.num_videos)
      throw ConfigError("train_count leaves no evaluation videos");
  }
}

}  // namespace

std::string Config::render() const {
  std::ostringstream out;
  std::string section;
  for (const Field& f : fields()) {
    if (f.section != section) {
      out << (section.empty() ? "" : "\n") << "[" << f.section << "]\n";
      section = f.section;
    }
    out << f.key << " = " << f.get(*this) << "\n";
  }
  return out.str();
}

Config parse_config(std::string_view text, const std::string& source) {
  Config cfg;
  std::string section;
  std::set<std::string> seen;
  int line_no = 0;
  for (std::string_view raw : split(text, '\n')) {
    ++line_no;
    std::string where = source + ":" + std::to_string(line_no);
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": malformed section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected key = value");
    std::string key(trim(line.substr(0, eq)));
    std::string_view value = trim(line.substr(eq + 1));
    std::string full = section.empty() ? key : section + "." + key;
    const Field* field = nullptr;
    for (const Field& f : fields())
      if (f.section == section && f.key == key) field = &f;
    if (!field) throw ConfigError(where + ": unknown key '" + full + "'");
    if (!seen.insert(full).second) throw ConfigError(where + ": duplicate key '" + full + "'");
    try {
      field->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + full + ": " + e.what());
    } catch (const std::exception& e) {
      throw ConfigError(where + ": " + full + ": " + e.what());
    }
  }
  try {
    cfg.synth.validate();
  } catch (const std::exception& e) {
    throw ConfigError(source + ": [synth]: " + e.what());
  }
  validate(cfg);
  return cfg;
}

void check_paths(const Config& cfg) {
  if (!cfg.data_dir.empty() && !std::filesystem::is_directory(cfg.data_dir))
    throw ConfigError("data.dir does not exist: " + cfg.data_dir.string());
}

Config load_config(const std::filesystem::path& path, bool check) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  Config cfg = parse_config(buf.str(), path.string());
  // Relative data paths resolve against the config file.
  if (!cfg.data_dir.empty() && cfg.data_dir.is_relative()) cfg.data_dir = path.parent_path() / cfg.data_dir;
  if (check) check_paths(cfg);
  return cfg;
}

}  // namespace pmi
