// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: flat "key = value" lines grouped under [section]
// headers. Every key is known up front; anything else is rejected.

#pragma once

#include "pmi/captioning.hpp"
#include "pmi/localizer.hpp"
#include "pmi/synth.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace pmi {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Task { loc, cap };
std::string_view to_string(Task t);

struct Config {
  Task task = Task::loc;
  std::uint64_t seed = 1;

  // Empty: the set is generated in memory from the synth or caption spec.
  std::filesystem::path data_dir;
  Index train_count = 200;  // leading videos train, the rest evaluate; 0 uses all for both

  SynthSpec synth;
  CaptionSpec captions;
  LocConfig loc;
  CaptionConfig cap;
  bool boundary_prior = true;  // initialize the boundary bias at the mean training segment

  AdamConfig adam;  // lr 1e-4
  Index batch = 32;
  Index steps = 500;

  Index log_every = 10;
  Index eval_every = 0;  // 0: evaluate only at the end
  Index checkpoint_every = 100;
  Index beam = 1;
  int baseline_trials = 500;
  std::vector<std::uint64_t> ablate_seeds{1, 2, 3};

  // The rendered text parses back to an equal configuration.
  std::string render() const;
};

// `source` names the text in error messages.
Config parse_config(std::string_view text, const std::string& source = "<config>");

// Reads the file, then checks that every referenced path exists when
// `check_paths` is set.
Config load_config(const std::filesystem::path& path, bool check_paths = true);

void check_paths(const Config& cfg);

}  // namespace pmi
