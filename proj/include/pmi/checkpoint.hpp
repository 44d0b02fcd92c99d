// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0
//
// Checkpoints and run logs.
//
// Checkpoint layout, little-endian: "PMIC", u16 version, u16 reserved (zero),
// u32 record count, then per record u32 name length, name bytes, u32 rank,
// rank x u64 dims, f64 payload in row-major order.

#pragma once

#include "pmi/gradcheck.hpp"
#include "pmi/io.hpp"
#include "pmi/nn.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace pmi {

inline constexpr std::uint16_t kCheckpointVersion = 1;

// Parameters whose name or shape disagree with the model; the message lists
// every differing name.
struct CheckpointMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& records);
NamedTensors load_checkpoint(const std::filesystem::path& path);

// Records worth saving for a model and its optimizer: every parameter, then
// the optimizer state when given.
NamedTensors checkpoint_records(const ParameterSet& params, const Adam* optimizer = nullptr);

// Copies checkpoint values into `params` and, when the records carry it and
// `optimizer` is non-null, the optimizer state. Throws CheckpointMismatch
// before touching anything when a parameter is missing, unexpected or
// differently shaped.
void restore_checkpoint(const NamedTensors& records, ParameterSet& params, Adam* optimizer = nullptr);

// Append-only structured text. Each line is a kind word followed by
// key=value fields; doubles are written with 17 significant digits.
//
//   step step=10 loss=... pred=... norm=... grad_norm=... seconds=...
//   eval step=100 r03=... r05=... r07=...
class RunLog {
 public:
  // Appends to an existing file.
  explicit RunLog(const std::filesystem::path& path);

  void write(const std::string& kind, const std::vector<std::pair<std::string, double>>& fields);
  void note(const std::string& kind, const std::vector<std::pair<std::string, std::string>>& fields);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

struct RunLogEntry {
  std::string kind;
  std::map<std::string, std::string> fields;

  double number(const std::string& key) const;
};

std::vector<RunLogEntry> read_runlog(const std::filesystem::path& path);

// The values of `key` over the entries of `kind`, in file order.
std::vector<double> runlog_column(std::span<const RunLogEntry> entries, const std::string& kind,
                                  const std::string& key);

}  // namespace pmi
