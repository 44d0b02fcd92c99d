// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0

#include "pmi/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <iomanip>
#include <iterator>
#include <set>
#include <sstream>

namespace pmi {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

template <class T>
void put(std::string& buf, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.append(bytes, sizeof(T));
}

class Reader {
 public:
  Reader(std::string buf, std::string name) : buf_(std::move(buf)), name_(std::move(name)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw FormatError(name_ + ": truncated checkpoint");
  }
  std::string buf_;
  std::string name_;
  std::size_t pos_ = 0;
};

std::string fmt17(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& records) {
  std::string buf = "PMIC";
  put<std::uint16_t>(buf, kCheckpointVersion);
  put<std::uint16_t>(buf, 0);
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(records.size()));
  for (const auto& [name, t] : records) {
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    put<std::uint32_t>(buf, static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) put<std::uint64_t>(buf, static_cast<std::uint64_t>(d));
    for (Index i = 0; i < t.size(); ++i) put<double>(buf, t[i]);
  }
  write_atomic(path, [&](std::ostream& out) { out.write(buf.data(), static_cast<std::streamsize>(buf.size())); }, true);
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  Reader r(std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()), path.string());
  if (r.bytes(4) != "PMIC") throw FormatError(path.string() + ": not a PMIC checkpoint");
  auto version = r.get<std::uint16_t>();
  if (version != kCheckpointVersion)
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  r.get<std::uint16_t>();
  auto count = r.get<std::uint32_t>();
  NamedTensors out;
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = r.bytes(r.get<std::uint32_t>());
    auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw FormatError(path.string() + ": implausible rank for " + name);
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<Index>(r.get<std::uint64_t>()));
    Vector data(shape_numel(shape));
    for (Index i = 0; i < data.size(); ++i) data[i] = r.get<double>();
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (!r.done()) throw FormatError(path.string() + ": trailing bytes after the last record");
  return out;
}

NamedTensors checkpoint_records(const ParameterSet& params, const Adam* optimizer) {
  NamedTensors out = params.named();
  if (optimizer)
    for (auto& rec : optimizer->state()) out.push_back(std::move(rec));
  return out;
}

void restore_checkpoint(const NamedTensors& records, ParameterSet& params, Adam* optimizer) {
  std::map<std::string, const Tensor*> saved;
  NamedTensors optimizer_state;
  for (const auto& [name, t] : records) {
    if (name.starts_with("adam.")) optimizer_state.emplace_back(name, t);
    else saved[name] = &t;
  }
  std::vector<std::string> diff;
  std::set<std::string> expected;
  for (const auto& [name, t] : params.named()) {
    expected.insert(name);
    auto it = saved.find(name);
    if (it == saved.end()) diff.push_back("missing " + name + " " + shape_str(t.shape()));
    else if (it->second->shape() != t.shape())
      diff.push_back(name + ": checkpoint " + shape_str(it->second->shape()) + ", model " + shape_str(t.shape()));
  }
  for (const auto& [name, t] : saved)
    if (!expected.contains(name)) diff.push_back("unexpected " + name + " " + shape_str(t->shape()));
  if (!diff.empty()) {
    std::string msg = "checkpoint does not match the model:";
    for (const auto& d : diff) msg += "\n  " + d;
    throw CheckpointMismatch(msg);
  }
  for (const auto& [name, t] : params.named()) {
    Tensor handle = t;
    handle.mutable_values() = saved.at(name)->values();
  }
  if (optimizer && !optimizer_state.empty()) optimizer->load_state(optimizer_state);
}

RunLog::RunLog(const std::filesystem::path& path) : path_(path), out_(path, std::ios::app) {
  if (!out_) throw FormatError("cannot open run log " + path.string());
}

void RunLog::write(const std::string& kind, const std::vector<std::pair<std::string, double>>& fields) {
  out_ << kind;
  for (const auto& [k, v] : fields) out_ << ' ' << k << '=' << fmt17(v);
  out_ << '\n' << std::flush;
}

void RunLog::note(const std::string& kind, const std::vector<std::pair<std::string, std::string>>& fields) {
  for (const auto& [k, v] : fields)
    if (v.find_first_of(" \t\n=") != std::string::npos)
      throw ContractError("run log values must not contain spaces or '=': " + v);
  out_ << kind;
  for (const auto& [k, v] : fields) out_ << ' ' << k << '=' << v;
  out_ << '\n' << std::flush;
}

double RunLogEntry::number(const std::string& key) const {
  auto it = fields.find(key);
  if (it == fields.end()) throw FormatError("run log entry '" + kind + "' has no field " + key);
  return parse_double(it->second, key);
}

std::vector<RunLogEntry> read_runlog(const std::filesystem::path& path) {
  std::vector<RunLogEntry> out;
  int line_no = 0;
  for (const std::string& line : read_lines(path)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::istringstream in(line);
    RunLogEntry e;
    in >> e.kind;
    for (std::string tok; in >> tok;) {
      auto eq = tok.find('=');
      if (eq == std::string::npos || eq == 0)
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected key=value, got '" + tok + "'");
      e.fields[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<double> runlog_column(std::span<const RunLogEntry> entries, const std::string& kind,
                                  const std::string& key) {
  std::vector<double> out;
  for (const auto& e : entries)
    if (e.kind == kind) out.push_back(e.number(key));
  return out;
}

}  // namespace pmi
