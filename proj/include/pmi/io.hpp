// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pmi {

// Malformed input file; the message names the file and line when known.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<std::string_view> split(std::string_view s, char sep);
std::string_view trim(std::string_view s);
double parse_double(std::string_view s, std::string_view what);
// Shortest text that parses back to the same double.
std::string format_double(double v);
long long parse_int(std::string_view s, std::string_view what);

// Reads every line; throws FormatError when the file cannot be opened.
std::vector<std::string> read_lines(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it over `path`.
void write_atomic(const std::filesystem::path& path, const std::function<void(std::ostream&)>& body,
                  bool binary = false);

}  // namespace pmi
