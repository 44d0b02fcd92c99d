// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0
//
// The finite-difference release gate: every layer and both end-to-end models
// at tiny dimensions.

#pragma once

#include "pmi/gradcheck.hpp"

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace pmi {

struct GradCheckComponent {
  std::string name;
  std::function<GradCheckReport()> run;
};

// N <= 8 and d <= 16 throughout.
std::vector<GradCheckComponent> gradcheck_components();

struct ComponentResult {
  std::string name;
  GradCheckReport report;
  std::string failure;  // non-empty when the check threw, e.g. on a non-finite gradient
  double seconds = 0.0;

  bool passed(double tolerance) const {
    return failure.empty() && report.checked > 0 && report.max_rel_error < tolerance;
  }
};

// Runs every component, printing one line each to `out` when non-null.
std::vector<ComponentResult> run_gradcheck_suite(const std::vector<GradCheckComponent>& components,
                                                 double tolerance = 1e-4, std::ostream* out = nullptr);

}  // namespace pmi
