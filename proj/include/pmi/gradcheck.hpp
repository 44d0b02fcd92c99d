// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "pmi/tensor.hpp"

#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pmi {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  Index worst_index = -1;
  Index checked = 0;
  Index skipped = 0;  // entries whose central difference straddles a kink
  Index vanishing = 0;  // analytic and numeric both inside the rounding floor
};

// Compares reverse-mode gradients of `f` against central differences.
// Relative error per entry is |a - n| / max(1e-8, |a| + |n|). Entries whose
// analytic and numeric values both lie below 1e5 * machine eps * max(1, |f|)
// / eps cannot be resolved to 1e-4 through the rounding noise in f; they are
// counted apart as vanishing.
GradCheckReport finite_diff_check(const std::function<Tensor()>& f, const NamedTensors& params,
                                  double eps = 1e-5);

}  // namespace pmi
