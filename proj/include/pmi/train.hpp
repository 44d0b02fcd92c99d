// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0
//
// Step logs and options shared by the localization and captioning loops.

#pragma once

#include "pmi/nn.hpp"

#include <cstdint>
#include <functional>

namespace pmi {

struct StepLog {
  Index step = 0;
  double loss = 0.0;
  double pred = 0.0;  // task term; equals loss when there is no regularizer
  double norm = 0.0;
  double grad_norm = 0.0;
  double seconds = 0.0;
};

struct TrainOptions {
  Index steps = 500;
  Index batch = 32;
  AdamConfig adam{};
  std::uint64_t seed = 1;
  std::function<void(const StepLog&)> on_step;
};

}  // namespace pmi
