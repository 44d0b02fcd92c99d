// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "pmi/random.hpp"
#include "pmi/tensor.hpp"

namespace pmi::testing {

inline Tensor random_tensor(Rng& rng, Shape shape, double scale = 1.0, bool requires_grad = false) {
  Index n = shape_numel(shape);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = rng.uniform(-scale, scale);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline Tensor random_param(Rng& rng, Shape shape, double scale = 1.0) {
  return random_tensor(rng, std::move(shape), scale, true);
}

// Fixed random weights turn a tensor into a generic scalar objective.
inline Tensor weighted_sum(const Tensor& t, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum_all(mul(t, random_tensor(rng, t.shape())));
}

}  // namespace pmi::testing
