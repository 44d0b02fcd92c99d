// Copyright 2026 The PMI Authors
// SPDX-License-Identifier: Apache-2.0

#include "pmi/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace pmi {

namespace {

double evaluate(const std::function<Tensor()>& f, std::vector<bool>* sides) {
  NoGradGuard no_grad;
  KinkRecorder recorder;
  double value = f().item();
  *sides = recorder.sides();
  return value;
}

}  // namespace

GradCheckReport finite_diff_check(const std::function<Tensor()>& f, const NamedTensors& params,
                                  double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    throw ContractError("finite difference eps must lie in [1e-7, 1e-3]");

  for (const auto& [name, p] : params) p.zero_grad();
  Graph::current().clear();
  Tensor loss = f();
  if (!std::isfinite(loss.item())) throw NonFiniteError("non-finite loss value");
  backward(loss);

  GradCheckReport report;
  std::vector<bool> plus_sides, minus_sides;
  for (const auto& [name, p] : params) {
    Vector analytic = p.grad();
    if (!analytic.allFinite()) throw NonFiniteError("non-finite analytic gradient in " + name);
    Tensor handle = p;
    Vector& data = handle.mutable_values();
    for (Index i = 0; i < data.size(); ++i) {
      double original = data[i];
      data[i] = original + eps;
      double up = evaluate(f, &plus_sides);
      data[i] = original - eps;
      double down = evaluate(f, &minus_sides);
      data[i] = original;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NonFiniteError("non-finite function value while perturbing " + name + "[" +
                             std::to_string(i) + "]");
      if (plus_sides != minus_sides) {
        ++report.skipped;
        continue;
      }
      double numeric = (up - down) / (2.0 * eps);
      // Rounding accumulated through a deep graph leaves about 10 ulp of
      // noise in f, which moves the quotient by 10 * eps_mach * |f| / eps; a
      // relative error of 1e-4 is resolvable only 1e4 times above that.
      double floor = 1e5 * std::numeric_limits<double>::epsilon() *
                     std::max({1.0, std::abs(up), std::abs(down)}) / eps;
      if (std::abs(analytic[i]) < floor && std::abs(numeric) < floor) {
        ++report.vanishing;
        continue;
      }
      double err = std::abs(analytic[i] - numeric) /
                   std::max(1e-8, std::abs(analytic[i]) + std::abs(numeric));
      ++report.checked;
      if (err > report.max_rel_error || report.worst_index < 0) {
        if (err >= report.max_rel_error) {
          report.max_rel_error = err;
          report.worst_parameter = name;
          report.worst_index = i;
        }
      }
    }
  }
  for (const auto& [name, p] : params) p.zero_grad();
  return report;
}

}  // namespace pmi
