// Copyright 2026 The miletune Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mile/model_config.hpp"
#include "mile/tuning.hpp"

namespace mile {

struct GradcheckOptions {
  double step = 1e-5;           // central-difference step h
  double tolerance = 1e-3;      // relative tolerance
  // Denominator floor for the relative error, so gradients that vanish
  // analytically and numerically are not compared by noise alone.
  double scale_floor = 1e-6;
  std::uint64_t seed = 0;
};

struct GradcheckMismatch {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradcheckReport {
  std::string plan;
  std::size_t tensors = 0;
  std::size_t scalars = 0;
  double max_rel_error = 0;
  std::vector<GradcheckMismatch> mismatches;

  bool ok() const { return mismatches.empty(); }
  std::string summary() const;
};

/// Builds a double-precision model from `config`, applies `plan`, perturbs
/// adapter tensors away from their identity initialisation so every
/// gradient path is live, and compares the analytic gradient of the LM loss
/// on a random example with central finite differences for every scalar of
/// every trainable tensor.
GradcheckReport gradcheck_model(const ModelConfig& config, const TuningPlan& plan,
                                const GradcheckOptions& options = {});

// The plans exercised by the suite: all base weights, then each adapter
// family on every component that supports it.
std::vector<TuningPlan> gradcheck_plans();

}  // namespace mile
