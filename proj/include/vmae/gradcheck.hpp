#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vmae/tensor.hpp"

namespace vmae {

/// Builds a scalar loss on the given tape from the current parameter values.
using LossBuilder = std::function<Var<double>(Tape<double>&)>;

struct GradCheckOptions {
  double step = 1e-5;
  /// Entries sampled per parameter tensor; 0 checks every entry.
  Index max_entries_per_param = 0;
  std::uint64_t sample_seed = 0;
};

/// One parameter tensor: analytic and numeric gradients over its checked
/// entries, compared as vectors.
struct GradCheckParam {
  std::string name;
  Index entries = 0;
  double analytic_norm = 0;
  double numeric_norm = 0;
  double difference_norm = 0;
  double relative_error = 0;  // ||a - n|| / max(||a||, ||n||, 1e-8)
};

struct GradCheckReport {
  double max_relative_error = 0;
  GradCheckParam worst;
  std::vector<GradCheckParam> params;
  Index entries_checked = 0;
};

/// |a - n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

/// Compares reverse-mode gradients of `loss` against central differences
/// with step `options.step`. Each parameter tensor yields one relative
/// error between its analytic and numeric gradient vectors (Euclidean
/// norms); the report carries the maximum over parameters. Parameter
/// values are restored before returning; their grads hold the analytic
/// gradient.
GradCheckReport finite_diff_check(const LossBuilder& loss, std::span<Param<double>* const> params,
                                  const GradCheckOptions& options = {});

/// Adds N(0, scale²) noise to every entry. At the small-weight
/// initialization most gradients sit near the finite-difference roundoff
/// floor, so checks run at a perturbed point.
void perturb_params(std::span<Param<double>* const> params, double scale, std::uint64_t seed);

}  // namespace vmae
