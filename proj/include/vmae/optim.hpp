#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vmae/tensor.hpp"

namespace vmae {

/// Per-parameter moment buffers, positionally aligned with the parameter
/// list they were created for. SGD uses `first` as its velocity.
template <typename Scalar>
struct OptimState {
  std::vector<Tensor<Scalar>> first;
  std::vector<Tensor<Scalar>> second;
  std::int64_t step = 0;

  static OptimState zeros_like(std::span<Param<Scalar>* const> params);
};

struct AdamWHyper {
  double lr = 0;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 0;
  double eps = 1e-8;
};

/// Decoupled weight decay (p ← p·(1 − lr·wd) for decaying params) followed
/// by the bias-corrected Adam update. `lr_scales`, when given, multiplies
/// lr per parameter. Throws NumericError before touching any state if a
/// gradient is non-finite.
template <typename Scalar>
void adamw_step(std::span<Param<Scalar>* const> params, OptimState<Scalar>& state, const AdamWHyper& hyper,
                std::span<const double> lr_scales = {});

/// Heavy-ball SGD: v ← μ·v + g + wd·p; p ← p − lr·v.
template <typename Scalar>
void sgd_step(std::span<Param<Scalar>* const> params, OptimState<Scalar>& state, double lr, double momentum,
              double weight_decay, std::span<const double> lr_scales = {});

/// Linear scaling rule: base_lr · batch_size / 256.
double scaled_lr(double base_lr, std::int64_t batch_size);

/// Linear warmup from 0 to `peak`, then half-cosine decay to `floor` at the
/// final step. Epoch arguments are converted to steps via steps_per_epoch.
double cosine_warmup_lr(std::int64_t step, std::int64_t steps_per_epoch, double warmup_epochs, double total_epochs,
                        double peak, double floor);

std::int64_t steps_per_epoch(std::int64_t dataset_size, std::int64_t batch_size);

}  // namespace vmae
