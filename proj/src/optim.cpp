#include "vmae/optim.hpp"

#include <cmath>
#include <numbers>

#include "vmae/train_config.hpp"

namespace vmae {

template <typename Scalar>
OptimState<Scalar> OptimState<Scalar>::zeros_like(std::span<Param<Scalar>* const> params) {
  OptimState s;
  for (auto* p : params) {
    s.first.emplace_back(p->value.shape());
    s.second.emplace_back(p->value.shape());
  }
  return s;
}

namespace {

template <typename Scalar>
void check_state(std::span<Param<Scalar>* const> params, const OptimState<Scalar>& state,
                 std::span<const double> lr_scales, const char* op) {
  if (state.first.size() != params.size() || state.second.size() != params.size()) {
    throw DimensionError(std::string(op) + ": optimizer state tracks " + std::to_string(state.first.size()) +
                         " tensors for " + std::to_string(params.size()) + " parameters");
  }
  if (!lr_scales.empty() && lr_scales.size() != params.size()) {
    throw DimensionError(std::string(op) + ": " + std::to_string(lr_scales.size()) + " lr scales for " +
                         std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto* p = params[i];
    if (p->grad.shape() != p->value.shape() || state.first[i].shape() != p->value.shape()) {
      throw DimensionError(std::string(op) + ": shape mismatch for " + p->name);
    }
    if (!p->grad.data().allFinite()) throw NumericError(std::string(op) + ": non-finite gradient in " + p->name);
  }
}

}  // namespace

template <typename Scalar>
void adamw_step(std::span<Param<Scalar>* const> params, OptimState<Scalar>& state, const AdamWHyper& h,
                std::span<const double> lr_scales) {
  if (!(h.lr >= 0)) throw ConfigError("adamw_step: learning rate must be non-negative");
  check_state(params, state, lr_scales, "adamw_step");
  ++state.step;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    const double lr = h.lr * (lr_scales.empty() ? 1.0 : lr_scales[i]);
    auto value = p.value.data().array();
    const auto grad = p.grad.data().array();
    auto m = state.first[i].data().array();
    auto v = state.second[i].data().array();
    if (p.decay) value *= static_cast<Scalar>(1.0 - lr * h.weight_decay);
    m = static_cast<Scalar>(h.beta1) * m + static_cast<Scalar>(1.0 - h.beta1) * grad;
    v = static_cast<Scalar>(h.beta2) * v + static_cast<Scalar>(1.0 - h.beta2) * grad.square();
    const auto mhat = m / static_cast<Scalar>(c1);
    const auto vhat = v / static_cast<Scalar>(c2);
    value -= static_cast<Scalar>(lr) * mhat / (vhat.sqrt() + static_cast<Scalar>(h.eps));
  }
}

template <typename Scalar>
void sgd_step(std::span<Param<Scalar>* const> params, OptimState<Scalar>& state, double lr, double momentum,
              double weight_decay, std::span<const double> lr_scales) {
  if (!(lr >= 0)) throw ConfigError("sgd_step: learning rate must be non-negative");
  check_state(params, state, lr_scales, "sgd_step");
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    const double plr = lr * (lr_scales.empty() ? 1.0 : lr_scales[i]);
    auto vel = state.first[i].data().array();
    const Scalar wd = p.decay ? static_cast<Scalar>(weight_decay) : Scalar(0);
    vel = static_cast<Scalar>(momentum) * vel + p.grad.data().array() + wd * p.value.data().array();
    p.value.data().array() -= static_cast<Scalar>(plr) * vel;
  }
}

double scaled_lr(double base_lr, std::int64_t batch_size) {
  if (batch_size < 1) throw ConfigError("scaled_lr: batch size must be at least 1");
  return base_lr * static_cast<double>(batch_size) / 256.0;
}

double cosine_warmup_lr(std::int64_t step, std::int64_t steps_per_epoch, double warmup_epochs, double total_epochs,
                        double peak, double floor) {
  const double warm = warmup_epochs * static_cast<double>(steps_per_epoch);
  const double total = total_epochs * static_cast<double>(steps_per_epoch);
  const auto s = static_cast<double>(step);
  if (step < 0 || s > total) {
    throw ContractError("cosine_warmup_lr: step " + std::to_string(step) + " outside [0, " + std::to_string(total) + "]");
  }
  if (s < warm) return peak * s / warm;
  if (total <= warm) return peak;
  const double progress = (s - warm) / (total - warm);
  return floor + (peak - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::int64_t steps_per_epoch(std::int64_t dataset_size, std::int64_t batch_size) {
  if (dataset_size < 1) throw ContractError("empty dataset");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  return (dataset_size + batch_size - 1) / batch_size;
}

template struct OptimState<float>;
template struct OptimState<double>;
template void adamw_step<float>(std::span<Param<float>* const>, OptimState<float>&, const AdamWHyper&, std::span<const double>);
template void adamw_step<double>(std::span<Param<double>* const>, OptimState<double>&, const AdamWHyper&, std::span<const double>);
template void sgd_step<float>(std::span<Param<float>* const>, OptimState<float>&, double, double, double, std::span<const double>);
template void sgd_step<double>(std::span<Param<double>* const>, OptimState<double>&, double, double, double, std::span<const double>);

// TrainConfig lives here with the rest of the optimizer plumbing.

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::pretrain: return "pretrain";
    case TrainMode::finetune: return "finetune";
    case TrainMode::probe: return "probe";
  }
  return "unknown";
}

TrainMode parse_train_mode(const std::string& name) {
  if (name == "pretrain") return TrainMode::pretrain;
  if (name == "finetune") return TrainMode::finetune;
  if (name == "probe") return TrainMode::probe;
  throw ConfigError("unknown training mode '" + name + "'");
}

std::string to_string(Optimizer optimizer) { return optimizer == Optimizer::adamw ? "adamw" : "sgd"; }

Optimizer parse_optimizer(const std::string& name) {
  if (name == "adamw") return Optimizer::adamw;
  if (name == "sgd") return Optimizer::sgd;
  throw ConfigError("unknown optimizer '" + name + "'");
}

TrainConfig TrainConfig::defaults(TrainMode mode) {
  TrainConfig c;
  c.mode = mode;
  switch (mode) {
    case TrainMode::pretrain:
      break;
    case TrainMode::finetune:
      c.base_lr = 0.05;
      c.beta2 = 0.999;
      c.warmup_epochs = 2;
      c.total_epochs = 20;
      break;
    case TrainMode::probe:
      c.optimizer = Optimizer::sgd;
      c.base_lr = 3.2;
      c.weight_decay = 0;
      c.beta1 = 0.9;
      c.warmup_epochs = 2;
      c.total_epochs = 20;
      c.encoder_lr_scale = 0;
      c.layer_decay = 1.0;
      break;
  }
  return c;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (!(base_lr >= 0)) throw ConfigError("base_lr must be non-negative");
  if (!(total_epochs > 0)) throw ConfigError("total_epochs must be positive");
  if (!(warmup_epochs >= 0 && warmup_epochs < total_epochs)) {
    throw ConfigError("warmup_epochs must lie in [0, total_epochs)");
  }
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("betas must lie in [0, 1)");
  if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be non-negative");
  if (!(eps > 0)) throw ConfigError("eps must be positive");
  if (!(mask_ratio >= 0 && mask_ratio < 1)) throw ConfigError("mask ratio must lie in [0, 1)");
  if (!(layer_decay > 0 && layer_decay <= 1)) throw ConfigError("layer_decay must lie in (0, 1]");
  if (!(encoder_lr_scale >= 0)) throw ConfigError("encoder_lr_scale must be non-negative");
}

}  // namespace vmae
