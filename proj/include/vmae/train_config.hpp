#pragma once

#include <cstdint>
#include <string>

#include "vmae/masking.hpp"

namespace vmae {

enum class TrainMode { pretrain, finetune, probe };
enum class Optimizer { adamw, sgd };

std::string to_string(TrainMode mode);
TrainMode parse_train_mode(const std::string& name);
std::string to_string(Optimizer optimizer);
Optimizer parse_optimizer(const std::string& name);

/// Optimizer, schedule and masking settings for one training run. Epoch
/// counts may be fractional; the step budget is
/// round(total_epochs · ceil(dataset / batch)).
struct TrainConfig {
  TrainMode mode = TrainMode::pretrain;
  Optimizer optimizer = Optimizer::adamw;
  double base_lr = 0.05;
  std::int64_t batch_size = 8;
  double warmup_epochs = 5;
  double total_epochs = 50;
  double weight_decay = 0.05;
  double beta1 = 0.9;  // SGD momentum when optimizer == sgd
  double beta2 = 0.95;
  double eps = 1e-8;
  double lr_floor = 1e-6;
  MaskStrategy mask_strategy = MaskStrategy::tube;
  double mask_ratio = 0.9;
  std::uint64_t seed = 0;
  double layer_decay = 0.75;      // finetune only
  double encoder_lr_scale = 1.0;  // finetune only; 0 leaves the encoder untouched
  bool flip = true;               // pretrain only

  /// Desk-scale defaults per mode: AdamW β2 0.95 for pre-training, 0.999 for
  /// fine-tuning, momentum SGD without weight decay for the linear probe.
  static TrainConfig defaults(TrainMode mode);

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

}  // namespace vmae
