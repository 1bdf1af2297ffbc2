#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "vmae/checkpoint.hpp"
#include "vmae/model.hpp"
#include "vmae/optim.hpp"
#include "vmae/train_config.hpp"
#include "vmae/video.hpp"

namespace vmae {

struct LossRecord {
  std::int64_t step = 0;
  double lr = 0;
  double loss = 0;

  bool operator==(const LossRecord&) const = default;
};

using StepCallback = std::function<void(const LossRecord&)>;

/// Mean over masked tokens of the per-token mean squared pixel error
/// against the normalized targets. Visible tokens do not contribute.
template <typename Scalar>
Var<Scalar> masked_mse_loss(const Var<Scalar>& predictions, const TargetCubes& targets, const MaskMap& mask);

/// Non-finite loss; the model state is that of the last good step.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, Checkpoint last_good)
      : NumericError(what), last_good_(std::move(last_good)) {}
  const Checkpoint& last_good() const { return last_good_; }

 private:
  Checkpoint last_good_;
};

/// Masked-autoencoding pre-training loop. All randomness of step s (batch
/// order, masks, flips) derives from (seed, s), so a run restored from a
/// checkpoint at step k continues exactly like the uninterrupted run.
class Pretrainer {
 public:
  Pretrainer(const TrainConfig& config, std::span<const VideoClip> data, MAEParams<float>& params);

  /// Restores parameters, optimizer moments and the step counter.
  void restore(const Checkpoint& ckpt);

  std::int64_t step() const { return step_; }
  std::int64_t total_steps() const { return total_steps_; }
  std::int64_t steps_per_epoch() const { return steps_per_epoch_; }
  /// Encoder input rows per clip under the configured mask.
  Index encoder_tokens() const;

  LossRecord run_step();
  /// Runs until `until_step` (clamped to total_steps).
  std::vector<LossRecord> run(std::int64_t until_step, const StepCallback& on_step = {});
  std::vector<LossRecord> run_all(const StepCallback& on_step = {}) { return run(total_steps_, on_step); }

  Checkpoint checkpoint() const;

 private:
  std::vector<std::size_t> batch_indices(std::int64_t step) const;

  TrainConfig config_;
  std::span<const VideoClip> data_;
  MAEParams<float>& params_;
  std::vector<Param<float>*> param_list_;
  OptimState<float> optim_;
  std::int64_t step_ = 0;
  std::int64_t steps_per_epoch_ = 0;
  std::int64_t total_steps_ = 0;
  double peak_lr_ = 0;
};

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<LossRecord> trace;
};

PretrainResult pretrain(const TrainConfig& config, std::span<const VideoClip> data, MAEParams<float>& params,
                        const StepCallback& on_step = {});

/// Freshly initialized MAE parameters.
MAEParams<float> make_mae(const ModelConfig& config, std::uint64_t seed);

/// Copies every named tensor of `params` out of the checkpoint.
void load_params(const Checkpoint& ckpt, std::span<Param<float>* const> params);
/// Model configuration recorded in a checkpoint.
ModelConfig checkpoint_model_config(const Checkpoint& ckpt);

/// Classifier whose encoder comes from a pre-training checkpoint; the head
/// is initialized from `head_seed`. The decoder is dropped.
ClassifierParams<float> classifier_from_checkpoint(const Checkpoint& ckpt, std::uint64_t head_seed);
/// Classifier trained from scratch.
ClassifierParams<float> make_classifier(const ModelConfig& config, std::uint64_t seed);

struct ClassifierResult {
  double accuracy = 0;
  std::vector<LossRecord> trace;
};

/// Cross-entropy training of encoder + head with layer-wise lr decay
/// (factor^(depth+1-layer)); encoder lr is further multiplied by
/// config.encoder_lr_scale. Returns held-out accuracy on `test`.
ClassifierResult finetune(ClassifierParams<float>& model, const SpriteDataset& train, const SpriteDataset& test,
                          const TrainConfig& config, const StepCallback& on_step = {});

/// Frozen encoder; only the head (LayerNorm + linear) is trained, on cached
/// pooled features.
ClassifierResult linear_probe(ClassifierParams<float>& model, const SpriteDataset& train, const SpriteDataset& test,
                              const TrainConfig& config, const StepCallback& on_step = {});

double evaluate_accuracy(ClassifierParams<float>& model, const SpriteDataset& data);

/// Classifier parameters as a checkpoint (no optimizer state).
Checkpoint classifier_checkpoint(ClassifierParams<float>& model);

/// Step budget of a run over `dataset_size` samples.
std::int64_t total_steps(const TrainConfig& config, std::int64_t dataset_size);

}  // namespace vmae
