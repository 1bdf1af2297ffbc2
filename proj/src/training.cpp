#include "vmae/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "vmae/config.hpp"

namespace vmae {

template <typename Scalar>
Var<Scalar> masked_mse_loss(const Var<Scalar>& predictions, const TargetCubes& targets, const MaskMap& mask) {
  if (predictions.rows() != mask.tokens() || targets.values.rows() != mask.tokens() ||
      predictions.cols() != targets.values.cols()) {
    throw DimensionError("masked_mse_loss: predictions " + shape_string(predictions.value()) + ", targets " +
                         shape_string(targets.values) + ", mask over " + std::to_string(mask.tokens()) + " tokens");
  }
  const std::vector<Index> omega = mask.masked_indices();
  if (omega.empty()) throw ContractError("masked_mse_loss: no masked tokens");
  Matrix<Scalar> target(static_cast<Index>(omega.size()), targets.values.cols());
  for (std::size_t i = 0; i < omega.size(); ++i) {
    target.row(static_cast<Index>(i)) = targets.values.row(omega[i]).template cast<Scalar>();
  }
  return mean_squared_error(gather_rows(predictions, std::span<const Index>(omega)), target);
}

template Var<float> masked_mse_loss<float>(const Var<float>&, const TargetCubes&, const MaskMap&);
template Var<double> masked_mse_loss<double>(const Var<double>&, const TargetCubes&, const MaskMap&);

namespace {

constexpr std::uint64_t kPretrainStream = 0x707265747261696eull;
constexpr std::uint64_t kClassifierStream = 0x636c617373696679ull;

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::uint64_t stream, std::int64_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(seed ^ stream, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::vector<std::size_t> batch_for_step(std::uint64_t seed, std::uint64_t stream, std::int64_t step,
                                        std::int64_t per_epoch, std::int64_t batch, std::size_t n) {
  const auto order = epoch_order(seed, stream, step / per_epoch, n);
  const auto begin = static_cast<std::size_t>((step % per_epoch) * batch);
  const auto end = std::min(n, begin + static_cast<std::size_t>(batch));
  return {order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end)};
}

void add_params(Checkpoint& ckpt, std::span<Param<float>* const> params) {
  for (auto* p : params) ckpt.add(p->name, p->value);
}

void add_optim(Checkpoint& ckpt, std::span<Param<float>* const> params, const OptimState<float>& optim) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    ckpt.add("optim.first." + params[i]->name, optim.first[i]);
    ckpt.add("optim.second." + params[i]->name, optim.second[i]);
  }
  ckpt.set("optim.step", std::to_string(optim.step));
}

void load_tensor(const Checkpoint& ckpt, const std::string& name, Tensor<float>& dst) {
  const Tensor<float>& src = ckpt.tensor(name);
  if (src.shape() != dst.shape()) {
    throw CheckpointError("checkpoint: tensor " + name + " has shape " + shape_string(src.shape()) + ", expected " +
                          shape_string(dst.shape()));
  }
  dst = src;
}

void require_grid(const SpriteDataset& data, const ModelConfig& config, const char* op) {
  if (data.clips.empty()) throw ContractError(std::string(op) + ": empty dataset");
  for (const auto& clip : data.clips) {
    if (!(clip.grid() == config.grid)) {
      throw ConfigError(std::string(op) + ": dataset grid " + to_string(clip.grid()) + " does not match model grid " +
                        to_string(config.grid));
    }
  }
  for (int y : data.labels) {
    if (y < 0 || y >= config.num_classes) {
      throw ConfigError(std::string(op) + ": label " + std::to_string(y) + " outside " +
                        std::to_string(config.num_classes) + " classes");
    }
  }
  if (data.labels.size() != data.clips.size()) throw ContractError(std::string(op) + ": label count mismatch");
}

void optimizer_step(const TrainConfig& cfg, std::span<Param<float>* const> params, OptimState<float>& state, double lr,
                    std::span<const double> scales) {
  if (cfg.optimizer == Optimizer::adamw) {
    adamw_step<float>(params, state, AdamWHyper{lr, cfg.beta1, cfg.beta2, cfg.weight_decay, cfg.eps}, scales);
  } else {
    sgd_step<float>(params, state, lr, cfg.beta1, cfg.weight_decay, scales);
  }
}

}  // namespace

std::int64_t total_steps(const TrainConfig& config, std::int64_t dataset_size) {
  const auto spe = steps_per_epoch(dataset_size, config.batch_size);
  return std::llround(config.total_epochs * static_cast<double>(spe));
}

Pretrainer::Pretrainer(const TrainConfig& config, std::span<const VideoClip> data, MAEParams<float>& params)
    : config_(config), data_(data), params_(params), param_list_(params.parameters()) {
  config_.validate();
  if (data_.empty()) throw ContractError("pretrain: empty dataset");
  for (const auto& clip : data_) {
    if (!(clip.grid() == params_.config.grid)) {
      throw ConfigError("pretrain: clip grid " + to_string(clip.grid()) + " does not match model grid " +
                        to_string(params_.config.grid));
    }
  }
  // Fails early on ratios that leave nothing visible.
  make_mask(config_.mask_strategy, params_.config.grid, config_.mask_ratio, 0);
  optim_ = OptimState<float>::zeros_like(param_list_);
  steps_per_epoch_ = vmae::steps_per_epoch(static_cast<std::int64_t>(data_.size()), config_.batch_size);
  total_steps_ = vmae::total_steps(config_, static_cast<std::int64_t>(data_.size()));
  peak_lr_ = scaled_lr(config_.base_lr, config_.batch_size);
}

Index Pretrainer::encoder_tokens() const {
  const auto& g = params_.config.grid;
  return visible_token_count(config_.mask_strategy, g.frames, g.sites(), config_.mask_ratio);
}

std::vector<std::size_t> Pretrainer::batch_indices(std::int64_t step) const {
  return batch_for_step(config_.seed, kPretrainStream, step, steps_per_epoch_, config_.batch_size, data_.size());
}

LossRecord Pretrainer::run_step() {
  if (step_ >= total_steps_) throw ContractError("pretrain: step budget exhausted");
  const double lr = cosine_warmup_lr(step_, steps_per_epoch_, config_.warmup_epochs, config_.total_epochs, peak_lr_,
                                     config_.lr_floor);
  const auto batch = batch_indices(step_);
  const std::uint64_t step_seed = derive_seed(config_.seed ^ kPretrainStream, static_cast<std::uint64_t>(step_));
  const float inv_batch = 1.0f / static_cast<float>(batch.size());
  for (auto* p : param_list_) p->zero_grad();

  double total = 0;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    const std::uint64_t clip_seed = derive_seed(step_seed, j);
    const VideoClip& source = data_[batch[j]];
    const bool flip = config_.flip && ((clip_seed >> 11) & 1u);
    const MaskMap mask =
        make_mask(config_.mask_strategy, params_.config.grid, config_.mask_ratio, derive_seed(clip_seed, 1));
    Tape<float> tape;
    const MAEOutput<float> out = flip ? mae_forward(tape, hflip(source), mask, params_) : mae_forward(tape, source, mask, params_);
    Var<float> loss = masked_mse_loss(out.predictions, out.targets, mask);
    total += loss.value()(0, 0);
    tape.backward(scale(loss, inv_batch));
  }
  const double mean_loss = total / static_cast<double>(batch.size());
  if (!std::isfinite(mean_loss)) {
    throw TrainingAborted("pretrain: non-finite loss at step " + std::to_string(step_), checkpoint());
  }
  try {
    optimizer_step(config_, param_list_, optim_, lr, {});
  } catch (const NumericError& e) {
    throw TrainingAborted(std::string(e.what()) + " at step " + std::to_string(step_), checkpoint());
  }
  LossRecord rec{step_, lr, mean_loss};
  ++step_;
  return rec;
}

std::vector<LossRecord> Pretrainer::run(std::int64_t until_step, const StepCallback& on_step) {
  std::vector<LossRecord> trace;
  until_step = std::min(until_step, total_steps_);
  while (step_ < until_step) {
    trace.push_back(run_step());
    if (on_step) on_step(trace.back());
  }
  return trace;
}

Checkpoint Pretrainer::checkpoint() const {
  Checkpoint ckpt;
  ckpt.set("kind", "pretrain");
  for (auto& [k, v] : model_config_values(params_.config)) ckpt.set(k, v);
  for (auto& [k, v] : train_config_values(config_, "train.")) ckpt.set(k, v);
  ckpt.set("step", std::to_string(step_));
  ckpt.set("rng.seed", std::to_string(config_.seed));
  ckpt.set("rng.stream", "derive_seed(seed,step)");
  add_params(ckpt, param_list_);
  add_optim(ckpt, param_list_, optim_);
  return ckpt;
}

void Pretrainer::restore(const Checkpoint& ckpt) {
  const ModelConfig recorded = checkpoint_model_config(ckpt);
  if (!(recorded == params_.config)) throw ConfigError("pretrain: checkpoint model configuration differs from the run");
  load_params(ckpt, param_list_);
  for (std::size_t i = 0; i < param_list_.size(); ++i) {
    load_tensor(ckpt, "optim.first." + param_list_[i]->name, optim_.first[i]);
    load_tensor(ckpt, "optim.second." + param_list_[i]->name, optim_.second[i]);
  }
  optim_.step = parse_int(ckpt.require("optim.step"), "optim.step");
  step_ = parse_int(ckpt.require("step"), "step");
  if (step_ < 0 || step_ > total_steps_) throw CheckpointError("checkpoint: step outside the configured budget");
}

PretrainResult pretrain(const TrainConfig& config, std::span<const VideoClip> data, MAEParams<float>& params,
                        const StepCallback& on_step) {
  Pretrainer trainer(config, data, params);
  PretrainResult result;
  result.trace = trainer.run_all(on_step);
  result.checkpoint = trainer.checkpoint();
  return result;
}

MAEParams<float> make_mae(const ModelConfig& config, std::uint64_t seed) {
  MAEParams<float> p(config);
  init_params<float>(p.parameters(), seed);
  return p;
}

ClassifierParams<float> make_classifier(const ModelConfig& config, std::uint64_t seed) {
  ClassifierParams<float> p(config);
  init_params<float>(p.parameters(), seed);
  return p;
}

void load_params(const Checkpoint& ckpt, std::span<Param<float>* const> params) {
  for (auto* p : params) load_tensor(ckpt, p->name, p->value);
}

ModelConfig checkpoint_model_config(const Checkpoint& ckpt) {
  ValueMap values;
  for (const auto& [k, v] : ckpt.meta) {
    if (k.rfind("model.", 0) == 0) values[k] = v;
  }
  if (values.count("model.grid") == 0) throw CheckpointError("checkpoint: missing metadata 'model.grid'");
  return model_config_from(values);
}

ClassifierParams<float> classifier_from_checkpoint(const Checkpoint& ckpt, std::uint64_t head_seed) {
  ClassifierParams<float> model = make_classifier(checkpoint_model_config(ckpt), head_seed);
  load_params(ckpt, model.encoder.parameters());
  return model;
}

namespace {

ClassifierResult train_classifier(ClassifierParams<float>& model, const SpriteDataset& train, const SpriteDataset& test,
                                  const TrainConfig& cfg, bool probe, const StepCallback& on_step) {
  cfg.validate();
  const char* op = probe ? "linear_probe" : "finetune";
  require_grid(train, model.config, op);
  require_grid(test, model.config, op);

  std::vector<Param<float>*> params = probe ? model.head.parameters() : model.parameters();
  std::vector<double> scales;
  const Index depth = model.config.depth_enc;
  for (auto* p : params) {
    double s = probe ? 1.0 : std::pow(cfg.layer_decay, static_cast<double>(depth + 1 - layer_id(p->name, depth)));
    if (!probe && p->name.rfind("encoder.", 0) == 0) s *= cfg.encoder_lr_scale;
    scales.push_back(s);
  }
  const bool frozen = probe || cfg.encoder_lr_scale == 0;

  std::vector<MatrixF> features;
  if (probe) {
    features.reserve(train.size());
    for (const auto& clip : train.clips) {
      Tape<float> tape;
      features.push_back(pooled_features(tape, cubify(clip).tokens, model.encoder).value());
    }
  }

  const auto n = static_cast<std::int64_t>(train.size());
  const auto per_epoch = steps_per_epoch(n, cfg.batch_size);
  const auto steps = total_steps(cfg, n);
  const double peak = scaled_lr(cfg.base_lr, cfg.batch_size);
  OptimState<float> optim = OptimState<float>::zeros_like(params);

  ClassifierResult result;
  for (std::int64_t step = 0; step < steps; ++step) {
    const double lr = cosine_warmup_lr(step, per_epoch, cfg.warmup_epochs, cfg.total_epochs, peak, cfg.lr_floor);
    const auto batch = batch_for_step(cfg.seed, kClassifierStream, step, per_epoch, cfg.batch_size, train.size());
    const float inv_batch = 1.0f / static_cast<float>(batch.size());
    for (auto* p : params) p->zero_grad();
    double total = 0;
    for (std::size_t i : batch) {
      Tape<float> tape;
      Var<float> pooled;
      if (probe) {
        pooled = tape.constant(features[i]);
      } else {
        Var<float> f = pooled_features(tape, cubify(train.clips[i]).tokens, model.encoder);
        pooled = frozen ? tape.constant(f.value()) : f;
      }
      const int label = train.labels[i];
      Var<float> loss = cross_entropy(head_forward(pooled, model.head), std::span<const int>(&label, 1));
      total += loss.value()(0, 0);
      tape.backward(scale(loss, inv_batch));
    }
    const double mean_loss = total / static_cast<double>(batch.size());
    if (!std::isfinite(mean_loss)) throw NumericError(std::string(op) + ": non-finite loss at step " + std::to_string(step));
    optimizer_step(cfg, params, optim, lr, scales);
    result.trace.push_back({step, lr, mean_loss});
    if (on_step) on_step(result.trace.back());
  }
  result.accuracy = evaluate_accuracy(model, test);
  return result;
}

}  // namespace

ClassifierResult finetune(ClassifierParams<float>& model, const SpriteDataset& train, const SpriteDataset& test,
                          const TrainConfig& config, const StepCallback& on_step) {
  return train_classifier(model, train, test, config, false, on_step);
}

ClassifierResult linear_probe(ClassifierParams<float>& model, const SpriteDataset& train, const SpriteDataset& test,
                              const TrainConfig& config, const StepCallback& on_step) {
  return train_classifier(model, train, test, config, true, on_step);
}

double evaluate_accuracy(ClassifierParams<float>& model, const SpriteDataset& data) {
  if (data.clips.empty()) throw ContractError("evaluate_accuracy: empty dataset");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Tape<float> tape;
    const MatrixF logits = classify(tape, data.clips[i], model).value();
    Index best = 0;
    logits.row(0).maxCoeff(&best);
    if (best == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

Checkpoint classifier_checkpoint(ClassifierParams<float>& model) {
  Checkpoint ckpt;
  ckpt.set("kind", "classifier");
  for (auto& [k, v] : model_config_values(model.config)) ckpt.set(k, v);
  add_params(ckpt, model.parameters());
  return ckpt;
}

}  // namespace vmae
