#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vmae/model.hpp"
#include "vmae/train_config.hpp"
#include "vmae/video.hpp"

namespace vmae {

enum class AblationAxis { strategy, ratio, decoder_depth, dataset_fraction };
enum class Regime { same_epochs, same_iterations };

std::string to_string(AblationAxis axis);
AblationAxis parse_ablation_axis(const std::string& name);
std::string to_string(Regime regime);
Regime parse_regime(const std::string& name);

/// One ablation: a grid of values along one axis, each trained for every
/// seed. Strategy values are tube, random, frame, or "scratch" (no
/// pre-training). Ratio values apply to pretrain.mask_strategy; frame cells
/// snap to the nearest ratio a whole number of slices realizes.
struct AblationSpec {
  AblationAxis axis = AblationAxis::strategy;
  std::vector<std::string> values;
  std::vector<std::uint64_t> seeds;
  ModelConfig model = ModelConfig::desk();
  TrainConfig pretrain = TrainConfig::defaults(TrainMode::pretrain);
  TrainConfig finetune = TrainConfig::defaults(TrainMode::finetune);
  SpriteConfig train_data;
  SpriteConfig test_data;
  std::int64_t pretrain_steps = 2000;
  std::int64_t finetune_steps = 500;
  Regime regime = Regime::same_iterations;
  int workers = 1;

  void validate() const;
};

/// Result of one (value, seed) cell. Fields that do not apply to a scratch
/// cell are empty.
struct CellResult {
  std::string axis;
  std::string value;
  std::uint64_t seed = 0;
  double accuracy = 0;
  std::optional<double> final_pretrain_loss;
  std::optional<double> initial_pretrain_loss;
  std::optional<double> leakage;
  Index visible_tokens = 0;
  double wall_seconds = 0;
  double pretrain_wall_seconds = 0;
  std::int64_t pretrain_steps = 0;
  double pretrain_epochs = 0;
  Index decoder_activations = 0;
};

struct ReportRow {
  std::string value;
  std::vector<double> accuracies;
  double mean = 0;
  double std = 0;  // sample standard deviation; 0 for one seed
  std::optional<double> mean_final_loss;
  std::optional<double> leakage;
  Index visible_tokens = 0;
  double mean_wall_seconds = 0;
  double mean_pretrain_wall_seconds = 0;
  double pretrain_epochs = 0;
  Index decoder_activations = 0;
};

struct AblationReport {
  AblationAxis axis = AblationAxis::strategy;
  std::vector<CellResult> cells;  // value-major, then seed, in the order of values
  std::vector<ReportRow> rows;    // one per value, in the order of values

  const ReportRow& row(const std::string& value) const;
};

using CellCallback = std::function<void(const CellResult&)>;

/// Pre-trains (unless scratch) and fine-tunes one cell on the sprites data.
CellResult run_cell(const AblationSpec& spec, const std::string& value, std::uint64_t seed);

/// Runs every cell, `spec.workers` at a time. Cell results do not depend on
/// the worker count.
AblationReport run_ablation(const AblationSpec& spec, const CellCallback& on_cell = {});

std::vector<ReportRow> summarize(const std::vector<CellResult>& cells, const std::vector<std::string>& values);

/// Mean fraction of masked tokens whose spatial site is visible in some
/// other slice, over `samples` mask seeds.
double mean_leakage(MaskStrategy strategy, const GridDims& grid, double ratio, int samples, std::uint64_t seed);

/// Pre-training step count of a dataset_fraction cell under `regime`.
std::int64_t fraction_pretrain_steps(const AblationSpec& spec, double fraction);

inline constexpr const char* kReportHeader =
    "axis,value,seed,accuracy,final_pretrain_loss,leakage,visible_tokens,wall_seconds";

/// Merges cells into the CSV at `path`: rows with the same (axis, value,
/// seed) are replaced in place, new ones appended.
void write_report_csv(const std::filesystem::path& path, const std::vector<CellResult>& cells);

/// Aligned text table of the report rows.
std::string format_report(const AblationReport& report);

}  // namespace vmae
