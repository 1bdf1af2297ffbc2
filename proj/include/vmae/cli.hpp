#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "vmae/checkpoint.hpp"
#include "vmae/config.hpp"
#include "vmae/experiments.hpp"
#include "vmae/gradcheck.hpp"
#include "vmae/masking.hpp"
#include "vmae/video.hpp"

namespace vmae {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitNumeric = 2;

/// Parsed command line. Output directory precedence: ARTIFACT_OUT, then
/// --out, then "out".
struct CommandConfig {
  std::string subcommand;
  std::filesystem::path config_file;
  std::vector<std::string> overrides;
  std::filesystem::path out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::filesystem::path checkpoint;
  Index clip_index = 0;
  std::string dims;  // maskviz grid, TxHxW tokens
};

/// Defaults, then the config file, then key=value overrides, then --seed.
Config resolve_config(const CommandConfig& command);

struct ReconstructResult {
  std::vector<std::filesystem::path> files;
  /// Mean absolute pixel error over masked cubes; 0 when nothing is masked.
  double masked_mae = 0;
  Index masked_tokens = 0;
};

/// Writes frame triplets t_original.ppm, t_masked.ppm, t_recon.ppm for every
/// frame of `clip`. Masked cubes are gray in the masked view; the
/// reconstruction shows de-normalized predictions in masked cubes and the
/// input elsewhere.
ReconstructResult reconstruct(const Checkpoint& checkpoint, const VideoClip& clip, MaskStrategy strategy, double ratio,
                              std::uint64_t mask_seed, const std::filesystem::path& out_dir);

/// Writes mask.txt ('#' masked, '.' visible per slice) and mask.ppm.
MaskMap maskviz(const GridDims& dims, double ratio, MaskStrategy strategy, std::uint64_t seed,
                const std::filesystem::path& out_dir);

/// Finite-difference check of the MAE pre-training loss and the classifier
/// loss in double precision on one synthetic clip.
GradCheckReport model_gradcheck(const ModelConfig& model, const SpriteConfig& data, double mask_ratio,
                                MaskStrategy strategy, std::uint64_t seed, Index entries_per_param);

/// Clips for pre-training from the configured source (synthetic or raw).
std::vector<VideoClip> pretrain_clips(const Config& config);
/// Labeled split ("train" or "test"); requires a synthetic source.
SpriteDataset labeled_split(const Config& config, const std::string& split);

/// Ablation settings from the ablate.* keys and the data, model and
/// training sections.
AblationSpec ablation_spec(const Config& config);

/// Full entry point; returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace vmae
