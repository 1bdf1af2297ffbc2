#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "vmae/tensor.hpp"

namespace vmae {

inline constexpr Index kChannels = 3;
inline constexpr Index kCubeFrames = 2;
inline constexpr Index kCubeSize = 16;
inline constexpr Index kCubeDim = kChannels * kCubeFrames * kCubeSize * kCubeSize;  // 1536

/// Token grid extents (T', H', W').
struct GridDims {
  Index frames = 0;
  Index height = 0;
  Index width = 0;

  Index sites() const { return height * width; }
  Index tokens() const { return frames * sites(); }
  bool operator==(const GridDims&) const = default;
};

std::string to_string(const GridDims& dims);

/// Grid produced by cube tokenization of a T×H×W clip.
GridDims grid_for_clip(Index frames, Index height, Index width);

/// Frame sequence of arbitrary length, layout (C, T, H, W).
struct RawVideo {
  Tensor<float> pixels{Shape{1, 1, 1, 1}};

  Index channels() const { return pixels.shape()[0]; }
  Index frames() const { return pixels.shape()[1]; }
  Index height() const { return pixels.shape()[2]; }
  Index width() const { return pixels.shape()[3]; }
};

/// Sampled clip, layout (C, T, H, W), values in [0, 1].
struct VideoClip {
  Tensor<float> pixels{Shape{kChannels, kCubeFrames, kCubeSize, kCubeSize}};
  int stride = 1;
  Index start = 0;

  VideoClip() = default;
  VideoClip(Index frames, Index height, Index width);

  Index channels() const { return pixels.shape()[0]; }
  Index frames() const { return pixels.shape()[1]; }
  Index height() const { return pixels.shape()[2]; }
  Index width() const { return pixels.shape()[3]; }

  float& at(Index c, Index t, Index y, Index x) { return pixels[offset(c, t, y, x)]; }
  float at(Index c, Index t, Index y, Index x) const { return pixels[offset(c, t, y, x)]; }

  /// Throws DimensionError unless T is even and H, W are multiples of 16.
  GridDims grid() const;

 private:
  Index offset(Index c, Index t, Index y, Index x) const {
    return ((c * frames() + t) * height() + y) * width() + x;
  }
};

/// Tokenized clip: one row per cube in (t', h', w') row-major order; each
/// row is the cube flattened in (channel, time, row, col) order.
struct CubeGrid {
  MatrixF tokens;
  GridDims dims;
};

/// Per-cube standardized reconstruction targets.
struct TargetCubes {
  MatrixF values;
  std::vector<float> mean;
  std::vector<float> std;
  float eps = 1e-6f;

  /// Maps a normalized row back to pixel space using cube `row`'s statistics.
  RowVector<float> denormalize(Index row, const Eigen::Ref<const RowVector<float>>& normalized) const;
};

enum class SamplingMode { dense, uniform };

/// start, start+τ, ..., start+(T-1)τ. Requires length ≥ T·τ + start.
std::vector<Index> dense_indices(Index length, int stride, Index frames, Index start);
/// One uniformly drawn index from each of T equal segments of [0, length).
std::vector<Index> uniform_indices(Index length, Index frames, std::mt19937_64& rng);

/// Dense mode draws a random start; uniform mode ignores `stride`.
VideoClip sample_clip(const RawVideo& video, SamplingMode mode, int stride, Index frames, std::mt19937_64& rng);
VideoClip sample_clip_at(const RawVideo& video, int stride, Index frames, Index start);
VideoClip clip_from_indices(const RawVideo& video, std::span<const Index> indices);

CubeGrid cubify(const VideoClip& clip);
VideoClip decubify(const CubeGrid& grid);
TargetCubes normalize_cube_targets(const CubeGrid& grid, float eps = 1e-6f);

VideoClip hflip(const VideoClip& clip);

// Raw float32 little-endian (C, T, H, W) file plus a "<path>.manifest"
// sidecar of key=value lines: channels, frames, height, width.
RawVideo read_raw_video(const std::filesystem::path& path);
void write_raw_video(const std::filesystem::path& path, const RawVideo& video);

enum class Direction : int { up = 0, down = 1, left = 2, right = 3 };
inline constexpr int kDirectionCount = 4;

const char* direction_name(int label);
/// Class of a (vy, vx) velocity in px/frame; +vx is right, +vy is down.
int direction_label(double vy, double vx);

struct SpriteConfig {
  std::uint64_t seed = 0;
  Index count = 64;
  Index frames = 16;
  Index height = 64;
  Index width = 64;
  int stride = 2;             // raw frames between sampled frames
  Index sprite_size = 12;
  double speed = 1.0;         // px per raw frame
  float background = 0.1f;   // static texture amplitude
  float temporal_noise = 0.0f;
};

struct SpriteDataset {
  std::vector<VideoClip> clips;
  std::vector<int> labels;
  std::uint64_t seed = 0;

  std::size_t size() const { return clips.size(); }
};

/// One bright square translating at constant velocity over a static dark
/// texture; label is the motion direction. Labels cycle through the four
/// classes so any multiple of four is exactly balanced.
SpriteDataset synth_moving_sprites(const SpriteConfig& config);

/// Control set with no motion: oriented stripe textures, label = orientation.
SpriteDataset synth_static_textures(const SpriteConfig& config);

/// Mixes (seed, index) into an independent 64-bit stream seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace vmae
