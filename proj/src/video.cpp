#include "vmae/video.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace vmae {

std::string to_string(const GridDims& dims) {
  return std::to_string(dims.frames) + "x" + std::to_string(dims.height) + "x" + std::to_string(dims.width);
}

GridDims grid_for_clip(Index frames, Index height, Index width) {
  if (frames <= 0 || height <= 0 || width <= 0 || frames % kCubeFrames != 0 || height % kCubeSize != 0 ||
      width % kCubeSize != 0) {
    throw DimensionError("clip " + std::to_string(frames) + "x" + std::to_string(height) + "x" +
                         std::to_string(width) + " does not tile into 2x16x16 cubes");
  }
  return {frames / kCubeFrames, height / kCubeSize, width / kCubeSize};
}

VideoClip::VideoClip(Index frames, Index height, Index width)
    : pixels(Shape{kChannels, frames, height, width}) {}

GridDims VideoClip::grid() const {
  if (channels() != kChannels) {
    throw DimensionError("clip has " + std::to_string(channels()) + " channels, expected 3");
  }
  return grid_for_clip(frames(), height(), width());
}

RowVector<float> TargetCubes::denormalize(Index row, const Eigen::Ref<const RowVector<float>>& normalized) const {
  const auto r = static_cast<std::size_t>(row);
  return (normalized.array() * (std[r] + eps) + mean[r]).matrix();
}

std::vector<Index> dense_indices(Index length, int stride, Index frames, Index start) {
  if (stride < 1 || frames < 1) throw ConfigError("dense sampling: stride and frame count must be positive");
  const Index required = frames * stride;
  if (start < 0 || start + required > length) {
    throw SamplingError("dense sampling: needs " + std::to_string(start + required) + " frames, video has " +
                        std::to_string(length));
  }
  std::vector<Index> out(static_cast<std::size_t>(frames));
  for (Index i = 0; i < frames; ++i) out[static_cast<std::size_t>(i)] = start + i * stride;
  return out;
}

std::vector<Index> uniform_indices(Index length, Index frames, std::mt19937_64& rng) {
  if (frames < 1) throw ConfigError("uniform sampling: frame count must be positive");
  if (length < frames) {
    throw SamplingError("uniform sampling: needs " + std::to_string(frames) + " frames, video has " +
                        std::to_string(length));
  }
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(frames));
  for (Index i = 0; i < frames; ++i) {
    const Index lo = i * length / frames;
    const Index hi = (i + 1) * length / frames - 1;
    std::uniform_int_distribution<Index> pick(lo, hi);
    out.push_back(pick(rng));
  }
  return out;
}

VideoClip clip_from_indices(const RawVideo& video, std::span<const Index> indices) {
  const Index c = video.channels(), h = video.height(), w = video.width();
  VideoClip clip;
  clip.pixels = Tensor<float>(Shape{c, static_cast<Index>(indices.size()), h, w});
  const Index frame = h * w;
  for (Index ch = 0; ch < c; ++ch) {
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const Index src = (ch * video.frames() + indices[i]) * frame;
      const Index dst = (ch * static_cast<Index>(indices.size()) + static_cast<Index>(i)) * frame;
      clip.pixels.data().segment(dst, frame) = video.pixels.data().segment(src, frame);
    }
  }
  if (!indices.empty()) clip.start = indices.front();
  return clip;
}

VideoClip sample_clip_at(const RawVideo& video, int stride, Index frames, Index start) {
  const auto idx = dense_indices(video.frames(), stride, frames, start);
  VideoClip clip = clip_from_indices(video, idx);
  clip.stride = stride;
  clip.start = start;
  return clip;
}

VideoClip sample_clip(const RawVideo& video, SamplingMode mode, int stride, Index frames, std::mt19937_64& rng) {
  if (mode == SamplingMode::uniform) {
    const auto idx = uniform_indices(video.frames(), frames, rng);
    VideoClip clip = clip_from_indices(video, idx);
    clip.stride = 0;
    return clip;
  }
  if (stride < 1) throw ConfigError("dense sampling: stride must be positive");
  const Index last = video.frames() - frames * stride;
  if (last < 0) {
    throw SamplingError("dense sampling: needs " + std::to_string(frames * stride) + " frames, video has " +
                        std::to_string(video.frames()));
  }
  std::uniform_int_distribution<Index> pick(0, last);
  return sample_clip_at(video, stride, frames, pick(rng));
}

CubeGrid cubify(const VideoClip& clip) {
  const GridDims dims = clip.grid();
  CubeGrid grid{MatrixF(dims.tokens(), kCubeDim), dims};
  for (Index tp = 0; tp < dims.frames; ++tp) {
    for (Index hp = 0; hp < dims.height; ++hp) {
      for (Index wp = 0; wp < dims.width; ++wp) {
        const Index row = (tp * dims.height + hp) * dims.width + wp;
        Index col = 0;
        for (Index c = 0; c < kChannels; ++c) {
          for (Index dt = 0; dt < kCubeFrames; ++dt) {
            for (Index dy = 0; dy < kCubeSize; ++dy) {
              for (Index dx = 0; dx < kCubeSize; ++dx) {
                grid.tokens(row, col++) =
                    clip.at(c, tp * kCubeFrames + dt, hp * kCubeSize + dy, wp * kCubeSize + dx);
              }
            }
          }
        }
      }
    }
  }
  return grid;
}

VideoClip decubify(const CubeGrid& grid) {
  const GridDims& dims = grid.dims;
  if (dims.frames <= 0 || dims.height <= 0 || dims.width <= 0) {
    throw DimensionError("decubify: invalid grid " + to_string(dims));
  }
  if (grid.tokens.rows() != dims.tokens() || grid.tokens.cols() != kCubeDim) {
    throw DimensionError("decubify: tokens " + shape_string(grid.tokens) + " inconsistent with grid " +
                         to_string(dims));
  }
  VideoClip clip(dims.frames * kCubeFrames, dims.height * kCubeSize, dims.width * kCubeSize);
  for (Index tp = 0; tp < dims.frames; ++tp) {
    for (Index hp = 0; hp < dims.height; ++hp) {
      for (Index wp = 0; wp < dims.width; ++wp) {
        const Index row = (tp * dims.height + hp) * dims.width + wp;
        Index col = 0;
        for (Index c = 0; c < kChannels; ++c) {
          for (Index dt = 0; dt < kCubeFrames; ++dt) {
            for (Index dy = 0; dy < kCubeSize; ++dy) {
              for (Index dx = 0; dx < kCubeSize; ++dx) {
                clip.at(c, tp * kCubeFrames + dt, hp * kCubeSize + dy, wp * kCubeSize + dx) =
                    grid.tokens(row, col++);
              }
            }
          }
        }
      }
    }
  }
  return clip;
}

TargetCubes normalize_cube_targets(const CubeGrid& grid, float eps) {
  if (!(eps > 0)) throw ConfigError("normalize_cube_targets: eps must be positive");
  const Index n = grid.tokens.rows();
  TargetCubes out;
  out.values.resize(n, grid.tokens.cols());
  out.mean.resize(static_cast<std::size_t>(n));
  out.std.resize(static_cast<std::size_t>(n));
  out.eps = eps;
  for (Index r = 0; r < n; ++r) {
    const Eigen::RowVectorXd row = grid.tokens.row(r).cast<double>();
    const double mean = row.mean();
    const double sd = std::sqrt((row.array() - mean).square().mean());
    out.values.row(r) = ((row.array() - mean) / (sd + eps)).cast<float>().matrix();
    out.mean[static_cast<std::size_t>(r)] = static_cast<float>(mean);
    out.std[static_cast<std::size_t>(r)] = static_cast<float>(sd);
  }
  return out;
}

VideoClip hflip(const VideoClip& clip) {
  VideoClip out = clip;
  for (Index c = 0; c < clip.channels(); ++c) {
    for (Index t = 0; t < clip.frames(); ++t) {
      for (Index y = 0; y < clip.height(); ++y) {
        for (Index x = 0; x < clip.width(); ++x) out.at(c, t, y, x) = clip.at(c, t, y, clip.width() - 1 - x);
      }
    }
  }
  return out;
}

namespace {

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("manifest " + path.string() + ": malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

Index manifest_extent(const std::map<std::string, std::string>& kv, const std::string& key,
                      const std::filesystem::path& path) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ConfigError("manifest " + path.string() + ": missing key '" + key + "'");
  try {
    const long long v = std::stoll(it->second);
    if (v <= 0) throw ConfigError("manifest " + path.string() + ": '" + key + "' must be positive");
    return static_cast<Index>(v);
  } catch (const std::logic_error&) {
    throw ConfigError("manifest " + path.string() + ": '" + key + "' is not an integer");
  }
}

std::filesystem::path manifest_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".manifest");
}

}  // namespace

RawVideo read_raw_video(const std::filesystem::path& path) {
  static_assert(std::endian::native == std::endian::little, "raw video I/O assumes a little-endian host");
  const auto manifest = manifest_path(path);
  const auto kv = read_key_values(manifest);
  const Index c = manifest_extent(kv, "channels", manifest);
  const Index t = manifest_extent(kv, "frames", manifest);
  const Index h = manifest_extent(kv, "height", manifest);
  const Index w = manifest_extent(kv, "width", manifest);
  RawVideo video{Tensor<float>(Shape{c, t, h, w})};
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open raw video " + path.string());
  const auto bytes = static_cast<std::streamsize>(video.pixels.size() * sizeof(float));
  in.read(reinterpret_cast<char*>(video.pixels.data().data()), bytes);
  if (in.gcount() != bytes) {
    throw ConfigError("raw video " + path.string() + ": expected " + std::to_string(bytes) + " bytes, read " +
                      std::to_string(in.gcount()));
  }
  return video;
}

void write_raw_video(const std::filesystem::path& path, const RawVideo& video) {
  {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(video.pixels.data().data()),
              static_cast<std::streamsize>(video.pixels.size() * sizeof(float)));
  }
  std::ofstream m(manifest_path(path));
  m << "channels=" << video.channels() << "\nframes=" << video.frames() << "\nheight=" << video.height()
    << "\nwidth=" << video.width() << "\n";
}

const char* direction_name(int label) {
  static constexpr const char* names[] = {"up", "down", "left", "right"};
  if (label < 0 || label >= kDirectionCount) throw ConfigError("unknown direction label " + std::to_string(label));
  return names[label];
}

int direction_label(double vy, double vx) {
  if (vx == 0 && vy == 0) throw GenerationError("direction_label: zero velocity has no direction");
  if (std::abs(vx) >= std::abs(vy)) return static_cast<int>(vx > 0 ? Direction::right : Direction::left);
  return static_cast<int>(vy > 0 ? Direction::down : Direction::up);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer over the combined words
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ull + index + 0x632BE59BD9B4E019ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace {

void validate_geometry(const SpriteConfig& cfg) {
  if (cfg.count < 1) throw ConfigError("dataset count must be positive");
  grid_for_clip(cfg.frames, cfg.height, cfg.width);
  if (cfg.stride < 1) throw ConfigError("dataset stride must be positive");
}

void fill_background(VideoClip& clip, const Eigen::MatrixXf& texture, float temporal_noise, std::mt19937_64& rng) {
  std::normal_distribution<float> noise(0.0f, 1.0f);
  for (Index c = 0; c < clip.channels(); ++c) {
    for (Index t = 0; t < clip.frames(); ++t) {
      for (Index y = 0; y < clip.height(); ++y) {
        for (Index x = 0; x < clip.width(); ++x) {
          float v = texture(y, x);
          if (temporal_noise > 0) v = std::clamp(v + temporal_noise * noise(rng), 0.0f, 1.0f);
          clip.at(c, t, y, x) = v;
        }
      }
    }
  }
}

}  // namespace

SpriteDataset synth_moving_sprites(const SpriteConfig& cfg) {
  validate_geometry(cfg);
  const double travel = cfg.speed * static_cast<double>((cfg.frames - 1) * cfg.stride);
  const double span = static_cast<double>(cfg.sprite_size) + std::ceil(travel);
  if (cfg.sprite_size < 1 || span > static_cast<double>(std::min(cfg.height, cfg.width))) {
    throw GenerationError("sprite of size " + std::to_string(cfg.sprite_size) + " moving " + std::to_string(travel) +
                          " px leaves the " + std::to_string(cfg.height) + "x" + std::to_string(cfg.width) + " frame");
  }
  SpriteDataset ds;
  ds.seed = cfg.seed;
  ds.clips.reserve(static_cast<std::size_t>(cfg.count));
  ds.labels.reserve(static_cast<std::size_t>(cfg.count));
  for (Index i = 0; i < cfg.count; ++i) {
    std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    const int label = static_cast<int>(i % kDirectionCount);

    Eigen::MatrixXf texture(cfg.height, cfg.width);
    for (Index y = 0; y < cfg.height; ++y) {
      for (Index x = 0; x < cfg.width; ++x) texture(y, x) = cfg.background * unit(rng);
    }
    VideoClip clip(cfg.frames, cfg.height, cfg.width);
    clip.stride = cfg.stride;
    fill_background(clip, texture, cfg.temporal_noise, rng);

    double vy = 0, vx = 0;
    switch (static_cast<Direction>(label)) {
      case Direction::up: vy = -cfg.speed; break;
      case Direction::down: vy = cfg.speed; break;
      case Direction::left: vx = -cfg.speed; break;
      case Direction::right: vx = cfg.speed; break;
    }
    const auto moving_start = [&](Index extent) {
      std::uniform_int_distribution<Index> pick(0, extent - static_cast<Index>(span));
      return pick(rng);
    };
    const auto still_start = [&](Index extent) {
      std::uniform_int_distribution<Index> pick(0, extent - cfg.sprite_size);
      return pick(rng);
    };
    Index y0 = vy == 0 ? still_start(cfg.height) : moving_start(cfg.height);
    Index x0 = vx == 0 ? still_start(cfg.width) : moving_start(cfg.width);
    // Negative velocity starts at the far end of the traversal window.
    if (vy < 0) y0 += static_cast<Index>(std::ceil(travel));
    if (vx < 0) x0 += static_cast<Index>(std::ceil(travel));

    float color[kChannels];
    for (float& c : color) c = 0.7f + 0.3f * unit(rng);
    for (Index t = 0; t < cfg.frames; ++t) {
      const double raw_t = static_cast<double>(t * cfg.stride);
      const Index y = y0 + static_cast<Index>(std::lround(vy * raw_t));
      const Index x = x0 + static_cast<Index>(std::lround(vx * raw_t));
      for (Index c = 0; c < kChannels; ++c) {
        for (Index dy = 0; dy < cfg.sprite_size; ++dy) {
          for (Index dx = 0; dx < cfg.sprite_size; ++dx) clip.at(c, t, y + dy, x + dx) = color[c];
        }
      }
    }
    ds.clips.push_back(std::move(clip));
    ds.labels.push_back(direction_label(vy, vx));
  }
  return ds;
}

SpriteDataset synth_static_textures(const SpriteConfig& cfg) {
  validate_geometry(cfg);
  SpriteDataset ds;
  ds.seed = cfg.seed;
  for (Index i = 0; i < cfg.count; ++i) {
    std::mt19937_64 rng(derive_seed(cfg.seed ^ 0x5747415449435ull, static_cast<std::uint64_t>(i)));
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    const int label = static_cast<int>(i % 4);
    const float period = 6.0f + 6.0f * unit(rng);
    const float phase = 6.2831853f * unit(rng);
    Eigen::MatrixXf texture(cfg.height, cfg.width);
    for (Index y = 0; y < cfg.height; ++y) {
      for (Index x = 0; x < cfg.width; ++x) {
        const float coord = label == 0 ? static_cast<float>(y)
                            : label == 1 ? static_cast<float>(x)
                            : label == 2 ? static_cast<float>(x + y)
                                         : static_cast<float>(x - y);
        const float stripe = 0.5f + 0.5f * std::sin(6.2831853f * coord / period + phase);
        texture(y, x) = 0.1f + 0.6f * stripe + cfg.background * unit(rng);
      }
    }
    VideoClip clip(cfg.frames, cfg.height, cfg.width);
    clip.stride = cfg.stride;
    fill_background(clip, texture, cfg.temporal_noise, rng);
    ds.clips.push_back(std::move(clip));
    ds.labels.push_back(label);
  }
  return ds;
}

}  // namespace vmae
