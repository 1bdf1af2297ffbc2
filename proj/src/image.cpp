#include "vmae/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "vmae/error.hpp"

namespace vmae {

Image frame_image(const Tensor<float>& pixels, Index t) {
  const Shape& s = pixels.shape();
  if (s.size() != 4 || s[0] != 3) throw DimensionError("frame_image: expected (3,T,H,W), got " + shape_string(s));
  if (t < 0 || t >= s[1]) throw DimensionError("frame_image: frame " + std::to_string(t) + " out of range");
  const Index T = s[1], H = s[2], W = s[3];
  Image img(W, H);
  const auto& d = pixels.data();
  for (Index c = 0; c < 3; ++c) {
    for (Index y = 0; y < H; ++y) {
      for (Index x = 0; x < W; ++x) img.at(y, x, c) = d[((c * T + t) * H + y) * W + x];
    }
  }
  return img;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write image " + path.string());
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  std::vector<unsigned char> bytes(image.rgb.size());
  std::transform(image.rgb.begin(), image.rgb.end(), bytes.begin(), [](float v) {
    const float c = std::isfinite(v) ? std::clamp(v, 0.0f, 1.0f) : 0.0f;
    return static_cast<unsigned char>(std::lround(c * 255.0f));
  });
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ConfigError("write failed for " + path.string());
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open image " + path.string());
  std::string magic;
  Index w = 0, h = 0;
  int maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255) throw ConfigError("unsupported image " + path.string());
  in.get();
  std::vector<unsigned char> bytes(static_cast<std::size_t>(w * h * 3));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!in) throw ConfigError("truncated image " + path.string());
  Image img(w, h);
  std::transform(bytes.begin(), bytes.end(), img.rgb.begin(), [](unsigned char b) { return b / 255.0f; });
  return img;
}

Image mask_image(const MaskMap& mask, Index grid_height, Index grid_width, Index cell) {
  if (grid_height * grid_width != mask.sites) {
    throw DimensionError("mask_image: " + std::to_string(grid_height) + "x" + std::to_string(grid_width) +
                         " does not cover " + std::to_string(mask.sites) + " sites");
  }
  const Index slice_w = grid_width * cell;
  Image img(mask.slices * (slice_w + 1) - 1, grid_height * cell, 1.0f);
  for (Index t = 0; t < mask.slices; ++t) {
    for (Index s = 0; s < mask.sites; ++s) {
      const float v = mask.at(t, s) ? 0.15f : 0.85f;
      const Index y0 = (s / grid_width) * cell, x0 = t * (slice_w + 1) + (s % grid_width) * cell;
      for (Index y = y0; y < y0 + cell; ++y) {
        for (Index x = x0; x < x0 + cell; ++x) {
          for (Index c = 0; c < 3; ++c) img.at(y, x, c) = v;
        }
      }
    }
  }
  return img;
}

}  // namespace vmae
