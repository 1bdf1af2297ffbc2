#pragma once

#include <filesystem>
#include <vector>

#include "vmae/masking.hpp"
#include "vmae/tensor.hpp"

namespace vmae {

/// Interleaved RGB image with values in [0,1].
struct Image {
  Index width = 0;
  Index height = 0;
  std::vector<float> rgb;

  Image() = default;
  Image(Index w, Index h, float fill = 0.0f) : width(w), height(h), rgb(static_cast<std::size_t>(w * h * 3), fill) {}
  float& at(Index y, Index x, Index c) { return rgb[static_cast<std::size_t>((y * width + x) * 3 + c)]; }
  float at(Index y, Index x, Index c) const { return rgb[static_cast<std::size_t>((y * width + x) * 3 + c)]; }
};

/// Frame t of a (C,T,H,W) pixel tensor.
Image frame_image(const Tensor<float>& pixels, Index t);

/// Binary P6, 8 bits per channel; values are clamped to [0,1].
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

/// Slices side by side, each site a `cell`×`cell` block: masked sites
/// dark, visible sites light, with a one-pixel gap between slices.
Image mask_image(const MaskMap& mask, Index grid_height, Index grid_width, Index cell = 8);

}  // namespace vmae
