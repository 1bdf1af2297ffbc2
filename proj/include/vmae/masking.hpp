#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vmae/tensor.hpp"
#include "vmae/video.hpp"

namespace vmae {

enum class MaskStrategy { tube, random, frame };

std::string to_string(MaskStrategy strategy);
MaskStrategy parse_mask_strategy(const std::string& name);

/// Token mask over (T' slices, S spatial sites); true = masked (in Ω).
struct MaskMap {
  Index slices = 0;
  Index sites = 0;
  std::vector<std::uint8_t> masked;  // flat index t'·S + s
  double ratio = 0;
  MaskStrategy strategy = MaskStrategy::tube;
  std::uint64_t seed = 0;

  Index tokens() const { return slices * sites; }
  bool at(Index slice, Index site) const { return masked[static_cast<std::size_t>(slice * sites + site)] != 0; }
  Index masked_count() const;
  Index visible_count() const { return tokens() - masked_count(); }
  /// Ascending flat indices of Ω.
  std::vector<Index> masked_indices() const;
  /// Ascending flat indices of visible tokens.
  std::vector<Index> visible_indices() const;
};

/// round-half-up of ratio·n, the fixed count every strategy masks.
Index mask_count(double ratio, Index n);

MaskMap tube_mask(Index slices, Index sites, double ratio, std::uint64_t seed);
MaskMap random_mask(Index slices, Index sites, double ratio, std::uint64_t seed);
MaskMap frame_mask(Index slices, Index sites, double ratio, std::uint64_t seed);
MaskMap make_mask(MaskStrategy strategy, Index slices, Index sites, double ratio, std::uint64_t seed);

inline MaskMap make_mask(MaskStrategy strategy, const GridDims& dims, double ratio, std::uint64_t seed) {
  return make_mask(strategy, dims.frames, dims.sites(), ratio, seed);
}

/// Visible encoder input count implied by the strategy's rounding rule.
Index visible_token_count(MaskStrategy strategy, Index slices, Index sites, double ratio);

/// Nearest ratio the frame strategy can realize exactly (k / T').
double nearest_frame_ratio(double ratio, Index slices);

/// Visible rows gathered in ascending flat-index order.
template <typename Scalar>
struct VisibleSet {
  Matrix<Scalar> rows;
  std::vector<Index> indices;
};

template <typename Derived>
VisibleSet<typename Derived::Scalar> apply_mask(const Eigen::MatrixBase<Derived>& tokens, const MaskMap& mask) {
  if (tokens.rows() != mask.tokens()) {
    throw DimensionError("apply_mask: " + std::to_string(tokens.rows()) + " tokens vs mask over " +
                         std::to_string(mask.slices) + "x" + std::to_string(mask.sites));
  }
  VisibleSet<typename Derived::Scalar> out;
  out.indices = mask.visible_indices();
  out.rows.resize(static_cast<Index>(out.indices.size()), tokens.cols());
  for (std::size_t i = 0; i < out.indices.size(); ++i) out.rows.row(static_cast<Index>(i)) = tokens.row(out.indices[i]);
  return out;
}

/// Inverse of apply_mask onto a [N×D] matrix with masked rows set to `fill`.
template <typename Scalar>
Matrix<Scalar> scatter_visible(const VisibleSet<Scalar>& visible, Index total, Scalar fill = Scalar(0)) {
  Matrix<Scalar> out = Matrix<Scalar>::Constant(total, visible.rows.cols(), fill);
  for (std::size_t i = 0; i < visible.indices.size(); ++i) out.row(visible.indices[i]) = visible.rows.row(static_cast<Index>(i));
  return out;
}

/// Fraction of masked tokens whose spatial site is visible at some other
/// slice, i.e. recoverable by copying along time. 0 for an empty Ω.
double leakage_probe(const MaskMap& mask);

/// One block of `height` lines of `width` chars per slice ('#' masked,
/// '.' visible), blocks separated by a blank line.
std::string mask_text(const MaskMap& mask, Index height, Index width);

}  // namespace vmae
