#include "vmae/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace vmae {

std::string to_string(MaskStrategy strategy) {
  switch (strategy) {
    case MaskStrategy::tube: return "tube";
    case MaskStrategy::random: return "random";
    case MaskStrategy::frame: return "frame";
  }
  return "unknown";
}

MaskStrategy parse_mask_strategy(const std::string& name) {
  if (name == "tube") return MaskStrategy::tube;
  if (name == "random") return MaskStrategy::random;
  if (name == "frame") return MaskStrategy::frame;
  throw ConfigError("unknown mask strategy '" + name + "'");
}

Index MaskMap::masked_count() const {
  return static_cast<Index>(std::count(masked.begin(), masked.end(), std::uint8_t{1}));
}

std::vector<Index> MaskMap::masked_indices() const {
  std::vector<Index> out;
  for (std::size_t i = 0; i < masked.size(); ++i) {
    if (masked[i]) out.push_back(static_cast<Index>(i));
  }
  return out;
}

std::vector<Index> MaskMap::visible_indices() const {
  std::vector<Index> out;
  for (std::size_t i = 0; i < masked.size(); ++i) {
    if (!masked[i]) out.push_back(static_cast<Index>(i));
  }
  return out;
}

Index mask_count(double ratio, Index n) {
  return static_cast<Index>(std::floor(ratio * static_cast<double>(n) + 0.5));
}

namespace {

void check_ratio(double ratio, const char* op) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw ConfigError(std::string(op) + ": masking ratio must lie in [0, 1), got " + std::to_string(ratio));
  }
}

void check_dims(Index slices, Index sites, const char* op) {
  if (slices < 1 || sites < 1) throw DimensionError(std::string(op) + ": empty token grid");
}

std::vector<Index> choose(Index population, Index k, std::mt19937_64& rng) {
  std::vector<Index> all(static_cast<std::size_t>(population));
  std::iota(all.begin(), all.end(), Index{0});
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(k));
  std::sample(all.begin(), all.end(), std::back_inserter(out), k, rng);
  return out;
}

MaskMap empty_map(Index slices, Index sites, double ratio, MaskStrategy strategy, std::uint64_t seed) {
  MaskMap m;
  m.slices = slices;
  m.sites = sites;
  m.masked.assign(static_cast<std::size_t>(slices * sites), 0);
  m.ratio = ratio;
  m.strategy = strategy;
  m.seed = seed;
  return m;
}

void require_visible(Index masked, Index population, const char* op) {
  if (masked >= population) {
    throw ConfigError(std::string(op) + ": ratio masks all " + std::to_string(population) + " units, none left visible");
  }
}

}  // namespace

MaskMap tube_mask(Index slices, Index sites, double ratio, std::uint64_t seed) {
  check_ratio(ratio, "tube_mask");
  check_dims(slices, sites, "tube_mask");
  const Index k = mask_count(ratio, sites);
  require_visible(k, sites, "tube_mask");
  std::mt19937_64 rng(seed);
  MaskMap m = empty_map(slices, sites, ratio, MaskStrategy::tube, seed);
  for (Index s : choose(sites, k, rng)) {
    for (Index t = 0; t < slices; ++t) m.masked[static_cast<std::size_t>(t * sites + s)] = 1;
  }
  return m;
}

MaskMap random_mask(Index slices, Index sites, double ratio, std::uint64_t seed) {
  check_ratio(ratio, "random_mask");
  check_dims(slices, sites, "random_mask");
  const Index k = mask_count(ratio, slices * sites);
  require_visible(k, slices * sites, "random_mask");
  std::mt19937_64 rng(seed);
  MaskMap m = empty_map(slices, sites, ratio, MaskStrategy::random, seed);
  for (Index i : choose(slices * sites, k, rng)) m.masked[static_cast<std::size_t>(i)] = 1;
  return m;
}

MaskMap frame_mask(Index slices, Index sites, double ratio, std::uint64_t seed) {
  check_ratio(ratio, "frame_mask");
  check_dims(slices, sites, "frame_mask");
  const Index k = mask_count(ratio, slices);
  require_visible(k, slices, "frame_mask");
  std::mt19937_64 rng(seed);
  MaskMap m = empty_map(slices, sites, ratio, MaskStrategy::frame, seed);
  for (Index t : choose(slices, k, rng)) {
    std::fill_n(m.masked.begin() + t * sites, sites, std::uint8_t{1});
  }
  return m;
}

MaskMap make_mask(MaskStrategy strategy, Index slices, Index sites, double ratio, std::uint64_t seed) {
  switch (strategy) {
    case MaskStrategy::tube: return tube_mask(slices, sites, ratio, seed);
    case MaskStrategy::random: return random_mask(slices, sites, ratio, seed);
    case MaskStrategy::frame: return frame_mask(slices, sites, ratio, seed);
  }
  throw ConfigError("unknown mask strategy");
}

Index visible_token_count(MaskStrategy strategy, Index slices, Index sites, double ratio) {
  switch (strategy) {
    case MaskStrategy::tube: return (sites - mask_count(ratio, sites)) * slices;
    case MaskStrategy::random: return slices * sites - mask_count(ratio, slices * sites);
    case MaskStrategy::frame: return (slices - mask_count(ratio, slices)) * sites;
  }
  throw ConfigError("unknown mask strategy");
}

double nearest_frame_ratio(double ratio, Index slices) {
  return static_cast<double>(mask_count(ratio, slices)) / static_cast<double>(slices);
}

double leakage_probe(const MaskMap& mask) {
  Index masked = 0;
  Index leaky = 0;
  for (Index s = 0; s < mask.sites; ++s) {
    Index masked_here = 0;
    for (Index t = 0; t < mask.slices; ++t) masked_here += mask.at(t, s) ? 1 : 0;
    masked += masked_here;
    // Every masked token at this site sees a visible copy iff any slice is visible.
    if (masked_here < mask.slices) leaky += masked_here;
  }
  return masked == 0 ? 0.0 : static_cast<double>(leaky) / static_cast<double>(masked);
}

std::string mask_text(const MaskMap& mask, Index height, Index width) {
  if (height * width != mask.sites) {
    throw DimensionError("mask_text: " + std::to_string(height) + "x" + std::to_string(width) + " does not cover " +
                         std::to_string(mask.sites) + " sites");
  }
  std::string out;
  for (Index t = 0; t < mask.slices; ++t) {
    if (t > 0) out += '\n';
    for (Index y = 0; y < height; ++y) {
      for (Index x = 0; x < width; ++x) out += mask.at(t, y * width + x) ? '#' : '.';
      out += '\n';
    }
  }
  return out;
}

}  // namespace vmae
