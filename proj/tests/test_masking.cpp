#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "vmae/masking.hpp"

using namespace vmae;

namespace {

bool column_uniform(const MaskMap& m) {
  for (Index s = 0; s < m.sites; ++s) {
    for (Index t = 1; t < m.slices; ++t) {
      if (m.at(t, s) != m.at(0, s)) return false;
    }
  }
  return true;
}

Index masked_sites(const MaskMap& m) {
  Index n = 0;
  for (Index s = 0; s < m.sites; ++s) n += m.at(0, s) ? 1 : 0;
  return n;
}

Index masked_slices(const MaskMap& m) {
  Index n = 0;
  for (Index t = 0; t < m.slices; ++t) n += m.at(t, 0) ? 1 : 0;
  return n;
}

}  // namespace

TEST_CASE("rounding rule") {
  CHECK(mask_count(0.9, 196) == 176);
  CHECK(mask_count(0.75, 196) == 147);
  CHECK(mask_count(0.9, 1568) == 1411);
  CHECK(mask_count(0.5, 3) == 2);
  CHECK(mask_count(0.0, 10) == 0);
}

TEST_CASE("tube mask") {
  const MaskMap m = tube_mask(8, 196, 0.9, 1);
  CHECK(masked_sites(m) == 176);
  CHECK(m.visible_count() == 160);
  CHECK(column_uniform(m));
  CHECK(leakage_probe(m) == 0.0);

  const MaskMap q = tube_mask(8, 196, 0.75, 2);
  CHECK(masked_sites(q) == 147);
  CHECK(q.visible_count() == 392);

  const MaskMap none = tube_mask(8, 196, 0.0, 3);
  CHECK(none.masked_count() == 0);
  CHECK(none.visible_count() == 1568);
  CHECK(leakage_probe(none) == 0.0);
}

TEST_CASE("random mask") {
  const MaskMap m = random_mask(8, 196, 0.9, 1);
  CHECK(m.masked_count() == 1411);
  CHECK(m.visible_count() == 157);
  CHECK(random_mask(8, 196, 0.0, 1).masked_count() == 0);
  CHECK(random_mask(8, 196, 0.9, 1).masked == m.masked);
  CHECK(random_mask(8, 196, 0.9, 2).masked != m.masked);
}

TEST_CASE("frame mask") {
  const MaskMap m = frame_mask(8, 196, 0.875, 1);
  CHECK(masked_slices(m) == 7);
  CHECK(m.visible_count() == 196);
  CHECK(leakage_probe(m) == 1.0);
  const MaskMap half = frame_mask(8, 196, 0.5, 4);
  CHECK(masked_slices(half) == 4);
  CHECK(half.visible_count() == 784);
  CHECK(frame_mask(8, 196, 0.0, 1).masked_count() == 0);
  // Whole slices only: every slice is either fully masked or fully visible.
  for (Index t = 0; t < 8; ++t) {
    for (Index s = 1; s < 196; ++s) CHECK(m.at(t, s) == m.at(t, 0));
  }
  CHECK(nearest_frame_ratio(0.9, 8) == 0.875);
  CHECK(nearest_frame_ratio(0.5, 8) == 0.5);
}

TEST_CASE("invalid ratios") {
  CHECK_THROWS_AS(tube_mask(8, 16, 1.0, 1), ConfigError);
  CHECK_THROWS_AS(random_mask(8, 16, -0.1, 1), ConfigError);
  CHECK_THROWS_AS(parse_mask_strategy("checker"), ConfigError);
  CHECK(parse_mask_strategy("frame") == MaskStrategy::frame);
  CHECK(to_string(MaskStrategy::tube) == "tube");
}

TEST_CASE("visible token counts match constructed masks") {
  for (double r : {0.5, 0.75, 0.9}) {
    for (MaskStrategy s : {MaskStrategy::tube, MaskStrategy::random}) {
      CHECK(visible_token_count(s, 8, 16, r) == make_mask(s, 8, 16, r, 7).visible_count());
    }
  }
  CHECK(visible_token_count(MaskStrategy::tube, 8, 16, 0.9) == 16);
  CHECK(visible_token_count(MaskStrategy::random, 8, 16, 0.9) == 13);
  CHECK(visible_token_count(MaskStrategy::tube, 8, 16, 0.5) == 64);
  CHECK(visible_token_count(MaskStrategy::random, 8, 16, 0.75) == 32);
}

TEST_CASE("index lists are sorted and complementary") {
  const MaskMap m = random_mask(4, 9, 0.6, 12);
  auto masked = m.masked_indices();
  auto visible = m.visible_indices();
  CHECK(std::is_sorted(masked.begin(), masked.end()));
  CHECK(std::is_sorted(visible.begin(), visible.end()));
  std::vector<Index> all(masked);
  all.insert(all.end(), visible.begin(), visible.end());
  std::sort(all.begin(), all.end());
  std::vector<Index> expect(36);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(all == expect);
}

TEST_CASE("apply mask") {
  MatrixF tokens(12, 3);
  for (Index i = 0; i < tokens.size(); ++i) tokens.data()[i] = static_cast<float>(i);

  SUBCASE("empty mask is the identity gather") {
    const auto v = apply_mask(tokens, random_mask(3, 4, 0.0, 1));
    CHECK(v.rows == tokens);
    for (std::size_t i = 0; i < v.indices.size(); ++i) CHECK(v.indices[i] == static_cast<Index>(i));
  }
  SUBCASE("only index 0 visible") {
    MaskMap m = random_mask(3, 4, 0.0, 1);
    std::fill(m.masked.begin() + 1, m.masked.end(), std::uint8_t{1});
    const auto v = apply_mask(tokens, m);
    CHECK(v.rows.rows() == 1);
    CHECK(v.indices == std::vector<Index>{0});
    CHECK(v.rows.row(0) == tokens.row(0));
  }
  SUBCASE("scatter then gather") {
    const MaskMap m = random_mask(3, 4, 0.5, 9);
    const auto v = apply_mask(tokens, m);
    const MatrixF full = scatter_visible(v, 12, -1.0f);
    for (Index i : m.masked_indices()) CHECK((full.row(i).array() == -1.0f).all());
    const auto again = apply_mask(full, m);
    CHECK(again.rows == v.rows);
  }
  CHECK_THROWS_AS(apply_mask(tokens, random_mask(2, 4, 0.5, 1)), DimensionError);
}

TEST_CASE("random leakage averages near the independence estimate") {
  double total = 0;
  const int n = 2000;
  for (int s = 0; s < n; ++s) total += leakage_probe(random_mask(8, 196, 0.9, static_cast<std::uint64_t>(s)));
  CHECK(std::abs(total / n - 0.52) < 0.02);
}

TEST_CASE("mask text") {
  const MaskMap tube = tube_mask(4, 16, 0.5, 3);
  const std::string text = mask_text(tube, 4, 4);
  const std::string block = text.substr(0, 20);
  CHECK(std::count(block.begin(), block.end(), '#') == 8);
  for (int t = 1; t < 4; ++t) CHECK(text.substr(static_cast<std::size_t>(t) * 21, 20) == block);

  const std::string open = mask_text(random_mask(2, 16, 0.0, 1), 4, 4);
  CHECK(std::count(open.begin(), open.end(), '#') == 0);
  CHECK(std::count(open.begin(), open.end(), '.') == 32);
  CHECK_THROWS_AS(mask_text(tube, 3, 4), DimensionError);
}
