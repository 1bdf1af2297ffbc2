#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "vmae/gradcheck.hpp"
#include "vmae/model.hpp"
#include "vmae/ops.hpp"
#include "vmae/training.hpp"

using namespace vmae;

namespace {

void randomize(Param<double>& p, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (Index i = 0; i < p.value.size(); ++i) p.value[i] = n(rng);
}

double check(const LossBuilder& f, std::vector<Param<double>*> params) {
  return finite_diff_check(f, params).max_relative_error;
}

}  // namespace

TEST_CASE("relative error floor") {
  CHECK(relative_error(0.0, 0.0) == 0.0);
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
  CHECK(relative_error(1e-10, 0.0) == doctest::Approx(1e-2));
}

TEST_CASE("quadratic is exact up to roundoff") {
  Param<double> p("p", Shape{3, 2});
  randomize(p, 1);
  MatrixD a = MatrixD::Random(3, 2);
  const double err = check(
      [&](Tape<double>& t) {
        auto v = t.param(p);
        return add(sum(mul(v, v)), sum(mul(v, t.constant(a))));
      },
      {&p});
  CHECK(err < 1e-7);
}

TEST_CASE("gelu composite") {
  Param<double> p("p", Shape{2, 3}), w("w", Shape{3, 3});
  randomize(p, 2);
  randomize(w, 3);
  CHECK(check([&](Tape<double>& t) { return sum(gelu(matmul(t.param(p), t.param(w)))); }, {&p, &w}) < 1e-4);
}

TEST_CASE("dead parameter reports zero on both sides") {
  Param<double> live("live", Shape{2}), dead("dead", Shape{2});
  randomize(live, 4);
  randomize(dead, 5);
  const auto report = finite_diff_check([&](Tape<double>& t) { return sum(mul(t.param(live), t.param(live))); },
                                        std::vector<Param<double>*>{&live, &dead});
  CHECK(report.max_relative_error < 1e-7);
  CHECK(dead.grad.data().isZero());
  REQUIRE(report.params.size() == 2);
  CHECK(report.params[1].analytic_norm == 0.0);
  CHECK(report.params[1].numeric_norm == 0.0);
}

TEST_CASE("non-finite evaluation") {
  Param<double> p("p", Shape{1});
  p.value[0] = 1.0;
  CHECK_THROWS_AS(finite_diff_check(
                      [&](Tape<double>& t) {
                        return scale(sum(t.param(p)), std::numeric_limits<double>::infinity());
                      },
                      std::vector<Param<double>*>{&p}),
                  NumericError);
}

TEST_CASE("every primitive at five random points") {
  for (std::uint64_t point = 0; point < 5; ++point) {
    CAPTURE(point);
    const std::uint64_t s = 100 + point * 17;
    Param<double> a("a", Shape{4, 6}), b("b", Shape{6, 3}), bias("bias", Shape{3}), g("g", Shape{6}),
        beta("beta", Shape{6}), c("c", Shape{4, 6}), fill("fill", Shape{6});
    randomize(a, s);
    randomize(b, s + 1);
    randomize(bias, s + 2);
    randomize(g, s + 3);
    randomize(beta, s + 4);
    randomize(c, s + 5);
    randomize(fill, s + 6);
    MatrixD probe = MatrixD::Random(4, 6);
    MatrixD probe_small = MatrixD::Random(4, 3);
    const auto weigh = [](Tape<double>& t, const Var<double>& v, const MatrixD& m) { return sum(mul(v, t.constant(m))); };

    SUBCASE("matmul") { CHECK(check([&](Tape<double>& t) { return weigh(t, matmul(t.param(a), t.param(b)), probe_small); }, {&a, &b}) < 1e-4); }
    SUBCASE("linear") {
      CHECK(check([&](Tape<double>& t) { return weigh(t, linear(t.param(a), t.param(b), t.param(bias)), probe_small); },
                  {&a, &b, &bias}) < 1e-4);
    }
    SUBCASE("add sub mul scale") {
      CHECK(check([&](Tape<double>& t) {
              auto x = t.param(a), y = t.param(c);
              return weigh(t, scale(mul(add(x, y), sub(x, y)), 0.7), probe);
            },
                  {&a, &c}) < 1e-4);
    }
    SUBCASE("gelu") { CHECK(check([&](Tape<double>& t) { return weigh(t, gelu(t.param(a)), probe); }, {&a}) < 1e-4); }
    SUBCASE("layer_norm") {
      CHECK(check([&](Tape<double>& t) { return weigh(t, layer_norm(t.param(a), t.param(g), t.param(beta), 1e-6), probe); },
                  {&a, &g, &beta}) < 1e-4);
    }
    SUBCASE("softmax_rows") { CHECK(check([&](Tape<double>& t) { return weigh(t, softmax_rows(t.param(a)), probe); }, {&a}) < 1e-4); }
    SUBCASE("attention") {
      Param<double> qkv("qkv", Shape{5, 12});
      randomize(qkv, s + 7);
      MatrixD m = MatrixD::Random(5, 4);
      CHECK(check([&](Tape<double>& t) { return weigh(t, attention(t.param(qkv), 2), m); }, {&qkv}) < 1e-4);
    }
    SUBCASE("mean_rows") {
      MatrixD m = MatrixD::Random(1, 6);
      CHECK(check([&](Tape<double>& t) { return weigh(t, mean_rows(t.param(a)), m); }, {&a}) < 1e-4);
    }
    SUBCASE("gather and scatter") {
      const std::vector<Index> rows{3, 1};
      CHECK(check([&](Tape<double>& t) {
              auto picked = gather_rows(t.param(a), std::span<const Index>(rows));
              return weigh(t, scatter_rows(picked, std::span<const Index>(rows), 4, t.param(fill)), probe);
            },
                  {&a, &fill}) < 1e-4);
    }
    SUBCASE("mean_squared_error") {
      CHECK(check([&](Tape<double>& t) { return mean_squared_error(t.param(a), probe); }, {&a}) < 1e-4);
    }
    SUBCASE("cross_entropy") {
      const std::vector<int> labels{0, 5, 2, 3};
      CHECK(check([&](Tape<double>& t) { return cross_entropy(t.param(a), std::span<const int>(labels)); }, {&a}) < 1e-4);
    }
  }
}

TEST_CASE("two-token toy MAE") {
  ModelConfig cfg;
  cfg.d_enc = 8;
  cfg.depth_enc = 1;
  cfg.heads_enc = 2;
  cfg.d_dec = 4;
  cfg.depth_dec = 1;
  cfg.heads_dec = 1;
  cfg.grid = {1, 1, 2};
  cfg.validate();
  MAEParams<double> mae(cfg);
  init_params<double>(mae.parameters(), 9);
  perturb_params(mae.parameters(), 0.1, 10);
  VideoClip clip(2, 16, 32);
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (Index i = 0; i < clip.pixels.size(); ++i) clip.pixels[i] = u(rng);
  const MaskMap mask = make_mask(MaskStrategy::random, cfg.grid, 0.5, 3);
  REQUIRE(mask.masked_count() == 1);
  const auto params = mae.parameters();
  const auto report = finite_diff_check(
      [&](Tape<double>& t) {
        auto out = mae_forward(t, clip, mask, mae);
        return masked_mse_loss(out.predictions, out.targets, mask);
      },
      params);
  CAPTURE(report.worst.name);
  CHECK(report.max_relative_error < 1e-4);
  CHECK(report.entries_checked > 1000);
}
