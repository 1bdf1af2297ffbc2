#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "vmae/model.hpp"
#include "vmae/ops.hpp"
#include "vmae/training.hpp"

using namespace vmae;

namespace {

VideoClip noise_clip(const GridDims& g, std::uint64_t seed) {
  VideoClip clip(g.frames * kCubeFrames, g.height * kCubeSize, g.width * kCubeSize);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (Index i = 0; i < clip.pixels.size(); ++i) clip.pixels[i] = u(rng);
  return clip;
}

template <typename Scalar>
void zero_all(std::vector<Param<Scalar>*> params) {
  for (auto* p : params) p->value.data().setZero();
}

}  // namespace

TEST_CASE("configurations") {
  const ModelConfig desk = ModelConfig::desk();
  CHECK(desk.grid.tokens() == 128);
  CHECK_NOTHROW(desk.validate());
  const ModelConfig vit = ModelConfig::vit_base();
  CHECK(vit.grid.tokens() == 1568);
  CHECK(vit.d_enc == 768);
  CHECK(vit.d_dec == 384);
  ModelConfig bad = desk;
  bad.heads_enc = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("cube embedding") {
  ModelConfig cfg = ModelConfig::desk();
  EncoderParams<float> enc(cfg);
  Tape<float> tape;
  CHECK(cube_embed(tape, MatrixF(MatrixF::Zero(128, kCubeDim)), enc).value().isZero());

  SUBCASE("wide grid") {
    ModelConfig vit = ModelConfig::vit_base();
    vit.depth_enc = 0;
    EncoderParams<float> wide(vit);
    init_params<float>(wide.parameters(), 1);
    Tape<float> t;
    const auto out = cube_embed(t, MatrixF(MatrixF::Random(1568, kCubeDim)), wide);
    CHECK(out.rows() == 1568);
    CHECK(out.cols() == 768);
  }
  SUBCASE("identity projection") {
    ModelConfig id = cfg;
    id.d_enc = kCubeDim;
    id.heads_enc = 1;
    id.depth_enc = 0;
    EncoderParams<float> e(id);
    e.embed_weight.value.matrix() = MatrixF::Identity(kCubeDim, kCubeDim);
    e.embed_bias.value.data().setZero();
    const MatrixF cubes = MatrixF::Random(5, kCubeDim);
    Tape<float> t;
    CHECK(cube_embed(t, cubes, e).value() == cubes);
  }
}

TEST_CASE("positional table") {
  const GridDims small{4, 3, 3};
  const MatrixD table = sincos_pos_table<double>(small, 32);
  CHECK(table.rows() == 36);
  for (Index r = 0; r < table.rows(); ++r) {
    for (Index q = r + 1; q < table.rows(); ++q) CHECK((table.row(r) - table.row(q)).norm() > 1e-6);
  }

  const MatrixD big = sincos_pos_table<double>(GridDims{8, 14, 14}, 768);
  for (Index c = 0; c < 768; ++c) CHECK(big(0, c) == (c % 2 == 0 ? 0.0 : 1.0));

  Tape<double> tape;
  const MatrixD x = MatrixD::Random(36, 32);
  const auto once = add_pos_embed(add_pos_embed(tape.constant(x), table), table);
  CHECK((once.value() - (x + 2.0 * table)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(sincos_pos_table<double>(small, 0), ConfigError);
}

TEST_CASE("encoder") {
  SUBCASE("depth zero is the final layer norm") {
    ModelConfig cfg = ModelConfig::desk();
    cfg.depth_enc = 0;
    EncoderParams<double> enc(cfg);
    init_params<double>(enc.parameters(), 3);
    const MatrixD x = MatrixD::Random(7, cfg.d_enc);
    Tape<double> t;
    const MatrixD y = encode(t.constant(x), enc).value();
    Tape<double> t2;
    const MatrixD ref = layer_norm(t2.constant(x), t2.param(enc.norm_gamma), t2.param(enc.norm_beta), kLayerNormEps).value();
    CHECK((y - ref).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("only visible rows are encoded") {
    const ModelConfig cfg = ModelConfig::desk();
    MAEParams<float> mae(cfg);
    init_params<float>(mae.parameters(), 5);
    const VideoClip clip = noise_clip(cfg.grid, 2);
    const MaskMap m = make_mask(MaskStrategy::tube, cfg.grid, 0.9, 4);
    Tape<float> t;
    const auto out = mae_forward(t, clip, m, mae);
    CHECK(out.encoder_tokens == 16);
    CHECK(out.predictions.rows() == 128);
    CHECK(out.predictions.cols() == kCubeDim);
    CHECK(out.masked == m.masked_indices());
  }
}

TEST_CASE("decoder") {
  const ModelConfig cfg = ModelConfig::desk();
  MAEParams<float> mae(cfg);
  init_params<float>(mae.parameters(), 6);
  const VideoClip clip = noise_clip(cfg.grid, 3);

  for (double r : {0.0, 0.5, 0.9}) {
    Tape<float> t;
    const auto out = mae_forward(t, clip, make_mask(MaskStrategy::random, cfg.grid, r, 1), mae);
    CHECK(out.predictions.rows() == cfg.grid.tokens());
    CHECK(out.predictions.value().allFinite());
  }

  SUBCASE("zero weights predict the output bias") {
    zero_all(mae.decoder.parameters());
    RowVector<float> b = RowVector<float>::LinSpaced(kCubeDim, -1.0f, 1.0f);
    mae.decoder.out_bias.value.matrix() = b;
    Tape<float> t;
    const auto out = mae_forward(t, clip, make_mask(MaskStrategy::tube, cfg.grid, 0.75, 2), mae);
    for (Index r = 0; r < out.predictions.rows(); ++r) CHECK(out.predictions.value().row(r) == b);
  }
}

TEST_CASE("untrained forward gives a finite loss") {
  const ModelConfig cfg = ModelConfig::desk();
  MAEParams<float> mae(cfg);
  init_params<float>(mae.parameters(), 7);
  const MaskMap m = make_mask(MaskStrategy::tube, cfg.grid, 0.9, 9);
  Tape<float> t;
  const auto out = mae_forward(t, noise_clip(cfg.grid, 4), m, mae);
  const auto loss = masked_mse_loss(out.predictions, out.targets, m);
  CHECK(std::isfinite(loss.value()(0, 0)));
  CHECK(loss.value()(0, 0) > 0.0f);
}

TEST_CASE("classifier") {
  const ModelConfig cfg = ModelConfig::desk();
  ClassifierParams<double> clf(cfg);
  init_params<double>(clf.parameters(), 8);
  const VideoClip clip = noise_clip(cfg.grid, 5);

  Tape<double> t;
  const auto logits = classify(t, clip, clf);
  CHECK(logits.rows() == 1);
  CHECK(logits.cols() == 4);

  SUBCASE("zero head weights return the bias") {
    clf.head.weight.value.data().setZero();
    clf.head.bias.value.data() << 0.1, -0.2, 0.3, 0.4;
    Tape<double> t2;
    const auto l = classify(t2, clip, clf);
    for (Index k = 0; k < 4; ++k) CHECK(l.value()(0, k) == clf.head.bias.value[k]);
  }
  SUBCASE("mean pooling ignores token order without positions") {
    clf.encoder.pos_table.setZero();
    const MatrixD cubes = cubify(clip).tokens.cast<double>();
    MatrixD shuffled = cubes;
    std::vector<Index> perm(static_cast<std::size_t>(cubes.rows()));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(3));
    for (Index r = 0; r < cubes.rows(); ++r) shuffled.row(r) = cubes.row(perm[static_cast<std::size_t>(r)]);
    Tape<double> a, b;
    const MatrixD fa = pooled_features(a, cubes, clf.encoder).value();
    const MatrixD fb = pooled_features(b, shuffled, clf.encoder).value();
    CHECK((fa - fb).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("layer ids and decoder activations") {
  CHECK(layer_id("encoder.embed.weight", 4) == 0);
  CHECK(layer_id("encoder.blocks.0.qkv.weight", 4) == 1);
  CHECK(layer_id("encoder.blocks.3.fc2.bias", 4) == 4);
  CHECK(layer_id("encoder.norm.gamma", 4) == 5);
  CHECK(layer_id("head.weight", 4) == 5);

  ModelConfig cfg = ModelConfig::desk();
  cfg.depth_dec = 1;
  const Index one = decoder_activation_count(cfg);
  cfg.depth_dec = 2;
  const Index two = decoder_activation_count(cfg);
  cfg.depth_dec = 4;
  const Index four = decoder_activation_count(cfg);
  CHECK(two - one > 0);
  CHECK(four - two == 2 * (two - one));
}
