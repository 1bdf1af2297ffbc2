#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vmae/masking.hpp"
#include "vmae/ops.hpp"
#include "vmae/tensor.hpp"
#include "vmae/video.hpp"

namespace vmae {

struct ModelConfig {
  Index d_enc = 64;
  Index depth_enc = 4;
  Index heads_enc = 4;
  Index d_dec = 32;
  Index depth_dec = 2;
  Index heads_dec = 2;
  Index mlp_ratio = 4;
  GridDims grid{8, 4, 4};
  Index num_classes = 4;

  /// 3×16×64×64 clips, 128 tokens.
  static ModelConfig desk();
  /// ViT-B encoder (768 wide, 12 blocks) with the 384-wide 4-block decoder
  /// on 16×224×224 clips.
  static ModelConfig vit_base();

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

inline constexpr double kLayerNormEps = 1e-6;

template <typename Scalar>
struct BlockParams {
  Param<Scalar> norm1_gamma, norm1_beta;
  Param<Scalar> qkv_weight, qkv_bias;
  Param<Scalar> proj_weight, proj_bias;
  Param<Scalar> norm2_gamma, norm2_beta;
  Param<Scalar> fc1_weight, fc1_bias;
  Param<Scalar> fc2_weight, fc2_bias;

  BlockParams(const std::string& prefix, Index width, Index mlp_ratio);
  std::vector<Param<Scalar>*> parameters();
};

template <typename Scalar>
struct EncoderParams {
  Index heads = 1;
  GridDims grid;
  Param<Scalar> embed_weight, embed_bias;
  std::vector<BlockParams<Scalar>> blocks;
  Param<Scalar> norm_gamma, norm_beta;
  Matrix<Scalar> pos_table;  // fixed, [T'·S × D_enc]

  explicit EncoderParams(const ModelConfig& config);
  std::vector<Param<Scalar>*> parameters();
};

template <typename Scalar>
struct DecoderParams {
  Index heads = 1;
  GridDims grid;
  Param<Scalar> embed_weight, embed_bias;  // D_enc -> D_dec
  Param<Scalar> mask_token;
  std::vector<BlockParams<Scalar>> blocks;
  Param<Scalar> norm_gamma, norm_beta;
  Param<Scalar> out_weight, out_bias;  // D_dec -> 1536
  Matrix<Scalar> pos_table;             // fixed, [T'·S × D_dec]

  explicit DecoderParams(const ModelConfig& config);
  std::vector<Param<Scalar>*> parameters();
};

template <typename Scalar>
struct ClassifierHead {
  Param<Scalar> norm_gamma, norm_beta;
  Param<Scalar> weight, bias;

  ClassifierHead(Index width, Index num_classes);
  std::vector<Param<Scalar>*> parameters();
};

template <typename Scalar>
struct MAEParams {
  ModelConfig config;
  EncoderParams<Scalar> encoder;
  DecoderParams<Scalar> decoder;

  explicit MAEParams(const ModelConfig& cfg) : config(cfg), encoder(cfg), decoder(cfg) {}
  std::vector<Param<Scalar>*> parameters();
};

template <typename Scalar>
struct ClassifierParams {
  ModelConfig config;
  EncoderParams<Scalar> encoder;
  ClassifierHead<Scalar> head;

  explicit ClassifierParams(const ModelConfig& cfg) : config(cfg), encoder(cfg), head(cfg.d_enc, cfg.num_classes) {}
  std::vector<Param<Scalar>*> parameters();
};

/// Truncated normal (±2σ, σ = 0.02) weights and mask token, zero biases,
/// unit LayerNorm gains.
template <typename Scalar>
void init_params(std::span<Param<Scalar>* const> params, std::uint64_t seed);

/// Copies values by position; names and shapes must agree.
template <typename To, typename From>
void assign_values(std::span<Param<To>* const> dst, std::span<Param<From>* const> src);

/// Fixed 3-D separable sin-cos table, one row per grid position in
/// (t', h', w') order. The width splits into bands for t', h', w' of
/// 2·round(W/8), 2·round(3W/16) and the remainder; each band interleaves
/// sin/cos pairs at geometric frequencies 1/10000^(i/half).
template <typename Scalar>
Matrix<Scalar> sincos_pos_table(const GridDims& dims, Index width);

template <typename Scalar>
Var<Scalar> add_pos_embed(const Var<Scalar>& tokens, const Matrix<Scalar>& table) {
  return add_constant(tokens, table);
}

/// Shared linear projection of raw cubes [N×1536] to [N×D_enc].
template <typename Scalar>
Var<Scalar> cube_embed(Tape<Scalar>& tape, const Matrix<Scalar>& cubes, EncoderParams<Scalar>& params);

/// Pre-norm transformer block with joint attention over all rows.
template <typename Scalar>
Var<Scalar> attention_block(const Var<Scalar>& x, BlockParams<Scalar>& params, Index heads,
                            std::vector<Matrix<Scalar>>* weights = nullptr);

/// Encoder blocks then final LayerNorm; row count unchanged.
template <typename Scalar>
Var<Scalar> encode(const Var<Scalar>& tokens, EncoderParams<Scalar>& params);

/// Embeds, position-codes at original grid positions, and encodes only the
/// listed rows of `cubes`.
template <typename Scalar>
Var<Scalar> encode_visible(Tape<Scalar>& tape, const Matrix<Scalar>& cubes, std::span<const Index> visible,
                           EncoderParams<Scalar>& params);

/// Maps encoded visible tokens back onto the full grid with the mask token
/// filling Ω and predicts every cube: [T'·S × 1536].
template <typename Scalar>
Var<Scalar> decode(const Var<Scalar>& encoded, const MaskMap& mask, DecoderParams<Scalar>& params);

template <typename Scalar>
struct MAEOutput {
  Var<Scalar> predictions;
  std::vector<Index> masked;
  TargetCubes targets;
  Index encoder_tokens = 0;
};

template <typename Scalar>
MAEOutput<Scalar> mae_forward(Tape<Scalar>& tape, const VideoClip& clip, const MaskMap& mask, MAEParams<Scalar>& params);

/// Mean-pooled encoder features of an unmasked clip, [1×D_enc].
template <typename Scalar>
Var<Scalar> pooled_features(Tape<Scalar>& tape, const Matrix<Scalar>& cubes, EncoderParams<Scalar>& params);

/// LayerNorm + linear over pooled features.
template <typename Scalar>
Var<Scalar> head_forward(const Var<Scalar>& pooled, ClassifierHead<Scalar>& head);

template <typename Scalar>
Var<Scalar> classify(Tape<Scalar>& tape, const VideoClip& clip, ClassifierParams<Scalar>& params);

/// Layer index for layer-wise lr decay: embedding 0, encoder block i -> i+1,
/// encoder norm and head -> depth+1.
Index layer_id(const std::string& param_name, Index depth_enc);

/// Activations stored per decoder forward (a memory proxy), linear in depth.
Index decoder_activation_count(const ModelConfig& config);

}  // namespace vmae
