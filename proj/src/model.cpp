#include "vmae/model.hpp"

#include <cmath>

namespace vmae {

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::vit_base() {
  ModelConfig c;
  c.d_enc = 768;
  c.depth_enc = 12;
  c.heads_enc = 12;
  c.d_dec = 384;
  c.depth_dec = 4;
  c.heads_dec = 6;
  c.grid = GridDims{8, 14, 14};
  c.num_classes = 174;
  return c;
}

void ModelConfig::validate() const {
  const auto positive = [](Index v, const char* key) {
    if (v < 1) throw ConfigError(std::string("model.") + key + " must be positive");
  };
  positive(d_enc, "d_enc");
  positive(heads_enc, "heads_enc");
  positive(d_dec, "d_dec");
  positive(heads_dec, "heads_dec");
  positive(mlp_ratio, "mlp_ratio");
  if (depth_enc < 0) throw ConfigError("model.depth_enc must be non-negative");
  if (depth_dec < 0) throw ConfigError("model.depth_dec must be non-negative");
  if (d_enc % heads_enc != 0) {
    throw ConfigError("model.d_enc=" + std::to_string(d_enc) + " not divisible by model.heads_enc=" + std::to_string(heads_enc));
  }
  if (d_dec % heads_dec != 0) {
    throw ConfigError("model.d_dec=" + std::to_string(d_dec) + " not divisible by model.heads_dec=" + std::to_string(heads_dec));
  }
  if (grid.frames < 1 || grid.height < 1 || grid.width < 1) throw ConfigError("model grid must be non-empty");
  if (num_classes < 2) throw ConfigError("model.num_classes must be at least 2");
}

namespace {

template <typename Scalar>
Param<Scalar> make_param(const std::string& name, Shape shape, bool decay) {
  return Param<Scalar>(name, std::move(shape), decay);
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

template <typename Scalar>
BlockParams<Scalar>::BlockParams(const std::string& p, Index width, Index mlp_ratio)
    : norm1_gamma(make_param<Scalar>(p + ".norm1.gamma", {width}, false)),
      norm1_beta(make_param<Scalar>(p + ".norm1.beta", {width}, false)),
      qkv_weight(make_param<Scalar>(p + ".attn.qkv.weight", {width, 3 * width}, true)),
      qkv_bias(make_param<Scalar>(p + ".attn.qkv.bias", {3 * width}, false)),
      proj_weight(make_param<Scalar>(p + ".attn.proj.weight", {width, width}, true)),
      proj_bias(make_param<Scalar>(p + ".attn.proj.bias", {width}, false)),
      norm2_gamma(make_param<Scalar>(p + ".norm2.gamma", {width}, false)),
      norm2_beta(make_param<Scalar>(p + ".norm2.beta", {width}, false)),
      fc1_weight(make_param<Scalar>(p + ".mlp.fc1.weight", {width, mlp_ratio * width}, true)),
      fc1_bias(make_param<Scalar>(p + ".mlp.fc1.bias", {mlp_ratio * width}, false)),
      fc2_weight(make_param<Scalar>(p + ".mlp.fc2.weight", {mlp_ratio * width, width}, true)),
      fc2_bias(make_param<Scalar>(p + ".mlp.fc2.bias", {width}, false)) {}

template <typename Scalar>
std::vector<Param<Scalar>*> BlockParams<Scalar>::parameters() {
  return {&norm1_gamma, &norm1_beta, &qkv_weight,  &qkv_bias,   &proj_weight, &proj_bias,
          &norm2_gamma, &norm2_beta, &fc1_weight,  &fc1_bias,   &fc2_weight,  &fc2_bias};
}

template <typename Scalar>
EncoderParams<Scalar>::EncoderParams(const ModelConfig& c)
    : heads(c.heads_enc),
      grid(c.grid),
      embed_weight(make_param<Scalar>("encoder.embed.weight", {kCubeDim, c.d_enc}, true)),
      embed_bias(make_param<Scalar>("encoder.embed.bias", {c.d_enc}, false)),
      norm_gamma(make_param<Scalar>("encoder.norm.gamma", {c.d_enc}, false)),
      norm_beta(make_param<Scalar>("encoder.norm.beta", {c.d_enc}, false)),
      pos_table(sincos_pos_table<Scalar>(c.grid, c.d_enc)) {
  c.validate();
  blocks.reserve(static_cast<std::size_t>(c.depth_enc));
  for (Index i = 0; i < c.depth_enc; ++i) blocks.emplace_back("encoder.blocks." + std::to_string(i), c.d_enc, c.mlp_ratio);
}

template <typename Scalar>
std::vector<Param<Scalar>*> EncoderParams<Scalar>::parameters() {
  std::vector<Param<Scalar>*> out{&embed_weight, &embed_bias};
  for (auto& b : blocks) {
    for (auto* p : b.parameters()) out.push_back(p);
  }
  out.push_back(&norm_gamma);
  out.push_back(&norm_beta);
  return out;
}

template <typename Scalar>
DecoderParams<Scalar>::DecoderParams(const ModelConfig& c)
    : heads(c.heads_dec),
      grid(c.grid),
      embed_weight(make_param<Scalar>("decoder.embed.weight", {c.d_enc, c.d_dec}, true)),
      embed_bias(make_param<Scalar>("decoder.embed.bias", {c.d_dec}, false)),
      mask_token(make_param<Scalar>("decoder.mask_token", {c.d_dec}, false)),
      norm_gamma(make_param<Scalar>("decoder.norm.gamma", {c.d_dec}, false)),
      norm_beta(make_param<Scalar>("decoder.norm.beta", {c.d_dec}, false)),
      out_weight(make_param<Scalar>("decoder.out.weight", {c.d_dec, kCubeDim}, true)),
      out_bias(make_param<Scalar>("decoder.out.bias", {kCubeDim}, false)),
      pos_table(sincos_pos_table<Scalar>(c.grid, c.d_dec)) {
  c.validate();
  blocks.reserve(static_cast<std::size_t>(c.depth_dec));
  for (Index i = 0; i < c.depth_dec; ++i) blocks.emplace_back("decoder.blocks." + std::to_string(i), c.d_dec, c.mlp_ratio);
}

template <typename Scalar>
std::vector<Param<Scalar>*> DecoderParams<Scalar>::parameters() {
  std::vector<Param<Scalar>*> out{&embed_weight, &embed_bias, &mask_token};
  for (auto& b : blocks) {
    for (auto* p : b.parameters()) out.push_back(p);
  }
  for (auto* p : {&norm_gamma, &norm_beta, &out_weight, &out_bias}) out.push_back(p);
  return out;
}

template <typename Scalar>
ClassifierHead<Scalar>::ClassifierHead(Index width, Index num_classes)
    : norm_gamma(make_param<Scalar>("head.norm.gamma", {width}, false)),
      norm_beta(make_param<Scalar>("head.norm.beta", {width}, false)),
      weight(make_param<Scalar>("head.weight", {width, num_classes}, true)),
      bias(make_param<Scalar>("head.bias", {num_classes}, false)) {
  if (num_classes < 2) throw ConfigError("classifier head needs at least 2 classes");
}

template <typename Scalar>
std::vector<Param<Scalar>*> ClassifierHead<Scalar>::parameters() {
  return {&norm_gamma, &norm_beta, &weight, &bias};
}

template <typename Scalar>
std::vector<Param<Scalar>*> MAEParams<Scalar>::parameters() {
  auto out = encoder.parameters();
  for (auto* p : decoder.parameters()) out.push_back(p);
  return out;
}

template <typename Scalar>
std::vector<Param<Scalar>*> ClassifierParams<Scalar>::parameters() {
  auto out = encoder.parameters();
  for (auto* p : head.parameters()) out.push_back(p);
  return out;
}

template <typename Scalar>
void init_params(std::span<Param<Scalar>* const> params, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto trunc_normal = [&] {
    double z;
    do {
      z = normal(rng);
    } while (std::abs(z) > 2.0);
    return static_cast<Scalar>(0.02 * z);
  };
  for (auto* p : params) {
    auto& d = p->value.data();
    if (ends_with(p->name, ".gamma")) {
      d.setOnes();
    } else if (ends_with(p->name, ".beta") || ends_with(p->name, ".bias")) {
      d.setZero();
    } else {
      for (Index i = 0; i < d.size(); ++i) d[i] = trunc_normal();
    }
    p->zero_grad();
  }
}

template <typename To, typename From>
void assign_values(std::span<Param<To>* const> dst, std::span<Param<From>* const> src) {
  if (dst.size() != src.size()) throw DimensionError("assign_values: parameter counts differ");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    if (dst[i]->name != src[i]->name || dst[i]->value.shape() != src[i]->value.shape()) {
      throw DimensionError("assign_values: " + dst[i]->name + " " + shape_string(dst[i]->value.shape()) + " vs " +
                           src[i]->name + " " + shape_string(src[i]->value.shape()));
    }
    dst[i]->value.data() = src[i]->value.data().template cast<To>();
  }
}

template <typename Scalar>
Matrix<Scalar> sincos_pos_table(const GridDims& dims, Index width) {
  const Index wt = 2 * static_cast<Index>(std::lround(static_cast<double>(width) / 8.0));
  const Index wh = 2 * static_cast<Index>(std::lround(3.0 * static_cast<double>(width) / 16.0));
  const Index ww = width - wt - wh;
  if (wt < 0 || wh < 0 || ww < 0 || width < 1) throw ConfigError("positional table: width " + std::to_string(width) + " too small");
  Matrix<Scalar> table = Matrix<Scalar>::Zero(dims.tokens(), width);
  const auto band = [&](Index row, Index offset, Index band_width, Index pos) {
    const Index half = band_width / 2;
    for (Index i = 0; i < half; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(half));
      table(row, offset + 2 * i) = static_cast<Scalar>(std::sin(static_cast<double>(pos) * freq));
      table(row, offset + 2 * i + 1) = static_cast<Scalar>(std::cos(static_cast<double>(pos) * freq));
    }
  };
  for (Index t = 0; t < dims.frames; ++t) {
    for (Index h = 0; h < dims.height; ++h) {
      for (Index w = 0; w < dims.width; ++w) {
        const Index row = (t * dims.height + h) * dims.width + w;
        band(row, 0, wt, t);
        band(row, wt, wh, h);
        band(row, wt + wh, ww, w);
      }
    }
  }
  return table;
}

template <typename Scalar>
Var<Scalar> cube_embed(Tape<Scalar>& tape, const Matrix<Scalar>& cubes, EncoderParams<Scalar>& params) {
  if (cubes.cols() != params.embed_weight.value.shape()[0]) {
    throw DimensionError("cube_embed: cube width " + std::to_string(cubes.cols()) + " vs embedding input " +
                         std::to_string(params.embed_weight.value.shape()[0]));
  }
  return linear(tape.constant(cubes), tape.param(params.embed_weight), tape.param(params.embed_bias));
}

template <typename Scalar>
Var<Scalar> attention_block(const Var<Scalar>& x, BlockParams<Scalar>& p, Index heads,
                            std::vector<Matrix<Scalar>>* weights) {
  auto& tape = x.tape();
  const auto eps = static_cast<Scalar>(kLayerNormEps);
  Var<Scalar> h = layer_norm(x, tape.param(p.norm1_gamma), tape.param(p.norm1_beta), eps);
  Var<Scalar> qkv = linear(h, tape.param(p.qkv_weight), tape.param(p.qkv_bias));
  if (weights != nullptr) *weights = attention_weights<Scalar>(qkv.value(), heads);
  h = linear(attention(qkv, heads), tape.param(p.proj_weight), tape.param(p.proj_bias));
  Var<Scalar> y = add(x, h);
  h = layer_norm(y, tape.param(p.norm2_gamma), tape.param(p.norm2_beta), eps);
  h = gelu(linear(h, tape.param(p.fc1_weight), tape.param(p.fc1_bias)));
  h = linear(h, tape.param(p.fc2_weight), tape.param(p.fc2_bias));
  return add(y, h);
}

template <typename Scalar>
Var<Scalar> encode(const Var<Scalar>& tokens, EncoderParams<Scalar>& params) {
  if (tokens.rows() < 1) throw ContractError("encode: empty visible set");
  auto& tape = tokens.tape();
  Var<Scalar> x = tokens;
  for (auto& b : params.blocks) x = attention_block(x, b, params.heads);
  return layer_norm(x, tape.param(params.norm_gamma), tape.param(params.norm_beta), static_cast<Scalar>(kLayerNormEps));
}

template <typename Scalar>
Var<Scalar> encode_visible(Tape<Scalar>& tape, const Matrix<Scalar>& cubes, std::span<const Index> visible,
                           EncoderParams<Scalar>& params) {
  if (visible.empty()) throw ContractError("encode: empty visible set");
  if (cubes.rows() != params.pos_table.rows()) {
    throw DimensionError("encode: " + std::to_string(cubes.rows()) + " cubes vs grid " + to_string(params.grid));
  }
  Matrix<Scalar> rows(static_cast<Index>(visible.size()), cubes.cols());
  Matrix<Scalar> pos(static_cast<Index>(visible.size()), params.pos_table.cols());
  for (std::size_t i = 0; i < visible.size(); ++i) {
    rows.row(static_cast<Index>(i)) = cubes.row(visible[i]);
    pos.row(static_cast<Index>(i)) = params.pos_table.row(visible[i]);
  }
  // Embedding is per-row, so embedding the gathered rows equals gathering
  // the embedded grid.
  Var<Scalar> x = add_pos_embed(cube_embed(tape, rows, params), pos);
  return encode(x, params);
}

template <typename Scalar>
Var<Scalar> decode(const Var<Scalar>& encoded, const MaskMap& mask, DecoderParams<Scalar>& params) {
  auto& tape = encoded.tape();
  if (mask.tokens() != params.pos_table.rows()) {
    throw DimensionError("decode: mask over " + std::to_string(mask.tokens()) + " tokens vs grid " + to_string(params.grid));
  }
  const std::vector<Index> visible = mask.visible_indices();
  if (static_cast<Index>(visible.size()) != encoded.rows()) {
    throw DimensionError("decode: " + std::to_string(encoded.rows()) + " encoded tokens vs " +
                         std::to_string(visible.size()) + " visible positions");
  }
  Var<Scalar> x = linear(encoded, tape.param(params.embed_weight), tape.param(params.embed_bias));
  x = scatter_rows(x, std::span<const Index>(visible), mask.tokens(), tape.param(params.mask_token));
  x = add_pos_embed(x, params.pos_table);
  for (auto& b : params.blocks) x = attention_block(x, b, params.heads);
  x = layer_norm(x, tape.param(params.norm_gamma), tape.param(params.norm_beta), static_cast<Scalar>(kLayerNormEps));
  return linear(x, tape.param(params.out_weight), tape.param(params.out_bias));
}

template <typename Scalar>
MAEOutput<Scalar> mae_forward(Tape<Scalar>& tape, const VideoClip& clip, const MaskMap& mask, MAEParams<Scalar>& params) {
  const CubeGrid grid = cubify(clip);
  if (!(grid.dims == params.config.grid)) {
    throw DimensionError("mae_forward: clip grid " + to_string(grid.dims) + " vs model grid " + to_string(params.config.grid));
  }
  if (mask.slices != grid.dims.frames || mask.sites != grid.dims.sites()) {
    throw DimensionError("mae_forward: mask " + std::to_string(mask.slices) + "x" + std::to_string(mask.sites) +
                         " vs grid " + to_string(grid.dims));
  }
  const Matrix<Scalar> cubes = grid.tokens.cast<Scalar>();
  const std::vector<Index> visible = mask.visible_indices();
  MAEOutput<Scalar> out;
  Var<Scalar> encoded = encode_visible(tape, cubes, std::span<const Index>(visible), params.encoder);
  out.encoder_tokens = encoded.rows();
  out.predictions = decode(encoded, mask, params.decoder);
  out.masked = mask.masked_indices();
  out.targets = normalize_cube_targets(grid);
  return out;
}

template <typename Scalar>
Var<Scalar> pooled_features(Tape<Scalar>& tape, const Matrix<Scalar>& cubes, EncoderParams<Scalar>& params) {
  if (cubes.rows() != params.pos_table.rows()) {
    throw DimensionError("classify: " + std::to_string(cubes.rows()) + " cubes vs grid " + to_string(params.grid));
  }
  Var<Scalar> x = add_pos_embed(cube_embed(tape, cubes, params), params.pos_table);
  return mean_rows(encode(x, params));
}

template <typename Scalar>
Var<Scalar> head_forward(const Var<Scalar>& pooled, ClassifierHead<Scalar>& head) {
  auto& tape = pooled.tape();
  Var<Scalar> h = layer_norm(pooled, tape.param(head.norm_gamma), tape.param(head.norm_beta),
                             static_cast<Scalar>(kLayerNormEps));
  return linear(h, tape.param(head.weight), tape.param(head.bias));
}

template <typename Scalar>
Var<Scalar> classify(Tape<Scalar>& tape, const VideoClip& clip, ClassifierParams<Scalar>& params) {
  const CubeGrid grid = cubify(clip);
  if (!(grid.dims == params.config.grid)) {
    throw DimensionError("classify: clip grid " + to_string(grid.dims) + " vs model grid " + to_string(params.config.grid));
  }
  return head_forward(pooled_features(tape, grid.tokens.cast<Scalar>().eval(), params.encoder), params.head);
}

Index layer_id(const std::string& name, Index depth_enc) {
  const std::string blocks = "encoder.blocks.";
  if (name.rfind("encoder.embed.", 0) == 0) return 0;
  if (name.rfind(blocks, 0) == 0) {
    return std::stoll(name.substr(blocks.size(), name.find('.', blocks.size()) - blocks.size())) + 1;
  }
  return depth_enc + 1;
}

Index decoder_activation_count(const ModelConfig& c) {
  const Index n = c.grid.tokens();
  const Index per_block = n * c.d_dec * (10 + 2 * c.mlp_ratio) + c.heads_dec * n * n;
  return c.depth_dec * per_block;
}

#define VMAE_INSTANTIATE(S)                                                                                    \
  template struct BlockParams<S>;                                                                              \
  template struct EncoderParams<S>;                                                                            \
  template struct DecoderParams<S>;                                                                            \
  template struct ClassifierHead<S>;                                                                           \
  template struct MAEParams<S>;                                                                                \
  template struct ClassifierParams<S>;                                                                         \
  template void init_params<S>(std::span<Param<S>* const>, std::uint64_t);                                     \
  template Matrix<S> sincos_pos_table<S>(const GridDims&, Index);                                              \
  template Var<S> cube_embed<S>(Tape<S>&, const Matrix<S>&, EncoderParams<S>&);                                \
  template Var<S> attention_block<S>(const Var<S>&, BlockParams<S>&, Index, std::vector<Matrix<S>>*);          \
  template Var<S> encode<S>(const Var<S>&, EncoderParams<S>&);                                                 \
  template Var<S> encode_visible<S>(Tape<S>&, const Matrix<S>&, std::span<const Index>, EncoderParams<S>&);    \
  template Var<S> decode<S>(const Var<S>&, const MaskMap&, DecoderParams<S>&);                                 \
  template MAEOutput<S> mae_forward<S>(Tape<S>&, const VideoClip&, const MaskMap&, MAEParams<S>&);             \
  template Var<S> pooled_features<S>(Tape<S>&, const Matrix<S>&, EncoderParams<S>&);                           \
  template Var<S> head_forward<S>(const Var<S>&, ClassifierHead<S>&);                                          \
  template Var<S> classify<S>(Tape<S>&, const VideoClip&, ClassifierParams<S>&);

VMAE_INSTANTIATE(float)
VMAE_INSTANTIATE(double)
#undef VMAE_INSTANTIATE

template void assign_values<double, float>(std::span<Param<double>* const>, std::span<Param<float>* const>);
template void assign_values<float, double>(std::span<Param<float>* const>, std::span<Param<double>* const>);
template void assign_values<float, float>(std::span<Param<float>* const>, std::span<Param<float>* const>);
template void assign_values<double, double>(std::span<Param<double>* const>, std::span<Param<double>* const>);

}  // namespace vmae
