#include "vmae/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace vmae {

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw ConfigError("cannot format value");
  return std::string(buf, ptr);
}

double parse_double(const std::string& text, const std::string& key) {
  double v = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw ConfigError("key '" + key + "': expected a number, got '" + text + "'");
  }
  return v;
}

std::int64_t parse_int(const std::string& text, const std::string& key) {
  std::int64_t v = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (text.empty() || ec != std::errc() || ptr != end) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + text + "'");
  }
  return v;
}

bool parse_bool(const std::string& text, const std::string& key) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + text + "'");
}

ValueMap to_value_map(const KeyValues& kv) { return ValueMap(kv.begin(), kv.end()); }

KeyValues model_config_values(const ModelConfig& c) {
  return {
      {"model.d_enc", std::to_string(c.d_enc)},         {"model.depth_enc", std::to_string(c.depth_enc)},
      {"model.heads_enc", std::to_string(c.heads_enc)}, {"model.d_dec", std::to_string(c.d_dec)},
      {"model.depth_dec", std::to_string(c.depth_dec)}, {"model.heads_dec", std::to_string(c.heads_dec)},
      {"model.mlp_ratio", std::to_string(c.mlp_ratio)}, {"model.num_classes", std::to_string(c.num_classes)},
      {"model.grid", to_string(c.grid)},
  };
}

namespace {

GridDims parse_grid(const std::string& text, const std::string& key) {
  GridDims g;
  const auto a = text.find('x');
  const auto b = text.find('x', a == std::string::npos ? a : a + 1);
  if (a == std::string::npos || b == std::string::npos) throw ConfigError("key '" + key + "': expected TxHxW, got '" + text + "'");
  g.frames = parse_int(text.substr(0, a), key);
  g.height = parse_int(text.substr(a + 1, b - a - 1), key);
  g.width = parse_int(text.substr(b + 1), key);
  return g;
}

template <typename F>
void read_if(const ValueMap& values, const std::string& key, F&& assign) {
  if (auto it = values.find(key); it != values.end()) assign(it->second, key);
}

}  // namespace

ModelConfig model_config_from(const ValueMap& v) {
  ModelConfig c = ModelConfig::desk();
  const auto integer = [&](const char* name, Index& field) {
    read_if(v, std::string("model.") + name, [&](const std::string& s, const std::string& k) { field = parse_int(s, k); });
  };
  integer("d_enc", c.d_enc);
  integer("depth_enc", c.depth_enc);
  integer("heads_enc", c.heads_enc);
  integer("d_dec", c.d_dec);
  integer("depth_dec", c.depth_dec);
  integer("heads_dec", c.heads_dec);
  integer("mlp_ratio", c.mlp_ratio);
  integer("num_classes", c.num_classes);
  read_if(v, "model.grid", [&](const std::string& s, const std::string& k) { c.grid = parse_grid(s, k); });
  c.validate();
  return c;
}

KeyValues train_config_values(const TrainConfig& c, const std::string& p) {
  return {
      {p + "mode", to_string(c.mode)},
      {p + "optimizer", to_string(c.optimizer)},
      {p + "base_lr", format_double(c.base_lr)},
      {p + "batch_size", std::to_string(c.batch_size)},
      {p + "warmup_epochs", format_double(c.warmup_epochs)},
      {p + "epochs", format_double(c.total_epochs)},
      {p + "weight_decay", format_double(c.weight_decay)},
      {p + "beta1", format_double(c.beta1)},
      {p + "beta2", format_double(c.beta2)},
      {p + "eps", format_double(c.eps)},
      {p + "lr_floor", format_double(c.lr_floor)},
      {p + "mask_strategy", to_string(c.mask_strategy)},
      {p + "mask_ratio", format_double(c.mask_ratio)},
      {p + "seed", std::to_string(c.seed)},
      {p + "layer_decay", format_double(c.layer_decay)},
      {p + "encoder_lr_scale", format_double(c.encoder_lr_scale)},
      {p + "flip", c.flip ? "true" : "false"},
  };
}

TrainConfig train_config_from(const ValueMap& v, const std::string& p, TrainConfig c) {
  const auto real = [&](const char* name, double& field) {
    read_if(v, p + name, [&](const std::string& s, const std::string& k) { field = parse_double(s, k); });
  };
  read_if(v, p + "mode", [&](const std::string& s, const std::string&) { c.mode = parse_train_mode(s); });
  read_if(v, p + "optimizer", [&](const std::string& s, const std::string&) { c.optimizer = parse_optimizer(s); });
  real("base_lr", c.base_lr);
  read_if(v, p + "batch_size", [&](const std::string& s, const std::string& k) { c.batch_size = parse_int(s, k); });
  real("warmup_epochs", c.warmup_epochs);
  real("epochs", c.total_epochs);
  real("weight_decay", c.weight_decay);
  real("beta1", c.beta1);
  real("beta2", c.beta2);
  real("eps", c.eps);
  real("lr_floor", c.lr_floor);
  read_if(v, p + "mask_strategy", [&](const std::string& s, const std::string&) { c.mask_strategy = parse_mask_strategy(s); });
  real("mask_ratio", c.mask_ratio);
  read_if(v, p + "seed", [&](const std::string& s, const std::string& k) { c.seed = static_cast<std::uint64_t>(parse_int(s, k)); });
  real("layer_decay", c.layer_decay);
  real("encoder_lr_scale", c.encoder_lr_scale);
  read_if(v, p + "flip", [&](const std::string& s, const std::string& k) { c.flip = parse_bool(s, k); });
  c.validate();
  return c;
}

Config Config::defaults() {
  Config c;
  auto& v = c.values_;
  v["seed"] = "0";
  for (const auto& [k, val] : model_config_values(ModelConfig::desk())) {
    if (k != "model.grid") v[k] = val;
  }
  v["data.kind"] = "sprites";
  v["data.source"] = "synthetic";
  v["data.raw_path"] = "";
  v["data.frames"] = "16";
  v["data.height"] = "64";
  v["data.width"] = "64";
  v["data.stride"] = "2";
  v["data.sprite_size"] = "12";
  v["data.speed"] = "1";
  v["data.background"] = "0.1";
  v["data.temporal_noise"] = "0";
  v["data.train_count"] = "64";
  v["data.test_count"] = "64";
  v["mask.strategy"] = "tube";
  v["mask.ratio"] = "0.9";
  for (TrainMode mode : {TrainMode::pretrain, TrainMode::finetune, TrainMode::probe}) {
    const std::string prefix = to_string(mode) + ".";
    for (const auto& [k, val] : train_config_values(TrainConfig::defaults(mode), prefix)) {
      const std::string field = k.substr(prefix.size());
      // Masking and seed are shared keys; mode is implied by the section.
      if (field == "mode" || field == "mask_strategy" || field == "mask_ratio" || field == "seed" || field == "eps") continue;
      if (mode != TrainMode::pretrain && field == "flip") continue;
      if (mode == TrainMode::pretrain && (field == "layer_decay" || field == "encoder_lr_scale")) continue;
      if (mode == TrainMode::probe && (field == "layer_decay" || field == "encoder_lr_scale")) continue;
      v[k] = val;
    }
  }
  v["ablate.axis"] = "strategy";
  v["ablate.values"] = "tube,random,frame";
  v["ablate.seeds"] = "1,2,3";
  v["ablate.pretrain_steps"] = "2000";
  v["ablate.finetune_steps"] = "500";
  v["ablate.regime"] = "same-iterations";
  v["ablate.workers"] = "1";
  v["gradcheck.entries"] = "8";
  v["gradcheck.tolerance"] = "1e-4";
  v["log.every"] = "10";
  return c;
}

void Config::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  // Registered defaults fix each key's kind; reject values of another kind up front.
  const std::string& current = it->second;
  if (current == "true" || current == "false") {
    parse_bool(value, key);
  } else if (!current.empty() && current.find_first_not_of("0123456789.-+e") == std::string::npos) {
    parse_double(value, key);
  }
  it->second = value;
}

void Config::apply(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("expected key=value, got '" + assignment + "'");
  const auto trim = [](const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return std::string();
    return s.substr(first, s.find_last_not_of(" \t\r") - first + 1);
  };
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    apply(line.substr(first, last - first + 1));
  }
}

const std::string& Config::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key '" + key + "'");
  return it->second;
}

std::uint64_t Config::seed() const { return static_cast<std::uint64_t>(get_int("seed")); }

ModelConfig Config::model() const {
  ValueMap v = values_;
  v["model.grid"] = to_string(grid_for_clip(get_int("data.frames"), get_int("data.height"), get_int("data.width")));
  return model_config_from(v);
}

TrainConfig Config::train(TrainMode mode) const {
  TrainConfig c = train_config_from(values_, to_string(mode) + ".", TrainConfig::defaults(mode));
  c.mode = mode;
  c.mask_strategy = parse_mask_strategy(get("mask.strategy"));
  c.mask_ratio = get_double("mask.ratio");
  c.seed = seed();
  c.validate();
  return c;
}

SpriteConfig Config::data(const std::string& split) const {
  SpriteConfig s;
  std::uint64_t split_id = 0;
  if (split == "train") {
    split_id = 1;
    s.count = get_int("data.train_count");
  } else if (split == "test") {
    split_id = 2;
    s.count = get_int("data.test_count");
  } else {
    throw ConfigError("unknown data split '" + split + "'");
  }
  s.seed = derive_seed(seed(), split_id);
  s.frames = get_int("data.frames");
  s.height = get_int("data.height");
  s.width = get_int("data.width");
  s.stride = static_cast<int>(get_int("data.stride"));
  s.sprite_size = get_int("data.sprite_size");
  s.speed = get_double("data.speed");
  s.background = static_cast<float>(get_double("data.background"));
  s.temporal_noise = static_cast<float>(get_double("data.temporal_noise"));
  return s;
}

std::string Config::snapshot() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

}  // namespace vmae
