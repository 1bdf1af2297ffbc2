#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "vmae/checkpoint.hpp"
#include "vmae/model.hpp"
#include "vmae/train_config.hpp"
#include "vmae/video.hpp"

namespace vmae {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
double parse_double(const std::string& text, const std::string& key);
std::int64_t parse_int(const std::string& text, const std::string& key);
bool parse_bool(const std::string& text, const std::string& key);

using ValueMap = std::map<std::string, std::string>;

ValueMap to_value_map(const KeyValues& kv);

KeyValues model_config_values(const ModelConfig& config);
/// Reads model.* keys; missing keys keep the desk defaults.
ModelConfig model_config_from(const ValueMap& values);

KeyValues train_config_values(const TrainConfig& config, const std::string& prefix);
TrainConfig train_config_from(const ValueMap& values, const std::string& prefix, TrainConfig base);

/// Flat key=value run configuration. Only registered keys are accepted;
/// sections are dotted prefixes (model., data., mask., pretrain.,
/// finetune., probe., ablate.).
class Config {
 public:
  /// Every registered key at its desk-scale default.
  static Config defaults();

  void set(const std::string& key, const std::string& value);
  /// Parses one "key=value" assignment.
  void apply(const std::string& assignment);
  /// Lines of key=value; '#' starts a comment line.
  void load_file(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const { return parse_double(get(key), key); }
  std::int64_t get_int(const std::string& key) const { return parse_int(get(key), key); }
  bool get_bool(const std::string& key) const { return parse_bool(get(key), key); }

  std::uint64_t seed() const;
  ModelConfig model() const;
  /// Section <mode>. plus mask.* and seed.
  TrainConfig train(TrainMode mode) const;
  /// Synthetic data settings for a split ("train" or "test").
  SpriteConfig data(const std::string& split) const;

  /// Sorted key=value lines.
  std::string snapshot() const;
  const ValueMap& values() const { return values_; }

 private:
  ValueMap values_;
};

}  // namespace vmae
