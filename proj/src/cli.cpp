#include "vmae/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>
#include <utility>

#include "vmae/experiments.hpp"
#include "vmae/image.hpp"
#include "vmae/training.hpp"

namespace vmae {

Config resolve_config(const CommandConfig& command) {
  Config config = Config::defaults();
  if (!command.config_file.empty()) config.load_file(command.config_file);
  for (const auto& kv : command.overrides) config.apply(kv);
  if (command.seed) config.set("seed", std::to_string(*command.seed));
  return config;
}

std::vector<VideoClip> pretrain_clips(const Config& config) {
  const std::string& source = config.get("data.source");
  if (source == "synthetic") return labeled_split(config, "train").clips;
  if (source != "raw") throw ConfigError("data.source: expected synthetic or raw, got '" + source + "'");
  const std::string& path = config.get("data.raw_path");
  if (path.empty()) throw ConfigError("data.raw_path is required when data.source=raw");
  const RawVideo video = read_raw_video(path);
  const Index frames = config.get_int("data.frames");
  const int stride = static_cast<int>(config.get_int("data.stride"));
  std::mt19937_64 rng(derive_seed(config.seed(), 3));
  std::vector<VideoClip> clips;
  for (Index i = 0; i < config.get_int("data.train_count"); ++i) {
    clips.push_back(sample_clip(video, SamplingMode::dense, stride, frames, rng));
  }
  return clips;
}

SpriteDataset labeled_split(const Config& config, const std::string& split) {
  if (config.get("data.source") != "synthetic") throw ConfigError("labeled data requires data.source=synthetic");
  const std::string& kind = config.get("data.kind");
  const SpriteConfig sc = config.data(split);
  if (kind == "sprites") return synth_moving_sprites(sc);
  if (kind == "textures") return synth_static_textures(sc);
  throw ConfigError("data.kind: expected sprites or textures, got '" + kind + "'");
}

ReconstructResult reconstruct(const Checkpoint& checkpoint, const VideoClip& clip, MaskStrategy strategy, double ratio,
                              std::uint64_t mask_seed, const std::filesystem::path& out_dir) {
  const ModelConfig model = checkpoint_model_config(checkpoint);
  if (!(clip.grid() == model.grid)) {
    throw ConfigError("reconstruct: clip grid " + to_string(clip.grid()) + " does not match checkpoint grid " +
                      to_string(model.grid));
  }
  MAEParams<float> mae(model);
  load_params(checkpoint, mae.parameters());
  const MaskMap mask = make_mask(strategy, model.grid, ratio, mask_seed);

  Tape<float> tape;
  const MAEOutput<float> out = mae_forward(tape, clip, mask, mae);
  const CubeGrid original = cubify(clip);
  CubeGrid masked_view = original;
  CubeGrid recon = original;
  double abs_err = 0;
  for (Index row : out.masked) {
    masked_view.tokens.row(row).setConstant(0.5f);
    recon.tokens.row(row) = out.targets.denormalize(row, out.predictions.value().row(row));
    abs_err += (recon.tokens.row(row) - original.tokens.row(row)).cwiseAbs().sum();
  }

  ReconstructResult result;
  result.masked_tokens = static_cast<Index>(out.masked.size());
  if (!out.masked.empty()) result.masked_mae = abs_err / static_cast<double>(out.masked.size() * kCubeDim);
  std::filesystem::create_directories(out_dir);
  const VideoClip masked_clip = decubify(masked_view);
  const VideoClip recon_clip = decubify(recon);
  for (Index t = 0; t < clip.frames(); ++t) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "%03ld", static_cast<long>(t));
    const std::pair<const char*, const VideoClip*> views[] = {
        {"_original.ppm", &clip}, {"_masked.ppm", &masked_clip}, {"_recon.ppm", &recon_clip}};
    for (const auto& [suffix, source] : views) {
      const auto path = out_dir / (std::string(stem) + suffix);
      write_ppm(path, frame_image(source->pixels, t));
      result.files.push_back(path);
    }
  }
  return result;
}

MaskMap maskviz(const GridDims& dims, double ratio, MaskStrategy strategy, std::uint64_t seed,
                const std::filesystem::path& out_dir) {
  MaskMap mask = make_mask(strategy, dims, ratio, seed);
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream txt(out_dir / "mask.txt", std::ios::trunc);
    if (!txt) throw ConfigError("cannot write " + (out_dir / "mask.txt").string());
    txt << mask_text(mask, dims.height, dims.width);
  }
  write_ppm(out_dir / "mask.ppm", mask_image(mask, dims.height, dims.width));
  return mask;
}

GradCheckReport model_gradcheck(const ModelConfig& model, const SpriteConfig& data, double mask_ratio,
                                MaskStrategy strategy, std::uint64_t seed, Index entries_per_param) {
  SpriteConfig one = data;
  one.count = 1;
  const SpriteDataset ds = synth_moving_sprites(one);
  const VideoClip& clip = ds.clips.front();
  const int label = ds.labels.front();
  const MaskMap mask = make_mask(strategy, model.grid, mask_ratio, derive_seed(seed, 1));

  MAEParams<double> mae(model);
  init_params<double>(mae.parameters(), derive_seed(seed, 2));
  perturb_params(mae.parameters(), 0.1, derive_seed(seed, 5));
  ClassifierParams<double> clf(model);
  init_params<double>(clf.parameters(), derive_seed(seed, 3));
  perturb_params(clf.parameters(), 0.1, derive_seed(seed, 6));

  GradCheckOptions options;
  options.max_entries_per_param = entries_per_param;
  options.sample_seed = derive_seed(seed, 4);
  const auto mae_params = mae.parameters();
  const GradCheckReport a = finite_diff_check(
      [&](Tape<double>& tape) {
        const MAEOutput<double> out = mae_forward(tape, clip, mask, mae);
        return masked_mse_loss(out.predictions, out.targets, mask);
      },
      mae_params, options);
  const auto clf_params = clf.parameters();
  GradCheckReport b = finite_diff_check(
      [&](Tape<double>& tape) { return cross_entropy(classify(tape, clip, clf), std::span<const int>(&label, 1)); },
      clf_params, options);
  // Both models own encoder.* tensors; tag the classifier's to keep names unique.
  for (auto& p : b.params) p.name = "classifier:" + p.name;
  b.worst.name = "classifier:" + b.worst.name;
  GradCheckReport merged = a.max_relative_error >= b.max_relative_error ? a : b;
  merged.entries_checked = a.entries_checked + b.entries_checked;
  merged.params = a.params;
  merged.params.insert(merged.params.end(), b.params.begin(), b.params.end());
  return merged;
}

namespace {

struct Logger {
  std::ostream& out;
  void event(const std::string& name, const KeyValues& fields) const {
    out << "event=" << name;
    for (const auto& [k, v] : fields) out << " " << k << "=" << v;
    out << "\n";
    out.flush();
  }
};

std::filesystem::path output_dir(const CommandConfig& command) {
  if (const char* env = std::getenv("ARTIFACT_OUT"); env != nullptr && *env != '\0') return env;
  return command.out_dir;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

void write_snapshot(const std::filesystem::path& dir, const Config& config) {
  std::filesystem::create_directories(dir);
  write_text(dir / "config.resolved", config.snapshot());
}

std::string loss_csv(const std::vector<LossRecord>& trace) {
  std::string csv = "step,lr,loss\n";
  for (const auto& r : trace) csv += std::to_string(r.step) + "," + format_double(r.lr) + "," + format_double(r.loss) + "\n";
  return csv;
}

StepCallback step_logger(const Logger& log, std::int64_t every, std::int64_t total) {
  return [&log, every, total](const LossRecord& r) {
    if (every > 0 && (r.step % every == 0 || r.step + 1 == total)) {
      log.event("step", {{"step", std::to_string(r.step)}, {"lr", format_double(r.lr)}, {"loss", format_double(r.loss)}});
    }
  };
}

GridDims parse_dims(const std::string& text) {
  ValueMap v{{"model.grid", text}};
  return model_config_from(v).grid;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> items;
  std::size_t begin = 0;
  while (begin <= text.size()) {
    const auto comma = text.find(',', begin);
    const std::string item = text.substr(begin, comma == std::string::npos ? std::string::npos : comma - begin);
    if (!item.empty()) items.push_back(item);
    if (comma == std::string::npos) break;
    begin = comma + 1;
  }
  return items;
}

int cmd_pretrain(const CommandConfig& command, const Config& config, const Logger& log) {
  const auto dir = output_dir(command);
  write_snapshot(dir, config);
  const TrainConfig cfg = config.train(TrainMode::pretrain);
  const std::vector<VideoClip> clips = pretrain_clips(config);
  MAEParams<float> mae = make_mae(config.model(), derive_seed(config.seed(), 4));
  Pretrainer trainer(cfg, clips, mae);
  if (!command.checkpoint.empty()) {
    trainer.restore(load_checkpoint(command.checkpoint));
    log.event("resume", {{"step", std::to_string(trainer.step())}, {"checkpoint", command.checkpoint.string()}});
  }
  log.event("pretrain_start", {{"clips", std::to_string(clips.size())},
                               {"steps", std::to_string(trainer.total_steps())},
                               {"encoder_tokens", std::to_string(trainer.encoder_tokens())}});
  std::vector<LossRecord> trace;
  const auto every = config.get_int("log.every");
  const auto log_step = step_logger(log, every, trainer.total_steps());
  try {
    trace = trainer.run_all([&](const LossRecord& r) { log_step(r); });
  } catch (const TrainingAborted& e) {
    save_checkpoint(e.last_good(), dir / "last_good.ckpt");
    log.event("abort", {{"reason", "non_finite"}, {"checkpoint", (dir / "last_good.ckpt").string()}});
    throw;
  }
  save_checkpoint(trainer.checkpoint(), dir / "pretrain.ckpt");
  write_text(dir / "loss.csv", loss_csv(trace));
  log.event("pretrain_done", {{"step", std::to_string(trainer.step())},
                              {"final_loss", trace.empty() ? "" : format_double(trace.back().loss)},
                              {"checkpoint", (dir / "pretrain.ckpt").string()}});
  return kExitOk;
}

int cmd_classifier(const CommandConfig& command, const Config& config, const Logger& log, TrainMode mode) {
  const auto dir = output_dir(command);
  write_snapshot(dir, config);
  const TrainConfig cfg = config.train(mode);
  const SpriteDataset train = labeled_split(config, "train");
  const SpriteDataset test = labeled_split(config, "test");
  const std::uint64_t head_seed = derive_seed(config.seed(), 5);
  ClassifierParams<float> model = [&] {
    if (!command.checkpoint.empty()) {
      ClassifierParams<float> m = classifier_from_checkpoint(load_checkpoint(command.checkpoint), head_seed);
      if (!(m.config.grid == config.model().grid)) {
        throw ConfigError("checkpoint grid " + to_string(m.config.grid) + " does not match data grid " +
                          to_string(config.model().grid));
      }
      return m;
    }
    if (mode == TrainMode::probe) throw ConfigError("probe requires --checkpoint");
    return make_classifier(config.model(), head_seed);
  }();
  const auto steps = total_steps(cfg, static_cast<std::int64_t>(train.size()));
  log.event(to_string(mode) + "_start",
            {{"train", std::to_string(train.size())}, {"test", std::to_string(test.size())}, {"steps", std::to_string(steps)}});
  const auto log_step = step_logger(log, config.get_int("log.every"), steps);
  const ClassifierResult result = mode == TrainMode::probe ? linear_probe(model, train, test, cfg, log_step)
                                                           : finetune(model, train, test, cfg, log_step);
  save_checkpoint(classifier_checkpoint(model), dir / (to_string(mode) + ".ckpt"));
  write_text(dir / "loss.csv", loss_csv(result.trace));
  write_text(dir / "metrics.txt", "accuracy=" + format_double(result.accuracy) + "\n");
  log.event(to_string(mode) + "_done", {{"accuracy", format_double(result.accuracy)}});
  return kExitOk;
}

int cmd_reconstruct(const CommandConfig& command, const Config& config, const Logger& log) {
  if (command.checkpoint.empty()) throw ConfigError("reconstruct requires --checkpoint");
  const auto dir = output_dir(command);
  write_snapshot(dir, config);
  const Checkpoint ckpt = load_checkpoint(command.checkpoint);
  VideoClip clip;
  if (config.get("data.source") == "raw") {
    const RawVideo video = read_raw_video(config.get("data.raw_path"));
    clip = sample_clip_at(video, static_cast<int>(config.get_int("data.stride")), config.get_int("data.frames"), 0);
  } else {
    const SpriteDataset ds = labeled_split(config, "train");
    if (command.clip_index < 0 || static_cast<std::size_t>(command.clip_index) >= ds.size()) {
      throw ConfigError("--clip " + std::to_string(command.clip_index) + " outside the " + std::to_string(ds.size()) +
                        " training clips");
    }
    clip = ds.clips[static_cast<std::size_t>(command.clip_index)];
  }
  const ReconstructResult r = reconstruct(ckpt, clip, parse_mask_strategy(config.get("mask.strategy")),
                                          config.get_double("mask.ratio"), derive_seed(config.seed(), 6), dir);
  log.event("reconstruct_done", {{"files", std::to_string(r.files.size())},
                                 {"masked_tokens", std::to_string(r.masked_tokens)},
                                 {"masked_mae", format_double(r.masked_mae)}});
  return kExitOk;
}

int cmd_maskviz(const CommandConfig& command, const Config& config, const Logger& log) {
  const auto dir = output_dir(command);
  write_snapshot(dir, config);
  const GridDims dims = command.dims.empty() ? config.model().grid : parse_dims(command.dims);
  const MaskMap mask = maskviz(dims, config.get_double("mask.ratio"), parse_mask_strategy(config.get("mask.strategy")),
                               config.seed(), dir);
  log.event("maskviz_done", {{"grid", to_string(dims)},
                             {"masked", std::to_string(mask.masked_count())},
                             {"visible", std::to_string(mask.visible_count())},
                             {"leakage", format_double(leakage_probe(mask))}});
  return kExitOk;
}

int cmd_gradcheck(const CommandConfig& command, const Config& config, const Logger& log) {
  const auto dir = output_dir(command);
  write_snapshot(dir, config);
  const GradCheckReport r = model_gradcheck(config.model(), config.data("train"), config.get_double("mask.ratio"),
                                            parse_mask_strategy(config.get("mask.strategy")), config.seed(),
                                            config.get_int("gradcheck.entries"));
  const double tolerance = config.get_double("gradcheck.tolerance");
  const bool ok = r.max_relative_error < tolerance;
  std::ostringstream table;
  table << "param,entries,analytic_norm,numeric_norm,relative_error\n";
  for (const auto& p : r.params) {
    table << p.name << ',' << p.entries << ',' << format_double(p.analytic_norm) << ','
          << format_double(p.numeric_norm) << ',' << format_double(p.relative_error) << '\n';
  }
  write_text(dir / "gradcheck.csv", table.str());
  log.event("gradcheck", {{"max_relative_error", format_double(r.max_relative_error)},
                          {"worst", r.worst.name},
                          {"entries", std::to_string(r.entries_checked)},
                          {"tolerance", format_double(tolerance)},
                          {"pass", ok ? "true" : "false"}});
  if (!ok) throw NumericError("gradcheck: max relative error " + format_double(r.max_relative_error) + " >= " + format_double(tolerance));
  return kExitOk;
}

}  // namespace

AblationSpec ablation_spec(const Config& config) {
  AblationSpec spec;
  spec.axis = parse_ablation_axis(config.get("ablate.axis"));
  spec.values = split_list(config.get("ablate.values"));
  for (const auto& s : split_list(config.get("ablate.seeds"))) {
    spec.seeds.push_back(static_cast<std::uint64_t>(parse_int(s, "ablate.seeds")));
  }
  spec.model = config.model();
  spec.pretrain = config.train(TrainMode::pretrain);
  spec.finetune = config.train(TrainMode::finetune);
  if (config.get("data.source") != "synthetic" || config.get("data.kind") != "sprites") {
    throw ConfigError("ablate runs on data.source=synthetic data.kind=sprites");
  }
  spec.train_data = config.data("train");
  spec.test_data = config.data("test");
  spec.pretrain_steps = config.get_int("ablate.pretrain_steps");
  spec.finetune_steps = config.get_int("ablate.finetune_steps");
  spec.regime = parse_regime(config.get("ablate.regime"));
  spec.workers = static_cast<int>(config.get_int("ablate.workers"));
  spec.validate();
  return spec;
}

namespace {

int cmd_ablate(const CommandConfig& command, const Config& config, const Logger& log) {
  const auto dir = output_dir(command);
  write_snapshot(dir, config);
  const AblationSpec spec = ablation_spec(config);
  const auto csv = dir / "report.csv";
  const AblationReport report = run_ablation(spec, [&](const CellResult& c) {
    write_report_csv(csv, {c});
    log.event("cell", {{"axis", c.axis},
                       {"value", c.value},
                       {"seed", std::to_string(c.seed)},
                       {"accuracy", format_double(c.accuracy)},
                       {"visible_tokens", std::to_string(c.visible_tokens)},
                       {"wall_seconds", format_double(c.wall_seconds)}});
  });
  write_text(dir / "report.txt", format_report(report));
  log.out << format_report(report);
  log.event("ablate_done", {{"cells", std::to_string(report.cells.size())}, {"report", csv.string()}});
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Masked video autoencoder: pre-training, fine-tuning and ablations"};
  app.require_subcommand(1);
  CommandConfig command;
  std::string seed_text;
  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", command.config_file, "key=value config file");
    sub->add_option("--seed", seed_text, "overrides the seed key");
    sub->add_option("--out", command.out_dir, "output directory (ARTIFACT_OUT takes precedence)");
    sub->add_option("overrides", command.overrides, "key=value overrides");
  };
  const std::pair<const char*, const char*> subcommands[] = {
      {"pretrain", "masked-autoencoding pre-training"},
      {"finetune", "train encoder and head on labeled clips"},
      {"probe", "train a linear head on a frozen encoder"},
      {"reconstruct", "write original, masked and reconstructed frames"},
      {"maskviz", "draw one mask as text and PPM"},
      {"gradcheck", "finite-difference check of the model gradients"},
      {"ablate", "run an ablation grid and write report.csv"}};
  for (const auto& [name, about] : subcommands) {
    CLI::App* sub = app.add_subcommand(name, about);
    common(sub);
    const std::string n = name;
    if (n == "pretrain") sub->add_option("--checkpoint", command.checkpoint, "resume from this checkpoint");
    if (n == "finetune" || n == "probe") sub->add_option("--checkpoint", command.checkpoint, "pre-trained checkpoint");
    if (n == "reconstruct") {
      sub->add_option("--checkpoint", command.checkpoint, "pre-trained checkpoint")->required();
      sub->add_option("--clip", command.clip_index, "training clip index");
    }
    if (n == "maskviz") sub->add_option("--dims", command.dims, "token grid TxHxW (default: from data.*)");
  }

  const Logger log{out};
  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      if (e.get_exit_code() == 0) {
        out << app.help();
        return kExitOk;
      }
      throw ConfigError(e.what());
    }
    command.subcommand = app.get_subcommands().front()->get_name();
    if (!seed_text.empty()) command.seed = static_cast<std::uint64_t>(parse_int(seed_text, "--seed"));
    const Config config = resolve_config(command);
    const std::string& sub = command.subcommand;
    if (sub == "pretrain") return cmd_pretrain(command, config, log);
    if (sub == "finetune") return cmd_classifier(command, config, log, TrainMode::finetune);
    if (sub == "probe") return cmd_classifier(command, config, log, TrainMode::probe);
    if (sub == "reconstruct") return cmd_reconstruct(command, config, log);
    if (sub == "maskviz") return cmd_maskviz(command, config, log);
    if (sub == "gradcheck") return cmd_gradcheck(command, config, log);
    return cmd_ablate(command, config, log);
  } catch (const NumericError& e) {
    log.event("error", {{"kind", "numeric"}});
    err << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    log.event("error", {{"kind", "config"}});
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}

}  // namespace vmae
