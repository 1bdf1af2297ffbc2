#include "vmae/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "vmae/config.hpp"
#include "vmae/training.hpp"

namespace vmae {

std::string to_string(AblationAxis axis) {
  switch (axis) {
    case AblationAxis::strategy: return "strategy";
    case AblationAxis::ratio: return "ratio";
    case AblationAxis::decoder_depth: return "decoder_depth";
    case AblationAxis::dataset_fraction: return "dataset_fraction";
  }
  return "?";
}

AblationAxis parse_ablation_axis(const std::string& name) {
  for (auto a : {AblationAxis::strategy, AblationAxis::ratio, AblationAxis::decoder_depth, AblationAxis::dataset_fraction}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown ablation axis '" + name + "'");
}

std::string to_string(Regime regime) { return regime == Regime::same_epochs ? "same-epochs" : "same-iterations"; }

Regime parse_regime(const std::string& name) {
  if (name == "same-epochs") return Regime::same_epochs;
  if (name == "same-iterations") return Regime::same_iterations;
  throw ConfigError("unknown regime '" + name + "'");
}

void AblationSpec::validate() const {
  if (values.empty()) throw ConfigError("ablation: no grid values");
  if (seeds.empty()) throw ConfigError("ablation: no seeds");
  if (pretrain_steps < 1 || finetune_steps < 1) throw ConfigError("ablation: step budgets must be positive");
  if (workers < 1) throw ConfigError("ablation: workers must be >= 1");
  model.validate();
  pretrain.validate();
  finetune.validate();
  for (const auto& v : values) {
    switch (axis) {
      case AblationAxis::strategy:
        if (v != "scratch") parse_mask_strategy(v);
        break;
      case AblationAxis::ratio: {
        const double r = parse_double(v, "ablate.values");
        if (!(r > 0 && r < 1)) throw ConfigError("ablation: ratio " + v + " outside (0,1)");
        break;
      }
      case AblationAxis::decoder_depth:
        if (parse_int(v, "ablate.values") < 1) throw ConfigError("ablation: decoder depth " + v + " < 1");
        break;
      case AblationAxis::dataset_fraction: {
        const double f = parse_double(v, "ablate.values");
        if (!(f > 0 && f <= 1)) throw ConfigError("ablation: dataset fraction " + v + " outside (0,1]");
        break;
      }
    }
  }
}

const ReportRow& AblationReport::row(const std::string& value) const {
  for (const auto& r : rows) {
    if (r.value == value) return r;
  }
  throw ContractError("report: no row for value '" + value + "'");
}

double mean_leakage(MaskStrategy strategy, const GridDims& grid, double ratio, int samples, std::uint64_t seed) {
  double total = 0;
  for (int i = 0; i < samples; ++i) {
    total += leakage_probe(make_mask(strategy, grid, ratio, derive_seed(seed, static_cast<std::uint64_t>(i))));
  }
  return total / samples;
}

std::int64_t fraction_pretrain_steps(const AblationSpec& spec, double fraction) {
  if (spec.regime == Regime::same_iterations) return spec.pretrain_steps;
  const auto full = static_cast<std::int64_t>(spec.train_data.count);
  const auto part = std::max<std::int64_t>(1, std::llround(fraction * static_cast<double>(full)));
  const double epochs = static_cast<double>(spec.pretrain_steps) / static_cast<double>(steps_per_epoch(full, spec.pretrain.batch_size));
  return std::max<std::int64_t>(1, std::llround(epochs * static_cast<double>(steps_per_epoch(part, spec.pretrain.batch_size))));
}

namespace {

// Budgets are given in steps; the schedule works in epochs.
TrainConfig with_step_budget(TrainConfig cfg, std::int64_t steps, std::size_t dataset_size) {
  cfg.total_epochs = static_cast<double>(steps) / static_cast<double>(steps_per_epoch(static_cast<std::int64_t>(dataset_size), cfg.batch_size));
  cfg.warmup_epochs = std::min(cfg.warmup_epochs, cfg.total_epochs / 2);
  return cfg;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

CellResult run_cell(const AblationSpec& spec, const std::string& value, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  CellResult cell;
  cell.axis = to_string(spec.axis);
  cell.value = value;
  cell.seed = seed;

  ModelConfig model = spec.model;
  TrainConfig pre = spec.pretrain;
  double fraction = 1.0;
  bool scratch = false;
  switch (spec.axis) {
    case AblationAxis::strategy:
      if (value == "scratch") {
        scratch = true;
      } else {
        pre.mask_strategy = parse_mask_strategy(value);
      }
      break;
    case AblationAxis::ratio:
      pre.mask_ratio = parse_double(value, "ablate.values");
      break;
    case AblationAxis::decoder_depth:
      model.depth_dec = parse_int(value, "ablate.values");
      break;
    case AblationAxis::dataset_fraction:
      fraction = parse_double(value, "ablate.values");
      break;
  }
  if (pre.mask_strategy == MaskStrategy::frame) pre.mask_ratio = nearest_frame_ratio(pre.mask_ratio, model.grid.frames);
  model.validate();
  cell.decoder_activations = decoder_activation_count(model);

  const SpriteDataset train = synth_moving_sprites(spec.train_data);
  const SpriteDataset test = synth_moving_sprites(spec.test_data);
  if (!(train.clips.front().grid() == model.grid)) {
    throw ConfigError("ablation: data grid " + to_string(train.clips.front().grid()) + " does not match model grid " +
                      to_string(model.grid));
  }

  MAEParams<float> mae = make_mae(model, derive_seed(seed, 11));
  if (scratch) {
    cell.visible_tokens = model.grid.tokens();
  } else {
    const auto part = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(train.size()))));
    const std::span<const VideoClip> clips(train.clips.data(), std::min(part, train.size()));
    const std::int64_t steps =
        spec.axis == AblationAxis::dataset_fraction ? fraction_pretrain_steps(spec, fraction) : spec.pretrain_steps;
    pre.seed = derive_seed(seed, 12);
    pre = with_step_budget(pre, steps, clips.size());
    const auto p0 = std::chrono::steady_clock::now();
    Pretrainer trainer(pre, clips, mae);
    const auto trace = trainer.run_all();
    cell.pretrain_wall_seconds = seconds_since(p0);
    cell.pretrain_steps = static_cast<std::int64_t>(trace.size());
    cell.pretrain_epochs = static_cast<double>(trace.size() * static_cast<std::size_t>(pre.batch_size)) / static_cast<double>(clips.size());
    cell.initial_pretrain_loss = trace.front().loss;
    cell.final_pretrain_loss = trace.back().loss;
    cell.visible_tokens = trainer.encoder_tokens();
    cell.leakage = mean_leakage(pre.mask_strategy, model.grid, pre.mask_ratio, 100, derive_seed(seed, 15));
  }

  ClassifierParams<float> clf(model);
  assign_values<float, float>(clf.encoder.parameters(), mae.encoder.parameters());
  init_params<float>(clf.head.parameters(), derive_seed(seed, 13));
  TrainConfig fine = spec.finetune;
  fine.seed = derive_seed(seed, 14);
  fine = with_step_budget(fine, spec.finetune_steps, train.size());
  cell.accuracy = finetune(clf, train, test, fine).accuracy;
  cell.wall_seconds = seconds_since(t0);
  return cell;
}

std::vector<ReportRow> summarize(const std::vector<CellResult>& cells, const std::vector<std::string>& values) {
  std::vector<ReportRow> rows;
  for (const auto& value : values) {
    ReportRow row;
    row.value = value;
    double loss_sum = 0;
    int loss_n = 0;
    for (const auto& c : cells) {
      if (c.value != value) continue;
      row.accuracies.push_back(c.accuracy);
      if (c.final_pretrain_loss) {
        loss_sum += *c.final_pretrain_loss;
        ++loss_n;
      }
      row.leakage = c.leakage;
      row.visible_tokens = c.visible_tokens;
      row.mean_wall_seconds += c.wall_seconds;
      row.mean_pretrain_wall_seconds += c.pretrain_wall_seconds;
      row.pretrain_epochs = c.pretrain_epochs;
      row.decoder_activations = c.decoder_activations;
    }
    const auto n = static_cast<double>(row.accuracies.size());
    if (n > 0) {
      row.mean = std::accumulate(row.accuracies.begin(), row.accuracies.end(), 0.0) / n;
      double ss = 0;
      for (double a : row.accuracies) ss += (a - row.mean) * (a - row.mean);
      row.std = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
      row.mean_wall_seconds /= n;
      row.mean_pretrain_wall_seconds /= n;
    }
    if (loss_n > 0) row.mean_final_loss = loss_sum / loss_n;
    rows.push_back(std::move(row));
  }
  return rows;
}

AblationReport run_ablation(const AblationSpec& spec, const CellCallback& on_cell) {
  spec.validate();
  struct Job {
    std::string value;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (const auto& v : spec.values) {
    for (auto s : spec.seeds) jobs.push_back({v, s});
  }
  std::vector<std::optional<CellResult>> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex callback_mutex;
  std::exception_ptr failure;
  const auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
      try {
        results[i] = run_cell(spec, jobs[i].value, jobs[i].seed);
        std::lock_guard lock(callback_mutex);
        if (on_cell) on_cell(*results[i]);
      } catch (...) {
        std::lock_guard lock(callback_mutex);
        if (!failure) failure = std::current_exception();
        next = jobs.size();
      }
    }
  };
  const int threads = std::min<int>(spec.workers, static_cast<int>(jobs.size()));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  AblationReport report;
  report.axis = spec.axis;
  for (auto& r : results) report.cells.push_back(std::move(*r));
  report.rows = summarize(report.cells, spec.values);
  return report;
}

namespace {

std::string optional_field(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

std::string csv_line(const CellResult& c) {
  return c.axis + "," + c.value + "," + std::to_string(c.seed) + "," + format_double(c.accuracy) + "," +
         optional_field(c.final_pretrain_loss) + "," + optional_field(c.leakage) + "," + std::to_string(c.visible_tokens) +
         "," + format_double(c.wall_seconds);
}

std::string row_key(const std::string& line) {
  std::size_t pos = 0;
  for (int i = 0; i < 3 && pos != std::string::npos; ++i) pos = line.find(',', pos + (i ? 1 : 0));
  return pos == std::string::npos ? line : line.substr(0, pos);
}

}  // namespace

void write_report_csv(const std::filesystem::path& path, const std::vector<CellResult>& cells) {
  std::vector<std::string> lines;
  if (std::ifstream in(path); in) {
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (first) {
        first = false;
        if (line != kReportHeader) throw ConfigError("report " + path.string() + " has an unexpected header");
        continue;
      }
      if (!line.empty()) lines.push_back(line);
    }
  }
  for (const auto& c : cells) {
    const std::string line = csv_line(c);
    const std::string key = row_key(line);
    auto it = std::find_if(lines.begin(), lines.end(), [&](const std::string& l) { return row_key(l) == key; });
    if (it != lines.end()) {
      *it = line;
    } else {
      lines.push_back(line);
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw ConfigError("cannot write report " + tmp.string());
    out << kReportHeader << "\n";
    for (const auto& l : lines) out << l << "\n";
  }
  std::filesystem::rename(tmp, path);
}

std::string format_report(const AblationReport& report) {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-16s %6s %8s %8s %10s %8s %8s %10s %10s\n", to_string(report.axis).c_str(), "seeds",
                "mean", "std", "final_loss", "leakage", "visible", "epochs", "wall_s");
  out << buf;
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%-16s %6zu %8.4f %8.4f %10s %8s %8ld %10.2f %10.2f\n", r.value.c_str(),
                  r.accuracies.size(), r.mean, r.std,
                  r.mean_final_loss ? std::to_string(*r.mean_final_loss).substr(0, 8).c_str() : "-",
                  r.leakage ? std::to_string(*r.leakage).substr(0, 6).c_str() : "-", static_cast<long>(r.visible_tokens),
                  r.pretrain_epochs, r.mean_wall_seconds);
    out << buf;
  }
  return out.str();
}

}  // namespace vmae
