#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "vmae/experiments.hpp"

using namespace vmae;

namespace {

AblationSpec tiny_spec(AblationAxis axis, std::vector<std::string> values) {
  AblationSpec s;
  s.axis = axis;
  s.values = std::move(values);
  s.seeds = {1};
  s.train_data.seed = 10;
  s.train_data.count = 8;
  s.test_data.seed = 20;
  s.test_data.count = 8;
  s.pretrain_steps = 2;
  s.finetune_steps = 2;
  return s;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("axis and regime names") {
  CHECK(parse_ablation_axis("decoder_depth") == AblationAxis::decoder_depth);
  CHECK(to_string(AblationAxis::dataset_fraction) == "dataset_fraction");
  CHECK(parse_regime("same-epochs") == Regime::same_epochs);
  CHECK_THROWS_AS(parse_ablation_axis("width"), ConfigError);
  CHECK_THROWS_AS(parse_regime("forever"), ConfigError);
}

TEST_CASE("ablation settings validation") {
  CHECK_NOTHROW(tiny_spec(AblationAxis::strategy, {"tube", "scratch"}).validate());
  CHECK_THROWS_AS(tiny_spec(AblationAxis::strategy, {"checker"}).validate(), ConfigError);
  CHECK_THROWS_AS(tiny_spec(AblationAxis::ratio, {"1.0"}).validate(), ConfigError);
  CHECK_THROWS_AS(tiny_spec(AblationAxis::decoder_depth, {"0"}).validate(), ConfigError);
  CHECK_THROWS_AS(tiny_spec(AblationAxis::dataset_fraction, {"1.5"}).validate(), ConfigError);
  AblationSpec none = tiny_spec(AblationAxis::strategy, {"tube"});
  none.seeds.clear();
  CHECK_THROWS_AS(none.validate(), ConfigError);
}

TEST_CASE("strategy cells") {
  const AblationSpec spec = tiny_spec(AblationAxis::strategy, {"tube", "random", "frame", "scratch"});
  const AblationReport r = run_ablation(spec);
  REQUIRE(r.rows.size() == 4);
  REQUIRE(r.cells.size() == 4);
  CHECK(*r.row("tube").leakage == 0.0);
  CHECK(*r.row("frame").leakage == 1.0);
  CHECK(*r.row("random").leakage > 0.3);
  CHECK(*r.row("random").leakage < 0.8);
  CHECK_FALSE(r.row("scratch").leakage.has_value());
  CHECK_FALSE(r.row("scratch").mean_final_loss.has_value());
  CHECK(r.row("tube").visible_tokens == 16);
  CHECK(r.row("random").visible_tokens == 13);
  CHECK(r.row("frame").visible_tokens == 16);
  CHECK(r.row("scratch").visible_tokens == 128);
  for (const auto& c : r.cells) {
    CHECK(c.accuracy >= 0.0);
    CHECK(c.accuracy <= 1.0);
  }
  CHECK_THROWS_AS(r.row("missing"), ContractError);

  SUBCASE("cells are reproducible and independent of the worker count") {
    AblationSpec two = spec;
    two.workers = 2;
    const AblationReport again = run_ablation(two);
    for (std::size_t i = 0; i < r.cells.size(); ++i) {
      CHECK(again.cells[i].value == r.cells[i].value);
      CHECK(again.cells[i].accuracy == r.cells[i].accuracy);
      CHECK(again.cells[i].final_pretrain_loss == r.cells[i].final_pretrain_loss);
    }
  }
  SUBCASE("text report lists every value") {
    const std::string text = format_report(r);
    for (const auto& v : spec.values) CHECK(text.find(v) != std::string::npos);
  }
}

TEST_CASE("ratio sweep token counts") {
  AblationSpec spec = tiny_spec(AblationAxis::ratio, {"0.5", "0.75", "0.9"});
  spec.pretrain_steps = 1;
  spec.finetune_steps = 1;
  const AblationReport tube = run_ablation(spec);
  CHECK(tube.row("0.5").visible_tokens == 64);
  CHECK(tube.row("0.75").visible_tokens == 32);
  CHECK(tube.row("0.9").visible_tokens == 16);
  spec.pretrain.mask_strategy = MaskStrategy::random;
  const AblationReport random = run_ablation(spec);
  CHECK(random.row("0.5").visible_tokens == 64);
  CHECK(random.row("0.75").visible_tokens == 32);
  CHECK(random.row("0.9").visible_tokens == 13);

  AblationSpec one = tiny_spec(AblationAxis::ratio, {"0.9"});
  one.pretrain_steps = 1;
  one.finetune_steps = 1;
  CHECK(run_ablation(one).rows.size() == 1);
}

TEST_CASE("decoder depth sweep") {
  AblationSpec spec = tiny_spec(AblationAxis::decoder_depth, {"1", "2", "4"});
  spec.pretrain_steps = 1;
  spec.finetune_steps = 1;
  const AblationReport r = run_ablation(spec);
  CHECK(r.cells.size() == 3);
  const Index a1 = r.row("1").decoder_activations, a2 = r.row("2").decoder_activations, a4 = r.row("4").decoder_activations;
  CHECK(a2 == 2 * a1);
  CHECK(a4 == 4 * a1);
}

TEST_CASE("data efficiency regimes") {
  AblationSpec spec = tiny_spec(AblationAxis::dataset_fraction, {"0.5", "1"});
  spec.train_data.count = 64;
  spec.pretrain_steps = 80;
  spec.regime = Regime::same_iterations;
  CHECK(fraction_pretrain_steps(spec, 0.25) == 80);
  spec.regime = Regime::same_epochs;
  // 80 steps over 8 steps per epoch is 10 epochs; a quarter of the data has 2 steps per epoch.
  CHECK(fraction_pretrain_steps(spec, 0.25) == 20);
  CHECK(fraction_pretrain_steps(spec, 1.0) == 80);

  spec.train_data.count = 8;
  spec.pretrain_steps = 2;
  const AblationReport r = run_ablation(spec);
  CHECK(r.row("0.5").pretrain_epochs == doctest::Approx(4.0));
  CHECK(r.row("1").pretrain_epochs == doctest::Approx(2.0));
}

TEST_CASE("summary statistics") {
  std::vector<CellResult> cells(3);
  const double acc[] = {0.5, 0.7, 0.9};
  for (int i = 0; i < 3; ++i) {
    cells[static_cast<std::size_t>(i)].value = "v";
    cells[static_cast<std::size_t>(i)].accuracy = acc[i];
  }
  const auto rows = summarize(cells, {"v"});
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].mean == doctest::Approx(0.7));
  CHECK(rows[0].std == doctest::Approx(0.2));
}

TEST_CASE("report csv") {
  const auto path = std::filesystem::temp_directory_path() / "vmae_report_test" / "report.csv";
  std::filesystem::remove_all(path.parent_path());
  CellResult a;
  a.axis = "strategy";
  a.value = "tube";
  a.seed = 1;
  a.accuracy = 0.75;
  a.final_pretrain_loss = 0.5;
  a.leakage = 0.0;
  a.visible_tokens = 16;
  a.wall_seconds = 2.5;
  CellResult b = a;
  b.value = "scratch";
  b.final_pretrain_loss.reset();
  b.leakage.reset();
  b.visible_tokens = 128;

  write_report_csv(path, {a});
  write_report_csv(path, {b});
  const std::string first = slurp(path);
  CHECK(first == std::string(kReportHeader) + "\nstrategy,tube,1,0.75,0.5,0,16,2.5\nstrategy,scratch,1,0.75,,,128,2.5\n");
  write_report_csv(path, {a});
  CHECK(slurp(path) == first);
  a.accuracy = 0.5;
  write_report_csv(path, {a});
  CHECK(slurp(path).find("strategy,tube,1,0.5,") != std::string::npos);
  CHECK(slurp(path).find("0.75,0.5,0,16") == std::string::npos);

  std::ofstream(path) << "bad,header\n";
  CHECK_THROWS_AS(write_report_csv(path, {a}), ConfigError);
  std::filesystem::remove_all(path.parent_path());
}
