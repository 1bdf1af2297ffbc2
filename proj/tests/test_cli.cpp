#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vmae/cli.hpp"
#include "vmae/image.hpp"

using namespace vmae;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run vmae_run(std::vector<std::string> args) {
  args.insert(args.begin(), "vmae");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("vmae_cli_" + name);
  fs::remove_all(dir);
  return dir;
}

// Two clips, six steps: small enough for a unit test.
const std::vector<std::string> kTiny = {"data.train_count=2", "data.test_count=4", "pretrain.batch_size=2",
                                        "pretrain.epochs=6", "pretrain.warmup_epochs=1",
                                        "finetune.batch_size=2", "finetune.epochs=2",
                                        "finetune.warmup_epochs=0", "log.every=1"};

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

}  // namespace

TEST_CASE("configuration errors exit 1 and name the culprit") {
  const Run flag = vmae_run({"pretrain", "--bogus"});
  CHECK(flag.code == kExitConfig);
  CHECK(flag.err.find("--bogus") != std::string::npos);

  const Run key = vmae_run({"maskviz", "--out", scratch_dir("badkey").string(), "mask.shape=round"});
  CHECK(key.code == kExitConfig);
  CHECK(key.err.find("mask.shape") != std::string::npos);

  CHECK(vmae_run({}).code == kExitConfig);
  CHECK(vmae_run({"teleport"}).code == kExitConfig);
  CHECK(vmae_run({"probe", "--out", scratch_dir("probe").string()}).code == kExitConfig);
  CHECK(vmae_run({"pretrain", "--config", "/nonexistent/desk.cfg"}).code == kExitConfig);
}

TEST_CASE("config file and overrides resolve in order") {
  const fs::path dir = scratch_dir("resolve");
  fs::create_directories(dir);
  std::ofstream(dir / "run.cfg") << "# test\nmask.ratio=0.5\nseed=3\n";
  CommandConfig cmd;
  cmd.config_file = dir / "run.cfg";
  cmd.overrides = {"mask.strategy=random"};
  cmd.seed = 11;
  const Config c = resolve_config(cmd);
  CHECK(c.get_double("mask.ratio") == 0.5);
  CHECK(c.get("mask.strategy") == "random");
  CHECK(c.seed() == 11);
}

TEST_CASE("maskviz") {
  SUBCASE("random count on the 224 grid") {
    const fs::path dir = scratch_dir("maskviz_random");
    const Run r = vmae_run({"maskviz", "--dims", "8x14x14", "--out", dir.string(), "mask.strategy=random", "mask.ratio=0.9"});
    REQUIRE(r.code == kExitOk);
    const std::string text = slurp(dir / "mask.txt");
    CHECK(std::count(text.begin(), text.end(), '#') == 1411);
    CHECK(fs::exists(dir / "config.resolved"));
    const Image img = read_ppm(dir / "mask.ppm");
    CHECK(img.width > 0);
    CHECK(r.out.rfind("event=", 0) == 0);
  }
  SUBCASE("tube slices are identical") {
    const fs::path dir = scratch_dir("maskviz_tube");
    REQUIRE(vmae_run({"maskviz", "--dims", "8x14x14", "--out", dir.string()}).code == kExitOk);
    std::istringstream text(slurp(dir / "mask.txt"));
    std::vector<std::string> blocks(1);
    for (std::string line; std::getline(text, line);) {
      if (line.empty()) {
        blocks.emplace_back();
      } else {
        blocks.back() += line + "\n";
      }
    }
    REQUIRE(blocks.size() == 8);
    for (const auto& b : blocks) CHECK(b == blocks[0]);
  }
  SUBCASE("zero ratio is all visible") {
    const fs::path dir = scratch_dir("maskviz_zero");
    REQUIRE(vmae_run({"maskviz", "--out", dir.string(), "mask.ratio=0"}).code == kExitOk);
    const std::string text = slurp(dir / "mask.txt");
    CHECK(std::count(text.begin(), text.end(), '#') == 0);
    CHECK(std::count(text.begin(), text.end(), '.') == 128);
  }
}

TEST_CASE("ARTIFACT_OUT overrides --out") {
  const fs::path env_dir = scratch_dir("env_out");
  const fs::path flag_dir = scratch_dir("flag_out");
  setenv("ARTIFACT_OUT", env_dir.c_str(), 1);
  const Run r = vmae_run({"maskviz", "--out", flag_dir.string()});
  unsetenv("ARTIFACT_OUT");
  CHECK(r.code == kExitOk);
  CHECK(fs::exists(env_dir / "mask.txt"));
  CHECK_FALSE(fs::exists(flag_dir));
}

TEST_CASE("pretrain, reconstruct and fine-tune") {
  const fs::path a = scratch_dir("pretrain_a"), b = scratch_dir("pretrain_b");
  const Run ra = vmae_run(with({"pretrain", "--seed", "7", "--out", a.string()}, kTiny));
  const Run rb = vmae_run(with({"pretrain", "--seed", "7", "--out", b.string()}, kTiny));
  REQUIRE(ra.code == kExitOk);
  REQUIRE(rb.code == kExitOk);
  CHECK(slurp(a / "loss.csv") == slurp(b / "loss.csv"));
  CHECK(slurp(a / "pretrain.ckpt") == slurp(b / "pretrain.ckpt"));
  CHECK(slurp(a / "config.resolved").find("seed=7\n") != std::string::npos);
  CHECK(ra.out.find("event=pretrain_done") != std::string::npos);
  std::istringstream lines(ra.out);
  for (std::string line; std::getline(lines, line);) CHECK(line.rfind("event=", 0) == 0);

  SUBCASE("reconstruct at zero ratio") {
    const fs::path dir = scratch_dir("recon");
    const Run r = vmae_run(with({"reconstruct", "--seed", "7", "--checkpoint", (a / "pretrain.ckpt").string(), "--out",
                                 dir.string(), "mask.ratio=0"},
                                kTiny));
    REQUIRE(r.code == kExitOk);
    int ppm = 0;
    for (const auto& e : fs::directory_iterator(dir)) ppm += e.path().extension() == ".ppm" ? 1 : 0;
    CHECK(ppm == 3 * 16);
    for (int t : {0, 7, 15}) {
      char stem[8];
      std::snprintf(stem, sizeof(stem), "%03d", t);
      CHECK(slurp(dir / (std::string(stem) + "_masked.ppm")) == slurp(dir / (std::string(stem) + "_original.ppm")));
    }
  }
  SUBCASE("reconstruct rejects a different geometry") {
    const Run r = vmae_run(with({"reconstruct", "--checkpoint", (a / "pretrain.ckpt").string(), "--out",
                                 scratch_dir("recon_bad").string(), "data.height=32"},
                                kTiny));
    CHECK(r.code == kExitConfig);
  }
  SUBCASE("resume reaches the same checkpoint") {
    const fs::path dir = scratch_dir("resume");
    const Run r = vmae_run(with({"pretrain", "--seed", "7", "--checkpoint", (a / "pretrain.ckpt").string(), "--out",
                                 dir.string()},
                                kTiny));
    REQUIRE(r.code == kExitOk);
    CHECK(slurp(dir / "pretrain.ckpt") == slurp(a / "pretrain.ckpt"));
    CHECK(slurp(dir / "loss.csv") == "step,lr,loss\n");
  }
  SUBCASE("fine-tune and probe from the checkpoint") {
    const fs::path ft = scratch_dir("finetune"), pr = scratch_dir("probe_ok");
    CHECK(vmae_run(with({"finetune", "--checkpoint", (a / "pretrain.ckpt").string(), "--out", ft.string()}, kTiny)).code ==
          kExitOk);
    CHECK(slurp(ft / "metrics.txt").rfind("accuracy=", 0) == 0);
    CHECK(fs::exists(ft / "finetune.ckpt"));
    CHECK(vmae_run(with({"probe", "--checkpoint", (a / "pretrain.ckpt").string(), "--out", pr.string()}, kTiny)).code ==
          kExitOk);
    CHECK(fs::exists(pr / "probe.ckpt"));
  }
}

TEST_CASE("non-finite training exits 2 and keeps the last good state") {
  const fs::path dir = scratch_dir("nan");
  const Run r = vmae_run(with({"pretrain", "--out", dir.string()}, with(kTiny, {"pretrain.base_lr=1e36"})));
  CHECK(r.code == kExitNumeric);
  CHECK(fs::exists(dir / "last_good.ckpt"));
}

TEST_CASE("gradcheck exit code follows the tolerance") {
  const fs::path dir = scratch_dir("gradcheck");
  const Run ok = vmae_run({"gradcheck", "--out", dir.string(), "gradcheck.entries=4"});
  CHECK(ok.code == kExitOk);
  CHECK(ok.out.find("pass=true") != std::string::npos);
  CHECK(fs::exists(dir / "gradcheck.csv"));
  const Run strict = vmae_run({"gradcheck", "--out", dir.string(), "gradcheck.entries=4", "gradcheck.tolerance=1e-300"});
  CHECK(strict.code == kExitNumeric);
}

TEST_CASE("ablate writes a report") {
  const fs::path dir = scratch_dir("ablate");
  const Run r = vmae_run({"ablate", "--out", dir.string(), "data.train_count=4", "data.test_count=4", "ablate.values=tube,scratch",
                          "ablate.seeds=1", "ablate.pretrain_steps=1", "ablate.finetune_steps=1"});
  REQUIRE(r.code == kExitOk);
  const std::string csv = slurp(dir / "report.csv");
  CHECK(csv.rfind("axis,value,seed,accuracy,final_pretrain_loss,leakage,visible_tokens,wall_seconds\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  CHECK(fs::exists(dir / "report.txt"));
}
