#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "cgmlp/checkpoint.hpp"
#include "cgmlp/cli.hpp"
#include "cgmlp/training.hpp"
#include "fixtures.hpp"

using namespace cgmlp;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "cgmlp");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST(Cli, UsageErrorsExitWithOne) {
  EXPECT_EQ(run({}).code, cli::kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"train", "--epochs", "0"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"train", "--model", "resnet"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"train", "--dataset", "mnist"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"train", "--d-model", "15"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"train", "--precision", "f64"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"train", "--model", "cgmlp2", "--stem-channels", "4"}).code, cli::kExitUsage);
  EXPECT_EQ(run({"eval"}).code, cli::kExitUsage);
  auto r = run({"train", "--epochs", "0"});
  EXPECT_NE(r.err.find("--epochs"), std::string::npos) << r.err;
}

TEST(Cli, HelpExitsWithZero) {
  auto r = run({"--help"});
  EXPECT_EQ(r.code, cli::kExitOk);
  EXPECT_NE(r.out.find("gradcheck"), std::string::npos);
}

TEST(Cli, MissingDataIsARuntimeError) {
  fixtures::TempDir dir;
  auto r = run({"train", "--data-dir", (dir / "nothing").string(), "--out-dir", dir.path().string()});
  EXPECT_EQ(r.code, cli::kExitRuntime);
  EXPECT_NE(r.err.find("missing CIFAR file"), std::string::npos) << r.err;
}

TEST(Cli, CompareWritesOutputsAndPrintsResolvedConfig) {
  fixtures::TempDir dir;
  fixtures::write_synthetic_cifar(dir / "data", DatasetKind::kCifar10, 12, 8, 1);
  auto r = run({"compare", "--data-dir", (dir / "data").string(), "--dataset", "cifar10",
                "--out-dir", (dir / "out").string(), "--epochs", "2", "--batch-size", "8",
                "--d-model", "16", "--max-train", "24"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_NE(r.out.find("d_model=16"), std::string::npos);
  EXPECT_NE(r.out.find("epochs=2"), std::string::npos);
  EXPECT_NE(r.out.find("data: train=24 val=6 test=8"), std::string::npos) << r.out;
  for (const char* f : {"report.txt", "history.csv", "gmlp4.ckpt", "cgmlp1.ckpt", "cgmlp2.ckpt"}) {
    EXPECT_TRUE(fs::exists(dir / "out" / f)) << f;
  }
  std::istringstream csv(fixtures::read_file(dir / "out" / "history.csv"));
  EXPECT_EQ(train::read_history_csv(csv).size(), 6u);

  auto ev = run({"eval", "--data-dir", (dir / "data").string(), "--checkpoint",
                 (dir / "out" / "cgmlp2.ckpt").string()});
  EXPECT_EQ(ev.code, cli::kExitOk) << ev.err;
  EXPECT_NE(ev.out.find("test_acc"), std::string::npos);

  auto vz = run({"visualize", "--data-dir", (dir / "data").string(), "--checkpoint",
                 (dir / "out" / "cgmlp2.ckpt").string(), "--out-dir", (dir / "viz").string(),
                 "--layers", "stem.0.act,stem.1.pool", "--image-index", "3"});
  ASSERT_EQ(vz.code, cli::kExitOk) << vz.err;
  std::size_t files = 0;
  for ([[maybe_unused]] auto& e : fs::directory_iterator(dir / "viz" / "featuremaps")) ++files;
  EXPECT_EQ(files, 32u + 64u);

  auto bad = run({"visualize", "--data-dir", (dir / "data").string(), "--checkpoint",
                  (dir / "out" / "cgmlp2.ckpt").string(), "--out-dir", (dir / "viz").string(),
                  "--image-index", "99"});
  EXPECT_EQ(bad.code, cli::kExitUsage);
}

TEST(Cli, TrainWithConfigFileAndCorruptCheckpoint) {
  fixtures::TempDir dir;
  fixtures::write_synthetic_cifar(dir / "data", DatasetKind::kCifar10, 8, 4, 2);
  auto cfg = ModelConfig::preset("gmlp4", DatasetKind::kCifar10);
  cfg.name = "mine";
  cfg.set_width(8);
  cfg.num_blocks = 1;
  cfg.gating = {nn::Gating::kChannel};
  {
    std::ofstream f(dir / "mine.cfg");
    f << cfg.to_text();
  }
  auto r = run({"train", "--data-dir", (dir / "data").string(), "--dataset", "cifar10", "--model",
                (dir / "mine.cfg").string(), "--out-dir", (dir / "out").string(), "--epochs", "1",
                "--batch-size", "4"});
  ASSERT_EQ(r.code, cli::kExitOk) << r.err;
  EXPECT_NE(r.out.find("gating=channel"), std::string::npos) << r.out;
  EXPECT_EQ(load_checkpoint(dir / "out" / "model.ckpt").model.config().name, "mine");

  auto mismatch = run({"train", "--data-dir", (dir / "data").string(), "--dataset", "cifar100",
                       "--model", (dir / "mine.cfg").string()});
  EXPECT_EQ(mismatch.code, cli::kExitUsage);

  {
    std::ofstream f(dir / "junk.ckpt", std::ios::binary);
    f << "not a checkpoint";
  }
  auto ev = run({"eval", "--data-dir", (dir / "data").string(), "--checkpoint", (dir / "junk.ckpt").string()});
  EXPECT_EQ(ev.code, cli::kExitRuntime);
  EXPECT_NE(ev.err.find("bad magic"), std::string::npos) << ev.err;
}

TEST(Cli, GradcheckOnSmallModel) {
  auto r = run({"gradcheck", "--model", "gmlp4", "--dataset", "cifar10", "--d-model", "8"});
  EXPECT_EQ(r.code, cli::kExitOk) << r.out << r.err;
  EXPECT_NE(r.out.find("max_rel_err"), std::string::npos);
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
}
