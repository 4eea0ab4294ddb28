#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "balign/landmark_io.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "balign_cli_test";

struct Run {
  int code;
  std::string out;
};

Run run(const std::string& args) {
  const auto log = kWork / "out.txt";
  const std::string cmd = std::string(BALIGN_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kWork);
    fs::create_directories(kWork);
  }
  static void TearDownTestSuite() { fs::remove_all(kWork); }
};

}  // namespace

TEST_F(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(run("--help").code, 0);
  EXPECT_NE(run("").code, 0);
  EXPECT_NE(run("no-such-command").code, 0);
  const auto r = run("train --lambda 1");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find("manifest"), std::string::npos);
}

TEST_F(Cli, GenerateTrainEvaluateAndDemo) {
  const auto data = kWork / "data";
  auto r = run("gen-data --out " + data.string() + " --ids 5 --train-per-id 4 --test-per-id 3 --seed 2");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto manifest = data / "manifest.json";
  ASSERT_TRUE(fs::exists(manifest));

  const auto cfg = kWork / "cfg.json";
  std::ofstream(cfg) << R"({"epochs": 1, "batch_size": 8, "embedding_dim": 8})";
  const auto out = kWork / "run";
  r = run("train --config " + cfg.string() + " --manifest " + manifest.string() +
          " --method stn-tps-2 --apply-at input --lambda 3 --seed 4 --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto result = balign::read_json_file(out / "result.json");
  EXPECT_EQ(result.at("method"), "stn-tps-2");
  EXPECT_EQ(result.at("apply_at"), "input");
  EXPECT_EQ(result.at("seed"), 4);

  r = run("eval --checkpoint " + (out / "checkpoint.bin").string() + " --out " + (kWork / "eval.json").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("rank1"), std::string::npos);
  EXPECT_TRUE(fs::exists(kWork / "eval.json"));

  const auto image = data / "images" / "i0000_s05.pgm";
  const auto lmk = data / "landmarks" / "i0000_s05.json";
  r = run("warp-demo --image " + image.string() + " --landmarks " + lmk.string() + " --method affine2d --manifest " +
          manifest.string() + " --out " + (kWork / "demo.pgm").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(kWork / "demo.pgm"));
  EXPECT_TRUE(fs::exists(kWork / "demo.svg"));

  r = run("warp-demo --image " + image.string() + " --landmarks " + lmk.string() + " --method stn-tps-2 --checkpoint " +
          (out / "checkpoint.bin").string() + " --out " + (kWork / "demo2.pgm").string());
  ASSERT_EQ(r.code, 0) << r.out;

  r = run("warp-demo --image " + image.string() + " --landmarks " + lmk.string() + " --method full-align --out " +
          (kWork / "demo3.pgm").string());
  EXPECT_NE(r.code, 0);
}

TEST_F(Cli, SweepRejectsDuplicateLambdas) {
  const auto data = kWork / "data2";
  ASSERT_EQ(run("gen-data --out " + data.string() + " --ids 3 --train-per-id 2 --test-per-id 2").code, 0);
  const auto r = run("sweep-lambda --manifest " + (data / "manifest.json").string() + " --lambdas 1,1 --out " +
                     (kWork / "sw").string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.out.find("duplicate"), std::string::npos);
}
