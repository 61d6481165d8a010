/* Copyright 2026 The cfss Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "cfss/cli.hpp"

namespace cfss {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), {});
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("cfss_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(root_);
    const Result s = run_cli({"synth", "--count", "8", "--size", "64", "64", "--seed", "3", "--out",
                              (root_ / "data").string()});
    ASSERT_EQ(s.code, 0) << s.err;
    std::ofstream(root_ / "train.cfg") << "# smoke run\niterations = 3\nbatch_episodes = 1\n"
                                       << "image_height = 64\nimage_width = 64\n"
                                       << "train_data = " << (root_ / "data").string() << "\n";
    unsetenv("CFSS_SEED");
    const Result t = run_cli({"train", "--config", (root_ / "train.cfg").string(), "--out",
                              (root_ / "model.ckpt").string(), "--log-every", "1"});
    ASSERT_EQ(t.code, 0) << t.err;
    train_out_ = t.out;
    train_err_ = t.err;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static fs::path root_;
  static std::string train_out_, train_err_;
};

fs::path CliTest::root_;
std::string CliTest::train_out_, CliTest::train_err_;

TEST(CliUsage, HelpListsEverySubcommandAndFlag) {
  const Result r = run_cli({"--help"});
  EXPECT_EQ(r.code, 0);
  for (const char* word : {"train", "eval", "predict", "synth", "decompose", "--config", "--log-every",
                           "--checkpoint", "--episodes", "--shots", "--support-image", "--support-mask",
                           "--query", "--dump-prior", "--count", "--size", "--lowlight", "--in",
                           "--out-reflectance", "--out-illumination", "--sigma", "lambda3", "lowlight_on"}) {
    EXPECT_NE(r.out.find(word), std::string::npos) << word;
  }
}

TEST(CliUsage, BadInvocationsExitTwo) {
  Result r = run_cli({"train", "--config", "/nonexistent/x.cfg"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("x.cfg"), std::string::npos) << r.err;

  r = run_cli({"eval", "--checkpoint", "a", "--data", "b", "--bogus-flag", "3"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--bogus-flag"), std::string::npos) << r.err;

  r = run_cli({});
  EXPECT_EQ(r.code, 2);
  r = run_cli({"synth", "--count", "2", "--out", "/tmp/x"});
  EXPECT_EQ(r.code, 2);
}

TEST_F(CliTest, SynthWritesPairs) {
  int images = 0, masks = 0;
  for (const auto& e : fs::directory_iterator(root_ / "data" / "images")) images += e.path().extension() == ".png";
  for (const auto& e : fs::directory_iterator(root_ / "data" / "masks")) masks += e.path().extension() == ".png";
  EXPECT_EQ(images, 8);
  EXPECT_EQ(masks, 8);
}

TEST_F(CliTest, TrainWritesCheckpointAndLog) {
  EXPECT_TRUE(fs::is_regular_file(root_ / "model.ckpt"));
  const std::string log = slurp(root_ / "model.ckpt.log.jsonl");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);
  EXPECT_NE(log.find("\"total\""), std::string::npos);
  EXPECT_NE(train_out_.find("digest"), std::string::npos);
  EXPECT_EQ(std::count(train_err_.begin(), train_err_.end(), '\n'), 3);
}

TEST_F(CliTest, BadConfigKeyIsUsageError) {
  std::ofstream(root_ / "bad.cfg") << "iterations = 3\nwarmup = 7\n";
  const Result r = run_cli({"train", "--config", (root_ / "bad.cfg").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("warmup"), std::string::npos) << r.err;
}

TEST_F(CliTest, EnvironmentSeedOverridesConfig) {
  TrainConfig expected;
  expected.iterations = 1;
  expected.batch_episodes = 1;
  expected.image_height = expected.image_width = 64;
  std::ofstream(root_ / "one.cfg") << serialize(expected) << "train_data = " << (root_ / "data").string()
                                   << "\n";
  setenv("CFSS_SEED", "7", 1);
  const Result r = run_cli({"train", "--config", (root_ / "one.cfg").string(), "--out",
                            (root_ / "seeded.ckpt").string(), "--log-every", "0"});
  unsetenv("CFSS_SEED");
  ASSERT_EQ(r.code, 0) << r.err;
  expected.seed = 7;
  EXPECT_NE(r.out.find(config_digest(expected)), std::string::npos) << r.out;
  EXPECT_EQ(read_checkpoint(root_ / "seeded.ckpt").config.seed, 7u);
}

TEST_F(CliTest, EvalIsDeterministicJson) {
  const std::vector<std::string> args{"eval", "--checkpoint", (root_ / "model.ckpt").string(), "--data",
                                      (root_ / "data").string(), "--episodes", "4", "--seed", "11"};
  const Result a = run_cli(args), b = run_cli(args);
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  const auto j = nlohmann::json::parse(a.out);
  EXPECT_EQ(j.at("episodes").get<int>(), 4);
  EXPECT_GE(j.at("miou").get<double>(), 0.0);
  EXPECT_LE(j.at("miou").get<double>(), 1.0);

  const Result dark = run_cli({"eval", "--checkpoint", (root_ / "model.ckpt").string(), "--data",
                               (root_ / "data").string(), "--episodes", "2", "--lowlight", "3,0.3,0.01"});
  EXPECT_EQ(dark.code, 0) << dark.err;
  const Result bad = run_cli({"eval", "--checkpoint", (root_ / "model.ckpt").string(), "--data",
                              (root_ / "data").string(), "--lowlight", "9,0.3,0.01"});
  EXPECT_EQ(bad.code, 2);
  const Result missing = run_cli({"eval", "--checkpoint", (root_ / "nope.ckpt").string(), "--data",
                                  (root_ / "data").string()});
  EXPECT_EQ(missing.code, 1);
}

TEST_F(CliTest, PredictWritesMaps) {
  const fs::path img = root_ / "data" / "images", msk = root_ / "data" / "masks";
  std::vector<fs::path> stems;
  for (const auto& e : fs::directory_iterator(img)) stems.push_back(e.path().filename());
  std::sort(stems.begin(), stems.end());
  const Result r = run_cli({"predict", "--checkpoint", (root_ / "model.ckpt").string(), "--support-image",
                            (img / stems[0]).string(), "--support-mask", (msk / stems[0]).string(),
                            "--query", (img / stems[1]).string(), "--out", (root_ / "pred").string(),
                            "--dump-prior", (root_ / "prior").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"fg_probability.png", "mask.png", "overlay.png"}) {
    const Image m = read_image(root_ / "pred" / f);
    EXPECT_EQ(m.height(), 64) << f;
  }
  EXPECT_TRUE(fs::is_regular_file(root_ / "prior" / "prior_fused.png"));
  int dumped = 0;
  for (const auto& e : fs::directory_iterator(root_ / "prior")) dumped += e.path().extension() == ".png";
  EXPECT_EQ(dumped, 5);

  const Result mismatch = run_cli({"predict", "--checkpoint", (root_ / "model.ckpt").string(),
                                   "--support-image", (img / stems[0]).string(), "--support-image",
                                   (img / stems[2]).string(), "--support-mask", (msk / stems[0]).string(),
                                   "--query", (img / stems[1]).string(), "--out", (root_ / "pred").string()});
  EXPECT_EQ(mismatch.code, 2);
}

TEST_F(CliTest, DecomposeWritesBothParts) {
  const fs::path in = *fs::directory_iterator(root_ / "data" / "images");
  const Result r = run_cli({"decompose", "--in", in.string(), "--out-reflectance", (root_ / "r.png").string(),
                            "--out-illumination", (root_ / "l.png").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_image(root_ / "r.png").width(), 64);
  EXPECT_EQ(read_image(root_ / "l.png").width(), 64);
}

}  // namespace
}  // namespace cfss
