// Drives the built command-line tool end to end on a tiny configuration.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

#include <gtest/gtest.h>
#include <json.hpp>

namespace {

namespace fs = std::filesystem;

const fs::path& work() {
  static const fs::path d = [] {
    auto p = fs::temp_directory_path() / ("ialseg_cli_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return d;
}

int run(const std::string& args, std::string* output = nullptr) {
  const fs::path log = work() / "last.log";
  const std::string cmd = std::string(IALSEG_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream is(log);
  std::stringstream ss;
  ss << is.rdbuf();
  if (output) *output = ss.str();
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    write(work() / "gen.json", R"({"scene":{"height":16,"width":32,"band_jitter":0,
      "min_object_size":3,"max_object_size":6},"train_count":12,"eval_count":4})");
    write(work() / "train.json", R"({"net":{"height":16,"width":32,"channels":[4,8],"dilations":[1,2],
      "bins":[1,2,4],"spatial_channels":[4,8],"fusion_channels":8},
      "optimizer":{"epochs":2,"decay_every":1},"batch_size":5})");
  }
  static void TearDownTestSuite() { fs::remove_all(work()); }
};

TEST_F(Cli, EndToEnd) {
  std::string out;
  const fs::path d = work();
  ASSERT_EQ(run("gen-data --config " + (d / "gen.json").string() + " --seed 3 --out " + (d / "data").string(), &out),
            0)
      << out;
  EXPECT_TRUE(fs::exists(d / "data/train/images/00011.ppm"));
  EXPECT_TRUE(fs::exists(d / "data/eval/labels/00003.pgm"));
  EXPECT_EQ(nlohmann::json::parse(slurp(d / "data/run.json"))["scene"]["seed"], 3);

  for (const char* loss : {"wce", "ial"}) {
    const fs::path o = d / (std::string("run_") + loss);
    ASSERT_EQ(run("train --config " + (d / "train.json").string() + " --data " + (d / "data/train").string() +
                      " --seed 5 --loss " + loss + " --net erf --out " + o.string(),
                  &out),
              0)
        << out;
    const auto echo = nlohmann::json::parse(slurp(o / "run.json"));
    EXPECT_EQ(echo["loss"], loss);
    EXPECT_EQ(echo["seed"], 5);
    EXPECT_EQ(echo["net"]["variant"], "erf");
    EXPECT_EQ(echo["optimizer"]["epochs"], 2);
    EXPECT_TRUE(fs::exists(o / "epoch_000.ckpt"));
    EXPECT_TRUE(fs::exists(o / "epoch_001.ckpt"));
    EXPECT_TRUE(fs::exists(o / "final.ckpt"));
    const std::string curve = slurp(o / "loss_curve.csv");
    EXPECT_EQ(curve.substr(0, curve.find('\n')), "epoch,lr,I_1,I_2,I_3,f_2,f_3,total");
    EXPECT_EQ(std::count(curve.begin(), curve.end(), '\n'), 3);

    ASSERT_EQ(run("eval --run " + o.string() + " --data " + (d / "data/eval").string() + " --out " +
                      (d / (std::string("eval_") + loss)).string(),
                  &out),
              0)
        << out;
    EXPECT_TRUE(fs::exists(d / (std::string("eval_") + loss) / "report.csv"));
    EXPECT_TRUE(fs::exists(d / (std::string("eval_") + loss) / "report.json"));
  }
  ASSERT_EQ(run("compare " + (d / "eval_wce/report.json").string() + " " + (d / "eval_ial/report.json").string() +
                    " --out " + (d / "cmp").string(),
                &out),
            0)
      << out;
  EXPECT_NE(out.find("G3 recall: "), std::string::npos) << out;
  EXPECT_NE(out.find("G1 recall: "), std::string::npos) << out;
  EXPECT_TRUE(nlohmann::json::parse(slurp(d / "cmp/compare.json")).contains("deltas"));
}

TEST_F(Cli, TrainTwiceIsBytewiseIdentical) {
  const fs::path d = work();
  ASSERT_EQ(run("gen-data --config " + (d / "gen.json").string() + " --seed 4 --out " + (d / "det").string()), 0);
  for (const char* r : {"a", "b"})
    ASSERT_EQ(run("train --config " + (d / "train.json").string() + " --data " + (d / "det/train").string() +
                  " --seed 9 --out " + (d / "det" / r).string()),
              0);
  EXPECT_EQ(slurp(d / "det/a/loss_curve.csv"), slurp(d / "det/b/loss_curve.csv"));
  EXPECT_EQ(slurp(d / "det/a/final.ckpt"), slurp(d / "det/b/final.ckpt"));
}

TEST_F(Cli, SeedIsMandatoryForTraining) {
  std::string out;
  EXPECT_NE(run("train --config " + (work() / "train.json").string() + " --data " + (work() / "nowhere").string() +
                    " --out " + (work() / "noseed").string(),
                &out),
            0);
  EXPECT_NE(out.find("seed"), std::string::npos) << out;
  EXPECT_FALSE(fs::exists(work() / "noseed"));
}

TEST_F(Cli, BadArguments) {
  EXPECT_NE(run("train --seed 1 --loss focal"), 0);
  EXPECT_NE(run("frobnicate"), 0);
  EXPECT_NE(run("eval --run " + (work() / "missing").string() + " --data x --out y"), 0);
}

}  // namespace
