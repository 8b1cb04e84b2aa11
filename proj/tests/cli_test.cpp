#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "avb/cli.hpp"

using namespace avb;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "avb");
  std::vector<const char*> argv;
  for (auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("avb_cli_test_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  void synth(const std::string& task, const std::string& sub = "data") {
    auto r = run_cli({"synth", "--task", task, "--n", "60", "--dims", "4", "--seed", "3", "--out", (dir / sub).string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }

  std::vector<std::string> data_args(const std::string& task, const std::string& sub = "data") {
    return {"--task", task, "--features", (dir / sub / "features.csv").string(), "--labels",
            (dir / sub / "labels.csv").string()};
  }

  fs::path dir;
};

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_F(CliTest, SynthWritesTables) {
  auto r = run_cli({"synth", "--task", "type", "--n", "40", "--dims", "3", "--out", (dir / "s").string(), "--binary"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "s" / "features.csv"));
  EXPECT_TRUE(fs::exists(dir / "s" / "features.avbf"));
  EXPECT_TRUE(fs::exists(dir / "s" / "labels.csv"));
  const auto csv = load_features(dir / "s" / "features.csv");
  const auto bin = load_features(dir / "s" / "features.avbf");
  EXPECT_EQ(csv.size(), 40u);
  EXPECT_EQ(csv.ids, bin.ids);
}

TEST_F(CliTest, TrainWritesOneManifest) {
  synth("two");
  auto r = run_cli(cat({"train"}, cat(data_args("two"), {"--seed", "0", "--epochs", "3", "--out", (dir / "runs").string()})));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto run = dir / "runs" / "features" / "two" / "0";
  EXPECT_TRUE(fs::exists(run / "run.json"));
  EXPECT_TRUE(fs::exists(run / "checkpoint.json"));
  EXPECT_NE(r.err.find("epoch 3"), std::string::npos);
  const auto j = read_json(run / "run.json");
  EXPECT_EQ(j.at("history").size(), 3u);
  EXPECT_EQ(j.at("config").at("learning_rate").get<double>(), 5e-4);
}

TEST_F(CliTest, FeatureNameOverride) {
  synth("high");
  auto r = run_cli(cat({"train"}, cat(data_args("high"), {"--feature-name", "w2v2-lr", "--epochs", "1", "--out",
                                                         (dir / "runs").string()})));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "runs" / "w2v2-lr" / "high" / "0" / "run.json"));
}

TEST_F(CliTest, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli({}).code, 2);
  EXPECT_EQ(run_cli({"bogus"}).code, 2);
  synth("two");
  auto r = run_cli(cat({"train"}, cat(data_args("two"), {"--no-such-flag"})));
  EXPECT_EQ(r.code, 2);
  EXPECT_FALSE(r.err.empty());
  EXPECT_EQ(run_cli({"train", "--task", "two"}).code, 2);  // missing required
  EXPECT_EQ(run_cli(cat({"train"}, data_args("quadruple"))).code, 2);
  EXPECT_EQ(run_cli(cat({"train"}, cat(data_args("two"), {"--precision", "f16"}))).code, 2);
  EXPECT_EQ(run_cli(cat({"train"}, cat(data_args("two"), {"--batch-size", "0"}))).code, 2);
}

TEST_F(CliTest, RuntimeErrorsExitOne) {
  auto r = run_cli({"train", "--task", "two", "--features", (dir / "missing.csv").string(), "--labels",
                    (dir / "missing.csv").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("avb: "), std::string::npos);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
  EXPECT_EQ(run_cli({"report", "--runs", (dir / "none").string(), "--out", (dir / "rep").string()}).code, 1);
}

TEST_F(CliTest, HelpListsFlagsAndDefaults) {
  auto r = run_cli({"train", "--help"});
  ASSERT_EQ(r.code, 0);
  for (const char* flag : {"--task", "--features", "--labels", "--seed", "--lr", "--weight-decay", "--batch-size",
                           "--epochs", "--patience", "--min-delta", "--out", "--precision", "--scale-labels"})
    EXPECT_NE(r.out.find(flag), std::string::npos) << flag;
  for (const char* def : {"0.0005", "0.01", "100", "f64"}) EXPECT_NE(r.out.find(def), std::string::npos) << def;
  auto s = run_cli({"sweep", "--help"});
  EXPECT_NE(s.out.find("--jobs"), std::string::npos);
  EXPECT_NE(s.out.find("0..19"), std::string::npos);
  EXPECT_EQ(run_cli({"--help"}).code, 0);
}

TEST_F(CliTest, DumpConfigReplaysToIdenticalRun) {
  synth("type");
  const auto first = dir / "runs1";
  auto args = cat(data_args("type"), {"--seed", "5", "--epochs", "4", "--lr", "0.002", "--patience", "3"});
  auto r = run_cli(cat({"train"}, cat(args, {"--out", first.string()})));
  ASSERT_EQ(r.code, 0) << r.err;

  auto dumped = run_cli(cat({"train"}, cat(args, {"--out", first.string(), "--dump-config"})));
  ASSERT_EQ(dumped.code, 0) << dumped.err;
  EXPECT_NE(dumped.out.find("lr"), std::string::npos);
  std::ofstream(dir / "cfg.toml") << dumped.out;

  const auto second = dir / "runs2";
  auto replay = run_cli({"train", "--config", (dir / "cfg.toml").string(), "--out", second.string()});
  ASSERT_EQ(replay.code, 0) << replay.err << "\n" << dumped.out;
  EXPECT_EQ(slurp(first / "features" / "type" / "5" / "run.json"), slurp(second / "features" / "type" / "5" / "run.json"));

  // flags win over the file
  auto over = run_cli({"train", "--config", (dir / "cfg.toml").string(), "--out", second.string(), "--seed", "6"});
  ASSERT_EQ(over.code, 0) << over.err;
  EXPECT_TRUE(fs::exists(second / "features" / "type" / "6" / "run.json"));
}

TEST_F(CliTest, SweepCompareReportPredict) {
  synth("two");
  const auto runs = (dir / "runs").string();
  auto a = run_cli(cat({"sweep"}, cat(data_args("two"), {"--feature-name", "fa", "--seeds", "0..3", "--epochs", "2",
                                                         "--jobs", "2", "--out", runs})));
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_TRUE(fs::exists(dir / "runs" / "fa" / "two" / "summary.json"));
  auto b = run_cli(cat({"sweep"}, cat(data_args("two"), {"--feature-name", "fb", "--seeds", "0..3", "--epochs", "3",
                                                         "--out", runs})));
  ASSERT_EQ(b.code, 0) << b.err;

  auto again = run_cli(cat({"sweep"}, cat(data_args("two"), {"--feature-name", "fa", "--seeds", "0..3", "--epochs", "2",
                                                             "--out", runs})));
  EXPECT_NE(again.err.find("executed 0 runs, reused 4"), std::string::npos) << again.err;

  auto c = run_cli({"compare", "--a", (dir / "runs" / "fa").string(), "--b", (dir / "runs" / "fb").string(), "--task",
                    "two"});
  ASSERT_EQ(c.code, 0) << c.err;
  const auto j = nlohmann::json::parse(c.out);
  EXPECT_EQ(j.at("n").get<std::size_t>(), 4u);
  EXPECT_EQ(j.at("dof").get<double>(), 3.0);
  EXPECT_TRUE(j.contains("p_value"));

  auto rep = run_cli({"report", "--runs", runs, "--out", (dir / "rep").string(), "--seeds", "0..3", "--pair", "fa,fb"});
  ASSERT_EQ(rep.code, 0) << rep.err;
  const auto tables = slurp(dir / "rep" / "tables.txt");
  EXPECT_NE(tables.find("Paired t-tests"), std::string::npos);
  auto missing = run_cli({"report", "--runs", runs, "--out", (dir / "rep2").string(), "--seeds", "0..4"});
  EXPECT_EQ(missing.code, 1);

  auto pred = run_cli({"predict", "--checkpoint", (dir / "runs" / "fa" / "two" / "0" / "checkpoint.json").string(),
                       "--features", (dir / "data" / "features.csv").string(), "--out", (dir / "pred.csv").string()});
  ASSERT_EQ(pred.code, 0) << pred.err;
  const auto text = slurp(dir / "pred.csv");
  EXPECT_EQ(text.substr(0, text.find('\n')), "file_id,valence,arousal");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 61);
}

TEST_F(CliTest, SweepWithFailedSeedsExitsOne) {
  synth("two");
  auto r = run_cli(cat({"sweep"}, cat(data_args("two"), {"--seeds", "0,1", "--epochs", "1", "--lr", "1e300", "--out",
                                                         (dir / "runs").string()})));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("did not complete"), std::string::npos) << r.err;
}

TEST_F(CliTest, BinaryExitCodes) {
  const char* bin = std::getenv("AVB_BIN");
  if (!bin) GTEST_SKIP() << "AVB_BIN not set";
  auto status = [](const std::string& cmd) {
    const int s = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  EXPECT_EQ(status(std::string(bin) + " --help"), 0);
  EXPECT_EQ(status(std::string(bin) + " train --bogus"), 2);
  EXPECT_EQ(status(std::string(bin) + " predict --checkpoint /nonexistent --features /nonexistent --out x.csv"), 1);
}
