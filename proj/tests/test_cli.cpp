#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "test_util.hpp"

namespace {

struct Outcome {
  int code = -1;
  std::string out, err;
};

class Cli : public ::testing::Test {
 protected:
  testutil::TempDir dir{"cli"};

  Outcome run(const std::string& args) const {
    const std::string out = dir.file("stdout.txt"), err = dir.file("stderr.txt");
    const std::string cmd = std::string(MERGEPIPE_CLI_PATH) + " " + args + " > " + out + " 2> " + err;
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, testutil::slurp(out), testutil::slurp(err)};
  }

  std::string generate(const std::string& name, int sentiment_length = 20) const {
    std::ostringstream cfg;
    cfg << R"({"n_deals": 300, "cancel_rate": 0.2, "n_numeric": 8, "n_categorical": 5, "signal_strength": 2.0,)"
        << R"("test_fraction": 0.3, "sentiment_length": )" << sentiment_length
        << R"(, "announce_index": )" << sentiment_length / 2 << "}";
    const auto cfg_path = dir.write(name + ".gen.json", cfg.str());
    const auto o = run("generate --config " + cfg_path + " --seed 3 --out-dir " + dir.file("data") + " --out " + name +
                       ".csv");
    EXPECT_EQ(o.code, 0) << o.err;
    return dir.file("data/" + name + ".csv");
  }

  std::string run_config() const {
    return dir.write("run.json", R"({"preset": "f1/smote-nn-f1", "pca_dims": 4, "mca_dims": 4,
                                     "train": {"epochs": 3, "patience": 0}})");
  }

  std::string space() const {
    return dir.write("space.json", R"({"base": {"preset": "f1/nn-f1", "pca_dims": 4, "mca_dims": 4,
                                                "train": {"epochs": 2, "patience": 0}},
                                       "hidden_layers": [[4], [8]], "learning_rates": [0.001, 0.01],
                                       "use_smote": [false, true]})");
  }
};

}  // namespace

TEST_F(Cli, GenerateWritesArtifacts) {
  const auto csv = generate("deals");
  EXPECT_TRUE(std::filesystem::exists(csv));
  const auto schema = nlohmann::json::parse(testutil::slurp(dir.file("data/deals.schema.json")));
  EXPECT_EQ(schema["sentiment_length"], 20);
  const auto manifest = nlohmann::json::parse(testutil::slurp(dir.file("data/deals.manifest.json")));
  EXPECT_EQ(manifest["command"], "generate");
  EXPECT_EQ(manifest["seed"], 3);
  EXPECT_TRUE(manifest["wall_time"].is_null());
  EXPECT_EQ(manifest["config_digest"].get<std::string>().size(), 16u);
}

TEST_F(Cli, GenerateMissingConfigIsIoError) {
  const auto o = run("generate --config " + dir.file("nope.json"));
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("nope.json"), std::string::npos) << o.err;
}

TEST_F(Cli, BadArgumentsExitTwo) {
  EXPECT_EQ(run("").code, 2);
  EXPECT_EQ(run("run").code, 2);
  const auto bad = dir.write("bad.json", R"({"n_deals": 10, "colour": "red"})");
  const auto o = run("generate --config " + bad);
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("colour"), std::string::npos) << o.err;
}

TEST_F(Cli, PresetsListed) {
  const auto o = run("presets");
  EXPECT_EQ(o.code, 0);
  EXPECT_NE(o.out.find("f3/smote-nn-f1\n"), std::string::npos);
  EXPECT_EQ(std::count(o.out.begin(), o.out.end(), '\n'), 18);
}

TEST_F(Cli, RunWritesReport) {
  const auto csv = generate("deals");
  const auto o = run("run --data " + csv + " --config " + run_config() + " --out-dir " + dir.file("out"));
  ASSERT_EQ(o.code, 0) << o.err;
  const auto report = nlohmann::json::parse(testutil::slurp(dir.file("out/report.json")));
  for (const char* key : {"accuracy", "precision", "recall", "f1", "auroc", "aupr", "in_sample", "out_of_sample"})
    EXPECT_TRUE(report.contains(key)) << key;
  EXPECT_EQ(report["model"], "f1");
  EXPECT_EQ(report["input_width"], 8);
  EXPECT_EQ(testutil::slurp(dir.file("out/roc.csv")).substr(0, 8), "fpr,tpr\n");
  EXPECT_EQ(testutil::slurp(dir.file("out/pr.csv")).substr(0, 17), "recall,precision\n");
  EXPECT_TRUE(std::filesystem::exists(dir.file("out/model.json")));
}

TEST_F(Cli, WeightedLogitBaseline) {
  const auto csv = generate("deals");
  const auto o = run("run --data " + csv + " --config " + run_config() + " --baseline weighted-logit --out-dir " +
                     dir.file("logit"));
  ASSERT_EQ(o.code, 0) << o.err;
  const auto report = nlohmann::json::parse(testutil::slurp(dir.file("logit/report.json")));
  EXPECT_EQ(report["model"], "weighted-logit");
  EXPECT_EQ(run("run --data " + csv + " --baseline probit").code, 2);
}

TEST_F(Cli, MissingSentimentIsPipelineError) {
  const auto csv = generate("flat", 0);
  const auto o = run("run --data " + csv + " --config " + run_config() + " --framework f2 --out-dir " +
                     dir.file("f2"));
  EXPECT_EQ(o.code, 3);
  EXPECT_NE(o.err.find("MissingSentiment"), std::string::npos) << o.err;
  EXPECT_NE(o.err.find("sentiment"), std::string::npos);
}

TEST_F(Cli, MissingDataIsIoError) {
  const auto o = run("run --data " + dir.file("absent.csv") + " --out-dir " + dir.file("x"));
  EXPECT_EQ(o.code, 1) << o.err;
}

TEST_F(Cli, SearchRanksTrialsAndReruns) {
  const auto csv = generate("deals");
  const std::string args = "search --data " + csv + " --space " + space() + " --budget 8 --seed 4 --out-dir ";
  ASSERT_EQ(run(args + dir.file("s1")).code, 0);
  ASSERT_EQ(run(args + dir.file("s2")).code, 0);
  const auto trials = testutil::slurp(dir.file("s1/trials.csv"));
  std::istringstream lines(trials);
  std::string line;
  std::getline(lines, line);
  int rows = 0;
  double prev = 1e9;
  while (std::getline(lines, line)) {
    ++rows;
    const double objective = std::stod(line.substr(line.rfind(',') + 1));
    EXPECT_LE(objective, prev);
    prev = objective;
  }
  EXPECT_EQ(rows, 8);
  for (const char* f : {"trials.csv", "report.json", "model.json", "manifest.json"})
    EXPECT_EQ(testutil::slurp(dir.file(std::string("s1/") + f)), testutil::slurp(dir.file(std::string("s2/") + f)))
        << f;
}

TEST_F(Cli, EmptySpaceExitsTwo) {
  const auto csv = generate("deals");
  const auto empty = dir.write("empty.json", R"({"learning_rates": []})");
  const auto o = run("search --data " + csv + " --space " + empty + " --out-dir " + dir.file("e"));
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("EmptySpace"), std::string::npos) << o.err;
}
