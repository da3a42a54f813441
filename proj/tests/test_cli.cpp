#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "adaptlm/corpus.hpp"
#include "adaptlm/eval_report.hpp"
#include "adaptlm/rng.hpp"
#include "test_support.hpp"

using namespace adaptlm;
using namespace adaptlm::testing;

namespace {

struct Run {
  int status = -1;
  std::string output;
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Run cli(const std::string& args, const TempDir& dir) {
  const auto log = dir / "cli.log";
  const std::string command = std::string(ADAPTLM_CLI) + " " + args + " > '" + log.string() + "' 2>&1";
  const int status = std::system(command.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

std::string prep_args() {
  return " --lexicon " + q(fixture("lexicon.tsv")) + " --emoji-map " + q(fixture("emoji_map.tsv"));
}

}  // namespace

TEST(Cli, SelectMatchesBruteForce) {
  TempDir dir("cli-select");
  Rng rng = make_rng(1, "cli");
  std::vector<ScoredInstance> rows;
  for (int i = 0; i < 100; ++i) {
    rows.push_back({"r" + std::to_string(i), "text " + std::to_string(i), std::round(uniform01(rng) * 100) / 100});
  }
  save_scored(rows, dir / "scored.tsv");
  for (const auto& [lo, hi] : std::vector<std::pair<double, double>>{{0.5, 1.0}, {0.25, 0.75}, {0.3, 0.3}}) {
    const auto r = cli("select --input " + q(dir / "scored.tsv") + " --output " + q(dir / "out.tsv") +
                           " --lo " + std::to_string(lo) + " --hi " + std::to_string(hi),
                       dir);
    ASSERT_EQ(r.status, 0) << r.output;
    std::size_t expected = 0;
    for (const auto& s : rows) expected += s.score >= lo && s.score <= hi;
    EXPECT_EQ(load_scored(dir / "out.tsv").size(), expected) << lo << " " << hi;
  }
  const auto all = cli("select --input " + q(dir / "scored.tsv") + " --output " + q(dir / "all.tsv") + " --lo 0 --hi 1", dir);
  ASSERT_EQ(all.status, 0) << all.output;
  EXPECT_EQ(load_scored(dir / "all.tsv"), rows);
  EXPECT_TRUE(std::filesystem::exists(dir / "all.tsv.manifest.json"));
  const auto manifest = nlohmann::json::parse(slurp(dir / "all.tsv.manifest.json"));
  EXPECT_EQ(manifest["command"], "select");
  EXPECT_EQ(manifest["results"]["selected"], 100);
}

TEST(Cli, SelectInvertedBoundsIsUsageError) {
  TempDir dir("cli-select-bad");
  const auto r = cli("select --input " + q(fixture("scored.tsv")) + " --output " + q(dir / "o.tsv") +
                         " --lo 0.8 --hi 0.2",
                     dir);
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.output.find("--lo"), std::string::npos) << r.output;
  EXPECT_FALSE(std::filesystem::exists(dir / "o.tsv"));
}

TEST(Cli, PreprocessGoldenFile) {
  TempDir dir("cli-prep");
  const auto r = cli("preprocess --input " + q(fixture("tweets_raw.tsv")) + " --output " + q(dir / "clean.tsv") +
                         prep_args(),
                     dir);
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_EQ(slurp(dir / "clean.tsv"), slurp(fixture("tweets_clean.tsv")));
}

TEST(Cli, PreprocessEmptyAndMissingLexicon) {
  TempDir dir("cli-prep-edge");
  { std::ofstream(dir / "empty.tsv"); }
  const auto r = cli("preprocess --input " + q(dir / "empty.tsv") + " --output " + q(dir / "out.tsv") + prep_args(), dir);
  EXPECT_EQ(r.status, 0) << r.output;
  EXPECT_EQ(slurp(dir / "out.tsv"), "");
  const auto missing = cli("preprocess --input " + q(fixture("tweets_raw.tsv")) + " --output " + q(dir / "x.tsv") +
                               " --lexicon " + q(dir / "nope.tsv") + " --emoji-map " + q(fixture("emoji_map.tsv")),
                           dir);
  EXPECT_NE(missing.status, 0);
  EXPECT_NE(missing.output.find("nope.tsv"), std::string::npos) << missing.output;
}

TEST(Cli, PretrainIsReproducible) {
  TempDir dir("cli-pretrain");
  const std::string cfg = " --config " + q(fixture("toy_config.json"));
  ASSERT_EQ(cli("build-vocab" + cfg + " --input " + q(fixture("overfit_corpus.tsv")) + " --output " + q(dir / "vocab.txt"),
                dir)
                .status,
            0);
  for (const char* run : {"a", "b"}) {
    const auto r = cli("pretrain" + cfg + " --corpus " + q(fixture("overfit_corpus.tsv")) + " --vocab " +
                           q(dir / "vocab.txt") + " --max-steps 6 --output-dir " + q(dir / run),
                       dir);
    ASSERT_EQ(r.status, 0) << r.output;
  }
  EXPECT_EQ(slurp(dir / "a/train_log.jsonl"), slurp(dir / "b/train_log.jsonl"));
  std::size_t files = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir / "a/checkpoint")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = std::filesystem::relative(e.path(), dir / "a/checkpoint");
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b/checkpoint" / rel)) << rel;
  }
  EXPECT_GT(files, 2u);
  const auto manifest = nlohmann::json::parse(slurp(dir / "a/run_manifest.json"));
  EXPECT_EQ(manifest["command"], "pretrain");
  EXPECT_EQ(manifest["config"]["seed"], 13);
}

TEST(Cli, EvaluatePredictionsFile) {
  TempDir dir("cli-eval");
  const auto r = cli("evaluate --predictions " + q(fixture("perfect_predictions.tsv")) + " --format json --output " +
                         q(dir / "report.json"),
                     dir);
  ASSERT_EQ(r.status, 0) << r.output;
  const auto reports = reports_from_json(nlohmann::json::parse(slurp(dir / "report.json")));
  ASSERT_EQ(reports.size(), 1u);
  EXPECT_EQ(reports[0].macro_f1, 1.0);
  EXPECT_EQ(reports[0].examples, load_predictions(fixture("perfect_predictions.tsv")).size());
  EXPECT_EQ(cli("evaluate --predictions " + q(fixture("perfect_predictions.tsv")) + " --format xml", dir).status, 2);
  EXPECT_EQ(cli("evaluate --predictions " + q(dir / "absent.tsv"), dir).status, 3);
}

TEST(Cli, ConfigErrorsExitTwo) {
  TempDir dir("cli-cfg");
  {
    std::ofstream out(dir / "bad.json");
    out << R"({"seed": 1, "pretrain": {"lrr": 1}})";
  }
  const auto r = cli("build-vocab --config " + q(dir / "bad.json") + " --input " + q(fixture("train.tsv")) +
                         " --output " + q(dir / "v.txt"),
                     dir);
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.output.find("pretrain.lrr"), std::string::npos) << r.output;
}
