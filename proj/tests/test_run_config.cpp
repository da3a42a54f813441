#include <gtest/gtest.h>

#include <fstream>

#include "adaptlm/errors.hpp"
#include "adaptlm/run_config.hpp"
#include "test_support.hpp"

using namespace adaptlm;
using namespace adaptlm::testing;
using nlohmann::json;

namespace {

std::string config_error(const json& j) {
  try {
    validate(parse_run_config(j));
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST(RunConfig, ToyConfigLoadsAndValidates) {
  RunConfig c = load_run_config(fixture("toy_config.json"));
  EXPECT_NO_THROW(validate(c));
  EXPECT_EQ(c.seed, 13u);
  ASSERT_TRUE(c.data.train);
  EXPECT_TRUE(std::filesystem::exists(*c.data.train));
  EXPECT_EQ(c.sweep.bins.size(), 2u);
  propagate_seed(c);
  EXPECT_EQ(c.pretrain.seed, 13u);
  EXPECT_EQ(c.finetune.seed, 13u);
}

TEST(RunConfig, UnknownKeysNameTheDottedPath) {
  EXPECT_NE(config_error(json{{"seed", 1}, {"bogus", 2}}).find("bogus: unknown key"), std::string::npos);
  EXPECT_NE(config_error(json{{"seed", 1}, {"pretrain", {{"lr", 1e-4}, {"lrr", 1}}}}).find("pretrain.lrr"),
            std::string::npos);
  EXPECT_NE(config_error(json{{"seed", 1}, {"sweep", {{"bins", {{{"name", "a"}, {"low", 0.1}}}}}}})
                .find("sweep.bins[0].low"),
            std::string::npos);
}

TEST(RunConfig, TypeErrorsNameTheKey) {
  EXPECT_NE(config_error(json{{"seed", 1}, {"model", {{"hidden_size", "big"}}}}).find("model.hidden_size"),
            std::string::npos);
  EXPECT_NE(config_error(json{{"seed", 1}, {"finetune", {{"epochs", -1}}}}).find("finetune.epochs"),
            std::string::npos);
  EXPECT_NE(config_error(json{{"seed", 1}, {"finetune", {{"early_stopping", 1}}}}).find("finetune.early_stopping"),
            std::string::npos);
  EXPECT_NE(config_error(json{{"seed", -3}}).find("seed"), std::string::npos);
  EXPECT_THROW(parse_run_config(json::array()), ConfigError);
}

TEST(RunConfig, MissingSeedAndPaths) {
  EXPECT_NE(config_error(json::object()).find("seed: required"), std::string::npos);
  EXPECT_NE(config_error(json{{"seed", 1}, {"data", {{"train", "/no/such/file.tsv"}}}}).find("data.train"),
            std::string::npos);
  EXPECT_NE(config_error(json{{"seed", 1}, {"preprocess", {{"lexicon", "/no/lexicon"}}}}).find("preprocess.lexicon"),
            std::string::npos);
  EXPECT_THROW(load_run_config("/no/such/config.json"), ConfigError);
  TempDir dir("cfg");
  {
    std::ofstream out(dir / "bad.json");
    out << "{\"seed\": ";
  }
  EXPECT_THROW(load_run_config(dir / "bad.json"), ConfigError);
}

TEST(RunConfig, InvalidStageValuesAreConfigErrors) {
  EXPECT_FALSE(config_error(json{{"seed", 1}, {"select", {{"lo", 0.8}, {"hi", 0.2}}}}).empty());
  EXPECT_FALSE(config_error(json{{"seed", 1}, {"finetune", {{"warmup_ratio", 1.5}}}}).empty());
  EXPECT_FALSE(config_error(json{{"seed", 1}, {"model", {{"hidden_size", 30}, {"num_heads", 4}}}}).empty());
  EXPECT_TRUE(config_error(json{{"seed", 1}}).empty());
}

TEST(RunConfig, RelativePathsResolveAgainstConfigDir) {
  const RunConfig c = parse_run_config(json{{"seed", 1}, {"data", {{"train", "train.tsv"}}}}, "/base/dir");
  EXPECT_EQ(*c.data.train, std::filesystem::path("/base/dir/train.tsv"));
}

TEST(RunConfig, JsonRoundTripAndHash) {
  const RunConfig c = load_run_config(fixture("toy_config.json"));
  const json j = to_json(c);
  const RunConfig back = parse_run_config(j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(config_hash(j), config_hash(to_json(back)));
  EXPECT_EQ(config_hash(j).size(), 8u);
  json k = j;
  k["seed"] = 14;
  EXPECT_NE(config_hash(k), config_hash(j));
  EXPECT_EQ(model_config_from_json(model_config_to_json(c.model)), c.model);
}
