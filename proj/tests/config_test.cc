// Copyright 2026 The tastas Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "tastas/config.hpp"

#include <gtest/gtest.h>

#include "test_util.h"

namespace tastas {
namespace {

EnvLookup FakeEnv(std::map<std::string, std::string> vars) {
  auto store = std::make_shared<std::map<std::string, std::string>>(std::move(vars));
  return [store](const char *name) -> const char * {
    auto it = store->find(name);
    return it == store->end() ? nullptr : it->second.c_str();
  };
}

const EnvLookup kNoEnv = [](const char *) -> const char * { return nullptr; };

TEST(Config, DefaultsAreValid) {
  TrainConfig c = ResolveConfig("", {}, kNoEnv);
  EXPECT_EQ(c.lr, 1e-3);
  EXPECT_EQ(c.clip_norm, 5.0);
  EXPECT_EQ(c.lambda_id, 0.1);
  EXPECT_EQ(c.lr_decay, 0.5);
  EXPECT_FALSE(c.online_remix);
}

TEST(Config, PrecedenceFlagEnvFileDefault) {
  auto dir = testing::TempDir("config_prec");
  const std::string file = (dir / "t.cfg").string();
  std::ofstream(file) << "# toy\nlr = 0.01\nbatch_size=8\npatience = 2  # trailing\nseed = 3\n";
  auto env = FakeEnv({{"TASTAS_BATCH_SIZE", "16"}, {"TASTAS_PATIENCE", "5"}});
  TrainConfig c = ResolveConfig(file, {{"patience", "7"}}, env);
  EXPECT_EQ(c.lr, 0.01);         // file over default
  EXPECT_EQ(c.batch_size, 16u);  // env over file
  EXPECT_EQ(c.patience, 7u);     // flag over env
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.max_epochs, TrainConfig{}.max_epochs);
}

TEST(Config, TextRoundTrip) {
  TrainConfig c;
  c.lr = 3.3e-4;
  c.online_remix = true;
  c.dims.hidden = 17;
  c.model_spec = "TasTas(6)";
  TrainConfig back;
  for (const auto &[k, v] : ParseConfigText(ConfigToText(c))) SetConfigValue(&back, k, v);
  EXPECT_EQ(ConfigToText(back), ConfigToText(c));
  EXPECT_EQ(back.lr, 3.3e-4);
  EXPECT_EQ(back.dims.hidden, 17u);
}

TEST(Config, Errors) {
  EXPECT_THROW(ParseConfigText("nonsense = 1"), InvalidArgument);
  EXPECT_THROW(ParseConfigText("lr 0.1"), InvalidArgument);
  EXPECT_THROW(ResolveConfig("", {{"lr", "abc"}}, kNoEnv), InvalidArgument);
  EXPECT_THROW(ResolveConfig("", {{"patience", "0"}}, kNoEnv), InvalidArgument);
  EXPECT_THROW(ResolveConfig("", {{"max_epochs", "0"}}, kNoEnv), InvalidArgument);
  EXPECT_THROW(ResolveConfig("", {{"lambda_id", "-1"}}, kNoEnv), InvalidArgument);
  EXPECT_THROW(ResolveConfig("", {{"batch_size", "-2"}}, kNoEnv), InvalidArgument);
  EXPECT_THROW(ResolveConfig("", {{"online_remix", "maybe"}}, kNoEnv), InvalidArgument);
  EXPECT_THROW(ResolveConfig("", {{"model_spec", "TasTas()"}}, kNoEnv), InvalidArgument);
  EXPECT_THROW(ResolveConfig("", {{"kernel", "3"}}, kNoEnv), InvalidArgument);
  EXPECT_THROW(ResolveConfig("/nonexistent/x.cfg", {}, kNoEnv), MissingFileError);
  EXPECT_EQ(EnvName("lambda_id"), "TASTAS_LAMBDA_ID");
}

}  // namespace
}  // namespace tastas
