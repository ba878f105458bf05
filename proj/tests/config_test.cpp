#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "csst/config.hpp"
#include "fixtures.hpp"

using namespace csst;

namespace {

std::filesystem::path write_file(const std::string& name, const std::string& body) {
  const auto dir = csst::testing::scratch_dir("config_" + name);
  const auto path = dir / "run.cfg";
  std::ofstream(path) << body;
  return path;
}

std::string error_key(RunConfig& c, const std::string& key, const std::string& value) {
  try {
    c.set(key, value);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "";
}

}  // namespace

TEST(RunConfig, DefaultsValidate) {
  RunConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.train.epochs, TrainConfig{}.epochs);
  EXPECT_EQ(c.css.eta, CssConfig{}.eta);
}

TEST(RunConfig, SetsEveryKind) {
  RunConfig c;
  c.set("data.n_train", "123");
  c.set("css.eta", "0.7");
  c.set("train.css", "on");
  c.set("train.cr", "l");
  c.set("train.fusion", "sigmoid_product");
  c.set("train.cr_qtypes", "1,0,1,1,0");
  c.set("eval.ai_ks", "1, 3");
  EXPECT_EQ(c.data.n_train, 123u);
  EXPECT_EQ(c.css.eta, 0.7);
  EXPECT_TRUE(c.train.css_enabled);
  EXPECT_EQ(c.train.cr_mode, CrMode::kLocal);
  EXPECT_EQ(c.train.fusion, FusionMode::kSigmoidProduct);
  EXPECT_EQ(c.train.cr_qtype_mask, (std::vector<std::uint8_t>{1, 0, 1, 1, 0}));
  EXPECT_EQ(c.eval.ai_ks, (std::vector<std::size_t>{1, 3}));
  EXPECT_NO_THROW(c.validate());
}

TEST(RunConfig, SeedFansOut) {
  RunConfig c;
  c.set("seed", "9");
  EXPECT_EQ(c.data.seed, 9u);
  EXPECT_EQ(c.train.seed, 9u);
  EXPECT_EQ(c.eval.rephrasing_seed, 9u);
}

TEST(RunConfig, ErrorsNameTheKey) {
  RunConfig c;
  EXPECT_EQ(error_key(c, "data.nonsense", "1"), "data.nonsense");
  EXPECT_EQ(error_key(c, "data.n_train", "-3"), "data.n_train");
  EXPECT_EQ(error_key(c, "data.n_train", "12x"), "data.n_train");
  EXPECT_EQ(error_key(c, "css.eta", ""), "css.eta");
  EXPECT_EQ(error_key(c, "train.css", "maybe"), "train.css");
  EXPECT_EQ(error_key(c, "train.cr", "xyz"), "train.cr");
  EXPECT_EQ(error_key(c, "train.fusion", "max"), "train.fusion");
  EXPECT_EQ(error_key(c, "train.cr_qtypes", "1,2"), "train.cr_qtypes");
  try {
    c.set("data.nonsense", "1");
  } catch (const ConfigError& e) {
    EXPECT_STREQ(e.what(), "data.nonsense: unknown key");
  }
}

TEST(RunConfig, CrossFieldValidation) {
  RunConfig c;
  c.set("train.cr_qtypes", "1,0");
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.set("eval.cs_ks", "1,5");
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.set("css.eta", "1.5");
  try {
    c.validate();
    FAIL() << "expected a ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "css");
  }
}

TEST(RunConfig, FileWithCommentsAndLineNumbers) {
  RunConfig c;
  c.load_file(write_file("ok", "# header\n\ndata.n_train = 77   # trailing\n  train.cr = g\n"));
  EXPECT_EQ(c.data.n_train, 77u);
  EXPECT_EQ(c.train.cr_mode, CrMode::kGlobal);

  try {
    c.load_file(write_file("bad", "data.n_test = 10\ntrain.epochs = ten\n"));
    FAIL() << "expected a ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "train.epochs");
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(c.load_file(write_file("noeq", "data.n_test 10\n")), ConfigError);
  EXPECT_THROW(c.load_file("/nonexistent/run.cfg"), ConfigError);
}

TEST(RunConfig, TextDumpRoundTrips) {
  RunConfig a;
  a.set("seed", "4");
  a.set("css.delta", "0.25");
  a.set("train.cr", "g");
  a.set("train.cr_qtypes", "1,1,0,1,1");
  a.set("eval.cs_ks", "1,2");
  const auto path = write_file("dump", a.to_text());
  RunConfig b;
  b.load_file(path);
  EXPECT_EQ(a.to_text(), b.to_text());
  EXPECT_EQ(b.css.delta, 0.25);
}

TEST(ConfigKeys, UniqueAndSettable) {
  std::set<std::string> seen;
  const RunConfig defaults;
  for (const auto& k : config_keys()) {
    EXPECT_TRUE(seen.insert(k.name).second) << k.name;
    EXPECT_FALSE(k.help.empty()) << k.name;
  }
  // every dumped key is listed and accepts its own dumped value
  std::istringstream text(defaults.to_text());
  std::string line;
  while (std::getline(text, line)) {
    const auto eq = line.find(" = ");
    const std::string key = line.substr(0, eq);
    EXPECT_TRUE(seen.count(key)) << key;
    RunConfig c;
    EXPECT_NO_THROW(c.set(key, line.substr(eq + 3))) << key;
  }
}
