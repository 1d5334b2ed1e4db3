#include <gtest/gtest.h>

#include <filesystem>

#include "polyscore/binio.hpp"
#include "polyscore/config.hpp"
#include "polyscore/error.hpp"
#include "polyscore/training.hpp"

using namespace polyscore;

TEST(ConfigText, ParsesKeysCommentsAndSpaces) {
  const auto kv = parse_config_text("# run\n\nlr = 1e-4\n  model.layers=3 \r\nhead = poly:learnt:16\nempty =\n");
  EXPECT_EQ(kv.size(), 4u);
  EXPECT_EQ(kv.at("lr"), "1e-4");
  EXPECT_EQ(kv.at("model.layers"), "3");
  EXPECT_EQ(kv.at("head"), "poly:learnt:16");
  EXPECT_EQ(kv.at("empty"), "");
}

TEST(ConfigText, Errors) {
  try {
    parse_config_text("a = 1\nno equals here\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
  EXPECT_THROW(parse_config_text("a = 1\na = 2\n"), ParseError);
  EXPECT_THROW(parse_config_text(" = 2\n"), ParseError);
  EXPECT_THROW(load_config(std::filesystem::temp_directory_path() / "polyscore_missing.cfg"), ParseError);
}

TEST(ConfigFile, LoadsFromDisk) {
  const auto p = std::filesystem::temp_directory_path() / "polyscore_test.cfg";
  binio::write_file(p, "steps = 12\n");
  EXPECT_EQ(load_config(p).at("steps"), "12");
}

TEST(ConfigReader, TypedValuesAndDefaults) {
  ConfigReader r(parse_config_text("steps = 12\nlr = 0.5\nfast = yes\nks = 1, 5,10\n"));
  EXPECT_EQ(r.size("steps", 3), 12u);
  EXPECT_EQ(r.size("batch", 7), 7u);
  EXPECT_EQ(r.real("lr", 1.0), 0.5);
  EXPECT_EQ(r.real("eps", 0.25), 0.25);
  EXPECT_TRUE(r.flag("fast", false));
  EXPECT_FALSE(r.flag("slow", false));
  EXPECT_EQ(r.size_list("ks", {1}), (std::vector<std::size_t>{1, 5, 10}));
  EXPECT_FALSE(r.optional_str("out").has_value());
  EXPECT_NO_THROW(r.finish());
  EXPECT_EQ(r.resolved().at("batch"), "7");
  EXPECT_EQ(r.resolved().at("eps"), "0.25");
  EXPECT_EQ(r.resolved().count("out"), 0u);
}

TEST(ConfigReader, ReportsEveryProblemAtOnce) {
  ConfigReader r(parse_config_text("steps = -1\nlr = nan\nfast = maybe\nks = 1,x\ntypo = 3\n"));
  r.size("steps", 1);
  r.real("lr", 1.0);
  r.flag("fast", false);
  r.size_list("ks", {1});
  r.required_str("data");
  r.required_u64("seed");
  EXPECT_EQ(r.problems().size(), 6u);
  try {
    r.finish();
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("7 configuration problem(s)"), std::string::npos);
    for (const char* key : {"steps", "lr", "fast", "ks", "data", "seed", "typo: unknown key"})
      EXPECT_NE(msg.find(key), std::string::npos) << key;
  }
}

TEST(ConfigReader, ParsedRecordsConverterErrors) {
  ConfigReader r(parse_config_text("optimizer = sgd\nschedule = plateau\n"));
  EXPECT_EQ(r.parsed<LrSchedule>("schedule", "inverse_sqrt", parse_lr_schedule), LrSchedule::Plateau);
  r.parsed<OptimizerKind>("optimizer", "adam_decay", parse_optimizer_kind);
  ASSERT_EQ(r.problems().size(), 1u);
  EXPECT_EQ(r.problems()[0].rfind("optimizer: ", 0), 0u);
}

TEST(ConfigReader, U64Seed) {
  ConfigReader r(parse_config_text("seed = 18446744073709551615\n"));
  EXPECT_EQ(r.required_u64("seed"), 18446744073709551615ull);
  EXPECT_NO_THROW(r.finish());
}
