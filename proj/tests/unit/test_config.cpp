#include <gtest/gtest.h>

#include "hpo/config.hpp"

using namespace hpo;

namespace {

std::size_t parse_error_line(const std::string& text) {
  try {
    ConfigDoc::parse(text);
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

std::string config_error_field(const std::string& text) {
  try {
    validate(parse_experiment_config(text));
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "";
}

}  // namespace

TEST(ConfigDocTest, SectionsKeysAndTypes) {
  const ConfigDoc d = ConfigDoc::parse(
      "top = 1\n"
      "[a.b]\n"
      "s = \"x # not a comment\"  # comment\n"
      "w = bare_word\n"
      "f = -2.5e-1\n"
      "i = -3\n"
      "b = true\n"
      "arr = [1, 2.5, -3]\n"
      "strs = [\"p\", q]\n");
  EXPECT_EQ(d.get_size("top", 0), 1u);
  EXPECT_EQ(d.get_string("a.b.s", ""), "x # not a comment");
  EXPECT_EQ(d.get_string("a.b.w", ""), "bare_word");
  EXPECT_DOUBLE_EQ(d.get_double("a.b.f", 0), -0.25);
  EXPECT_DOUBLE_EQ(d.get_double("a.b.i", 0), -3.0);
  EXPECT_TRUE(d.get_bool("a.b.b", false));
  EXPECT_EQ(d.get_doubles("a.b.arr", {}), (Vec{1, 2.5, -3}));
  EXPECT_EQ(d.get_strings("a.b.strs", {}), (std::vector<std::string>{"p", "q"}));
  EXPECT_EQ(d.get_double("missing", 7.0), 7.0);
}

TEST(ConfigDocTest, EscapesInStrings) {
  const ConfigDoc d = ConfigDoc::parse("s = \"a\\\"b\\\\c\\n\"\n");
  EXPECT_EQ(d.get_string("s", ""), "a\"b\\c\n");
}

TEST(ConfigDocTest, GrammarErrorsCarryLineNumbers) {
  EXPECT_EQ(parse_error_line("a = 1\nb\n"), 2u);
  EXPECT_EQ(parse_error_line("a = 1\n[sec\n"), 2u);
  EXPECT_EQ(parse_error_line("a = \"open\n"), 1u);
  EXPECT_EQ(parse_error_line("\n\na = [1, 2\n"), 3u);
  EXPECT_EQ(parse_error_line("a = [1,]\n"), 1u);
  EXPECT_EQ(parse_error_line("a = 1\na = 2\n"), 2u);
  EXPECT_EQ(parse_error_line("[s]\n[s]\n"), 2u);
  EXPECT_EQ(parse_error_line("a = 1.2.3\n"), 1u);
  EXPECT_EQ(parse_error_line("a = \n"), 1u);
  EXPECT_EQ(parse_error_line("bad key = 1\n"), 1u);
  EXPECT_EQ(parse_error_line("a = \"x\\q\"\n"), 1u);
}

TEST(ConfigDocTest, TypeMismatchNamesTheField) {
  const ConfigDoc d = ConfigDoc::parse("[m]\nK = 1.5\nb = 1\ns = 3\nl = [1, 2]\nneg = -1\n");
  try {
    d.get_size("m.K", 0);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "m.K");
  }
  EXPECT_THROW(d.get_bool("m.b", false), ConfigError);
  EXPECT_THROW(d.get_string("m.s", ""), ConfigError);
  EXPECT_THROW(d.get_double("m.l", 0), ConfigError);
  EXPECT_THROW(d.get_u64("m.neg", 0), ConfigError);
}

TEST(ExperimentConfigTest, DefaultsFromEmptyText) {
  const ExperimentConfig c = parse_experiment_config("");
  EXPECT_EQ(c, ExperimentConfig{});
  EXPECT_NO_THROW(validate(c));
}

TEST(ExperimentConfigTest, ReadsEverySection) {
  const ExperimentConfig c = parse_experiment_config(
      "[data]\nn = 50\nd = 2\nseed = 9\n[data.corrupt]\np = 0.3\nclean_pool = 10\n"
      "[split]\nU = 7\ngamma = 0.5\nmode = with_replacement\nmaster_seed = 4\n"
      "[problem]\nkind = hyperclean_softmax\n"
      "[method]\nkind = trhg\nK = 30\nh = 5\nalpha_in = 0.05\n"
      "[strategy]\nkind = oehg\nT = 40\nlambda0 = 2\nalpha_deploy = 0.2\n"
      "[strategy.outer]\nkind = adam\nalpha_out = 0.1\n"
      "[biasvar]\ngrid = \"0.1:1:3\"\nR = 10\n"
      "[output]\ndir = \"res\"\nformats = [csv]\n");
  EXPECT_EQ(c.data.n, 50u);
  EXPECT_EQ(c.data.corrupt_p, 0.3);
  EXPECT_EQ(c.data.clean_pool, 10u);
  EXPECT_EQ(c.split.mode, SplitMode::with_replacement);
  EXPECT_EQ(c.problem.kind, ModelKind::hyperclean_softmax);
  EXPECT_EQ(c.method.kind, MethodKind::trhg);
  EXPECT_EQ(c.method.h, 5u);
  EXPECT_EQ(c.strategy.kind, StrategyKind::oehg);
  EXPECT_EQ(c.strategy.outer, OptimizerKind::adam);
  EXPECT_EQ(c.strategy.lambda0, (Vec{2.0}));
  ASSERT_EQ(c.biasvar.grid.size(), 3u);
  EXPECT_NEAR(c.biasvar.grid[1], 0.55, 1e-15);
  EXPECT_EQ(c.output.formats, (std::vector<std::string>{"csv"}));
  EXPECT_TRUE(c.output.has("csv"));
  EXPECT_FALSE(c.output.has("json"));
}

TEST(ExperimentConfigTest, UnknownKeyIsRejectedByName) {
  try {
    parse_experiment_config("[method]\nKK = 3\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "method.KK");
  }
}

TEST(ExperimentConfigTest, UnknownEnumValues) {
  EXPECT_THROW(parse_experiment_config("[method]\nkind = magic\n"), ConfigError);
  EXPECT_THROW(parse_experiment_config("[strategy]\nkind = greedy\n"), ConfigError);
  EXPECT_THROW(parse_experiment_config("[split]\nmode = sometimes\n"), ConfigError);
  EXPECT_THROW(parse_experiment_config("[strategy.outer]\nkind = rmsprop\n"), ConfigError);
}

TEST(ExperimentConfigTest, RoundTripThroughText) {
  ExperimentConfig c;
  c.data.noise_sigma = 0.1 + 0.2;  // not exactly representable as a short decimal
  c.data.path = "dir with \"quotes\"\\and slashes";
  c.data.beta_seed = 18446744073709551615ull;
  c.split.gamma = 1.0 / 3.0;
  c.problem.kind = ModelKind::elastic_net;
  c.method.solver_tol = 1e-300;
  c.strategy.lambda0 = {-1.5, 2.0};
  c.strategy.warm_start = true;
  c.strategy.alpha_out = 3.0;
  c.biasvar.grid = {0.001, 1e3};
  c.output.formats = {"json"};
  const ExperimentConfig back = parse_experiment_config(to_config_text(c));
  EXPECT_EQ(back, c);
  EXPECT_EQ(to_config_text(back), to_config_text(c));
  EXPECT_EQ(parse_experiment_config(to_config_text(ExperimentConfig{})), ExperimentConfig{});
}

TEST(ExperimentConfigTest, ValidationFieldPaths) {
  EXPECT_EQ(config_error_field("[strategy]\nT = 0\n"), "strategy.T");
  EXPECT_EQ(config_error_field("[biasvar]\nR = 1\n"), "biasvar.R");
  EXPECT_EQ(config_error_field("[split]\ngamma = 1.5\n"), "split.gamma");
  EXPECT_EQ(config_error_field("[split]\nU = 0\n"), "split.U");
  EXPECT_EQ(config_error_field("[method]\nalpha_in = 0\n"), "method.alpha_in");
  EXPECT_EQ(config_error_field("[method]\nkind = trhg\nK = 3\nh = 4\n"), "method.h");
  EXPECT_EQ(config_error_field("[method]\nkind = aid_cg\nZ = 0\n"), "method.Z");
  EXPECT_EQ(config_error_field("[strategy.outer]\nalpha_out = -1\n"), "strategy.outer.alpha_out");
  EXPECT_EQ(config_error_field("[data]\nsource = libsvm\n"), "data.path");
  EXPECT_EQ(config_error_field("[data]\nn = 1\n"), "data.n");
  EXPECT_EQ(config_error_field("[data.corrupt]\np = 2\n"), "data.corrupt.p");
  EXPECT_EQ(config_error_field("[output]\nformats = [xml]\n"), "output.formats");
  EXPECT_EQ(config_error_field("[biasvar]\ngrid = [0.1, -1]\n"), "biasvar.grid");
  EXPECT_EQ(config_error_field("[data]\ntest_size = 5\ntest_fraction = 0.2\n"), "data.test_fraction");
}

TEST(Grid, EvenlySpacedInclusive) {
  EXPECT_EQ(parse_grid("0:1:5"), (Vec{0, 0.25, 0.5, 0.75, 1}));
  EXPECT_EQ(parse_grid("2:9:1"), (Vec{2}));
  EXPECT_THROW(parse_grid("0:1"), ConfigError);
  EXPECT_THROW(parse_grid("0:1:0"), ConfigError);
  EXPECT_THROW(parse_grid("a:1:3"), ConfigError);
}
