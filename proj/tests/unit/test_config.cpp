#include <gtest/gtest.h>

#include "vthcl/config.hpp"
#include "vthcl/random.hpp"

using namespace vthcl;

namespace {

std::string key_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const KeyError& e) {
    return e.key();
  }
  return "<no error>";
}

}  // namespace

TEST(TrainConfig, EmptyTextGivesDocumentedDefaults) {
  const auto c = parse_train_config("");
  EXPECT_EQ(c.temperature, 0.07);
  EXPECT_EQ(c.lr0, 0.03);
  EXPECT_EQ(c.alpha, 2);
  EXPECT_EQ(c.tau, 8);
  EXPECT_EQ(c.sgd_momentum, 0.9);
  EXPECT_EQ(c.weight_decay, 1e-4);
  EXPECT_EQ(c.bank_momentum, 0.5);
  EXPECT_EQ(c.embedding_dim, 128);
  EXPECT_EQ(c.taps, (std::vector<std::string>{"res3", "res4", "res5"}));
  EXPECT_EQ(to_text(c), to_text(TrainConfig{}));
}

TEST(TrainConfig, ConstraintViolationNamesKey) {
  EXPECT_EQ(key_of([] { parse_train_config("alpha=3\ntau=8"); }), "alpha");
  EXPECT_EQ(key_of([] { parse_train_config("tau=7"); }), "tau");
  EXPECT_EQ(key_of([] { parse_train_config("temperature=0"); }), "temperature");
  EXPECT_EQ(key_of([] { parse_train_config("taps=res5,res3"); }), "taps");
  EXPECT_EQ(key_of([] { parse_train_config("level_weights=1,1"); }), "level_weights");
}

TEST(TrainConfig, UnknownKeyAndTypeMismatch) {
  EXPECT_EQ(key_of([] { parse_train_config("learning_rate=0.1"); }), "learning_rate");
  EXPECT_EQ(key_of([] { parse_train_config("epochs=ten"); }), "epochs");
  EXPECT_EQ(key_of([] { parse_train_config("lr0=0.1x"); }), "lr0");
  EXPECT_EQ(key_of([] { parse_train_config("renormalize_bank=maybe"); }), "renormalize_bank");
  EXPECT_EQ(key_of([] { parse_train_config("seed=1\nseed=2"); }), "seed");
  EXPECT_THROW(parse_train_config("just text"), ConfigError);
}

TEST(TrainConfig, TextRoundTrip) {
  const auto c = parse_train_config(
      "# desk\n lr0 = 0.05 \nbatch_size=8\ntaps=res4,res5\nlevel_weights=0.5,1\nseed=42\n"
      "pair_mode=instance_discrimination\ntemporal_kernel=0,1,1,1\n");
  EXPECT_EQ(c.lr0, 0.05);
  EXPECT_EQ(c.batch_size, 8);
  EXPECT_EQ(c.level_weights, (std::vector<double>{0.5, 1.0}));
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.pair_mode, PairMode::instance_discrimination);
  EXPECT_EQ(c.temporal_kernel, (std::vector<bool>{false, true, true, true}));
  EXPECT_EQ(to_text(parse_train_config(to_text(c))), to_text(c));
  EXPECT_NE(to_text(c).find("temperature=0.07\n"), std::string::npos);
}

TEST(TrainConfig, DerivedEncoderConfigs) {
  TrainConfig c;
  const auto slow = c.encoder_config(Pathway::slow), fast = c.encoder_config(Pathway::fast);
  EXPECT_EQ(slow.clip_frames, 8);
  EXPECT_EQ(fast.clip_frames, 16);
  EXPECT_EQ(fast.widths(), (std::vector<int>{4, 8, 16, 32}));
  c.pair_mode = PairMode::instance_discrimination;
  EXPECT_EQ(c.encoder_config(Pathway::fast).clip_frames, 8);
}

TEST(GeneratorConfig, ParseAndValidate) {
  const auto g = parse_generator_config("height=32\nwidth=48\nspeeds=0.5,1,2\n");
  EXPECT_EQ(g.height, 32);
  EXPECT_EQ(g.speeds[2], 2.0);
  EXPECT_THROW(parse_generator_config("height=8"), ConfigError);
  EXPECT_EQ(key_of([] { parse_generator_config("speeds=1,2"); }), "speeds");
  EXPECT_EQ(key_of([] { parse_generator_config("colour=red"); }), "colour");
}

TEST(EncoderConfigText, RoundTrip) {
  EncoderConfig e;
  e.pathway = Pathway::fast;
  e.width_multiplier = 0.5;
  e.clip_frames = 16;
  e.taps = {"res5"};
  const auto back = encoder_config_from_entries(kv::parse(encoder_config_text(e)));
  EXPECT_EQ(encoder_config_text(back), encoder_config_text(e));
  EXPECT_THROW(encoder_config_from_entries(kv::parse("a=1")), FormatError);
}

TEST(Seeds, DerivedStreamsDiffer) {
  EXPECT_EQ(derive_seed(1, {2, 3}), derive_seed(1, {2, 3}));
  EXPECT_NE(derive_seed(1, {2, 3}), derive_seed(1, {3, 2}));
  EXPECT_NE(derive_seed(1, {2}), derive_seed(2, {2}));
}
