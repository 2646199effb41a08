#include <gtest/gtest.h>

#include <fstream>
#include <regex>
#include <sstream>

#include "oracles.hpp"
#include "vthcl/trainer.hpp"

using namespace vthcl;

namespace {

GeneratorConfig tiny_generator() {
  GeneratorConfig g;
  g.height = g.width = 16;
  g.min_radius = 3;
  g.max_radius = 4;
  return g;
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.stage_channels = {4, 6, 8, 8};
  c.embedding_dim = 8;
  c.batch_size = 4;
  c.epochs = 3;
  c.seed = 5;
  return c;
}

std::vector<VideoInstance> tiny_corpus(int n = 8) { return generate_dataset(n, 3, tiny_generator()); }

std::vector<TempoPair> first_batch(const std::vector<VideoInstance>& data, const TrainConfig& c) {
  std::vector<TempoPair> b;
  for (int i = 0; i < c.batch_size; ++i) b.push_back(training_pair(data[i], c, 0));
  return b;
}

std::map<std::string, Tensor<float>> params(Model<float>& m) {
  std::map<std::string, Tensor<float>> out;
  m.for_each_parameter([&](const std::string& n, Tensor<float>& t, bool) { out.emplace(n, t); });
  return out;
}

}  // namespace

TEST(CosineLr, Endpoints) {
  EXPECT_NEAR(cosine_lr(0, 1000, 0.03), 0.03, 1e-12);
  EXPECT_NEAR(cosine_lr(1000, 1000, 0.03), 0.0, 1e-12);
  EXPECT_NEAR(cosine_lr(500, 1000, 0.03), 0.015, 1e-12);
  EXPECT_NEAR(cosine_lr(250, 1000, 0.03), 0.03 * 0.5 * (1 + std::sqrt(0.5)), 1e-12);
  EXPECT_EQ(cosine_lr(0, 0, 0.03), 0.03);
  EXPECT_THROW(cosine_lr(11, 10, 0.03), BoundsError);
}

TEST(Sgd, MomentumAndDecayArithmetic) {
  SgdState<double> st;
  Tensor<double> p({2}, {1.0, -2.0});
  const Tensor<double> g({2}, {0.5, 0.25});
  const SgdConfig cfg{0.9, 0.1};
  sgd_update("w", p, g, true, 0.1, cfg, st);
  // v = g + wd p = (0.6, 0.05); p -= 0.1 v
  EXPECT_NEAR(p[0], 1.0 - 0.06, 1e-15);
  EXPECT_NEAR(p[1], -2.0 - 0.005, 1e-15);
  sgd_update("w", p, g, true, 0.1, cfg, st);
  const double v0 = 0.9 * 0.6 + 0.5 + 0.1 * 0.94;
  EXPECT_NEAR(p[0], 0.94 - 0.1 * v0, 1e-15);

  Tensor<double> bn({1}, {3.0});
  sgd_update("gamma", bn, Tensor<double>({1}, {0.0}), false, 0.1, cfg, st);
  EXPECT_EQ(bn[0], 3.0);  // no decay on batch-norm parameters
  EXPECT_THROW(sgd_update("w", p, Tensor<double>({3}), true, 0.1, cfg, st), ShapeError);
}

TEST(TrainStep, ZeroLearningRateLeavesParameters) {
  const auto data = tiny_corpus();
  auto st = init_trainer(tiny_config(), 8);
  st.config.lr0 = 0;
  const auto before = params(st.model);
  const auto batch = first_batch(data, st.config);
  train_step(st, batch);
  EXPECT_EQ(params(st.model), before);
  train_step(st, batch);
  EXPECT_EQ(params(st.model), before);
}

TEST(TrainStep, SingleInstanceCorpusRejected) {
  EXPECT_THROW(init_trainer(tiny_config(), 1), ConfigError);
}

TEST(TrainStep, UpdatesOnlyBatchBankRows) {
  const auto data = tiny_corpus();
  auto st = init_trainer(tiny_config(), 8);
  const auto before = st.banks;
  const auto m = train_step(st, first_batch(data, st.config));
  EXPECT_TRUE(std::isfinite(m.total_loss));
  EXPECT_EQ(m.level_loss.size(), 3u);
  std::vector<int> ids;
  for (const auto& p : first_batch(data, st.config)) ids.push_back(p.instance_id);
  for (auto p : {Pathway::slow, Pathway::fast})
    for (const auto& [tap, bank] : st.banks.of(p))
      for (int i = 0; i < 8; ++i) {
        const bool in_batch = std::find(ids.begin(), ids.end(), i) != ids.end();
        const auto& old = before.of(p).at(tap);
        const bool same = std::equal(bank.row(i), bank.row(i) + bank.dim(), old.row(i));
        EXPECT_EQ(same, !in_batch) << tap << " row " << i;
      }
  EXPECT_EQ(st.step, 1u);
}

TEST(TrainStep, NonFiniteLossDumpsLogits) {
  const auto data = tiny_corpus();
  auto st = init_trainer(tiny_config(), 8);
  st.model.heads.fast.at("res4").b2[0] = std::numeric_limits<float>::quiet_NaN();
  try {
    train_step(st, first_batch(data, st.config));
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("h(q,k+)_fast"), std::string::npos);
  }
}

TEST(TrainStep, UnknownIdRejected) {
  const auto data = tiny_corpus(10);
  auto st = init_trainer(tiny_config(), 8);
  std::vector<TempoPair> batch{training_pair(data[9], st.config, 0)};
  EXPECT_THROW(train_step(st, batch), LookupError);
}

TEST(TrainStep, TinyRunLowersLoss) {
  // n=8, B=4, 10 steps: the last steps sit below the first one.
  auto c = tiny_config();
  c.epochs = 5;
  const auto r = pretrain(tiny_corpus(), c);
  ASSERT_EQ(r.history.size(), 10u);
  const double first = r.history.front().total_loss;
  const double last = 0.5 * (r.history[8].total_loss + r.history[9].total_loss);
  EXPECT_LT(last, first);
}

TEST(Pretrain, DeterministicAcrossRuns) {
  const auto data = tiny_corpus();
  std::ostringstream a, b;
  PretrainOptions oa, ob;
  oa.log = &a;
  ob.log = &b;
  auto ra = pretrain(data, tiny_config(), oa);
  auto rb = pretrain(data, tiny_config(), ob);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(params(ra.state.model), params(rb.state.model));
}

TEST(Pretrain, ResumeIsBitExact) {
  const auto data = tiny_corpus();
  const auto dir_full = oracle::scratch_dir("resume_full"), dir_split = oracle::scratch_dir("resume_split");
  PretrainOptions full;
  full.out_dir = dir_full;
  auto r_full = pretrain(data, tiny_config(), full);

  PretrainOptions first;
  first.out_dir = dir_split;
  first.stop_after_epochs = 1;
  pretrain(data, tiny_config(), first);
  PretrainOptions rest;
  rest.out_dir = dir_split;
  rest.resume = true;
  auto r_split = pretrain(data, tiny_config(), rest);

  EXPECT_EQ(r_split.history.size(), 4u);
  EXPECT_EQ(params(r_full.state.model), params(r_split.state.model));
  EXPECT_TRUE(to_checkpoint(r_full.state).tensors == to_checkpoint(r_split.state).tensors);
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream f(p);
    return std::string(std::istreambuf_iterator<char>(f), {});
  };
  EXPECT_EQ(slurp(dir_full / "train.log"), slurp(dir_split / "train.log"));
  std::filesystem::remove_all(dir_full);
  std::filesystem::remove_all(dir_split);
}

TEST(Pretrain, ResumeWithDifferentConfigRejected) {
  const auto data = tiny_corpus();
  const auto dir = oracle::scratch_dir("resume_mismatch");
  PretrainOptions o;
  o.out_dir = dir;
  o.stop_after_epochs = 1;
  pretrain(data, tiny_config(), o);
  auto other = tiny_config();
  other.lr0 = 0.1;
  o.resume = true;
  EXPECT_THROW(pretrain(data, other, o), ConfigError);
  std::filesystem::remove_all(dir);
}

TEST(Pretrain, ZeroEpochsCheckpointIsInitialization) {
  auto c = tiny_config();
  c.epochs = 0;
  const auto dir = oracle::scratch_dir("zero_epochs");
  PretrainOptions o;
  o.out_dir = dir;
  const auto r = pretrain(tiny_corpus(), c, o);
  EXPECT_TRUE(r.history.empty());
  const auto saved = load_checkpoint(r.checkpoint);
  EXPECT_TRUE(to_checkpoint(saved).tensors == to_checkpoint(init_trainer(c, 8)).tensors);
  std::filesystem::remove_all(dir);
}

TEST(Pretrain, AlphaOneEqualsInstanceDiscrimination) {
  const auto data = tiny_corpus();
  auto tempo = tiny_config();
  tempo.alpha = 1;
  auto inst = tempo;
  inst.pair_mode = PairMode::instance_discrimination;
  std::ostringstream a, b;
  PretrainOptions oa, ob;
  oa.log = &a;
  ob.log = &b;
  auto ra = pretrain(data, tempo, oa);
  auto rb = pretrain(data, inst, ob);
  EXPECT_EQ(a.str(), b.str());
  EXPECT_EQ(params(ra.state.model), params(rb.state.model));
}

TEST(Pretrain, RequiresDenseIds) {
  auto data = tiny_corpus();
  std::swap(data[0], data[1]);
  EXPECT_THROW(pretrain(data, tiny_config()), ValidationError);
}

TEST(LogLine, Grammar) {
  StepMetrics m{7, 0.025, 3.5, {{"res3", 1.0}, {"res4", 1.25}, {"res5", 1.25}}};
  const auto line = format_log_line(m, {"res3", "res4", "res5"});
  EXPECT_EQ(line, "step=7 lr=0.025 loss_total=3.5 loss_res3=1 loss_res4=1.25 loss_res5=1.25");
  const std::regex grammar(R"(step=\d+ lr=\S+ loss_total=\S+( loss_res[345]=\S+)+)");
  EXPECT_TRUE(std::regex_match(line, grammar));
}

TEST(EpochOrder, PermutationAndSeeded) {
  auto a = epoch_order(1, 0, 50);
  EXPECT_EQ(a, epoch_order(1, 0, 50));
  EXPECT_NE(a, epoch_order(1, 1, 50));
  std::sort(a.begin(), a.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(a[i], i);
}

TEST(Checkpoint, RoundTripAndCorruption) {
  const auto data = tiny_corpus();
  auto st = init_trainer(tiny_config(), 8);
  train_step(st, first_batch(data, st.config));
  const auto file = to_checkpoint(st);
  const auto bytes = serialize(file);
  const auto back = from_checkpoint(deserialize(bytes, "mem"));
  EXPECT_EQ(back.step, 1u);
  EXPECT_EQ(to_text(back.config), to_text(st.config));
  EXPECT_TRUE(to_checkpoint(back).tensors == file.tensors);

  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(deserialize(bad, "mem"), FormatError);
  bad = bytes;
  bad[4] = 9;  // version
  EXPECT_THROW(deserialize(bad, "mem"), FormatError);
  bad = bytes;
  bad.resize(bytes.size() - 3);
  EXPECT_THROW(deserialize(bad, "mem"), FormatError);
  bad = bytes;
  bad.push_back(0);
  EXPECT_THROW(deserialize(bad, "mem"), FormatError);

  auto missing = file;
  missing.tensors.erase("bank.fast.res3");
  EXPECT_THROW(from_checkpoint(missing), FormatError);
  auto extra = file;
  extra.tensors.emplace("stray", Tensor<float>({1}));
  EXPECT_THROW(from_checkpoint(extra), FormatError);
  EXPECT_THROW(read_checkpoint_file("/nonexistent/ckpt.vtck"), IoError);
}

TEST(Checkpoint, ExportKeepsOnlySlowEncoder) {
  auto st = init_trainer(tiny_config(), 8);
  train_step(st, first_batch(tiny_corpus(), st.config));
  const auto full = to_checkpoint(st);
  const auto slim = export_slow_encoder(full);
  EXPECT_EQ(slim.kind, CheckpointKind::slow_encoder);
  EXPECT_LT(serialize(slim).size(), serialize(full).size());
  for (const auto& [name, t] : slim.tensors) EXPECT_EQ(name.rfind("encoder.slow.", 0), 0u) << name;
  const auto back = deserialize(serialize(slim), "mem");
  EXPECT_EQ(back.version, kCheckpointVersion);
  EXPECT_EQ(back.kind, CheckpointKind::slow_encoder);
  EXPECT_THROW(from_checkpoint(back), FormatError);

  const auto a = load_slow_encoder(full), b = load_slow_encoder(back);
  const auto clip = training_pair(tiny_corpus()[2], st.config, 0).slow;
  EXPECT_EQ(encode(clip, a).pooled, encode(clip, b).pooled);
  EXPECT_EQ(encode(clip, a).pooled, encode(clip, st.model.slow).pooled);
}
