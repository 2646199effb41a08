#pragma once

// Pretraining loop: tempo-pair batches through both encoders and heads, the
// hierarchical loss, one SGD step, then bank updates with the detached
// embeddings of that step.
//
// Every random draw comes from a stream derived from (seed, purpose, epoch or
// step), so resuming from a checkpoint needs no saved generator state.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "vthcl/checkpoint.hpp"
#include "vthcl/contrastive.hpp"
#include "vthcl/model.hpp"
#include "vthcl/synth_data.hpp"

namespace vthcl {

// lr0 * 0.5 * (1 + cos(pi * step / total))
inline double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double lr0) {
  if (step > total_steps)
    throw BoundsError("cosine_lr: step " + std::to_string(step) + " > total_steps " + std::to_string(total_steps));
  if (total_steps == 0) return lr0;
  if (step == total_steps) return 0.0;
  const double ratio = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi * ratio));
}

template <typename T>
struct ForwardResult {
  HierarchicalLoss<T> loss;
  EncoderTrace<T> slow, fast;
};

// Batched forward through both encoders (batch statistics), the heads and the
// hierarchical loss. With `grads` non-null, parameter gradients accumulate
// into it.
template <typename T>
ForwardResult<T> forward_backward(const Model<T>& model, const BankSet<T>& banks, Tensor<T> slow_input,
                                  Tensor<T> fast_input, std::span<const int> ids, const StepNegatives& negatives,
                                  const LossConfig& loss_cfg, Model<T>* grads) {
  ForwardResult<T> r;
  r.slow = encoder_forward(model.slow, std::move(slow_input), BnMode::batch_stats);
  r.fast = encoder_forward(model.fast, std::move(fast_input), BnMode::batch_stats);
  PooledPyramid<T> pooled_slow, pooled_fast;
  for (const auto& tap : loss_cfg.taps) {
    pooled_slow[tap] = pool_batch(r.slow.outputs[model.slow.config.stage_index(tap)]);
    pooled_fast[tap] = pool_batch(r.fast.outputs[model.fast.config.stage_index(tap)]);
  }
  if (!grads) {
    r.loss = hierarchical_loss(pooled_fast, pooled_slow, model.heads, banks, ids, negatives, loss_cfg);
    return r;
  }
  HierarchicalGrads<T> hg;
  hg.heads = std::move(grads->heads);
  r.loss = hierarchical_loss(pooled_fast, pooled_slow, model.heads, banks, ids, negatives, loss_cfg, &hg);
  grads->heads = std::move(hg.heads);
  for (auto p : {Pathway::slow, Pathway::fast}) {
    const auto& enc = model.encoder(p);
    const auto& tr = p == Pathway::slow ? r.slow : r.fast;
    auto& pooled_grads = p == Pathway::slow ? hg.pooled_slow : hg.pooled_fast;
    std::vector<Tensor<T>> out_grads(enc.stages.size());
    for (const auto& tap : loss_cfg.taps) {
      const int s = enc.config.stage_index(tap);
      out_grads[s] = unpool_batch(pooled_grads.at(tap), tr.outputs[s].shape());
    }
    encoder_backward(enc, tr, out_grads, grads->encoder(p));
  }
  return r;
}

struct StepMetrics {
  std::uint64_t step = 0;  // index of the step taken (0-based)
  double lr = 0;
  double total_loss = 0;
  std::map<std::string, double> level_loss;  // L_f + L_s per tap, unweighted
};

// `step= lr= loss_total= loss_res3= ...`; numbers use the shortest
// round-trip representation, so equal lines mean bit-equal values.
inline std::string format_log_line(const StepMetrics& m, const std::vector<std::string>& taps) {
  std::string line = "step=" + std::to_string(m.step) + " lr=" + kv::format_double(m.lr) +
                     " loss_total=" + kv::format_double(m.total_loss);
  for (const auto& tap : taps) line += " loss_" + tap + "=" + kv::format_double(m.level_loss.at(tap));
  return line;
}

namespace detail {

inline std::string logit_dump(const HierarchicalLoss<float>& loss) {
  std::ostringstream os;
  for (const auto& [tap, level] : loss.levels) {
    os << " " << tap << ": L_f=" << level.fast_query << " L_s=" << level.slow_query << " h(q,k+)_fast=[";
    for (std::size_t i = 0; i < level.positive_logits_fast.size(); ++i)
      os << (i ? "," : "") << level.positive_logits_fast[i];
    os << "] h(q,k+)_slow=[";
    for (std::size_t i = 0; i < level.positive_logits_slow.size(); ++i)
      os << (i ? "," : "") << level.positive_logits_slow[i];
    os << "]";
  }
  return os.str();
}

}  // namespace detail

// One SGD step on a batch of tempo pairs; banks are updated afterwards.
inline StepMetrics train_step(TrainerState& state, const std::vector<TempoPair>& batch) {
  const auto& cfg = state.config;
  if (batch.empty()) throw ShapeError("train_step: empty batch");
  std::vector<int> ids;
  std::vector<const Tensor<float>*> slow_clips, fast_clips;
  for (const auto& p : batch) {
    if (p.instance_id < 0 || p.instance_id >= state.num_instances)
      throw LookupError("instance id " + std::to_string(p.instance_id) + " outside the corpus");
    ids.push_back(p.instance_id);
    slow_clips.push_back(&p.slow);
    fast_clips.push_back(cfg.pair_mode == PairMode::instance_discrimination ? &p.slow : &p.fast);
  }

  const auto loss_cfg = cfg.loss_config();
  const auto n = static_cast<std::size_t>(state.num_instances);
  Rng rng = make_rng(cfg.seed, {stream::negatives, state.step});
  const auto negatives = sample_step_negatives(ids, n, loss_cfg.negatives_for(n), rng);

  Model<float> grads = zeros_like(state.model);
  auto fr = forward_backward(state.model, state.banks, pack_clips<float>(slow_clips), pack_clips<float>(fast_clips),
                             ids, negatives, loss_cfg, &grads);

  StepMetrics m;
  m.step = state.step;
  m.lr = cosine_lr(std::min(state.step, state.total_steps()), state.total_steps(), cfg.lr0);
  m.total_loss = fr.loss.total;
  bool finite = std::isfinite(fr.loss.total);
  for (const auto& [tap, level] : fr.loss.levels) {
    m.level_loss[tap] = level.total();
    finite = finite && std::isfinite(level.total());
  }
  if (!finite)
    throw NonFiniteError("non-finite loss at step " + std::to_string(state.step) + ";" + detail::logit_dump(fr.loss));

  std::map<std::string, const Tensor<float>*> grad_of;
  grads.for_each_parameter([&](const std::string& name, Tensor<float>& g, bool) { grad_of[name] = &g; });
  const SgdConfig sgd{cfg.sgd_momentum, cfg.weight_decay};
  state.model.for_each_parameter([&](const std::string& name, Tensor<float>& p, bool decay) {
    sgd_update(name, p, *grad_of.at(name), decay, m.lr, sgd, state.optimizer);
  });
  update_running_stats(state.model.slow, fr.slow, cfg.bn_momentum);
  update_running_stats(state.model.fast, fr.fast, cfg.bn_momentum);

  for (const auto& [tap, level] : fr.loss.levels) {
    state.banks.fast.at(tap).update(ids, level.z_fast, cfg.renormalize_bank);
    state.banks.slow.at(tap).update(ids, level.z_slow, cfg.renormalize_bank);
  }
  ++state.step;
  return m;
}

// Instance order for one epoch: each instance appears exactly once.
inline std::vector<int> epoch_order(std::uint64_t seed, int epoch, int num_instances) {
  std::vector<int> order(num_instances);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, {stream::epoch_order, static_cast<std::uint64_t>(epoch)});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

inline TempoPair training_pair(const VideoInstance& v, const TrainConfig& cfg, int epoch) {
  Rng rng = make_rng(cfg.seed, {stream::clip_start, static_cast<std::uint64_t>(epoch),
                                static_cast<std::uint64_t>(v.instance_id)});
  return make_tempo_pair(sample_raw_clip(v, choose_clip_start(v, rng)), cfg.tau, cfg.alpha);
}

struct PretrainOptions {
  std::filesystem::path out_dir;  // empty: no files written
  bool resume = false;            // continue from out_dir/checkpoint.vtck if present
  int stop_after_epochs = -1;     // stop early after this many epochs of this call
  std::ostream* log = nullptr;    // per-step log lines
  std::function<void(const StepMetrics&)> on_step;
};

struct PretrainResult {
  TrainerState state;
  std::vector<StepMetrics> history;  // steps taken by this call
  std::filesystem::path checkpoint;  // last checkpoint written, if any
};

inline std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir) {
  return out_dir / "checkpoint.vtck";
}

inline PretrainResult pretrain(const std::vector<VideoInstance>& dataset, const TrainConfig& cfg,
                               const PretrainOptions& opt = {}) {
  cfg.validate();
  const int n = static_cast<int>(dataset.size());
  for (int i = 0; i < n; ++i)
    if (dataset[i].instance_id != i)
      throw ValidationError("dataset entry " + std::to_string(i) + " has instance_id " +
                            std::to_string(dataset[i].instance_id) + "; ids must be 0..n-1 in order");

  PretrainResult res;
  const bool files = !opt.out_dir.empty();
  std::ofstream log_file;
  if (files) {
    std::error_code ec;
    std::filesystem::create_directories(opt.out_dir, ec);
    if (ec) throw IoError("cannot create '" + opt.out_dir.string() + "': " + ec.message());
    res.checkpoint = checkpoint_path(opt.out_dir);
  }
  if (files && opt.resume && std::filesystem::exists(res.checkpoint)) {
    res.state = load_checkpoint(res.checkpoint);
    if (to_text(res.state.config) != to_text(cfg))
      throw ConfigError("resume: configuration differs from the one stored in " + res.checkpoint.string());
    if (res.state.num_instances != n)
      throw ConfigError("resume: checkpoint was trained on " + std::to_string(res.state.num_instances) +
                        " instances, corpus has " + std::to_string(n));
  } else {
    res.state = init_trainer(cfg, n);
  }
  if (files) {
    const auto path = opt.out_dir / "train.log";
    log_file.open(path, res.state.step > 0 ? std::ios::app : std::ios::trunc);
    if (!log_file) throw IoError("cannot open '" + path.string() + "' for writing");
  }

  auto& st = res.state;
  const int spe = st.steps_per_epoch();
  if (files && st.step == 0) save_checkpoint(res.checkpoint, st);
  int epochs_run = 0;
  for (int epoch = static_cast<int>(st.step / spe); epoch < cfg.epochs; ++epoch) {
    if (opt.stop_after_epochs >= 0 && epochs_run >= opt.stop_after_epochs) break;
    const auto order = epoch_order(cfg.seed, epoch, n);
    for (int b = static_cast<int>(st.step - static_cast<std::uint64_t>(epoch) * spe); b < spe; ++b) {
      std::vector<TempoPair> batch;
      for (int k = b * cfg.batch_size; k < std::min(n, (b + 1) * cfg.batch_size); ++k)
        batch.push_back(training_pair(dataset[order[k]], cfg, epoch));
      auto m = train_step(st, batch);
      const auto line = format_log_line(m, cfg.taps);
      if (opt.log) *opt.log << line << "\n";
      if (log_file) log_file << line << "\n";
      if (opt.on_step) opt.on_step(m);
      res.history.push_back(std::move(m));
    }
    if (log_file) log_file.flush();
    if (files) save_checkpoint(res.checkpoint, st);
    ++epochs_run;
  }
  return res;
}

}  // namespace vthcl
