#pragma once

// The trainable model (both encoders plus heads) and the complete
// pretraining state that a checkpoint captures.

#include <cstdint>
#include <string>

#include "vthcl/config.hpp"
#include "vthcl/encoder.hpp"
#include "vthcl/memory_bank.hpp"
#include "vthcl/optimizer.hpp"
#include "vthcl/projection_head.hpp"

namespace vthcl {

template <typename T>
struct Model {
  Encoder<T> slow;
  Encoder<T> fast;
  HeadSet<T> heads;

  Encoder<T>& encoder(Pathway p) { return p == Pathway::fast ? fast : slow; }
  const Encoder<T>& encoder(Pathway p) const { return p == Pathway::fast ? fast : slow; }

  // f(name, tensor, weight_decay_applies); names are globally unique.
  template <typename F>
  void for_each_parameter(F&& f) {
    for (auto p : {Pathway::slow, Pathway::fast}) {
      const std::string prefix = "encoder." + std::string(to_string(p)) + ".";
      encoder(p).for_each_parameter([&](const std::string& n, Tensor<T>& t, bool d) { f(prefix + n, t, d); });
    }
    heads.for_each_parameter([&](const std::string& n, Tensor<T>& t, bool d) { f("head." + n, t, d); });
  }
  template <typename F>
  void for_each_buffer(F&& f) {
    for (auto p : {Pathway::slow, Pathway::fast}) {
      const std::string prefix = "encoder." + std::string(to_string(p)) + ".";
      encoder(p).for_each_buffer([&](const std::string& n, Tensor<T>& t) { f(prefix + n, t); });
    }
  }

  template <typename U>
  Model<U> cast() const {
    return {slow.template cast<U>(), fast.template cast<U>(), heads.template cast<U>()};
  }
};

template <typename T>
Model<T> zeros_like(const Model<T>& m) {
  return {zeros_like(m.slow), zeros_like(m.fast), zeros_like(m.heads)};
}

template <typename T>
Model<T> init_model(const TrainConfig& cfg) {
  const auto slow_cfg = cfg.encoder_config(Pathway::slow);
  const auto fast_cfg = cfg.encoder_config(Pathway::fast);
  return {init_encoder<T>(slow_cfg, cfg.seed), init_encoder<T>(fast_cfg, cfg.seed),
          init_heads<T>(fast_cfg, slow_cfg, static_cast<std::size_t>(cfg.embedding_dim), cfg.seed)};
}

struct TrainerState {
  TrainConfig config;
  Model<float> model;
  BankSet<float> banks;
  SgdState<float> optimizer;
  std::uint64_t step = 0;
  int num_instances = 0;

  int steps_per_epoch() const { return (num_instances + config.batch_size - 1) / config.batch_size; }
  std::uint64_t total_steps() const {
    return static_cast<std::uint64_t>(steps_per_epoch()) * static_cast<std::uint64_t>(config.epochs);
  }
};

// Fresh state for a corpus of `num_instances` videos.
inline TrainerState init_trainer(const TrainConfig& cfg, int num_instances) {
  cfg.validate();
  if (num_instances < 2)
    throw ConfigError("pretraining needs at least 2 instances so every query has a negative (n=" +
                      std::to_string(num_instances) + ")");
  cfg.loss_config().validate(static_cast<std::size_t>(num_instances));
  TrainerState s;
  s.config = cfg;
  s.num_instances = num_instances;
  s.model = init_model<float>(cfg);
  s.banks = init_banks<float>(cfg.taps, static_cast<std::size_t>(num_instances),
                              static_cast<std::size_t>(cfg.embedding_dim), cfg.seed, cfg.bank_momentum);
  return s;
}

}  // namespace vthcl
