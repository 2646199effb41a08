#pragma once

// Checkpoint container (little-endian):
//
//   "VTCK" | u32 version | u32 kind | u64 step | str32 metadata |
//   u32 count | count x (str32 name | u32 rank | rank x u64 dim | f32 payload)
//
// kind 1 holds the complete training state, kind 2 only the slow encoder.
// Metadata is key=value text; tensors are addressed by name.

#include <filesystem>
#include <map>
#include <set>
#include <string>

#include "vthcl/binary_io.hpp"
#include "vthcl/config.hpp"
#include "vthcl/model.hpp"

namespace vthcl {

inline constexpr char kCheckpointMagic[4] = {'V', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointKind : std::uint32_t { training_state = 1, slow_encoder = 2 };

struct CheckpointFile {
  std::uint32_t version = kCheckpointVersion;
  CheckpointKind kind = CheckpointKind::training_state;
  std::uint64_t step = 0;
  std::string metadata;
  std::map<std::string, Tensor<float>> tensors;
};

inline std::vector<char> serialize(const CheckpointFile& f) {
  io::Writer w;
  w.bytes(std::string_view(kCheckpointMagic, 4));
  w.u32(f.version);
  w.u32(static_cast<std::uint32_t>(f.kind));
  w.u64(f.step);
  w.str32(f.metadata);
  w.u32(static_cast<std::uint32_t>(f.tensors.size()));
  for (const auto& [name, t] : f.tensors) {
    w.str32(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u64(d);
    w.f32(t.span());
  }
  return w.buffer();
}

inline CheckpointFile deserialize(std::vector<char> bytes, const std::string& origin) {
  io::Reader r(std::move(bytes), origin);
  if (r.bytes(4) != std::string_view(kCheckpointMagic, 4)) throw FormatError(origin + ": not a checkpoint (bad magic)");
  CheckpointFile f;
  f.version = r.u32();
  if (f.version != kCheckpointVersion)
    throw FormatError(origin + ": unsupported checkpoint version " + std::to_string(f.version));
  const auto kind = r.u32();
  if (kind != 1 && kind != 2) throw FormatError(origin + ": unknown checkpoint kind " + std::to_string(kind));
  f.kind = static_cast<CheckpointKind>(kind);
  f.step = r.u64();
  f.metadata = r.str32();
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = r.str32();
    const auto rank = r.u32();
    if (rank > 8) throw FormatError(origin + ": tensor '" + name + "' has implausible rank");
    Shape shape(rank);
    std::size_t total = 1;
    for (auto& d : shape) {
      d = r.u64();
      if (d > (std::size_t{1} << 32)) throw FormatError(origin + ": tensor '" + name + "' has implausible dims");
      total *= d;
    }
    if (total > (std::size_t{1} << 32)) throw FormatError(origin + ": tensor '" + name + "' too large");
    Tensor<float> t(shape);
    r.f32(t.span());
    if (!f.tensors.emplace(std::move(name), std::move(t)).second) throw FormatError(origin + ": duplicate tensor");
  }
  if (!r.at_end()) throw FormatError(origin + ": trailing bytes after last tensor");
  return f;
}

inline void write_checkpoint_file(const std::filesystem::path& path, const CheckpointFile& f) {
  const auto bytes = serialize(f);
  io::write_file_atomic(path, bytes);
}

inline CheckpointFile read_checkpoint_file(const std::filesystem::path& path) {
  return deserialize(io::read_file(path), path.string());
}

namespace detail {

inline std::string prefixed(const std::string& prefix, const std::string& text) {
  std::string out;
  for (const auto& [k, v] : kv::parse(text)) out += prefix + k + "=" + v + "\n";
  return out;
}

inline kv::Entries strip_prefix(const kv::Entries& entries, const std::string& prefix) {
  kv::Entries out;
  for (const auto& [k, v] : entries)
    if (k.rfind(prefix, 0) == 0) out.emplace_back(k.substr(prefix.size()), v);
  return out;
}

inline std::string find_entry(const kv::Entries& entries, const std::string& key, const std::string& origin) {
  for (const auto& [k, v] : entries)
    if (k == key) return v;
  throw FormatError(origin + ": metadata key '" + key + "' missing");
}

// Move tensors named in `f` into the slots visited by `visit`; every slot must
// be filled and every tensor consumed.
template <typename Visit>
void restore_tensors(CheckpointFile& f, const std::string& origin, Visit&& visit) {
  std::set<std::string> used;
  visit([&](const std::string& name, Tensor<float>& slot) {
    auto it = f.tensors.find(name);
    if (it == f.tensors.end()) throw FormatError(origin + ": tensor '" + name + "' missing");
    if (it->second.shape() != slot.shape())
      throw FormatError(origin + ": tensor '" + name + "' has shape " + shape_str(it->second.shape()) +
                        ", expected " + shape_str(slot.shape()));
    slot = std::move(it->second);
    used.insert(name);
  });
  for (const auto& [name, t] : f.tensors)
    if (!used.count(name)) throw FormatError(origin + ": unexpected tensor '" + name + "'");
}

}  // namespace detail

inline CheckpointFile to_checkpoint(const TrainerState& s) {
  CheckpointFile f;
  f.kind = CheckpointKind::training_state;
  f.step = s.step;
  f.metadata = "num_instances=" + std::to_string(s.num_instances) + "\n" +
               detail::prefixed("train.", to_text(s.config)) +
               encoder_config_text(s.model.slow.config);
  auto model = s.model;
  model.for_each_parameter([&](const std::string& n, Tensor<float>& t, bool) { f.tensors.emplace(n, t); });
  model.for_each_buffer([&](const std::string& n, Tensor<float>& t) { f.tensors.emplace(n, t); });
  for (auto p : {Pathway::slow, Pathway::fast})
    for (const auto& [tap, bank] : s.banks.of(p))
      f.tensors.emplace("bank." + std::string(to_string(p)) + "." + tap, bank.entries());
  for (const auto& [n, v] : s.optimizer.velocity) f.tensors.emplace("optim." + n, v);
  return f;
}

inline TrainerState from_checkpoint(CheckpointFile f, const std::string& origin = "checkpoint") {
  if (f.kind != CheckpointKind::training_state)
    throw FormatError(origin + ": expected a training-state checkpoint, found a slow-encoder export");
  const auto entries = kv::parse(f.metadata, origin);
  const int n = static_cast<int>(kv::to_int("num_instances", detail::find_entry(entries, "num_instances", origin)));
  TrainConfig cfg;
  kv::apply(cfg, train_config_fields(), detail::strip_prefix(entries, "train."));
  TrainerState s = init_trainer(cfg, n);
  s.step = f.step;
  // Velocities exist for every parameter that has taken a step.
  for (const auto& [name, t] : f.tensors)
    if (name.rfind("optim.", 0) == 0) s.optimizer.velocity.emplace(name.substr(6), Tensor<float>(t.shape()));
  detail::restore_tensors(f, origin, [&](auto&& fill) {
    s.model.for_each_parameter([&](const std::string& name, Tensor<float>& t, bool) { fill(name, t); });
    s.model.for_each_buffer([&](const std::string& name, Tensor<float>& t) { fill(name, t); });
    for (auto p : {Pathway::slow, Pathway::fast})
      for (auto& [tap, bank] : s.banks.of(p)) {
        Tensor<float> entries = bank.entries();
        fill("bank." + std::string(to_string(p)) + "." + tap, entries);
        bank.assign(std::move(entries));
      }
    for (auto& [name, v] : s.optimizer.velocity) fill("optim." + name, v);
  });
  return s;
}

inline void save_checkpoint(const std::filesystem::path& path, const TrainerState& s) {
  write_checkpoint_file(path, to_checkpoint(s));
}

inline TrainerState load_checkpoint(const std::filesystem::path& path) {
  return from_checkpoint(read_checkpoint_file(path), path.string());
}

// Slow encoder parameters, running statistics and EncoderConfig only.
inline CheckpointFile export_slow_encoder(const CheckpointFile& full) {
  if (full.kind == CheckpointKind::slow_encoder) return full;
  CheckpointFile out;
  out.kind = CheckpointKind::slow_encoder;
  out.step = full.step;
  std::string meta;
  for (const auto& [k, v] : kv::parse(full.metadata))
    if (k.rfind("encoder.", 0) == 0) meta += k + "=" + v + "\n";
  out.metadata = meta;
  for (const auto& [name, t] : full.tensors)
    if (name.rfind("encoder.slow.", 0) == 0) out.tensors.emplace(name, t);
  return out;
}

// Accepts either checkpoint kind.
inline Encoder<float> load_slow_encoder(CheckpointFile f, const std::string& origin = "checkpoint") {
  const auto cfg = encoder_config_from_entries(kv::parse(f.metadata, origin));
  if (cfg.pathway != Pathway::slow) throw FormatError(origin + ": stored encoder is not the slow pathway");
  Encoder<float> enc = init_encoder<float>(cfg, 0);
  std::erase_if(f.tensors, [](const auto& kv) { return kv.first.rfind("encoder.slow.", 0) != 0; });
  detail::restore_tensors(f, origin, [&](auto&& fill) {
    enc.for_each_parameter([&](const std::string& n, Tensor<float>& t, bool) { fill("encoder.slow." + n, t); });
    enc.for_each_buffer([&](const std::string& n, Tensor<float>& t) { fill("encoder.slow." + n, t); });
  });
  return enc;
}

inline Encoder<float> load_slow_encoder(const std::filesystem::path& path) {
  return load_slow_encoder(read_checkpoint_file(path), path.string());
}

}  // namespace vthcl
