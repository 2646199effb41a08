#pragma once

// On-disk corpus layout:
//
//   DIR/dataset.json               generator settings, seed, instance count
//   DIR/instance_NNNNNN/frames.bin  clip tensor
//   DIR/instance_NNNNNN/mask.bin    object mask, C = 1
//   DIR/instance_NNNNNN/meta.json   instance_id, labels, seeds
//
// Tensor file (little-endian):
//   char[4] "VTCL" | u32 version (=1) | u32 T | u32 H | u32 W | u32 C |
//   float32[T*H*W*C] row-major payload

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "vthcl/binary_io.hpp"
#include "vthcl/synth_data.hpp"

namespace vthcl {

inline constexpr char kTensorMagic[4] = {'V', 'T', 'C', 'L'};
inline constexpr std::uint32_t kTensorVersion = 1;

inline void write_tensor_file(const std::filesystem::path& path, const Tensor<float>& t) {
  if (t.rank() != 4 && t.rank() != 3)
    throw ShapeError("tensor file expects [T,H,W,C] or [T,H,W], got " + shape_str(t.shape()));
  io::Writer w;
  w.bytes(std::string_view(kTensorMagic, 4));
  w.u32(kTensorVersion);
  for (std::size_t i = 0; i < 4; ++i)
    w.u32(static_cast<std::uint32_t>(i < t.rank() ? t.dim(i) : 1));
  w.f32(t.span());
  io::write_file_atomic(path, w.buffer());
}

inline Tensor<float> read_tensor_file(const std::filesystem::path& path) {
  io::Reader r(io::read_file(path), path.string());
  if (r.bytes(4) != std::string_view(kTensorMagic, 4)) throw FormatError(path.string() + ": bad magic");
  const auto version = r.u32();
  if (version != kTensorVersion)
    throw FormatError(path.string() + ": unsupported version " + std::to_string(version));
  Shape shape(4);
  for (auto& d : shape) d = r.u32();
  Tensor<float> t(shape);
  r.f32(t.span());
  if (!r.at_end()) throw FormatError(path.string() + ": trailing bytes");
  return t;
}

inline std::filesystem::path instance_dir(const std::filesystem::path& root, int id) {
  char name[32];
  std::snprintf(name, sizeof name, "instance_%06d", id);
  return root / name;
}

inline nlohmann::json to_json(const GeneratorConfig& c) {
  return {{"height", c.height},         {"width", c.width},
          {"channels", c.channels},     {"frames", c.frames},
          {"background", c.background}, {"noise_sigma", c.noise_sigma},
          {"min_radius", c.min_radius}, {"max_radius", c.max_radius},
          {"speeds", c.speeds},         {"speed_jitter", c.speed_jitter},
          {"min_brightness", c.min_brightness}, {"max_brightness", c.max_brightness}};
}

inline GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.height = j.at("height");
  c.width = j.at("width");
  c.channels = j.at("channels");
  c.frames = j.at("frames");
  c.background = j.at("background");
  c.noise_sigma = j.at("noise_sigma");
  c.min_radius = j.at("min_radius");
  c.max_radius = j.at("max_radius");
  c.speeds = j.at("speeds");
  c.speed_jitter = j.at("speed_jitter");
  c.min_brightness = j.at("min_brightness");
  c.max_brightness = j.at("max_brightness");
  return c;
}

struct DatasetInfo {
  GeneratorConfig config;
  std::uint64_t seed = 0;
  int num_instances = 0;
};

inline void save_dataset(const std::filesystem::path& root, const std::vector<VideoInstance>& data,
                         const GeneratorConfig& cfg, std::uint64_t seed) {
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw IoError("cannot create '" + root.string() + "': " + ec.message());
  for (const auto& v : data) {
    const auto dir = instance_dir(root, v.instance_id);
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
    write_tensor_file(dir / "frames.bin", v.frames);
    write_tensor_file(dir / "mask.bin", v.mask);
    nlohmann::json meta = {{"instance_id", v.instance_id},
                           {"shape_label", std::string(to_string(v.shape_label))},
                           {"speed_label", std::string(to_string(v.speed_label))},
                           {"seed", v.seed},
                           {"generator_seed", seed}};
    io::write_text_atomic(dir / "meta.json", meta.dump(2) + "\n");
  }
  nlohmann::json info = {{"format", "vthcl-dataset"},
                         {"version", 1},
                         {"seed", seed},
                         {"num_instances", data.size()},
                         {"generator", to_json(cfg)}};
  io::write_text_atomic(root / "dataset.json", info.dump(2) + "\n");
}

inline DatasetInfo read_dataset_info(const std::filesystem::path& root) {
  try {
    const auto j = nlohmann::json::parse(io::read_text(root / "dataset.json"));
    return DatasetInfo{generator_config_from_json(j.at("generator")), j.at("seed"), j.at("num_instances")};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((root / "dataset.json").string() + ": " + e.what());
  }
}

inline VideoInstance load_instance(const std::filesystem::path& root, int id) {
  const auto dir = instance_dir(root, id);
  VideoInstance v;
  try {
    const auto meta = nlohmann::json::parse(io::read_text(dir / "meta.json"));
    v.instance_id = meta.at("instance_id");
    v.shape_label = parse_shape_label(meta.at("shape_label").get<std::string>());
    v.speed_label = parse_speed_label(meta.at("speed_label").get<std::string>());
    v.seed = meta.at("seed");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError((dir / "meta.json").string() + ": " + e.what());
  }
  if (v.instance_id != id) throw FormatError(dir.string() + ": instance_id mismatch");
  v.frames = read_tensor_file(dir / "frames.bin");
  auto mask = read_tensor_file(dir / "mask.bin");
  mask.reshape({mask.dim(0), mask.dim(1), mask.dim(2)});
  v.mask = std::move(mask);
  return v;
}

inline std::vector<VideoInstance> load_dataset(const std::filesystem::path& root) {
  const auto info = read_dataset_info(root);
  std::vector<VideoInstance> out;
  out.reserve(info.num_instances);
  for (int i = 0; i < info.num_instances; ++i) out.push_back(load_instance(root, i));
  return out;
}

}  // namespace vthcl
