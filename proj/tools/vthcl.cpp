// vthcl: command-line entry point.
//
//   vthcl gen-data --num N --seed S --out DIR
//   vthcl pretrain --config FILE --data DIR --out DIR [--seed S] [--deterministic] [--resume]
//   vthcl probe    --checkpoint F --data DIR [--label shape|speed] [--out DIR]
//   vthcl ablate   --grid FILE --data DIR --probe-data DIR --out DIR
//   vthcl icm      --checkpoint F --data DIR --pair-id I --out DIR [--reference slow|fast] [--no-normalize]
//   vthcl export   --checkpoint F --out FILE
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error. Every invocation
// appends one JSON line to the run manifest.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vthcl/checkpoint.hpp"
#include "vthcl/config.hpp"
#include "vthcl/dataset_io.hpp"
#include "vthcl/icm.hpp"
#include "vthcl/probe.hpp"
#include "vthcl/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vthcl;

namespace {

#ifndef VTHCL_VERSION
#define VTHCL_VERSION "dev"
#endif

struct Manifest {
  json j = json::object();
};

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void append_manifest(const fs::path& path, const json& entry) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::app);
  if (!f) {
    std::cerr << "warning: cannot append run manifest to '" << path.string() << "'\n";
    return;
  }
  f << entry.dump() << "\n";
}

json config_json(const std::string& text) {
  json j = json::object();
  for (const auto& [k, v] : kv::parse(text)) j[k] = v;
  return j;
}

TrainConfig read_train_config(const std::string& path) {
  if (path.empty()) return {};
  return parse_train_config(io::read_text(path), {}, path);
}

// ---------------------------------------------------------------- gen-data

struct GenArgs {
  int num = 200;
  std::uint64_t seed = 7;
  std::string out, config;
};

void run_gen_data(const GenArgs& a, Manifest& m) {
  GeneratorConfig cfg;
  if (!a.config.empty()) cfg = parse_generator_config(io::read_text(a.config), a.config);
  m.j["seed"] = a.seed;
  m.j["config"] = config_json(kv::to_text(cfg, generator_config_fields()));
  m.j["outputs"] = {a.out};
  if (a.num < 1) throw KeyError("num", "must be >= 1");
  // Written in chunks so memory stays bounded for large corpora.
  const fs::path root = a.out;
  std::vector<VideoInstance> chunk;
  for (int i = 0; i < a.num; ++i) {
    chunk.push_back(generate_instance(i, a.seed, cfg));
    if (chunk.size() == 32 || i + 1 == a.num) {
      save_dataset(root, chunk, cfg, a.seed);
      chunk.clear();
    }
  }
  // dataset.json must describe the whole corpus, not the last chunk.
  json info = {{"format", "vthcl-dataset"}, {"version", 1}, {"seed", a.seed}, {"num_instances", a.num},
               {"generator", to_json(cfg)}};
  io::write_text_atomic(root / "dataset.json", info.dump(2) + "\n");
  std::cout << "wrote " << a.num << " instances to " << root.string() << "\n";
}

// ---------------------------------------------------------------- pretrain

struct PretrainArgs {
  std::string config, data, out;
  std::optional<std::uint64_t> seed;
  bool deterministic = false, resume = false, quiet = false;
};

void run_pretrain(const PretrainArgs& a, Manifest& m) {
  TrainConfig cfg = read_train_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  m.j["config"] = config_json(to_text(cfg));
  m.j["seed"] = cfg.seed;
  m.j["inputs"] = {a.data};
  auto data = load_dataset(a.data);
  for (auto& v : data) v.mask = {};
  PretrainOptions opt;
  opt.out_dir = a.out;
  opt.resume = a.resume;
  if (!a.quiet) opt.log = &std::cout;
  const auto res = pretrain(data, cfg, opt);
  m.j["outputs"] = {res.checkpoint.string(), (fs::path(a.out) / "train.log").string()};
  m.j["steps"] = res.state.step;
  if (!res.history.empty()) m.j["final_loss_total"] = res.history.back().total_loss;
}

// ---------------------------------------------------------------- probe

struct ProbeArgs {
  std::string checkpoint, data, out, label = "both";
  std::uint64_t seed = 0;
  int tau = 8;
};

void run_probe(const ProbeArgs& a, Manifest& m) {
  const auto file = read_checkpoint_file(a.checkpoint);
  const auto enc = load_slow_encoder(file, a.checkpoint);
  ProbeConfig pc;
  pc.seed = a.seed;
  m.j["seed"] = a.seed;
  m.j["inputs"] = {a.checkpoint, a.data};
  auto split = split_by_id(load_probe_samples(a.data, a.tau), pc);
  // The random-init baseline shares the checkpoint's initialization seed when known.
  std::uint64_t init_seed = a.seed;
  for (const auto& [k, v] : kv::parse(file.metadata))
    if (k == "train.seed") init_seed = kv::to_u64(k, v);
  auto rep = linear_probe(split.train, split.test, enc, pc, init_seed);
  if (a.label != "both") {
    const auto keep = std::string(to_string(parse_probe_label(a.label)));
    std::erase_if(rep.labels, [&](const auto& e) { return e.first != keep; });
  }
  const auto table = to_table(rep);
  std::cout << table;
  const auto j = to_json(rep);
  m.j["report"] = j;
  if (!a.out.empty()) {
    fs::create_directories(a.out);
    io::write_text_atomic(fs::path(a.out) / "probe_report.txt", table);
    io::write_text_atomic(fs::path(a.out) / "probe_report.json", j.dump(2) + "\n");
    m.j["outputs"] = {(fs::path(a.out) / "probe_report.txt").string(), (fs::path(a.out) / "probe_report.json").string()};
  }
}

// ---------------------------------------------------------------- ablate

struct AblateArgs {
  std::string grid, data, probe_data, out;
  std::optional<std::uint64_t> seed;
};

// Grid file: alphas=, depths=, seeds= plus any pretraining key.
AblationGrid read_grid(const std::string& path) {
  AblationGrid g;
  kv::Entries train;
  for (const auto& [k, v] : kv::parse(io::read_text(path), path)) {
    if (k == "alphas" || k == "depths") {
      auto& dst = k == "alphas" ? g.alphas : g.depths;
      dst.clear();
      for (const auto& s : kv::to_list(v)) dst.push_back(static_cast<int>(kv::to_int(k, s)));
    } else if (k == "seeds") {
      g.seeds.clear();
      for (const auto& s : kv::to_list(v)) g.seeds.push_back(kv::to_u64(k, s));
    } else {
      train.emplace_back(k, v);
    }
  }
  kv::apply(g.base, train_config_fields(), train);
  g.base.validate();
  if (g.alphas.empty() || g.depths.empty() || g.seeds.empty())
    throw ConfigError(path + ": alphas, depths and seeds must be non-empty");
  return g;
}

void run_ablate(const AblateArgs& a, Manifest& m) {
  auto grid = read_grid(a.grid);
  if (a.seed) grid.seeds = {*a.seed};
  m.j["config"] = config_json(to_text(grid.base));
  m.j["seeds"] = grid.seeds;
  m.j["inputs"] = {a.grid, a.data, a.probe_data};
  auto data = load_dataset(a.data);
  for (auto& v : data) v.mask = {};
  ProbeConfig pc;
  const auto split = split_by_id(load_probe_samples(a.probe_data, grid.base.tau), pc);
  const fs::path out = a.out;
  const auto res = ablation_suite(
      data, split, grid, pc,
      [&](int alpha, int depth, std::uint64_t seed) {
        return out / ("alpha" + std::to_string(alpha) + "_D" + std::to_string(depth) + "_seed" + std::to_string(seed));
      },
      [](const AblationCell& c) {
        std::cout << "cell alpha=" << c.alpha << " D=" << c.depth
                  << (c.ok() ? " speed=" + kv::format_double(c.median_speed()) : " failed: " + c.error) << std::endl;
      });
  const auto table = to_table(res);
  std::cout << table;
  fs::create_directories(out);
  io::write_text_atomic(out / "ablation.txt", table);
  io::write_text_atomic(out / "ablation.json", to_json(res).dump(2) + "\n");
  m.j["outputs"] = {(out / "ablation.txt").string(), (out / "ablation.json").string()};
  m.j["report"] = to_json(res);
}

// ---------------------------------------------------------------- icm

struct IcmArgs {
  std::string checkpoint, data, out, reference = "fast", tap;
  int pair_id = 0;
  bool no_normalize = false;
  std::uint64_t seed = 0;
};

void run_icm(const IcmArgs& a, Manifest& m) {
  m.j["inputs"] = {a.checkpoint, a.data};
  m.j["seed"] = a.seed;
  auto file = read_checkpoint_file(a.checkpoint);
  if (file.kind != CheckpointKind::training_state)
    throw FormatError(a.checkpoint +
                      ": correspondence maps need both encoders and heads; pass the training checkpoint, not an export");
  const auto state = from_checkpoint(std::move(file), a.checkpoint);
  const auto& cfg = state.config;
  const std::string tap = a.tap.empty() ? cfg.taps.back() : a.tap;
  const auto v = load_instance(a.data, a.pair_id);
  const int start = 0;
  const auto pair = make_tempo_pair(sample_raw_clip(v, start), cfg.tau, cfg.alpha);
  const Pathway primary = parse_pathway(a.reference);
  const fs::path out = a.out;
  json scores = json::object();
  std::vector<std::string> outputs;
  for (Pathway ref : {primary, primary == Pathway::fast ? Pathway::slow : Pathway::fast}) {
    const auto map = icm_for_pair(state.model, pair, tap, ref, !a.no_normalize);
    const Pathway on = ref == Pathway::fast ? Pathway::slow : Pathway::fast;
    const auto idx = on == Pathway::slow ? slow_frame_indices(cfg.tau) : fast_frame_indices(cfg.tau, cfg.alpha);
    const auto& frames = on == Pathway::slow ? pair.slow : pair.fast;
    const double score = localization_score(map, clip_mask(v, start, idx));
    const std::string prefix = "icm_on-" + std::string(to_string(on)) + "_ref-" + std::string(to_string(ref));
    for (const auto& p : write_frames(out, prefix, render_icm(map, frames))) outputs.push_back(p.string());
    scores[prefix] = {{"localization_score", score},
                      {"map_shape", map.values.shape()},
                      {"min", *std::min_element(map.values.storage().begin(), map.values.storage().end())},
                      {"max", *std::max_element(map.values.storage().begin(), map.values.storage().end())}};
    std::cout << prefix << " localization_score=" << kv::format_double(score) << "\n";
  }
  const json sidecar = {{"checkpoint", a.checkpoint}, {"pair_id", a.pair_id}, {"tap", tap},
                        {"reference", a.reference},   {"normalized_locations", !a.no_normalize},
                        {"maps", scores}};
  io::write_text_atomic(out / "icm.json", sidecar.dump(2) + "\n");
  outputs.push_back((out / "icm.json").string());
  m.j["outputs"] = outputs;
  m.j["report"] = sidecar;
}

// ---------------------------------------------------------------- export

struct ExportArgs {
  std::string checkpoint, out;
};

void run_export(const ExportArgs& a, Manifest& m) {
  m.j["inputs"] = {a.checkpoint};
  const auto full = read_checkpoint_file(a.checkpoint);
  write_checkpoint_file(a.out, export_slow_encoder(full));
  load_slow_encoder(fs::path(a.out));  // verify the artifact reads back
  m.j["outputs"] = {a.out};
  std::cout << "exported slow encoder to " << a.out << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vthcl: visual-tempo contrastive pretraining, probing and correspondence maps"};
  app.set_version_flag("--version", std::string(VTHCL_VERSION));
  app.require_subcommand(1);
  std::string manifest_path = "vthcl-manifest.jsonl";
  app.add_option("--manifest", manifest_path, "run manifest (JSON lines, appended)");
  bool deterministic = false;

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate the synthetic moving-shapes corpus");
  gen_cmd->add_option("--num", gen.num, "number of instances")->required();
  gen_cmd->add_option("--seed", gen.seed, "generator seed");
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  gen_cmd->add_option("--config", gen.config, "generator key=value file");
  gen_cmd->add_flag("--deterministic", deterministic, "accepted for uniformity; generation is always deterministic");

  PretrainArgs pre;
  auto* pre_cmd = app.add_subcommand("pretrain", "contrastive pretraining");
  pre_cmd->add_option("--config", pre.config, "training key=value file (empty: defaults)");
  pre_cmd->add_option("--data", pre.data, "dataset directory")->required();
  pre_cmd->add_option("--out", pre.out, "output directory for checkpoint and log")->required();
  pre_cmd->add_option("--seed", pre.seed, "overrides the config seed");
  pre_cmd->add_flag("--deterministic", pre.deterministic, "fixed-seed reproducible run (always on: single-threaded)");
  pre_cmd->add_flag("--resume", pre.resume, "continue from OUT/checkpoint.vtck");
  pre_cmd->add_flag("--quiet", pre.quiet, "do not echo per-step log lines");

  ProbeArgs probe;
  auto* probe_cmd = app.add_subcommand("probe", "frozen linear probe on generator labels");
  probe_cmd->add_option("--checkpoint", probe.checkpoint, "training checkpoint or slow-encoder export")->required();
  probe_cmd->add_option("--data", probe.data, "labelled dataset directory")->required();
  probe_cmd->add_option("--label", probe.label, "shape|speed|both")->check(CLI::IsMember({"shape", "speed", "both"}));
  probe_cmd->add_option("--out", probe.out, "directory for probe_report.{txt,json}");
  probe_cmd->add_option("--seed", probe.seed, "probe split and optimizer seed");
  probe_cmd->add_option("--tau", probe.tau, "slow clip stride");
  probe_cmd->add_flag("--deterministic", deterministic, "accepted for uniformity; probing is always deterministic");

  AblateArgs abl;
  auto* abl_cmd = app.add_subcommand("ablate", "alpha x depth ablation grid");
  abl_cmd->add_option("--grid", abl.grid, "grid key=value file")->required();
  abl_cmd->add_option("--data", abl.data, "pretraining dataset directory")->required();
  abl_cmd->add_option("--probe-data", abl.probe_data, "labelled probe dataset directory")->required();
  abl_cmd->add_option("--out", abl.out, "output directory")->required();
  abl_cmd->add_option("--seed", abl.seed, "run a single seed instead of the grid's seeds");
  abl_cmd->add_flag("--deterministic", deterministic, "accepted for uniformity; runs are always deterministic");

  IcmArgs icm;
  auto* icm_cmd = app.add_subcommand("icm", "instance correspondence maps for one tempo pair");
  icm_cmd->add_option("--checkpoint", icm.checkpoint, "training checkpoint")->required();
  icm_cmd->add_option("--data", icm.data, "dataset directory holding the pair")->required();
  icm_cmd->add_option("--pair-id", icm.pair_id, "instance id")->required();
  icm_cmd->add_option("--out", icm.out, "output directory")->required();
  icm_cmd->add_option("--reference", icm.reference, "pathway supplying the reference embedding")
      ->check(CLI::IsMember({"slow", "fast"}));
  icm_cmd->add_option("--tap", icm.tap, "tap to visualize (default: deepest)");
  icm_cmd->add_flag("--no-normalize", icm.no_normalize, "skip per-location normalization");
  icm_cmd->add_option("--seed", icm.seed, "accepted for uniformity; maps are deterministic");
  icm_cmd->add_flag("--deterministic", deterministic, "accepted for uniformity");

  ExportArgs exp;
  auto* exp_cmd = app.add_subcommand("export", "write the slow encoder only");
  exp_cmd->add_option("--checkpoint", exp.checkpoint, "training checkpoint")->required();
  exp_cmd->add_option("--out", exp.out, "output file")->required();

  Manifest m;
  m.j["version"] = VTHCL_VERSION;
  m.j["started"] = utc_now();
  json argv_json = json::array();
  for (int i = 0; i < argc; ++i) argv_json.push_back(argv[i]);
  m.j["argv"] = argv_json;
  const auto t0 = std::chrono::steady_clock::now();
  auto finish = [&](int status, const std::string& error = {}) {
    m.j["exit_status"] = status;
    if (!error.empty()) m.j["error"] = error;
    m.j["wall_clock_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    append_manifest(manifest_path, m.j);
    return status;
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    m.j["command"] = app.get_subcommands().empty() ? "" : app.get_subcommands().front()->get_name();
    std::cerr << "error: class=UsageError " << e.what() << "\n" << app.help();
    return finish(2, std::string("UsageError: ") + e.what());
  }

  const auto* cmd = app.get_subcommands().front();
  m.j["command"] = cmd->get_name();
  m.j["deterministic"] = deterministic || pre.deterministic;
  try {
    if (cmd == gen_cmd) run_gen_data(gen, m);
    else if (cmd == pre_cmd) run_pretrain(pre, m);
    else if (cmd == probe_cmd) run_probe(probe, m);
    else if (cmd == abl_cmd) run_ablate(abl, m);
    else if (cmd == icm_cmd) run_icm(icm, m);
    else if (cmd == exp_cmd) run_export(exp, m);
  } catch (const vthcl::Error& e) {
    std::cerr << "error: class=" << e.error_class() << " " << e.what() << "\n";
    return finish(1, std::string(e.error_class()) + ": " + e.what());
  } catch (const std::exception& e) {
    std::cerr << "error: class=InternalError " << e.what() << "\n";
    return finish(1, std::string("InternalError: ") + e.what());
  }
  return finish(0);
}
