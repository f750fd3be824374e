#pragma once

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mos/checkpoint.hpp"
#include "mos/inference.hpp"
#include "mos/metrics.hpp"
#include "mos/synthdata.hpp"
#include "mos/training.hpp"

#ifndef MOS_VERSION
#define MOS_VERSION "0.0.0"
#endif

namespace mos::cli {

inline constexpr const char* kToolVersion = MOS_VERSION;

enum ExitCode : int { kOk = 0, kRuntimeFailure = 1, kUsageError = 2 };

struct EvalConfig {
  Protocol protocol = Protocol::concat;
  Split split = Split::test;
};

struct PathsConfig {
  std::string data_dir, out_dir, checkpoint, video, labels, ribbon, ribbons, edits;
};

// Everything a command needs. The model section owns mem_mode, step_size
// and intervals; the train section holds only optimisation settings.
struct RunConfig {
  std::optional<std::uint64_t> seed;
  GeneratorConfig generator;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  PathsConfig paths;
  Json model_json = Json::object();  // model keys given explicitly
  std::string config_file;
  std::vector<std::string> overrides;
};

inline void merge_train_config(const Json& j, TrainConfig& t) {
  const std::string ctx = "train";
  require_known_keys(j, {"epochs", "batch_size", "learning_rate", "beta1", "beta2", "epsilon", "seed"}, ctx);
  read_optional(j, "epochs", t.epochs, ctx);
  read_optional(j, "batch_size", t.batch_size, ctx);
  read_optional(j, "learning_rate", t.learning_rate, ctx);
  read_optional(j, "beta1", t.beta1, ctx);
  read_optional(j, "beta2", t.beta2, ctx);
  read_optional(j, "epsilon", t.epsilon, ctx);
  read_optional(j, "seed", t.seed, ctx);
}

inline Json train_to_json(const TrainConfig& t) {
  return Json{{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"learning_rate", t.learning_rate},
              {"beta1", t.beta1},   {"beta2", t.beta2},           {"epsilon", t.epsilon},
              {"seed", t.seed}};
}

inline void merge_eval_config(const Json& j, EvalConfig& e) {
  require_known_keys(j, {"protocol", "split"}, "eval");
  try {
    if (j.contains("protocol")) e.protocol = parse_protocol(j.at("protocol").get<std::string>());
    if (j.contains("split")) e.split = parse_split(j.at("split").get<std::string>());
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("eval: ") + ex.what());
  }
}

inline void merge_paths_config(const Json& j, PathsConfig& p) {
  const std::string ctx = "paths";
  require_known_keys(j, {"data_dir", "out_dir", "checkpoint", "video", "labels", "ribbon", "ribbons", "edits"}, ctx);
  read_optional(j, "data_dir", p.data_dir, ctx);
  read_optional(j, "out_dir", p.out_dir, ctx);
  read_optional(j, "checkpoint", p.checkpoint, ctx);
  read_optional(j, "video", p.video, ctx);
  read_optional(j, "labels", p.labels, ctx);
  read_optional(j, "ribbon", p.ribbon, ctx);
  read_optional(j, "ribbons", p.ribbons, ctx);
  read_optional(j, "edits", p.edits, ctx);
}

inline Json paths_to_json(const PathsConfig& p) {
  return Json{{"data_dir", p.data_dir}, {"out_dir", p.out_dir}, {"checkpoint", p.checkpoint},
              {"video", p.video},       {"labels", p.labels},   {"ribbon", p.ribbon},
              {"ribbons", p.ribbons},   {"edits", p.edits}};
}

// "section.key=value"; the value is parsed as JSON and falls back to a plain
// string, so --set model.mem_mode=long works without quotes.
inline void apply_override(Json& doc, const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + text + "': expected key=value");
  const auto key = text.substr(0, eq), raw = text.substr(eq + 1);
  Json value = Json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  const auto dot = key.find('.');
  if (dot == std::string::npos) {
    doc[key] = value;
  } else {
    doc[key.substr(0, dot)][key.substr(dot + 1)] = value;
  }
}

// Top-level seed seeds both the generator and training unless a section
// sets its own.
inline RunConfig run_config_from_json(const Json& doc) {
  require_known_keys(doc, {"seed", "generator", "model", "train", "eval", "paths"}, "config");
  RunConfig rc;
  try {
    if (doc.contains("seed")) rc.seed = doc.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config.seed: ") + e.what());
  }
  if (rc.seed) rc.generator.seed = rc.train.seed = *rc.seed;
  if (doc.contains("generator")) merge_generator_config(doc.at("generator"), rc.generator);
  if (doc.contains("model")) {
    merge_model_config(doc.at("model"), rc.model);
    rc.model_json = doc.at("model");
  }
  if (doc.contains("train")) merge_train_config(doc.at("train"), rc.train);
  if (doc.contains("eval")) merge_eval_config(doc.at("eval"), rc.eval);
  if (doc.contains("paths")) merge_paths_config(doc.at("paths"), rc.paths);
  rc.generator.validate();
  rc.train.validate();
  return rc;
}

inline Json read_config_file(const std::string& path) {
  if (path.empty()) return Json::object();
  const auto text = io::read_file(path);
  Json doc = Json::parse(text, nullptr, false);
  if (doc.is_discarded()) throw ConfigError(path + ": not valid JSON");
  if (!doc.is_object()) throw ConfigError(path + ": expected a JSON object");
  return doc;
}

inline Json effective_config(const RunConfig& rc, const std::string& command) {
  Json j{{"tool", "mosctl"},
         {"tool_version", kToolVersion},
         {"command", command},
         {"config_file", rc.config_file},
         {"overrides", rc.overrides},
         {"generator", rc.generator},
         {"model", rc.model},
         {"train", train_to_json(rc.train)},
         {"eval", {{"protocol", to_string(rc.eval.protocol)}, {"split", to_string(rc.eval.split)}}},
         {"paths", paths_to_json(rc.paths)}};
  j["seed"] = rc.seed ? Json(*rc.seed) : Json(nullptr);
  return j;
}

inline void write_effective_config(const std::filesystem::path& dir, const RunConfig& rc, const std::string& command) {
  std::filesystem::create_directories(dir);
  io::write_file(dir / "effective_config.json", effective_config(rc, command).dump(2) + "\n");
}

inline std::filesystem::path require_path(const std::string& value, const std::string& what) {
  if (value.empty()) throw ConfigError("missing " + what);
  return value;
}

// Image geometry and phase count come from the dataset; an explicit model
// value that disagrees is a config error.
inline ModelConfig model_for_dataset(const RunConfig& rc, const Dataset& ds) {
  auto m = rc.model;
  auto adopt = [&](const char* key, std::size_t& field, std::size_t value) {
    if (rc.model_json.contains(key) && field != value) {
      throw ConfigError("model." + std::string(key) + " = " + std::to_string(field) + " but the dataset has " +
                        std::to_string(value));
    }
    field = value;
  };
  adopt("num_phases", m.num_phases, ds.config.num_phases);
  adopt("image_size", m.image_size, ds.config.image_size);
  adopt("channels", m.channels, ds.config.channels);
  m.validate();
  return m;
}

inline ProcedureRecord load_video(const RunConfig& rc) {
  auto rec = load_frame_blob(require_path(rc.paths.video, "--video"));
  if (!rc.paths.labels.empty()) {
    rec.labels = read_labels_csv(rc.paths.labels);
    if (rec.labels.size() != rec.frames.size()) {
      throw InputError(rc.paths.labels + ": " + std::to_string(rec.labels.size()) + " labels for " +
                       std::to_string(rec.frames.size()) + " frames");
    }
  }
  return rec;
}

// ---- Commands ---------------------------------------------------------------

inline int cmd_gen_data(const RunConfig& rc, std::ostream& out) {
  const auto dir = require_path(rc.paths.out_dir, "--out");
  const auto ds = generate_dataset(rc.generator);
  write_dataset(ds, dir);
  write_effective_config(dir, rc, "gen-data");
  out << "wrote " << ds.videos.size() << " videos (" << ds.split(Split::train).size() << " train, "
      << ds.split(Split::val).size() << " val, " << ds.split(Split::test).size() << " test) to " << dir.string()
      << "\n";
  return kOk;
}

inline int cmd_train(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  const auto data = require_path(rc.paths.data_dir, "--data");
  const auto dir = require_path(rc.paths.out_dir, "--out");
  const auto ds = read_dataset(data);
  const auto model = model_for_dataset(rc, ds);
  auto train = rc.train;
  train.mem_mode = model.mem_mode;
  train.step_size = model.step_size;
  train.intervals = model.intervals;
  write_effective_config(dir, rc, "train");
  const auto result = fit(ds, model, train, [&](const EpochStats& s) {
    err << "epoch " << s.epoch << "/" << train.epochs << "  loss " << s.loss << "  val_acc " << s.val_accuracy
        << "  " << s.seconds << " s\n";
  });
  save_checkpoint(result.params, dir / "model.ckpt");
  io::write_file(dir / "train_log.csv", encode_train_log(result.log));
  out << "mem_mode " << to_string(model.mem_mode) << "  best epoch " << result.best_epoch << "  val accuracy "
      << result.best_val_accuracy << "\n"
      << "checkpoint " << (dir / "model.ckpt").string() << "  hash " << checkpoint_hash(dir / "model.ckpt") << "\n";
  return kOk;
}

inline int cmd_eval(const RunConfig& rc, std::ostream& out) {
  std::vector<VideoPredictions> preds;
  Json provenance;
  std::size_t num_phases = rc.model.num_phases;
  std::optional<ModelParams<float>> params;
  if (!rc.paths.ribbons.empty()) {
    if (!rc.paths.checkpoint.empty()) throw ConfigError("give either --ribbons or --checkpoint, not both");
    std::vector<std::filesystem::path> files;
    if (!std::filesystem::is_directory(rc.paths.ribbons)) throw IoError(rc.paths.ribbons + ": not a directory");
    for (const auto& e : std::filesystem::directory_iterator(rc.paths.ribbons)) {
      if (e.path().extension() == ".csv") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw IoError(rc.paths.ribbons + ": no ribbon CSV files");
    for (const auto& f : files) preds.push_back(read_ribbon(f));
    provenance = {{"ribbons", rc.paths.ribbons}};
  } else {
    const auto ck_path = require_path(rc.paths.checkpoint, "--checkpoint or --ribbons");
    const auto ds = read_dataset(require_path(rc.paths.data_dir, "--data"));
    auto ck = load_checkpoint(ck_path);
    num_phases = ck.config.num_phases;
    if (ds.config.num_phases != num_phases) {
      throw ConfigError("checkpoint has " + std::to_string(num_phases) + " phases but the dataset has " +
                        std::to_string(ds.config.num_phases));
    }
    for (const auto* v : ds.split(rc.eval.split)) {
      const auto r = replay_video(ck.params, *v);
      preds.push_back({v->video_id, v->labels, r.predictions});
      if (!rc.paths.out_dir.empty()) {
        write_ribbon(std::filesystem::path(rc.paths.out_dir) / "ribbons" / (v->video_id + ".csv"), r, v->labels);
      }
    }
    if (preds.empty()) throw InputError("split '" + to_string(rc.eval.split) + "' has no videos");
    provenance = {{"checkpoint", rc.paths.checkpoint},
                  {"checkpoint_hash", checkpoint_hash(ck_path)},
                  {"config", ck.config},
                  {"data_dir", rc.paths.data_dir},
                  {"split", to_string(rc.eval.split)}};
  }
  const auto report = evaluate(preds, num_phases, rc.eval.protocol);
  auto j = report_to_json(report);
  j["source"] = provenance;
  j["tool_version"] = kToolVersion;
  if (!rc.paths.out_dir.empty()) {
    const std::filesystem::path dir = rc.paths.out_dir;
    write_effective_config(dir, rc, "eval");
    io::write_file(dir / "report.json", j.dump(2) + "\n");
  }
  if (provenance.contains("checkpoint_hash")) {
    out << "checkpoint " << rc.paths.checkpoint << "  hash " << provenance["checkpoint_hash"].get<std::string>()
        << "\nconfig " << provenance["config"].dump() << "\n";
  }
  out << report_table(report);
  return kOk;
}

inline int cmd_infer(const RunConfig& rc, std::ostream& out) {
  const auto ck = load_checkpoint(require_path(rc.paths.checkpoint, "--checkpoint"));
  const auto ribbon = require_path(rc.paths.ribbon, "--ribbon");
  const auto rec = load_video(rc);
  const auto r = replay_video(ck.params, rec);
  write_ribbon(ribbon, r, rec.labels);
  write_effective_config(ribbon.has_parent_path() ? ribbon.parent_path() : std::filesystem::path("."), rc, "infer");
  out << "wrote " << r.predictions.size() << " rows to " << ribbon.string() << "\n";
  if (!rec.labels.empty()) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < rec.labels.size(); ++i) correct += rec.labels[i] == r.predictions[i];
    out << "frame accuracy " << static_cast<double>(correct) / static_cast<double>(rec.labels.size()) << "\n";
  }
  return kOk;
}

inline int cmd_intervene(const RunConfig& rc, std::ostream& out) {
  const auto ck = load_checkpoint(require_path(rc.paths.checkpoint, "--checkpoint"));
  const auto dir = require_path(rc.paths.out_dir, "--out");
  const auto edits = read_edits_csv(require_path(rc.paths.edits, "--edits"));
  const auto rec = load_video(rc);
  for (const auto& fe : edits) {
    if (fe.frame_index >= rec.frames.size()) {
      throw InputError(rc.paths.edits + ": edit at frame " + std::to_string(fe.frame_index) + " beyond the " +
                       std::to_string(rec.frames.size()) + "-frame video");
    }
  }
  const auto before = replay_video(ck.params, rec);
  const auto after = counterfactual_replay(ck.params, rec, edits);
  write_ribbon(dir / "before.csv", before, rec.labels);
  write_ribbon(dir / "after.csv", after, rec.labels);
  Json flips = Json::array();
  for (std::size_t t = 0; t < before.predictions.size(); ++t) {
    if (before.predictions[t] != after.predictions[t]) {
      flips.push_back({{"frame", t}, {"before", before.predictions[t]}, {"after", after.predictions[t]}});
    }
  }
  std::size_t edit_count = 0;
  for (const auto& fe : edits) edit_count += fe.edits.size();
  Json summary{{"video", rec.video_id},
               {"frames", rec.frames.size()},
               {"edits", edit_count},
               {"changed_frames", flips.size()},
               {"changes", flips}};
  if (!rec.labels.empty()) {
    auto acc = [&](const std::vector<PhaseId>& p) {
      std::size_t c = 0;
      for (std::size_t i = 0; i < p.size(); ++i) c += p[i] == rec.labels[i];
      return static_cast<double>(c) / static_cast<double>(p.size());
    };
    summary["accuracy_before"] = acc(before.predictions);
    summary["accuracy_after"] = acc(after.predictions);
  }
  io::write_file(dir / "diff.json", summary.dump(2) + "\n");
  write_effective_config(dir, rc, "intervene");
  out << "changed " << flips.size() << " of " << rec.frames.size() << " frame predictions\n";
  return kOk;
}

// ---- Entry point ------------------------------------------------------------

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Memory-augmented surgical phase recognition toolkit", "mosctl"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);

  std::string config_file;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  PathsConfig flag_paths;
  std::string mem_mode, protocol, split;
  std::optional<std::size_t> epochs;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "override a config key, e.g. --set train.epochs=5");
    sub->add_option("--seed", seed, "top-level seed");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  common(gen);
  gen->add_option("--out", flag_paths.out_dir, "output directory");

  auto* train = app.add_subcommand("train", "train a model");
  common(train);
  train->add_option("--data", flag_paths.data_dir, "dataset directory");
  train->add_option("--out", flag_paths.out_dir, "output directory");
  train->add_option("--mem-mode", mem_mode, "none, short, long or full");
  train->add_option("--epochs", epochs, "number of epochs");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint or a directory of ribbons");
  common(eval);
  eval->add_option("--checkpoint", flag_paths.checkpoint, "checkpoint file");
  eval->add_option("--data", flag_paths.data_dir, "dataset directory");
  eval->add_option("--ribbons", flag_paths.ribbons, "directory of ribbon CSVs");
  eval->add_option("--protocol", protocol, "concat or per_video");
  eval->add_option("--split", split, "train, val or test");
  eval->add_option("--out", flag_paths.out_dir, "output directory for report.json and ribbons");

  auto* infer = app.add_subcommand("infer", "stream one video and write its ribbon");
  common(infer);
  infer->add_option("--checkpoint", flag_paths.checkpoint, "checkpoint file");
  infer->add_option("--video", flag_paths.video, "frame blob");
  infer->add_option("--labels", flag_paths.labels, "optional labels CSV");
  infer->add_option("--ribbon", flag_paths.ribbon, "output ribbon CSV");

  auto* intervene = app.add_subcommand("intervene", "replay one video with history edits");
  common(intervene);
  intervene->add_option("--checkpoint", flag_paths.checkpoint, "checkpoint file");
  intervene->add_option("--video", flag_paths.video, "frame blob");
  intervene->add_option("--labels", flag_paths.labels, "optional labels CSV");
  intervene->add_option("--edits", flag_paths.edits, "edits CSV");
  intervene->add_option("--out", flag_paths.out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    Json doc = read_config_file(config_file);
    for (const auto& o : overrides) apply_override(doc, o);
    if (seed) doc["seed"] = *seed;
    if (!mem_mode.empty()) doc["model"]["mem_mode"] = mem_mode;
    if (epochs) doc["train"]["epochs"] = *epochs;
    if (!protocol.empty()) doc["eval"]["protocol"] = protocol;
    if (!split.empty()) doc["eval"]["split"] = split;
    const Json flags = paths_to_json(flag_paths);
    for (const auto& [key, value] : flags.items()) {
      if (!value.get<std::string>().empty()) doc["paths"][key] = value;
    }
    auto rc = run_config_from_json(doc);
    rc.config_file = config_file;
    rc.overrides = overrides;

    if (gen->parsed()) return cmd_gen_data(rc, out);
    if (train->parsed()) return cmd_train(rc, out, err);
    if (eval->parsed()) return cmd_eval(rc, out);
    if (infer->parsed()) return cmd_infer(rc, out);
    if (intervene->parsed()) return cmd_intervene(rc, out);
    return kUsageError;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsageError;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
}

}  // namespace mos::cli
