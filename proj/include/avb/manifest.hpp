#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "json.hpp"

#include "dataio.hpp"
#include "error.hpp"
#include "train.hpp"

namespace avb {

inline constexpr const char* kLibraryVersion = "1.0.0";

// ---- checkpoint -------------------------------------------------------------
//
// {"format": "avb-checkpoint", "version": 1, "config": {...}, "input_dim": D,
//  "target_names": [...], "layers": [{"in_dim", "out_dim", "layernorm",
//  "activation", "weight" (row-major out_dim x in_dim), "bias", "gain",
//  "shift"}, ...]}

inline nlohmann::json checkpoint_to_json(const Checkpoint& ck) {
  nlohmann::json layers = nlohmann::json::array();
  for (std::size_t i = 0; i < ck.spec.size(); ++i) {
    const auto& s = ck.spec[i];
    const auto& p = ck.params.layers.at(i);
    layers.push_back({{"in_dim", s.in_dim},
                      {"out_dim", s.out_dim},
                      {"layernorm", s.has_layernorm},
                      {"activation", to_string(s.activation)},
                      {"weight", p.weight.data()},
                      {"bias", p.bias},
                      {"gain", p.gain},
                      {"shift", p.shift}});
  }
  return {{"format", "avb-checkpoint"},
          {"version", 1},
          {"config", ck.config},
          {"input_dim", ck.input_dim},
          {"target_names", ck.target_names},
          {"layers", layers}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "avb-checkpoint") throw Error("not a checkpoint file");
  if (j.value("version", 0) != 1) throw Error("unsupported checkpoint version");
  Checkpoint ck;
  ck.config = j.at("config").get<TrainConfig>();
  ck.input_dim = j.at("input_dim").get<std::size_t>();
  ck.target_names = j.at("target_names").get<std::vector<std::string>>();
  for (const auto& l : j.at("layers")) {
    LayerSpec s{l.at("in_dim").get<std::size_t>(), l.at("out_dim").get<std::size_t>(), l.at("layernorm").get<bool>(),
                parse_activation(l.at("activation").get<std::string>())};
    DenseParams<double> p;
    p.weight = Matrix<double>(s.out_dim, s.in_dim);
    auto w = l.at("weight").get<std::vector<double>>();
    if (w.size() != s.out_dim * s.in_dim) throw Error("checkpoint weight has the wrong size");
    p.weight.data() = std::move(w);
    p.bias = l.at("bias").get<std::vector<double>>();
    p.gain = l.at("gain").get<std::vector<double>>();
    p.shift = l.at("shift").get<std::vector<double>>();
    const std::size_t ln = s.has_layernorm ? s.out_dim : 0;
    if (p.bias.size() != s.out_dim || p.gain.size() != ln || p.shift.size() != ln)
      throw Error("checkpoint layer has inconsistent shapes");
    ck.spec.push_back(s);
    ck.params.layers.push_back(std::move(p));
  }
  if (ck.spec.empty() || ck.spec.front().in_dim != ck.input_dim) throw Error("checkpoint layer chain is inconsistent");
  for (std::size_t i = 1; i < ck.spec.size(); ++i)
    if (ck.spec[i].in_dim != ck.spec[i - 1].out_dim) throw Error("checkpoint layer chain is inconsistent");
  return ck;
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  auto in = detail::open_in(path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid JSON in '" + path.string() + "': " + e.what());
  }
}

/// Writes via a temporary file and rename so readers never see a partial file.
inline void write_json(const nlohmann::json& j, const std::filesystem::path& path) {
  auto tmp = path;
  tmp += ".tmp";
  {
    auto out = detail::open_out(tmp);
    out << j.dump(2) << '\n';
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  write_json(checkpoint_to_json(ck), path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return checkpoint_from_json(read_json(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed checkpoint '" + path.string() + "': " + e.what());
  }
}

// ---- run manifests ----------------------------------------------------------

inline nlohmann::json environment_fingerprint() {
  std::string compiler;
#if defined(__clang__)
  compiler = "clang " __clang_version__;
#elif defined(__GNUC__)
  compiler = "gcc " __VERSION__;
#else
  compiler = "unknown";
#endif
  return {{"library_version", kLibraryVersion}, {"compiler", compiler}, {"cplusplus", __cplusplus}};
}

/// Run directory for one (feature, task, seed) key.
inline std::filesystem::path run_dir(const std::filesystem::path& root, const std::string& feature, Task task,
                                     std::uint64_t seed) {
  return root / feature / std::string(to_string(task)) / std::to_string(seed);
}

struct DatasetInfo {
  std::size_t train_rows = 0, val_rows = 0, dropped_features = 0, dropped_labels = 0;
};

inline DatasetInfo describe(const Dataset& ds) {
  return {ds.train.size(), ds.val.size(), ds.dropped_features, ds.dropped_labels};
}

/// Manifest body for a finished run. Wall time is excluded so that the
/// manifest is a pure function of (dataset, config).
inline nlohmann::json run_manifest(const RunResult& r, const DatasetInfo& info) {
  nlohmann::json history = nlohmann::json::array();
  for (const auto& h : r.history)
    history.push_back({{"epoch", h.epoch}, {"train_loss", h.train_loss}, {"val_score", h.val_score}});
  nlohmann::json j{{"format", "avb-run"},
                   {"version", 1},
                   {"status", "ok"},
                   {"config", r.config},
                   {"input_dim", r.checkpoint.input_dim},
                   {"dataset",
                    {{"train_rows", info.train_rows},
                     {"val_rows", info.val_rows},
                     {"dropped_features", info.dropped_features},
                     {"dropped_labels", info.dropped_labels}}},
                   {"history", history},
                   {"best_val_score", r.best_val_score},
                   {"best_epoch", r.best_epoch},
                   {"reported_score", r.reported_score},
                   {"stopped_early", r.stopped_early},
                   {"checkpoint", "checkpoint.json"},
                   {"environment", environment_fingerprint()}};
  if (r.final_eval.confusion) {
    const auto& cm = *r.final_eval.confusion;
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < cm.classes(); ++i) {
      std::vector<std::uint64_t> row;
      for (std::size_t k = 0; k < cm.classes(); ++k) row.push_back(cm(i, k));
      rows.push_back(row);
    }
    j["confusion"] = rows;
  } else {
    j["per_dimension_ccc"] = r.final_eval.per_dimension_ccc;
  }
  return j;
}

inline nlohmann::json failed_manifest(const TrainConfig& cfg, const std::string& error) {
  return {{"format", "avb-run"}, {"version", 1},       {"status", "diverged"},
          {"config", cfg},       {"error", error},     {"environment", environment_fingerprint()}};
}

/// Writes checkpoint.json, run.json and timing.json under `dir`; run.json
/// last, so its presence marks a completed run.
inline void persist_run(const RunResult& r, const DatasetInfo& info, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_checkpoint(r.checkpoint, dir / "checkpoint.json");
  write_json({{"wall_seconds", r.wall_seconds}}, dir / "timing.json");
  write_json(run_manifest(r, info), dir / "run.json");
}

/// The fields of a stored run manifest that aggregation needs.
struct StoredRun {
  TrainConfig config;
  std::string status;
  std::size_t input_dim = 0;
  std::optional<double> score;  // reported_score for completed runs
  std::string error;
};

inline StoredRun parse_manifest(const nlohmann::json& j) {
  if (j.value("format", "") != "avb-run") throw Error("not a run manifest");
  StoredRun r;
  r.config = j.at("config").get<TrainConfig>();
  r.status = j.at("status").get<std::string>();
  if (r.status == "ok") {
    r.input_dim = j.at("input_dim").get<std::size_t>();
    r.score = j.at("reported_score").get<double>();
  } else {
    r.error = j.value("error", "");
  }
  return r;
}

inline std::optional<StoredRun> load_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "run.json";
  if (!std::filesystem::exists(path)) return std::nullopt;
  try {
    return parse_manifest(read_json(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed run manifest '" + path.string() + "': " + e.what());
  }
}

}  // namespace avb
