#pragma once

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "losses.hpp"
#include "manifest.hpp"
#include "stats.hpp"
#include "train.hpp"

namespace avb {

/// Per-(feature, task) aggregate over a seed sweep.
struct SweepSummary {
  std::string feature_name;
  Task task = Task::Two;
  std::size_t input_dim = 0;
  std::vector<std::uint64_t> seeds;           // requested, ascending
  std::map<std::uint64_t, double> per_seed;   // completed runs only
  std::vector<std::uint64_t> missing;         // requested but not completed
  double max_score = 0.0;
  double mean_score = 0.0;
  double std_score = 0.0;  // sample (n - 1)

  std::vector<double> scores() const {
    std::vector<double> out;
    for (const auto& [s, v] : per_seed) out.push_back(v);
    return out;
  }
};

inline SweepSummary summarize(std::string feature, Task task, std::size_t input_dim,
                              std::vector<std::uint64_t> seeds, std::map<std::uint64_t, double> per_seed) {
  SweepSummary s;
  s.feature_name = std::move(feature);
  s.task = task;
  s.input_dim = input_dim;
  std::sort(seeds.begin(), seeds.end());
  s.seeds = std::move(seeds);
  s.per_seed = std::move(per_seed);
  for (auto seed : s.seeds)
    if (!s.per_seed.count(seed)) s.missing.push_back(seed);
  const auto v = s.scores();
  if (!v.empty()) {
    s.max_score = *std::max_element(v.begin(), v.end());
    s.mean_score = mean(v);
    s.std_score = sample_std(v);
  }
  return s;
}

inline nlohmann::json to_json(const SweepSummary& s) {
  nlohmann::json per_seed = nlohmann::json::array();
  for (const auto& [seed, v] : s.per_seed) per_seed.push_back({{"seed", seed}, {"score", v}});
  return {{"feature", s.feature_name}, {"task", to_string(s.task)}, {"input_dim", s.input_dim},
          {"seeds", s.seeds},          {"per_seed", per_seed},      {"missing", s.missing},
          {"max", s.max_score},        {"mean", s.mean_score},      {"std", s.std_score},
          {"completed", s.per_seed.size()}};
}

/// Parses "0..19", "0,3,7" or a mix such as "0..4,10".
inline std::vector<std::uint64_t> parse_seeds(const std::string& spec) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(spec);
  std::string part;
  auto to_u64 = [&](const std::string& s) -> std::uint64_t {
    std::uint64_t v = 0;
    auto t = detail::trim(s);
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) throw Error("bad seed '" + s + "' in '" + spec + "'");
    return v;
  };
  while (std::getline(ss, part, ',')) {
    auto dots = part.find("..");
    if (dots == std::string::npos) {
      out.push_back(to_u64(part));
      continue;
    }
    const auto lo = to_u64(part.substr(0, dots)), hi = to_u64(part.substr(dots + 2));
    if (hi < lo) throw Error("empty seed range '" + part + "'");
    for (auto s = lo; s <= hi; ++s) out.push_back(s);
  }
  if (out.empty()) throw Error("no seeds in '" + spec + "'");
  std::set<std::uint64_t> uniq(out.begin(), out.end());
  if (uniq.size() != out.size()) throw Error("duplicate seeds in '" + spec + "'");
  return out;
}

inline std::vector<std::uint64_t> default_seeds() {
  std::vector<std::uint64_t> s(20);
  for (std::uint64_t i = 0; i < s.size(); ++i) s[i] = i;
  return s;
}

using LogFn = std::function<void(const std::string&)>;

struct SweepOutcome {
  SweepSummary summary;
  std::size_t executed = 0;
  std::size_t reused = 0;
  std::map<std::uint64_t, std::string> failures;
};

/// Trains one run per seed under `runs_root/<feature>/<task>/<seed>/`,
/// reusing any run whose manifest already records the same config. Runs
/// fan out over `jobs` worker threads; a failed run is recorded and the
/// sweep continues. Aggregation is keyed by seed, so the result does not
/// depend on completion order.
inline SweepOutcome run_sweep(const Dataset& ds, const TrainConfig& base, std::vector<std::uint64_t> seeds,
                              const std::filesystem::path& runs_root, std::size_t jobs = 1, const LogFn& log = {}) {
  if (seeds.empty()) throw Error("sweep needs at least one seed");
  std::sort(seeds.begin(), seeds.end());
  if (std::adjacent_find(seeds.begin(), seeds.end()) != seeds.end()) throw Error("sweep seeds must be distinct");

  struct Slot {
    TrainConfig cfg;
    std::filesystem::path dir;
    std::optional<double> score;
    std::string error;
    bool executed = false;
  };
  std::vector<Slot> slots;
  for (auto seed : seeds) {
    TrainConfig cfg = base;
    cfg.seed = seed;
    slots.push_back({cfg, run_dir(runs_root, cfg.feature_name, cfg.task, seed), std::nullopt, {}, false});
  }

  std::vector<std::size_t> todo;
  SweepOutcome outcome;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    auto stored = load_manifest(slots[i].dir);
    if (stored && stored->config == slots[i].cfg) {
      slots[i].score = stored->score;
      slots[i].error = stored->error;
      ++outcome.reused;
    } else {
      todo.push_back(i);
    }
  }

  std::mutex log_mutex;
  auto say = [&](const std::string& msg) {
    if (!log) return;
    std::lock_guard lock(log_mutex);
    log(msg);
  };
  const DatasetInfo info = describe(ds);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < todo.size();) {
      Slot& slot = slots[todo[k]];
      slot.executed = true;
      try {
        auto r = train_run(ds, slot.cfg);
        persist_run(r, info, slot.dir);
        slot.score = r.reported_score;
        say("seed " + std::to_string(slot.cfg.seed) + ": score " + detail::format_double(r.reported_score) +
            " (best epoch " + std::to_string(r.best_epoch) + ")");
      } catch (const std::exception& e) {
        slot.error = e.what();
        try {
          std::filesystem::create_directories(slot.dir);
          write_json(failed_manifest(slot.cfg, slot.error), slot.dir / "run.json");
        } catch (const std::exception&) {
        }
        say("seed " + std::to_string(slot.cfg.seed) + " failed: " + slot.error);
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, todo.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  std::map<std::uint64_t, double> per_seed;
  for (const auto& slot : slots) {
    outcome.executed += slot.executed;
    if (slot.score)
      per_seed[slot.cfg.seed] = *slot.score;
    else
      outcome.failures[slot.cfg.seed] = slot.error;
  }
  outcome.summary = summarize(base.feature_name, base.task, ds.dims, seeds, std::move(per_seed));
  return outcome;
}

// ---- stored runs ------------------------------------------------------------

struct RunKey {
  std::string feature;
  Task task;
  auto operator<=>(const RunKey&) const = default;
};

using RunIndex = std::map<RunKey, std::map<std::uint64_t, StoredRun>>;

namespace detail {

inline bool is_uint(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); });
}

inline void scan_task_dir(const std::filesystem::path& dir, const std::string& feature, Task task, RunIndex& idx) {
  for (const auto& seed_dir : std::filesystem::directory_iterator(dir)) {
    const auto name = seed_dir.path().filename().string();
    if (!seed_dir.is_directory() || !is_uint(name)) continue;
    if (auto run = load_manifest(seed_dir.path())) idx[{feature, task}][std::stoull(name)] = std::move(*run);
  }
}

}  // namespace detail

/// Reads every `<root>/<feature>/<task>/<seed>/run.json`.
inline RunIndex collect_runs(const std::filesystem::path& root) {
  if (!std::filesystem::is_directory(root)) throw Error("runs directory '" + root.string() + "' does not exist");
  RunIndex idx;
  for (const auto& feat : std::filesystem::directory_iterator(root)) {
    if (!feat.is_directory()) continue;
    for (Task t : kAllTasks) {
      const auto dir = feat.path() / std::string(to_string(t));
      if (std::filesystem::is_directory(dir)) detail::scan_task_dir(dir, feat.path().filename().string(), t, idx);
    }
  }
  return idx;
}

/// Summaries for every (feature, task) in `idx`, against the expected
/// seed set (seeds outside it are ignored).
inline std::vector<SweepSummary> summarize_runs(const RunIndex& idx, const std::vector<std::uint64_t>& expected) {
  std::vector<SweepSummary> out;
  const std::set<std::uint64_t> want(expected.begin(), expected.end());
  for (const auto& [key, runs] : idx) {
    std::map<std::uint64_t, double> per_seed;
    std::size_t dim = 0;
    for (const auto& [seed, run] : runs) {
      if (!want.count(seed) || !run.score) continue;
      per_seed[seed] = *run.score;
      dim = run.input_dim;
    }
    out.push_back(summarize(key.feature, key.task, dim, expected, std::move(per_seed)));
  }
  return out;
}

struct PairedComparison {
  std::string feature_a, feature_b;
  Task task = Task::High;
  std::vector<std::uint64_t> seeds;  // the paired seeds
  PairedTestResult test;
};

/// Pairs two summaries of the same task by seed and runs the paired t-test.
inline PairedComparison compare_summaries(const SweepSummary& a, const SweepSummary& b) {
  if (a.task != b.task) throw Error("cannot pair runs of different tasks");
  PairedComparison c{a.feature_name, b.feature_name, a.task, {}, {}};
  std::vector<double> xa, xb;
  for (const auto& [seed, v] : a.per_seed) {
    auto it = b.per_seed.find(seed);
    if (it == b.per_seed.end()) continue;
    c.seeds.push_back(seed);
    xa.push_back(v);
    xb.push_back(it->second);
  }
  if (c.seeds.size() < 2)
    throw Error("need at least 2 common seeds to compare " + a.feature_name + " and " + b.feature_name);
  c.test = paired_ttest(xa, xb);
  return c;
}

/// Compares `<dir_a>/<task>/<seed>` against `<dir_b>/<task>/<seed>`.
inline PairedComparison compare_run_dirs(const std::filesystem::path& dir_a, const std::filesystem::path& dir_b,
                                         Task task) {
  auto load = [&](const std::filesystem::path& dir) {
    const auto tdir = dir / std::string(to_string(task));
    if (!std::filesystem::is_directory(tdir)) throw Error("no runs under '" + tdir.string() + "'");
    RunIndex idx;
    const auto feature = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
    detail::scan_task_dir(tdir, feature, task, idx);
    std::map<std::uint64_t, double> per_seed;
    std::vector<std::uint64_t> seeds;
    std::size_t dim = 0;
    for (const auto& [key, runs] : idx)
      for (const auto& [seed, run] : runs) {
        seeds.push_back(seed);
        if (run.score) {
          per_seed[seed] = *run.score;
          dim = run.input_dim;
        }
      }
    return summarize(feature, task, dim, seeds, std::move(per_seed));
  };
  return compare_summaries(load(dir_a), load(dir_b));
}

inline nlohmann::json to_json(const PairedComparison& c) {
  const auto& t = c.test;
  return {{"feature_a", c.feature_a},
          {"feature_b", c.feature_b},
          {"task", to_string(c.task)},
          {"seeds", c.seeds},
          {"n", t.n},
          {"mean_difference", t.mean_difference},
          {"sd_difference", t.sd_difference},
          {"t", t.degenerate ? nlohmann::json(nullptr) : nlohmann::json(t.t)},
          {"dof", t.dof},
          {"p_value", t.p_value},
          {"degenerate", t.degenerate}};
}

// ---- report -----------------------------------------------------------------

struct ReportStatus {
  bool missing_seeds = false;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::string fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

inline std::string render_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  auto cell_width = [](const std::string& s) {
    std::size_t w = 0;  // count UTF-8 code points
    for (unsigned char c : s) w += (c & 0xC0) != 0x80;
    return w;
  };
  for (std::size_t j = 0; j < header.size(); ++j) width[j] = cell_width(header[j]);
  for (const auto& r : rows)
    for (std::size_t j = 0; j < r.size(); ++j) width[j] = std::max(width[j], cell_width(r[j]));
  auto line = [&](const std::vector<std::string>& cells) {
    std::string s = "|";
    for (std::size_t j = 0; j < cells.size(); ++j)
      s += " " + cells[j] + std::string(width[j] - cell_width(cells[j]), ' ') + " |";
    return s + "\n";
  };
  std::string out = line(header);
  out += "|";
  for (auto w : width) out += std::string(w + 2, '-') + "|";
  out += "\n";
  for (const auto& r : rows) out += line(r);
  return out;
}

}  // namespace detail

/// Writes summary.json, tables.txt, radar.json and box.json into `out_dir`.
/// Tables follow the maximum-score and mean +/- std layouts, bolding
/// (with **) the best feature per task.
inline ReportStatus build_report(const std::vector<SweepSummary>& summaries_in,
                                 const std::vector<PairedComparison>& tests, const std::filesystem::path& out_dir) {
  if (summaries_in.empty()) throw Error("report needs at least one sweep summary");
  ReportStatus status;
  auto summaries = summaries_in;
  std::sort(summaries.begin(), summaries.end(), [](const SweepSummary& a, const SweepSummary& b) {
    return std::tie(a.feature_name, a.task) < std::tie(b.feature_name, b.task);
  });

  std::vector<std::string> features;
  std::map<RunKey, const SweepSummary*> by_key;
  for (const auto& s : summaries) {
    if (features.empty() || features.back() != s.feature_name) features.push_back(s.feature_name);
    by_key[{s.feature_name, s.task}] = &s;
    if (!s.missing.empty()) {
      status.missing_seeds = true;
      std::string seeds;
      for (auto m : s.missing) seeds += (seeds.empty() ? "" : ",") + std::to_string(m);
      status.warnings.push_back(s.feature_name + "/" + std::string(to_string(s.task)) + ": missing seeds " + seeds);
    }
  }
  auto find = [&](const std::string& f, Task t) -> const SweepSummary* {
    auto it = by_key.find({f, t});
    return it == by_key.end() || it->second->per_seed.empty() ? nullptr : it->second;
  };

  // Per-seed overall scores on the seeds shared by all four tasks.
  nlohmann::json box = nlohmann::json::array();
  nlohmann::json overall = nlohmann::json::object();
  std::map<std::string, std::pair<double, double>> overall_stats;
  for (const auto& f : features) {
    const SweepSummary* parts[4];
    bool complete = true;
    for (std::size_t i = 0; i < 4; ++i) complete &= (parts[i] = find(f, kAllTasks[i])) != nullptr;
    if (!complete) {
      status.warnings.push_back(f + ": overall score skipped, not all four tasks have results");
      continue;
    }
    std::set<std::uint64_t> common, any;
    for (auto& [seed, v] : parts[0]->per_seed) common.insert(seed);
    for (const auto* p : parts) {
      std::set<std::uint64_t> keep;
      for (auto& [seed, v] : p->per_seed) {
        any.insert(seed);
        if (common.count(seed)) keep.insert(seed);
      }
      common = std::move(keep);
    }
    if (common.size() != any.size())
      status.warnings.push_back(f + ": seed sets differ across tasks, overall uses the " +
                                std::to_string(common.size()) + " common seeds");
    if (common.empty()) continue;
    std::vector<std::uint64_t> seeds(common.begin(), common.end());
    std::vector<double> scores;
    for (auto seed : seeds)
      scores.push_back(overall_mean(parts[0]->per_seed.at(seed), parts[1]->per_seed.at(seed),
                                    parts[2]->per_seed.at(seed), parts[3]->per_seed.at(seed)));
    box.push_back({{"feature", f}, {"seeds", seeds}, {"overall", scores}});
    overall_stats[f] = {mean(scores), sample_std(scores)};
    overall[f] = {{"seeds", seeds}, {"per_seed", scores}, {"mean", mean(scores)}, {"std", sample_std(scores)}};
  }

  // Radar: four task scores per feature.
  nlohmann::json radar_features = nlohmann::json::array();
  for (const auto& f : features) {
    nlohmann::json mx = nlohmann::json::object(), mn = nlohmann::json::object();
    for (Task t : kAllTasks) {
      const auto key = std::string(to_string(t));
      const auto* s = find(f, t);
      mx[key] = s ? nlohmann::json(s->max_score) : nlohmann::json(nullptr);
      mn[key] = s ? nlohmann::json(s->mean_score) : nlohmann::json(nullptr);
    }
    radar_features.push_back({{"feature", f}, {"max", mx}, {"mean", mn}});
  }
  nlohmann::json radar{{"tasks", {"high", "two", "culture", "type"}}, {"features", radar_features}};

  // Text tables.
  auto bold_column = [&](Task t, auto value_of, int decimals) {
    std::string best;
    double best_v = -1e300;
    for (const auto& f : features)
      if (const auto* s = find(f, t); s && value_of(*s) > best_v) best_v = value_of(*s);
    if (best_v > -1e300) best = detail::fixed(best_v, decimals);
    return best;
  };
  std::size_t max_seeds = 0;
  for (const auto& s : summaries) max_seeds = std::max(max_seeds, s.seeds.size());

  std::string text;
  {
    std::vector<std::vector<std::string>> rows;
    std::string best[4];
    for (std::size_t i = 0; i < 4; ++i) best[i] = bold_column(kAllTasks[i], [](const SweepSummary& s) { return s.max_score; }, 4);
    for (const auto& f : features) {
      std::vector<std::string> row{f, "-"};
      for (std::size_t i = 0; i < 4; ++i) {
        const auto* s = find(f, kAllTasks[i]);
        if (s && s->input_dim) row[1] = std::to_string(s->input_dim);
        std::string cell = s ? detail::fixed(s->max_score, 4) : "-";
        row.push_back(s && cell == best[i] ? "**" + cell + "**" : cell);
      }
      rows.push_back(row);
    }
    text += "Maximum validation score over " + std::to_string(max_seeds) +
            " seeds (CCC for High, Two, Culture; UAR for Type)\n\n";
    text += detail::render_table({"Feature", "Dims.", "High", "Two", "Culture", "Type"}, rows);
  }
  {
    std::vector<std::vector<std::string>> rows;
    std::string best[4];
    for (std::size_t i = 0; i < 4; ++i) best[i] = bold_column(kAllTasks[i], [](const SweepSummary& s) { return s.mean_score; }, 3);
    for (const auto& f : features) {
      std::vector<std::string> row{f};
      for (std::size_t i = 0; i < 4; ++i) {
        const auto* s = find(f, kAllTasks[i]);
        if (!s) {
          row.push_back("-");
          continue;
        }
        std::string m = detail::fixed(s->mean_score, 3);
        if (m == best[i]) m = "**" + m + "**";
        row.push_back(m + " ± " + detail::fixed(s->std_score, 3));
      }
      rows.push_back(row);
    }
    text += "\nMean ± sample std of the validation score over " + std::to_string(max_seeds) + " seeds\n\n";
    text += detail::render_table({"Feature", "High", "Two", "Culture", "Type"}, rows);
  }
  if (!overall_stats.empty()) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& [f, ms] : overall_stats)
      rows.push_back({f, detail::fixed(ms.first, 3) + " ± " + detail::fixed(ms.second, 3)});
    text += "\nOverall score (mean of the four task scores per seed)\n\n";
    text += detail::render_table({"Feature", "Overall"}, rows);
  }
  nlohmann::json test_json = nlohmann::json::array();
  if (!tests.empty()) {
    std::vector<std::vector<std::string>> rows;
    for (const auto& c : tests) {
      test_json.push_back(to_json(c));
      rows.push_back({c.feature_a, c.feature_b, std::string(to_string(c.task)), std::to_string(c.test.n),
                      detail::fixed(c.test.mean_difference, 4), c.test.degenerate ? "-" : detail::fixed(c.test.t, 4),
                      detail::fixed(c.test.p_value, 4)});
    }
    text += "\nPaired t-tests (pairs matched by seed)\n\n";
    text += detail::render_table({"Feature A", "Feature B", "Task", "n", "Mean diff.", "t", "p"}, rows);
  }
  if (!status.warnings.empty()) {
    text += "\nWarnings\n\n";
    for (const auto& w : status.warnings) text += "- " + w + "\n";
  }

  nlohmann::json summary_json = nlohmann::json::array();
  for (const auto& s : summaries) summary_json.push_back(to_json(s));
  nlohmann::json summary{{"summaries", summary_json},
                         {"paired_tests", test_json},
                         {"overall", overall},
                         {"warnings", status.warnings}};

  std::filesystem::create_directories(out_dir);
  write_json(summary, out_dir / "summary.json");
  write_json(radar, out_dir / "radar.json");
  write_json({{"features", box}}, out_dir / "box.json");
  {
    auto os = detail::open_out(out_dir / "tables.txt");
    os << text;
    if (!os) throw Error("write failed for tables.txt");
  }
  return status;
}

}  // namespace avb
