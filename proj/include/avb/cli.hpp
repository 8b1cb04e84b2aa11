#pragma once

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dataio.hpp"
#include "experiments.hpp"
#include "manifest.hpp"
#include "train.hpp"

namespace avb::cli {

namespace detail {

struct DataFlags {
  std::string task;
  std::string features;
  std::string labels;
  std::string feature_name;
  bool scale_labels = false;
};

struct HyperFlags {
  double lr = 5e-4;
  double weight_decay = 0.01;
  std::size_t batch_size = 8;
  std::size_t epochs = 100;
  std::size_t patience = 10;
  double min_delta = 0.01;
  std::string precision = "f64";
  bool keep_last = false;
  double clip_norm = 0.0;
};

inline void add_data_flags(CLI::App* cmd, DataFlags& d) {
  cmd->add_option("--task", d.task, "Task: high, two, culture or type")
      ->required()
      ->check(CLI::IsMember({"high", "two", "culture", "type"}, CLI::ignore_case));
  cmd->add_option("--features", d.features, "Feature table (CSV or AVBF binary)")->required();
  cmd->add_option("--labels", d.labels, "Label CSV")->required();
  cmd->add_option("--feature-name", d.feature_name, "Feature set name (default: features file stem)");
  cmd->add_flag("--scale-labels", d.scale_labels, "Labels are integer 1..100 scores; map them to [0,1]");
}

inline void add_hyper_flags(CLI::App* cmd, HyperFlags& h) {
  cmd->add_option("--lr", h.lr, "AdamW learning rate")->capture_default_str()->check(CLI::NonNegativeNumber);
  cmd->add_option("--weight-decay", h.weight_decay, "Decoupled weight decay")->capture_default_str()->check(CLI::NonNegativeNumber);
  cmd->add_option("--batch-size", h.batch_size, "Mini-batch size")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--epochs", h.epochs, "Maximum epochs")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--patience", h.patience, "Early-stopping patience (type task)")->capture_default_str();
  cmd->add_option("--min-delta", h.min_delta, "Early-stopping minimum improvement (type task)")->capture_default_str();
  cmd->add_option("--precision", h.precision, "Working precision")
      ->capture_default_str()
      ->check(CLI::IsMember({"f64", "f32"}));
  cmd->add_flag("--keep-last", h.keep_last, "Report and checkpoint the last epoch instead of the best one");
  cmd->add_option("--clip-norm", h.clip_norm, "Clip gradient L2 norm (0 = off)")->capture_default_str();
}

inline TrainConfig make_config(const DataFlags& d, const HyperFlags& h, const std::string& feature_name) {
  TrainConfig c;
  c.task = parse_task(d.task);
  c.feature_name = feature_name;
  c.learning_rate = h.lr;
  c.weight_decay = h.weight_decay;
  c.batch_size = h.batch_size;
  c.max_epochs = h.epochs;
  c.patience = h.patience;
  c.min_delta = h.min_delta;
  c.precision = parse_precision(h.precision);
  c.keep_best = !h.keep_last;
  c.clip_norm = h.clip_norm;
  return c;
}

inline Dataset load_dataset(const DataFlags& d, std::ostream& err) {
  auto features = load_features(d.features);
  if (!d.feature_name.empty()) features.feature_name = d.feature_name;
  const auto labels = load_labels(d.labels, parse_task(d.task), d.scale_labels);
  auto ds = join_split(features, labels);
  err << "loaded " << features.feature_name << ": " << features.size() << " feature rows x " << features.dims
      << " dims; train " << ds.train.size() << ", val " << ds.val.size() << ", test " << ds.test.size()
      << "; dropped " << ds.dropped_features << " feature ids and " << ds.dropped_labels << " label ids\n";
  return ds;
}

/// Lets `--config FILE` appear after the subcommand as well as before it.
inline std::vector<std::string> hoist_config(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc), front, rest;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      front = {args[i], args[i + 1]};
      ++i;
    } else if (args[i].rfind("--config=", 0) == 0) {
      front = {args[i]};
    } else {
      rest.push_back(args[i]);
    }
  }
  front.insert(front.end(), rest.begin(), rest.end());
  std::reverse(front.begin(), front.end());  // CLI11 consumes a reversed vector
  return front;
}

}  // namespace detail

/// Entry point of the `avb` tool. Returns 0 on success, 2 on usage errors
/// and 1 on runtime failures.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Affective vocal-burst trainer and multi-seed experiment harness", "avb"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI config file; command-line flags override its values");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic feature/label dataset");
  std::string synth_task = "two", synth_out;
  std::size_t synth_n = 500, synth_dims = 16;
  std::uint64_t synth_seed = 0;
  bool synth_binary = false;
  synth->add_option("--task", synth_task, "Task")->capture_default_str()->check(CLI::IsMember({"high", "two", "culture", "type"}, CLI::ignore_case));
  synth->add_option("--n", synth_n, "Number of utterances (>= 20)")->capture_default_str();
  synth->add_option("--dims", synth_dims, "Feature dimensionality (>= 2)")->capture_default_str();
  synth->add_option("--seed", synth_seed, "Generator seed")->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_flag("--binary", synth_binary, "Also write features.avbf in the binary format");

  // train
  auto* train = app.add_subcommand("train", "Train one seeded run");
  detail::DataFlags train_data;
  detail::HyperFlags train_hyper;
  std::uint64_t train_seed = 0;
  std::string train_out = "runs";
  bool dump_config = false;
  detail::add_data_flags(train, train_data);
  train->add_option("--seed", train_seed, "Seed for initialization and shuffling")->capture_default_str();
  detail::add_hyper_flags(train, train_hyper);
  train->add_option("--out", train_out, "Runs root directory")->capture_default_str();
  train->add_flag("--dump-config", dump_config, "Print the effective configuration as TOML and exit")->configurable(false);

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Train one run per seed and aggregate");
  detail::DataFlags sweep_data;
  detail::HyperFlags sweep_hyper;
  std::string sweep_seeds = "0..19", sweep_out = "runs";
  std::size_t jobs = 1;
  detail::add_data_flags(sweep, sweep_data);
  sweep->add_option("--seeds", sweep_seeds, "Seed list or range, e.g. 0..19 or 0,3,7")->capture_default_str();
  detail::add_hyper_flags(sweep, sweep_hyper);
  sweep->add_option("--out", sweep_out, "Runs root directory")->capture_default_str();
  sweep->add_option("--jobs", jobs, "Concurrent runs")->capture_default_str()->check(CLI::PositiveNumber);

  // compare
  auto* compare = app.add_subcommand("compare", "Paired t-test between two feature sets over shared seeds");
  std::string cmp_a, cmp_b, cmp_task, cmp_out;
  compare->add_option("--a", cmp_a, "Runs directory of feature set A (runs/<feature>)")->required();
  compare->add_option("--b", cmp_b, "Runs directory of feature set B")->required();
  compare->add_option("--task", cmp_task, "Task")->required()->check(CLI::IsMember({"high", "two", "culture", "type"}, CLI::ignore_case));
  compare->add_option("--out", cmp_out, "Write the JSON result here instead of standard output");

  // predict
  auto* predict = app.add_subcommand("predict", "Write predictions for a feature table");
  std::string pred_ckpt, pred_features, pred_out;
  predict->add_option("--checkpoint", pred_ckpt, "checkpoint.json of a trained run")->required();
  predict->add_option("--features", pred_features, "Feature table")->required();
  predict->add_option("--out", pred_out, "Output CSV")->required();

  // report
  auto* report = app.add_subcommand("report", "Aggregate stored runs into tables and plot data");
  std::string rep_runs = "runs", rep_out, rep_seeds = "0..19";
  std::vector<std::string> rep_pairs;
  report->add_option("--runs", rep_runs, "Runs root directory")->capture_default_str();
  report->add_option("--out", rep_out, "Report directory")->required();
  report->add_option("--seeds", rep_seeds, "Expected seed set")->capture_default_str();
  report->add_option("--pair", rep_pairs, "Feature pair A,B for paired t-tests (repeatable)");

  try {
    app.parse(detail::hoist_config(argc, argv));
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << "avb: " << e.what() << "\n";
    if (sub->get_name() != "avb") err << "run 'avb " << sub->get_name() << " --help' for usage\n";
    return 2;
  }

  try {
    if (synth->parsed()) {
      const Task task = parse_task(synth_task);
      auto data = make_synthetic(synth_seed, synth_n, synth_dims, task);
      const std::filesystem::path dir(synth_out);
      write_features_csv(data.features, dir / "features.csv");
      if (synth_binary) write_features_binary(data.features, dir / "features.avbf");
      write_labels(data.labels, dir / "labels.csv");
      err << "wrote " << data.features.size() << " synthetic rows (" << synth_dims << " dims, task " << to_string(task)
          << ") to " << dir.string() << "\n";
      return 0;
    }

    if (train->parsed()) {
      if (dump_config) {
        std::istringstream all(app.config_to_str(true, false));
        for (std::string line; std::getline(all, line);)
          if (line.rfind("train.", 0) == 0) out << line << '\n';
        return 0;
      }
      auto ds = detail::load_dataset(train_data, err);
      auto cfg = detail::make_config(train_data, train_hyper, ds.feature_name);
      cfg.seed = train_seed;
      auto r = train_run(ds, cfg, [&](const EpochRecord& e) {
        err << "epoch " << e.epoch << ": loss " << e.train_loss << ", val " << e.val_score << "\n";
      });
      const auto dir = run_dir(train_out, cfg.feature_name, cfg.task, cfg.seed);
      persist_run(r, describe(ds), dir);
      err << "best val score " << r.best_val_score << " at epoch " << r.best_epoch
          << (r.stopped_early ? " (stopped early)" : "") << "; manifest " << (dir / "run.json").string() << "\n";
      return 0;
    }

    if (sweep->parsed()) {
      auto ds = detail::load_dataset(sweep_data, err);
      auto cfg = detail::make_config(sweep_data, sweep_hyper, ds.feature_name);
      auto outcome = run_sweep(ds, cfg, parse_seeds(sweep_seeds), sweep_out, jobs,
                               [&](const std::string& msg) { err << msg << "\n"; });
      const auto path = std::filesystem::path(sweep_out) / cfg.feature_name / std::string(to_string(cfg.task)) / "summary.json";
      write_json(to_json(outcome.summary), path);
      const auto& s = outcome.summary;
      err << "executed " << outcome.executed << " runs, reused " << outcome.reused << "; max " << s.max_score
          << ", mean " << s.mean_score << " +/- " << s.std_score << "; summary " << path.string() << "\n";
      if (!s.missing.empty()) {
        err << "avb: " << s.missing.size() << " seed(s) did not complete\n";
        return 1;
      }
      return 0;
    }

    if (compare->parsed()) {
      auto c = compare_run_dirs(cmp_a, cmp_b, parse_task(cmp_task));
      const auto j = to_json(c);
      if (cmp_out.empty())
        out << j.dump(2) << "\n";
      else
        write_json(j, cmp_out);
      err << c.feature_a << " vs " << c.feature_b << " (" << to_string(c.task) << ", n=" << c.test.n
          << "): t=" << c.test.t << ", p=" << c.test.p_value << "\n";
      return 0;
    }

    if (predict->parsed()) {
      const auto ck = load_checkpoint(pred_ckpt);
      const auto features = load_features(pred_features);
      write_predictions(ck, features, pred_out);
      err << "wrote " << features.size() << " predictions to " << pred_out << "\n";
      return 0;
    }

    if (report->parsed()) {
      const auto idx = collect_runs(rep_runs);
      if (idx.empty()) throw Error("no run manifests under '" + rep_runs + "'");
      const auto summaries = summarize_runs(idx, parse_seeds(rep_seeds));
      std::vector<PairedComparison> tests;
      for (const auto& pair : rep_pairs) {
        const auto comma = pair.find(',');
        if (comma == std::string::npos) throw Error("--pair expects A,B, got '" + pair + "'");
        const std::string a = pair.substr(0, comma), b = pair.substr(comma + 1);
        for (Task t : kAllTasks) {
          const SweepSummary *sa = nullptr, *sb = nullptr;
          for (const auto& s : summaries) {
            if (s.task != t) continue;
            if (s.feature_name == a) sa = &s;
            if (s.feature_name == b) sb = &s;
          }
          if (!sa || !sb) continue;
          try {
            tests.push_back(compare_summaries(*sa, *sb));
          } catch (const Error& e) {
            err << "avb: skipping " << a << " vs " << b << " (" << to_string(t) << "): " << e.what() << "\n";
          }
        }
      }
      const auto status = build_report(summaries, tests, rep_out);
      for (const auto& w : status.warnings) err << "warning: " << w << "\n";
      err << "report written to " << rep_out << "\n";
      return status.missing_seeds ? 1 : 0;
    }
  } catch (const std::exception& e) {
    err << "avb: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace avb::cli
