#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dataio.hpp"
#include "error.hpp"
#include "losses.hpp"
#include "nn.hpp"
#include "rng.hpp"
#include "task.hpp"

namespace avb {

enum class Precision { F64, F32 };

inline std::string_view to_string(Precision p) { return p == Precision::F64 ? "f64" : "f32"; }

inline Precision parse_precision(std::string_view s) {
  if (s == "f64") return Precision::F64;
  if (s == "f32") return Precision::F32;
  throw Error("unknown precision '" + std::string(s) + "' (expected f64 or f32)");
}

/// Hyperparameters of one training run. Defaults are the reference
/// settings: AdamW, lr 0.0005, weight decay 0.01, batch 8, 100 epochs,
/// and for the Type task early stopping with patience 10 and delta 0.01.
struct TrainConfig {
  Task task = Task::Two;
  std::string feature_name;
  std::uint64_t seed = 0;
  double learning_rate = 5e-4;
  double weight_decay = 0.01;
  std::size_t batch_size = 8;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  double min_delta = 0.01;
  Precision precision = Precision::F64;
  bool keep_best = true;   // report the best-validation epoch, not the last
  double clip_norm = 0.0;  // 0 disables gradient clipping
  std::vector<std::size_t> hidden = kDefaultHidden;

  bool early_stopping() const { return task == Task::Type; }

  bool operator==(const TrainConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"task", to_string(c.task)},
                     {"feature_name", c.feature_name},
                     {"seed", c.seed},
                     {"learning_rate", c.learning_rate},
                     {"weight_decay", c.weight_decay},
                     {"batch_size", c.batch_size},
                     {"max_epochs", c.max_epochs},
                     {"patience", c.patience},
                     {"min_delta", c.min_delta},
                     {"early_stopping", c.early_stopping()},
                     {"precision", to_string(c.precision)},
                     {"keep_best", c.keep_best},
                     {"clip_norm", c.clip_norm},
                     {"hidden", c.hidden}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.task = parse_task(j.at("task").get<std::string>());
  c.feature_name = j.at("feature_name").get<std::string>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.max_epochs = j.at("max_epochs").get<std::size_t>();
  c.patience = j.at("patience").get<std::size_t>();
  c.min_delta = j.at("min_delta").get<double>();
  c.precision = parse_precision(j.at("precision").get<std::string>());
  c.keep_best = j.at("keep_best").get<bool>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
}

/// Trained network plus everything needed to reuse it. Parameters are
/// stored in 64-bit regardless of the training precision.
struct Checkpoint {
  TrainConfig config;
  std::size_t input_dim = 0;
  std::vector<std::string> target_names;
  ModelSpec spec;
  ModelParams<double> params;
};

/// Stops once `patience` consecutive scores fail to beat the best-so-far by
/// at least `min_delta`. The first score always counts as an improvement.
class EarlyStopper {
 public:
  EarlyStopper(std::size_t patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}

  /// Records one epoch's score; true when training should stop.
  bool update(double score) {
    if (!has_best_ || score - best_ >= min_delta_) {
      has_best_ = true;
      best_ = score;
      wait_ = 0;
    } else {
      ++wait_;
    }
    return wait_ >= patience_;
  }

  std::size_t wait() const noexcept { return wait_; }

 private:
  std::size_t patience_;
  double min_delta_;
  bool has_best_ = false;
  double best_ = 0.0;
  std::size_t wait_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_score = 0.0;

  bool operator==(const EpochRecord&) const = default;
};

struct EvalResult {
  double score = 0.0;                      // mean CCC or UAR
  std::vector<double> per_dimension_ccc;   // regression only
  std::optional<ConfusionMatrix> confusion;  // Type only
};

struct RunResult {
  TrainConfig config;
  std::vector<EpochRecord> history;
  double best_val_score = 0.0;
  std::size_t best_epoch = 0;  // 1-based, first occurrence of the maximum
  double reported_score = 0.0; // best or last epoch, per config.keep_best
  bool stopped_early = false;
  double wall_seconds = 0.0;
  EvalResult final_eval;       // of the checkpointed parameters
  Checkpoint checkpoint;
};

using ProgressFn = std::function<void(const EpochRecord&)>;

template <class To, class From>
ModelParams<To> params_cast(const ModelParams<From>& p) {
  ModelParams<To> out;
  for (const auto& l : p.layers) {
    DenseParams<To> d;
    d.weight = matrix_cast<To>(l.weight);
    d.bias.assign(l.bias.begin(), l.bias.end());
    d.gain.assign(l.gain.begin(), l.gain.end());
    d.shift.assign(l.shift.begin(), l.shift.end());
    out.layers.push_back(std::move(d));
  }
  return out;
}

/// Scores a labeled partition: mean per-dimension CCC over all rows for
/// regression tasks, UAR of the argmax class for Type.
template <class T>
EvalResult evaluate(const ModelParams<T>& params, const ModelSpec& spec, const Partition& part, Task task) {
  if (!part.labeled) throw Error("partition has no labels; use predict for unlabeled rows");
  if (part.size() == 0) throw Error("cannot evaluate an empty partition");
  const auto out = forward(params, spec, matrix_cast<T>(part.features), Mode::Eval).output;
  EvalResult r;
  if (is_regression(task)) {
    auto rep = ccc_columns(out, matrix_cast<T>(part.targets));
    r.score = rep.mean_ccc;
    r.per_dimension_ccc = std::move(rep.per_dimension);
  } else {
    ConfusionMatrix cm(out.cols());
    const auto pred = argmax_rows(out);
    for (std::size_t i = 0; i < pred.size(); ++i)
      cm.add(static_cast<std::size_t>(part.classes[i]), static_cast<std::size_t>(pred[i]));
    r.score = uar(cm);
    r.confusion = std::move(cm);
  }
  return r;
}

namespace detail {

template <class T>
RunResult train_run_impl(const Dataset& ds, const TrainConfig& cfg, const ProgressFn& progress) {
  const auto start = std::chrono::steady_clock::now();
  if (ds.task != cfg.task) throw Error("dataset task does not match the configured task");
  if (ds.train.size() == 0 || ds.val.size() == 0) throw Error("train and val partitions must be nonempty");
  if (!ds.train.labeled || !ds.val.labeled) throw Error("train and val partitions must be labeled");
  if (ds.train.features.cols() != ds.dims) throw Error("feature dimension mismatch");
  if (cfg.batch_size == 0) throw Error("batch size must be positive");

  const bool regression = is_regression(cfg.task);
  SplitMix64 root(cfg.seed);
  SplitMix64 init_rng = root.split(1);
  SplitMix64 shuffle_rng = root.split(2);

  const ModelSpec spec = make_spec(ds.dims, cfg.hidden, output_dim(cfg.task), head_for(cfg.task));
  ModelParams<T> params = init_params<T>(spec, init_rng);
  auto opt = make_optimizer<T>(spec, {cfg.learning_rate, cfg.weight_decay});

  const Matrix<T> x_train = matrix_cast<T>(ds.train.features);
  const Matrix<T> y_train = regression ? matrix_cast<T>(ds.train.targets) : Matrix<T>();
  std::vector<std::size_t> order(ds.train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  RunResult res;
  res.config = cfg;
  ModelParams<T> best_params = params;
  bool have_best = false;
  EarlyStopper stopper(cfg.patience, cfg.min_delta);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    fisher_yates(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start_row = 0; start_row < order.size(); start_row += cfg.batch_size) {
      const std::size_t end_row = std::min(order.size(), start_row + cfg.batch_size);
      if (regression && end_row - start_row < 2) break;  // CCC needs two rows
      std::span<const std::size_t> rows(order.data() + start_row, end_row - start_row);
      try {
        auto fw = forward(params, spec, gather_rows<T>(x_train, rows), Mode::Train);
        LossAndGrad<T> lg;
        if (regression) {
          lg = ccc_loss_and_grad(fw.output, gather_rows<T>(y_train, rows));
        } else {
          std::vector<int> cls;
          for (auto r : rows) cls.push_back(ds.train.classes[r]);
          lg = xent_loss_and_grad(fw.output, cls);
        }
        if (!std::isfinite(lg.loss)) throw DivergenceError("non-finite loss");
        auto grads = backward(params, spec, fw.trace, lg.grad);
        if (cfg.clip_norm > 0.0) clip_grad_norm(grads, cfg.clip_norm);
        adamw_step(params, grads, opt);
        loss_sum += lg.loss;
        ++batches;
      } catch (const DivergenceError& e) {
        throw DivergenceError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(batches + 1) + ")");
      }
    }

    const double score = evaluate(params, spec, ds.val, cfg.task).score;
    EpochRecord rec{epoch, batches ? loss_sum / static_cast<double>(batches) : 0.0, score};
    res.history.push_back(rec);
    if (progress) progress(rec);
    if (!have_best || score > res.best_val_score) {
      have_best = true;
      res.best_val_score = score;
      res.best_epoch = epoch;
      if (cfg.keep_best) best_params = params;
    }
    if (cfg.early_stopping() && stopper.update(score)) {
      res.stopped_early = epoch < cfg.max_epochs;
      break;
    }
  }

  const ModelParams<T>& kept = cfg.keep_best ? best_params : params;
  res.reported_score = cfg.keep_best ? res.best_val_score : res.history.back().val_score;
  res.final_eval = evaluate(kept, spec, ds.val, cfg.task);
  res.checkpoint = {cfg, ds.dims, ds.target_names, spec, params_cast<double>(kept)};
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

}  // namespace detail

/// One seeded training run. Everything except wall_seconds is a
/// deterministic function of (dataset, config).
inline RunResult train_run(const Dataset& ds, const TrainConfig& cfg, const ProgressFn& progress = {}) {
  if (cfg.precision == Precision::F32) return detail::train_run_impl<float>(ds, cfg, progress);
  return detail::train_run_impl<double>(ds, cfg, progress);
}

/// Network outputs for every row of `features`: sigmoid scores for
/// regression checkpoints, softmax probabilities for Type.
inline Matrix<double> predict_outputs(const Checkpoint& ck, const FeatureTable& features) {
  if (features.dims != ck.input_dim)
    throw Error("feature table has " + std::to_string(features.dims) + " dims, checkpoint expects " +
                std::to_string(ck.input_dim));
  auto out = forward(ck.params, ck.spec, features.values, Mode::Eval).output;
  if (!is_regression(ck.config.task)) out = softmax(out);
  return out;
}

/// Writes `file_id,<targets>` for regression or
/// `file_id,voc_type,p_gasp,...,p_other` for Type.
inline void write_predictions(const Checkpoint& ck, const FeatureTable& features, const std::filesystem::path& path) {
  const auto out = predict_outputs(ck, features);
  auto os = detail::open_out(path);
  os << "file_id";
  if (is_regression(ck.config.task)) {
    for (const auto& n : ck.target_names) os << ',' << n;
  } else {
    os << ",voc_type";
    for (auto c : kTypeClasses) os << ",p_" << c;
  }
  os << '\n';
  const auto cls = argmax_rows(out);
  for (std::size_t i = 0; i < features.size(); ++i) {
    os << features.ids[i];
    if (!is_regression(ck.config.task)) os << ',' << kTypeClasses.at(static_cast<std::size_t>(cls[i]));
    for (double v : out.row(i)) os << ',' << detail::format_double(v);
    os << '\n';
  }
  if (!os) throw Error("write failed for '" + path.string() + "'");
}

}  // namespace avb
