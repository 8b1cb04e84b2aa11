// Acceptance suite: one PASS/FAIL line per criterion. Exit status is 1 when
// any criterion fails, except for failures listed as known shortfalls in
// the project README.

#include <boost/multiprecision/cpp_int.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "avb/avb.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace avb;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  bool known_shortfall = false;  // documented, does not fail the binary
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  auto d = fs::temp_directory_path() / ("avb_acceptance_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

Matrix<double> random_matrix(SplitMix64& rng, std::size_t r, std::size_t c, double lo, double hi) {
  Matrix<double> m(r, c);
  for (double& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

// ---------------------------------------------------------------------------

Outcome loss_gradients() {
  const auto t0 = Clock::now();
  SplitMix64 rng(101);
  double worst_ccc = 0, worst_xent = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto pred = random_matrix(rng, 8, 10, 0, 1);
    const auto target = random_matrix(rng, 8, 10, 0, 1);
    const auto lg = ccc_loss_and_grad(pred, target);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      auto f = [&] { return ccc_loss_and_grad(pred, target).loss; };
      worst_ccc = std::max(worst_ccc, oracle::rel_error(lg.grad.data()[i], oracle::central_diff(f, pred.data()[i], 1e-5)));
    }

    auto logits = random_matrix(rng, 8, 8, -3, 3);
    std::vector<int> cls(8);
    for (int& c : cls) c = static_cast<int>(rng.below(8));
    const auto lx = xent_loss_and_grad(logits, cls);
    for (std::size_t i = 0; i < logits.size(); ++i) {
      auto f = [&] { return xent_loss_and_grad(logits, cls).loss; };
      worst_xent = std::max(worst_xent, oracle::rel_error(lx.grad.data()[i], oracle::central_diff(f, logits.data()[i], 1e-5)));
    }
  }
  const double secs = seconds_since(t0);
  return {worst_ccc < 1e-5 && worst_xent < 1e-5 && secs < 10,
          fmt("100 batches, max rel. error CCC %.2e, xent %.2e (< 1e-5), %.2f s (< 10 s)", worst_ccc, worst_xent, secs)};
}

Outcome network_gradients() {
  const auto t0 = Clock::now();
  SplitMix64 rng(202);
  double worst = 0;
  std::size_t checked = 0, skipped = 0;
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t d = 0;
    auto m = gradcheck::random_tiny_net(rng, d);
    const std::size_t batch = 2 + rng.below(4);
    const auto x = random_matrix(rng, batch, d, -2, 2);
    const auto w = random_matrix(rng, batch, m.spec.back().out_dim, -1, 1);
    const auto st = gradcheck::check(m, x, w);
    worst = std::max(worst, st.max_rel_error);
    checked += st.checked;
    skipped += st.skipped_kinks;
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && checked > 0 && secs < 30,
          fmt("50 nets, %zu parameters checked (%zu at a leaky-ReLU kink skipped), max rel. error %.2e (< 1e-5), "
              "%.2f s (< 30 s)",
              checked, skipped, worst, secs)};
}

Outcome ccc_oracle() {
  SplitMix64 rng(303);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(49);
    std::vector<double> x(n), y(n);
    const double shift = rng.uniform(-2, 2), scale = rng.uniform(0.1, 3);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = rng.normal();
      y[i] = shift + scale * (rng.uniform(0, 1) < 0.5 ? x[i] : rng.normal());
    }
    worst = std::max(worst, std::fabs(ccc(x, y) - oracle::lin_ccc(x, y)));
  }
  const double ex = std::fabs(ccc(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 6}) - 4.0 / 11.0);
  return {worst <= 1e-12 && ex <= 1e-15,
          fmt("1000 pairs, max |diff| %.2e (<= 1e-12); [1,2,3] vs [2,4,6] off 4/11 by %.1e (<= 1e-15)", worst, ex)};
}

Outcome uar_oracle() {
  using boost::multiprecision::cpp_rational;
  SplitMix64 rng(404);
  int ok = 0, total = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t c = 1 + rng.below(8);
    ConfusionMatrix cm(c);
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = 0; j < c; ++j)
        if (rng.below(4)) cm.add(i, j, rng.below(50));
    cm.add(rng.below(c), rng.below(c));  // at least one supported class
    cpp_rational sum = 0;
    int present = 0;
    for (std::size_t i = 0; i < c; ++i) {
      std::uint64_t support = 0;
      for (std::size_t j = 0; j < c; ++j) support += cm(i, j);
      if (support == 0) continue;
      sum += cpp_rational(cm(i, i), support);
      ++present;
    }
    const cpp_rational exact = sum / present;
    // The double result must be the exact rational rounded to within a few ulps.
    const cpp_rational got(uar(cm));
    const cpp_rational diff = got > exact ? got - exact : exact - got;
    ++total;
    ok += diff <= exact * cpp_rational(1, 1ll << 50);
  }
  return {ok == total, fmt("%d/%d random matrices (C <= 8) within 2^-50 relative of the exact rational mean", ok, total)};
}

Outcome t_pvalues() {
  double worst = 0;
  for (int nu = 1; nu <= 30; ++nu)
    for (int k = 0; k <= 200; ++k) {
      const double t = k * 0.05;
      worst = std::max(worst, std::fabs(t_sf(t, nu) - oracle::t_two_sided_p(t, nu)));
    }
  const double canon = t_sf(2.093, 19);
  return {worst <= 1e-9 && std::fabs(canon - 0.05) <= 0.001,
          fmt("max |diff| vs quadrature %.2e over t in [0,10], nu 1..30 (<= 1e-9); p(nu=19, t=2.093) = %.6f", worst,
              canon)};
}

Outcome learnability() {
  const auto t0 = Clock::now();
  const auto two_data = make_synthetic(7, 500, 16, Task::Two);
  TrainConfig two_cfg;
  two_cfg.task = Task::Two;
  two_cfg.feature_name = "synthetic";
  const auto two = train_run(join_split(two_data.features, two_data.labels), two_cfg);
  const double two_secs = seconds_since(t0);
  const bool two_ok = two.best_val_score >= 0.95 && two.history.size() <= 100 && two_secs < 60;

  const auto type_data = make_synthetic(7, 2000, 16, Task::Type);
  TrainConfig type_cfg;
  type_cfg.task = Task::Type;
  type_cfg.feature_name = "synthetic";
  const auto type_ds = join_split(type_data.features, type_data.labels);
  const auto type = train_run(type_ds, type_cfg);
  const bool type_ok = type.best_val_score >= 0.90;
  double other_seeds_best = 0;
  if (!type_ok)
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      type_cfg.seed = seed;
      other_seeds_best = std::max(other_seeds_best, train_run(type_ds, type_cfg).best_val_score);
    }

  Outcome o;
  o.pass = two_ok && type_ok;
  o.known_shortfall = two_ok && !type_ok;
  o.detail = fmt("Two: best val CCC %.4f at epoch %zu (>= 0.95), %.2f s (< 60 s); Type: best val UAR %.4f at epoch %zu "
                 "of %zu (>= 0.90)%s",
                 two.best_val_score, two.best_epoch, two_secs, type.best_val_score, type.best_epoch, type.history.size(),
                 type_ok ? "" : fmt(" [known shortfall, see README; best over training seeds 1-4: %.4f]", other_seeds_best).c_str());
  return o;
}

Outcome determinism() {
  const auto ds = [] {
    auto d = make_synthetic(21, 300, 12, Task::Type);
    return join_split(d.features, d.labels);
  }();
  TrainConfig cfg;
  cfg.task = Task::Type;
  cfg.feature_name = "synthetic";
  cfg.seed = 3;
  cfg.max_epochs = 20;

  const auto a_dir = scratch("det_a"), b_dir = scratch("det_b");
  persist_run(train_run(ds, cfg), describe(ds), a_dir);
  persist_run(train_run(ds, cfg), describe(ds), b_dir);
  const bool manifests_equal = slurp(a_dir / "run.json") == slurp(b_dir / "run.json") &&
                               slurp(a_dir / "checkpoint.json") == slurp(b_dir / "checkpoint.json");

  auto sweep_cfg = cfg;
  sweep_cfg.max_epochs = 5;
  sweep_cfg.hidden = {16, 8};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7};
  const auto one = run_sweep(ds, sweep_cfg, seeds, a_dir / "runs", 1);
  const auto four = run_sweep(ds, sweep_cfg, seeds, b_dir / "runs", 4);
  bool sweep_equal = to_json(one.summary).dump() == to_json(four.summary).dump();
  for (auto s : seeds)
    sweep_equal &= slurp(run_dir(a_dir / "runs", "synthetic", Task::Type, s) / "run.json") ==
                   slurp(run_dir(b_dir / "runs", "synthetic", Task::Type, s) / "run.json");
  fs::remove_all(a_dir);
  fs::remove_all(b_dir);
  return {manifests_equal && sweep_equal,
          fmt("repeated run manifests %s; 8-seed sweep with --jobs 1 vs 4 %s", manifests_equal ? "identical" : "DIFFER",
              sweep_equal ? "identical" : "DIFFER")};
}

Outcome early_stopping() {
  // A run whose validation UAR is constant: zero learning rate and decay.
  const auto d = make_synthetic(5, 400, 8, Task::Type);
  const auto ds = join_split(d.features, d.labels);
  TrainConfig cfg;
  cfg.task = Task::Type;
  cfg.learning_rate = 0;
  cfg.weight_decay = 0;
  const auto r = train_run(ds, cfg);
  const bool plateau_ok = r.stopped_early && r.history.size() == cfg.patience + 1;

  // A score trace that improves for 5 epochs, then creeps up by < 0.01.
  EarlyStopper stopper(cfg.patience, cfg.min_delta);
  std::size_t stop_epoch = 0;
  for (std::size_t e = 1; e <= 100 && !stop_epoch; ++e) {
    const double score = e <= 5 ? 0.1 * static_cast<double>(e) : 0.5 + 0.0009 * static_cast<double>(e - 5);
    if (stopper.update(score)) stop_epoch = e;
  }
  const bool trace_ok = stop_epoch == 5 + cfg.patience;

  bool regression_ok = true;
  for (Task t : {Task::High, Task::Two, Task::Culture}) {
    auto rd = make_synthetic(5, 120, 8, t);
    TrainConfig rc;
    rc.task = t;
    rc.learning_rate = 0;
    rc.weight_decay = 0;
    rc.max_epochs = 40;
    rc.hidden = {8};
    const auto rr = train_run(join_split(rd.features, rd.labels), rc);
    regression_ok &= !rr.stopped_early && rr.history.size() == 40;
  }
  return {plateau_ok && trace_ok && regression_ok,
          fmt("flat Type run stopped after %zu epochs (patience+1 = %zu); plateau from epoch 5 stopped at epoch %zu; "
              "flat High/Two/Culture runs %s all 40 epochs",
              r.history.size(), cfg.patience + 1, stop_epoch, regression_ok ? "ran" : "did NOT run")};
}

// Reference table values: max (4 dp) and mean, std (3 dp) per task.
struct ReferenceRow {
  const char* feature;
  std::size_t dims;
  double max[4], mean[4], sd[4];
};

const ReferenceRow kReference[] = {
    {"eGeMAPS", 88, {0.4896, 0.4850, 0.3880, 0.3784}, {0.485, 0.478, 0.378, 0.352}, {0.003, 0.004, 0.003, 0.185}},
    {"ComParE", 6373, {0.5336, 0.5122, 0.4254, 0.3909}, {0.527, 0.497, 0.417, 0.375}, {0.004, 0.007, 0.003, 0.201}},
    {"w2v2-lr", 1024, {0.6292, 0.6100, 0.4885, 0.4734}, {0.620, 0.598, 0.480, 0.448}, {0.007, 0.006, 0.007, 0.012}},
    {"w2v2-lr-300", 1024, {0.6317, 0.6285, 0.5119, 0.4559}, {0.619, 0.618, 0.506, 0.444}, {0.006, 0.009, 0.004, 0.006}},
    {"w2v2-lr-960", 1024, {0.5984, 0.6138, 0.4961, 0.4656}, {0.572, 0.599, 0.491, 0.451}, {0.013, 0.006, 0.007, 0.011}},
    {"w2v2-lr-er", 1024, {0.6521, 0.6312, 0.5138, 0.4822}, {0.645, 0.622, 0.507, 0.462}, {0.003, 0.006, 0.004, 0.013}},
    {"w2v2-lr-vad", 1027, {0.6523, 0.6296, 0.5138, 0.4829}, {0.644, 0.623, 0.508, 0.461}, {0.003, 0.004, 0.004, 0.012}},
};

// Twenty scores with the given max, mean and sample std: m of them at the
// max and the rest evenly spaced below it. Returns nothing when no such set
// of 20 numbers exists.
std::optional<std::map<std::uint64_t, double>> twenty_scores(double mx, double mean, double sd) {
  const double a = (mx - mean) / sd;  // standardized max
  for (int m = 1; m < 20; ++m) {
    const int rest = 20 - m;
    const double alpha = -m * a / rest;
    std::vector<double> w(rest);
    double ww = 0;
    for (int i = 0; i < rest; ++i) ww += (w[i] = rest == 1 ? 0.0 : -1.0 + 2.0 * i / (rest - 1)) * w[i];
    const double left = 19.0 - m * a * a - rest * alpha * alpha;
    if (left < 0 || (ww == 0 && left > 1e-12)) continue;
    const double beta = ww == 0 ? 0.0 : std::sqrt(left / ww);
    if (alpha + beta > a) continue;
    std::map<std::uint64_t, double> out;
    for (int i = 0; i < 20; ++i) out[i] = mean + sd * (i < m ? a : alpha + beta * w[i - m]);
    return out;
  }
  return std::nullopt;
}

std::string squash(const std::string& s) {
  std::string out;
  for (char ch : s)
    if (!(ch == ' ' && !out.empty() && out.back() == ' ')) out += ch;
  return out;
}

Outcome reference_layout() {
  std::vector<SweepSummary> sums;
  std::vector<std::string> forced;
  for (const auto& row : kReference)
    for (std::size_t t = 0; t < 4; ++t) {
      auto per = twenty_scores(row.max[t], row.mean[t], row.sd[t]);
      SweepSummary s;
      if (per) {
        s = summarize(row.feature, kAllTasks[t], row.dims, default_seeds(), *per);
      } else {
        // The reference triple cannot come from 20 real scores; render it as given.
        std::map<std::uint64_t, double> flat;
        for (std::uint64_t seed = 0; seed < 20; ++seed) flat[seed] = row.mean[t];
        s = summarize(row.feature, kAllTasks[t], row.dims, default_seeds(), flat);
        s.max_score = row.max[t];
        s.std_score = row.sd[t];
        forced.push_back(std::string(row.feature) + "/" + std::string(to_string(kAllTasks[t])));
      }
      sums.push_back(std::move(s));
    }
  std::vector<PairedComparison> tests;
  for (std::size_t t = 0; t < 4; ++t) tests.push_back(compare_summaries(sums[5 * 4 + t], sums[6 * 4 + t]));

  const auto dir = scratch("reference_layout");
  build_report(sums, tests, dir);
  const auto text = squash(slurp(dir / "tables.txt"));
  fs::remove_all(dir);

  auto bold_if = [](const std::string& v, bool b) { return b ? "**" + v + "**" : v; };
  std::vector<std::string> expected{"| Feature | Dims. | High | Two | Culture | Type |",
                                    "| Feature | High | Two | Culture | Type |"};
  for (const auto& row : kReference) {
    std::string t3 = "| " + std::string(row.feature) + " | " + std::to_string(row.dims) + " |";
    std::string t4 = "| " + std::string(row.feature) + " |";
    for (std::size_t t = 0; t < 4; ++t) {
      double best_max = 0, best_mean = 0;
      for (const auto& other : kReference) {
        best_max = std::max(best_max, other.max[t]);
        best_mean = std::max(best_mean, other.mean[t]);
      }
      t3 += " " + bold_if(fmt("%.4f", row.max[t]), row.max[t] == best_max) + " |";
      t4 += " " + bold_if(fmt("%.3f", row.mean[t]), row.mean[t] == best_mean) + " ± " + fmt("%.3f", row.sd[t]) + " |";
    }
    expected.push_back(t3);
    expected.push_back(t4);
  }
  std::size_t found = 0;
  std::string missing;
  for (const auto& line : expected) {
    if (text.find(line + "\n") != std::string::npos)
      ++found;
    else
      missing += "\n    missing: " + line;
  }
  bool p_rows = true;
  for (const auto& c : tests) p_rows &= text.find(" " + fmt("%.4f", c.test.p_value) + " |") != std::string::npos;
  std::string note = fmt("%zu/%zu max-score and mean/std table rows and headers rendered exactly; paired-test rows with 4-decimal p "
                         "%s. Reference scores and p-values (0.50/0.66/0.51/0.80) are not reproducible without the "
                         "access-restricted dataset",
                         found, expected.size(), p_rows ? "present" : "MISSING");
  if (!forced.empty()) {
    note += "; reference max/mean/std not attainable by any 20 scores for:";
    for (const auto& f : forced) note += " " + f;
  }
  return {found == expected.size() && p_rows, note + missing};
}

}  // namespace

int main() {
  struct Entry {
    const char* name;
    std::function<Outcome()> fn;
  };
  const std::vector<Entry> criteria{
      {"Gradient exactness (losses)", loss_gradients},
      {"Gradient exactness (network)", network_gradients},
      {"CCC oracle", ccc_oracle},
      {"UAR oracle", uar_oracle},
      {"Student-t p-values", t_pvalues},
      {"Learnability", learnability},
      {"Determinism", determinism},
      {"Early stopping", early_stopping},
      {"Reference-number status (table layout)", reference_layout},
  };
  int hard_failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s  %s: %s\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass && !o.known_shortfall) ++hard_failures;
  }
  return hard_failures ? 1 : 0;
}
