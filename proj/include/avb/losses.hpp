#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "error.hpp"
#include "matrix.hpp"

namespace avb {

/// Below this denominator CCC is reported as 0 instead of dividing.
inline constexpr double kCccEps = 1e-12;

/// Lin's concordance correlation coefficient with population (1/N) moments:
///   2 cov(x, y) / (var(x) + var(y) + (mean(x) - mean(y))^2)
template <class T>
double ccc(std::span<const T> pred, std::span<const T> target) {
  if (pred.size() != target.size()) throw Error("ccc: length mismatch");
  if (pred.size() < 2) throw Error("ccc: need at least 2 samples");
  const double n = static_cast<double>(pred.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    mx += pred[i];
    my += target[i];
  }
  mx /= n;
  my /= n;
  double vx = 0.0, vy = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double dx = pred[i] - mx, dy = target[i] - my;
    vx += dx * dx;
    vy += dy * dy;
    cov += dx * dy;
  }
  vx /= n;
  vy /= n;
  cov /= n;
  const double denom = vx + vy + (mx - my) * (mx - my);
  if (denom < kCccEps) return 0.0;
  return 2.0 * cov / denom;
}

template <class T>
double ccc(const std::vector<T>& pred, const std::vector<T>& target) {
  return ccc(std::span<const T>(pred), std::span<const T>(target));
}

struct CccReport {
  std::vector<double> per_dimension;
  double mean_ccc = 0.0;
};

/// Column-wise CCC between two B x K matrices.
template <class T>
CccReport ccc_columns(const Matrix<T>& pred, const Matrix<T>& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw Error("ccc: shape mismatch");
  CccReport r;
  std::vector<T> x(pred.rows()), y(pred.rows());
  for (std::size_t k = 0; k < pred.cols(); ++k) {
    for (std::size_t b = 0; b < pred.rows(); ++b) {
      x[b] = pred(b, k);
      y[b] = target(b, k);
    }
    r.per_dimension.push_back(ccc(x, y));
  }
  r.mean_ccc = std::accumulate(r.per_dimension.begin(), r.per_dimension.end(), 0.0) /
               static_cast<double>(r.per_dimension.size());
  return r;
}

template <class T>
struct LossAndGrad {
  double loss = 0.0;
  Matrix<T> grad;
};

/// loss = 1 - mean_k ccc(pred[:, k], target[:, k]) and its exact gradient
/// with respect to pred. For one column with denominator D and value rho,
///   d rho / d x_i = 2 / (N D) * ((y_i - mean y) - rho (x_i - mean y)).
template <class T>
LossAndGrad<T> ccc_loss_and_grad(const Matrix<T>& pred, const Matrix<T>& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw Error("ccc loss: shape mismatch");
  if (pred.rows() < 2) throw Error("ccc loss: batch must hold at least 2 rows");
  const std::size_t bsz = pred.rows(), k = pred.cols();
  const double n = static_cast<double>(bsz);
  LossAndGrad<T> out{0.0, Matrix<T>(bsz, k)};
  double sum_rho = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    double mx = 0.0, my = 0.0;
    for (std::size_t b = 0; b < bsz; ++b) {
      mx += pred(b, c);
      my += target(b, c);
    }
    mx /= n;
    my /= n;
    double vx = 0.0, vy = 0.0, cov = 0.0;
    for (std::size_t b = 0; b < bsz; ++b) {
      const double dx = pred(b, c) - mx, dy = target(b, c) - my;
      vx += dx * dx;
      vy += dy * dy;
      cov += dx * dy;
    }
    vx /= n;
    vy /= n;
    cov /= n;
    const double denom = vx + vy + (mx - my) * (mx - my);
    if (denom < kCccEps) continue;  // degenerate column: rho = 0, zero gradient
    const double rho = 2.0 * cov / denom;
    sum_rho += rho;
    const double scale = -2.0 / (n * denom * static_cast<double>(k));
    for (std::size_t b = 0; b < bsz; ++b)
      out.grad(b, c) = static_cast<T>(scale * ((target(b, c) - my) - rho * (pred(b, c) - my)));
  }
  out.loss = 1.0 - sum_rho / static_cast<double>(k);
  return out;
}

/// Row-wise softmax with max subtraction.
template <class T>
Matrix<T> softmax(const Matrix<T>& logits) {
  Matrix<T> p(logits.rows(), logits.cols());
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    auto lr = logits.row(b);
    auto pr = p.row(b);
    const T mx = *std::max_element(lr.begin(), lr.end());
    T sum{0};
    for (std::size_t c = 0; c < lr.size(); ++c) sum += (pr[c] = std::exp(lr[c] - mx));
    for (T& v : pr) v /= sum;
  }
  return p;
}

/// Mean softmax cross-entropy over the batch; grad = (softmax - onehot) / B.
template <class T>
LossAndGrad<T> xent_loss_and_grad(const Matrix<T>& logits, std::span<const int> classes) {
  const std::size_t bsz = logits.rows(), c = logits.cols();
  if (classes.size() != bsz) throw Error("xent: label count does not match batch");
  if (bsz == 0) throw Error("xent: empty batch");
  LossAndGrad<T> out{0.0, Matrix<T>(bsz, c)};
  double total = 0.0;
  for (std::size_t b = 0; b < bsz; ++b) {
    const int y = classes[b];
    if (y < 0 || static_cast<std::size_t>(y) >= c) throw Error("xent: class index out of range");
    auto lr = logits.row(b);
    const double mx = *std::max_element(lr.begin(), lr.end());
    double sum = 0.0;
    for (T v : lr) sum += std::exp(static_cast<double>(v) - mx);
    const double log_z = mx + std::log(sum);
    total += log_z - static_cast<double>(lr[static_cast<std::size_t>(y)]);
    for (std::size_t j = 0; j < c; ++j) {
      const double pj = std::exp(static_cast<double>(lr[j]) - log_z);
      out.grad(b, j) = static_cast<T>((pj - (static_cast<std::size_t>(y) == j ? 1.0 : 0.0)) / static_cast<double>(bsz));
    }
  }
  out.loss = total / static_cast<double>(bsz);
  return out;
}

/// Square count matrix; rows are true classes, columns predictions.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0) : n_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const noexcept { return n_; }

  void add(std::size_t truth, std::size_t predicted, std::uint64_t count = 1) {
    if (truth >= n_ || predicted >= n_) throw Error("confusion matrix: class index out of range");
    counts_[truth * n_ + predicted] += count;
  }

  std::uint64_t operator()(std::size_t truth, std::size_t predicted) const { return counts_.at(truth * n_ + predicted); }

  std::uint64_t support(std::size_t truth) const {
    std::uint64_t s = 0;
    for (std::size_t j = 0; j < n_; ++j) s += counts_[truth * n_ + j];
    return s;
  }

  std::uint64_t total() const { return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0}); }

  /// Recall of one class, or nullopt when it has no support.
  std::optional<double> recall(std::size_t c) const {
    const auto s = support(c);
    if (s == 0) return std::nullopt;
    return static_cast<double>((*this)(c, c)) / static_cast<double>(s);
  }

  const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

/// Unweighted average recall over classes with nonzero support.
inline double uar(const ConfusionMatrix& cm) {
  double sum = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    if (auto r = cm.recall(c)) {
      sum += *r;
      ++present;
    }
  }
  if (present == 0) throw Error("uar: every class is empty");
  return sum / static_cast<double>(present);
}

template <class T>
std::vector<int> argmax_rows(const Matrix<T>& m) {
  std::vector<int> out(m.rows());
  for (std::size_t b = 0; b < m.rows(); ++b) {
    auto r = m.row(b);
    out[b] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

/// Arithmetic mean of the three task CCCs and the Type UAR.
inline double overall_mean(std::optional<double> high, std::optional<double> two,
                           std::optional<double> culture, std::optional<double> type_uar) {
  if (!high || !two || !culture || !type_uar) throw Error("overall score needs all four task scores");
  return (*high + *two + *culture + *type_uar) / 4.0;
}

}  // namespace avb
