#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "matrix.hpp"
#include "rng.hpp"
#include "task.hpp"

namespace avb {

inline constexpr double kLeakySlope = 0.01;
inline constexpr double kLayerNormEps = 1e-5;

enum class Activation { LeakyRelu, Sigmoid, SoftmaxLogits, Identity };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::LeakyRelu: return "leaky_relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::SoftmaxLogits: return "softmax_logits";
    case Activation::Identity: return "identity";
  }
  return "?";
}

inline Activation parse_activation(std::string_view s) {
  for (auto a : {Activation::LeakyRelu, Activation::Sigmoid, Activation::SoftmaxLogits, Activation::Identity})
    if (to_string(a) == s) return a;
  throw Error("unknown activation '" + std::string(s) + "'");
}

/// One dense layer: linear -> optional layernorm -> activation.
struct LayerSpec {
  std::size_t in_dim = 0;
  std::size_t out_dim = 0;
  bool has_layernorm = false;
  Activation activation = Activation::Identity;

  bool operator==(const LayerSpec&) const = default;
};

using ModelSpec = std::vector<LayerSpec>;

inline const std::vector<std::size_t> kDefaultHidden = {128, 64, 32};

/// Hidden layers get layernorm + leaky ReLU; the head gets `head` and no
/// normalization.
inline ModelSpec make_spec(std::size_t input_dim, std::span<const std::size_t> hidden,
                           std::size_t output_dim, Activation head) {
  if (input_dim == 0 || output_dim == 0) throw Error("layer dimensions must be positive");
  ModelSpec spec;
  std::size_t in = input_dim;
  for (std::size_t w : hidden) {
    if (w == 0) throw Error("layer dimensions must be positive");
    spec.push_back({in, w, true, Activation::LeakyRelu});
    in = w;
  }
  spec.push_back({in, output_dim, false, head});
  return spec;
}

inline Activation head_for(Task t) { return is_regression(t) ? Activation::Sigmoid : Activation::SoftmaxLogits; }

template <class T>
struct DenseParams {
  Matrix<T> weight;  // out_dim x in_dim
  std::vector<T> bias;
  std::vector<T> gain;   // empty without layernorm
  std::vector<T> shift;  // empty without layernorm

  bool operator==(const DenseParams&) const = default;
};

/// A parameter tensor viewed flat, tagged with whether weight decay applies.
template <class T>
struct TensorView {
  std::span<T> values;
  bool decayed;
};

template <class T>
struct ModelParams {
  std::vector<DenseParams<T>> layers;

  bool operator==(const ModelParams&) const = default;

  /// Flat views in a fixed order: per layer weight, bias, gain, shift.
  std::vector<TensorView<T>> tensors() {
    std::vector<TensorView<T>> out;
    for (auto& l : layers) {
      out.push_back({l.weight.data(), true});
      out.push_back({l.bias, false});
      if (!l.gain.empty()) {
        out.push_back({l.gain, false});
        out.push_back({l.shift, false});
      }
    }
    return out;
  }

  std::vector<TensorView<const T>> tensors() const {
    std::vector<TensorView<const T>> out;
    for (const auto& l : layers) {
      out.push_back({l.weight.data(), true});
      out.push_back({l.bias, false});
      if (!l.gain.empty()) {
        out.push_back({l.gain, false});
        out.push_back({l.shift, false});
      }
    }
    return out;
  }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& t : tensors()) n += t.values.size();
    return n;
  }
};

template <class T>
ModelParams<T> zeros_like(const ModelSpec& spec) {
  ModelParams<T> p;
  for (const auto& l : spec) {
    DenseParams<T> d;
    d.weight = Matrix<T>(l.out_dim, l.in_dim);
    d.bias.assign(l.out_dim, T{});
    if (l.has_layernorm) {
      d.gain.assign(l.out_dim, T{});
      d.shift.assign(l.out_dim, T{});
    }
    p.layers.push_back(std::move(d));
  }
  return p;
}

inline std::size_t parameter_count(const ModelSpec& spec) {
  std::size_t n = 0;
  for (const auto& l : spec) n += l.out_dim * l.in_dim + l.out_dim + (l.has_layernorm ? 2 * l.out_dim : 0);
  return n;
}

/// Glorot-uniform weights from `rng`, zero biases, unit gain, zero shift.
template <class T>
ModelParams<T> init_params(const ModelSpec& spec, SplitMix64& rng) {
  auto p = zeros_like<T>(spec);
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const double limit = std::sqrt(6.0 / static_cast<double>(spec[i].in_dim + spec[i].out_dim));
    for (T& w : p.layers[i].weight.data()) w = static_cast<T>(rng.uniform(-limit, limit));
    std::fill(p.layers[i].gain.begin(), p.layers[i].gain.end(), T{1});
  }
  return p;
}

template <class T>
struct Model {
  ModelSpec spec;
  ModelParams<T> params;
};

/// The vocal-burst network: input -> 128 -> 64 -> 32 -> output_dim(task).
template <class T>
Model<T> build_model(std::size_t input_dim, Task task, std::uint64_t seed,
                     std::span<const std::size_t> hidden = kDefaultHidden) {
  Model<T> m;
  m.spec = make_spec(input_dim, hidden, output_dim(task), head_for(task));
  SplitMix64 rng(seed);
  m.params = init_params<T>(m.spec, rng);
  return m;
}

// ---- forward ----------------------------------------------------------------

enum class Mode { Train, Eval };

template <class T>
struct LayerTrace {
  Matrix<T> input;           // B x in
  Matrix<T> normalized;      // B x out, layernorm x-hat (empty without layernorm)
  std::vector<T> mean;       // per sample
  std::vector<T> inv_std;    // per sample, 1 / sqrt(var + eps)
  Matrix<T> preactivation;   // B x out, input to the activation
};

template <class T>
struct ForwardTrace {
  std::vector<LayerTrace<T>> layers;
  std::size_t batch = 0;
};

template <class T>
struct ForwardResult {
  Matrix<T> output;
  ForwardTrace<T> trace;  // empty in eval mode
};

namespace detail {

template <class T>
T sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <class T>
void check_finite(const Matrix<T>& m, std::size_t layer, const char* stage) {
  for (T v : m.data())
    if (!std::isfinite(v))
      throw DivergenceError("non-finite " + std::string(stage) + " at layer " + std::to_string(layer));
}

}  // namespace detail

template <class T>
ForwardResult<T> forward(const ModelParams<T>& params, const ModelSpec& spec, const Matrix<T>& batch,
                         Mode mode = Mode::Eval) {
  if (spec.empty() || params.layers.size() != spec.size()) throw Error("parameters do not match the layer chain");
  if (batch.cols() != spec.front().in_dim)
    throw Error("batch has " + std::to_string(batch.cols()) + " columns, model expects " +
                std::to_string(spec.front().in_dim));

  ForwardResult<T> res;
  const std::size_t bsz = batch.rows();
  res.trace.batch = bsz;
  Matrix<T> x = batch;
  for (std::size_t li = 0; li < spec.size(); ++li) {
    const LayerSpec& ls = spec[li];
    const DenseParams<T>& lp = params.layers[li];
    LayerTrace<T> tr;

    Matrix<T> z(bsz, ls.out_dim);
    for (std::size_t b = 0; b < bsz; ++b) {
      auto xr = x.row(b);
      auto zr = z.row(b);
      for (std::size_t o = 0; o < ls.out_dim; ++o) {
        auto wr = lp.weight.row(o);
        T acc = lp.bias[o];
        for (std::size_t i = 0; i < ls.in_dim; ++i) acc += wr[i] * xr[i];
        zr[o] = acc;
      }
    }

    if (ls.has_layernorm) {
      const T n = static_cast<T>(ls.out_dim);
      tr.normalized = Matrix<T>(bsz, ls.out_dim);
      tr.mean.resize(bsz);
      tr.inv_std.resize(bsz);
      for (std::size_t b = 0; b < bsz; ++b) {
        auto zr = z.row(b);
        T mu{0};
        for (T v : zr) mu += v;
        mu /= n;
        T var{0};
        for (T v : zr) var += (v - mu) * (v - mu);
        var /= n;
        const T inv = T{1} / std::sqrt(var + static_cast<T>(kLayerNormEps));
        tr.mean[b] = mu;
        tr.inv_std[b] = inv;
        auto nr = tr.normalized.row(b);
        for (std::size_t o = 0; o < ls.out_dim; ++o) {
          nr[o] = (zr[o] - mu) * inv;
          zr[o] = lp.gain[o] * nr[o] + lp.shift[o];
        }
      }
    }
    detail::check_finite(z, li, "pre-activation");

    Matrix<T> a(bsz, ls.out_dim);
    for (std::size_t k = 0; k < z.size(); ++k) {
      const T v = z.data()[k];
      switch (ls.activation) {
        case Activation::LeakyRelu: a.data()[k] = v > T{0} ? v : static_cast<T>(kLeakySlope) * v; break;
        case Activation::Sigmoid: a.data()[k] = detail::sigmoid(v); break;
        case Activation::SoftmaxLogits:
        case Activation::Identity: a.data()[k] = v; break;
      }
    }

    if (mode == Mode::Train) {
      tr.input = std::move(x);
      tr.preactivation = std::move(z);
      res.trace.layers.push_back(std::move(tr));
    }
    x = std::move(a);
  }
  res.output = std::move(x);
  return res;
}

// ---- backward ---------------------------------------------------------------

/// Gradients of a scalar loss with respect to every parameter, given the
/// loss gradient with respect to the network output.
template <class T>
ModelParams<T> backward(const ModelParams<T>& params, const ModelSpec& spec, const ForwardTrace<T>& trace,
                        const Matrix<T>& output_grad) {
  if (trace.layers.size() != spec.size()) throw Error("trace does not match the layer chain (eval-mode forward?)");
  if (output_grad.rows() != trace.batch || output_grad.cols() != spec.back().out_dim)
    throw Error("output gradient shape does not match the traced batch");

  ModelParams<T> grads = zeros_like<T>(spec);
  Matrix<T> upstream = output_grad;
  const std::size_t bsz = trace.batch;

  for (std::size_t li = spec.size(); li-- > 0;) {
    const LayerSpec& ls = spec[li];
    const LayerTrace<T>& tr = trace.layers[li];
    const DenseParams<T>& lp = params.layers[li];
    DenseParams<T>& g = grads.layers[li];

    // Through the activation.
    Matrix<T> dz(bsz, ls.out_dim);
    for (std::size_t k = 0; k < dz.size(); ++k) {
      const T y = tr.preactivation.data()[k];
      const T up = upstream.data()[k];
      switch (ls.activation) {
        case Activation::LeakyRelu: dz.data()[k] = y > T{0} ? up : static_cast<T>(kLeakySlope) * up; break;
        case Activation::Sigmoid: {
          const T s = detail::sigmoid(y);
          dz.data()[k] = up * s * (T{1} - s);
          break;
        }
        case Activation::SoftmaxLogits:
        case Activation::Identity: dz.data()[k] = up; break;
      }
    }

    // Through layernorm: dz currently holds d/d(gain * xhat + shift).
    if (ls.has_layernorm) {
      const T n = static_cast<T>(ls.out_dim);
      std::vector<T> dxhat(ls.out_dim);
      for (std::size_t b = 0; b < bsz; ++b) {
        auto dr = dz.row(b);
        auto xh = tr.normalized.row(b);
        T sum_d{0}, sum_dx{0};
        for (std::size_t o = 0; o < ls.out_dim; ++o) {
          g.gain[o] += dr[o] * xh[o];
          g.shift[o] += dr[o];
          dxhat[o] = dr[o] * lp.gain[o];
          sum_d += dxhat[o];
          sum_dx += dxhat[o] * xh[o];
        }
        const T mean_d = sum_d / n;
        const T mean_dx = sum_dx / n;
        for (std::size_t o = 0; o < ls.out_dim; ++o)
          dr[o] = tr.inv_std[b] * (dxhat[o] - mean_d - xh[o] * mean_dx);
      }
    }

    // Through the linear map.
    for (std::size_t b = 0; b < bsz; ++b) {
      auto dr = dz.row(b);
      auto xr = tr.input.row(b);
      for (std::size_t o = 0; o < ls.out_dim; ++o) {
        g.bias[o] += dr[o];
        auto gw = g.weight.row(o);
        for (std::size_t i = 0; i < ls.in_dim; ++i) gw[i] += dr[o] * xr[i];
      }
    }
    if (li == 0) break;
    Matrix<T> dx(bsz, ls.in_dim);
    for (std::size_t b = 0; b < bsz; ++b) {
      auto dr = dz.row(b);
      auto dxr = dx.row(b);
      for (std::size_t o = 0; o < ls.out_dim; ++o) {
        auto wr = lp.weight.row(o);
        for (std::size_t i = 0; i < ls.in_dim; ++i) dxr[i] += dr[o] * wr[i];
      }
    }
    upstream = std::move(dx);
  }
  return grads;
}

// ---- optimizer --------------------------------------------------------------

struct AdamWConfig {
  double learning_rate = 5e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct OptimizerState {
  ModelParams<T> m;
  ModelParams<T> v;
  std::uint64_t step = 0;
  AdamWConfig config;
};

template <class T>
OptimizerState<T> make_optimizer(const ModelSpec& spec, AdamWConfig config = {}) {
  return {zeros_like<T>(spec), zeros_like<T>(spec), 0, config};
}

/// One AdamW step. Decay is decoupled from the gradient and applied only to
/// weight matrices: theta <- theta * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps).
template <class T>
void adamw_step(ModelParams<T>& params, const ModelParams<T>& grads, OptimizerState<T>& state) {
  auto p = params.tensors();
  auto g = grads.tensors();
  auto m = state.m.tensors();
  auto v = state.v.tensors();
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size())
    throw Error("optimizer state does not match parameters");

  const auto& c = state.config;
  const std::uint64_t t = state.step + 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  const T lr = static_cast<T>(c.learning_rate);
  const T eps = static_cast<T>(c.eps);
  const T decay = static_cast<T>(1.0 - c.learning_rate * c.weight_decay);

  for (std::size_t k = 0; k < p.size(); ++k) {
    if (g[k].values.size() != p[k].values.size()) throw Error("gradient shape does not match parameters");
    for (std::size_t i = 0; i < p[k].values.size(); ++i) {
      const T gi = g[k].values[i];
      T& mi = m[k].values[i];
      T& vi = v[k].values[i];
      mi = b1 * mi + (T{1} - b1) * gi;
      vi = b2 * vi + (T{1} - b2) * gi * gi;
      const T m_hat = mi / static_cast<T>(bc1);
      const T v_hat = vi / static_cast<T>(bc2);
      T& theta = p[k].values[i];
      const T base = p[k].decayed ? theta * decay : theta;
      const T next = base - lr * m_hat / (std::sqrt(v_hat) + eps);
      if (!std::isfinite(next)) throw DivergenceError("non-finite parameter after optimizer step " + std::to_string(t));
      theta = next;
    }
  }
  state.step = t;
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
template <class T>
double clip_grad_norm(ModelParams<T>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& t : std::as_const(grads).tensors())
    for (T v : t.values) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (auto& t : grads.tensors())
      for (T& v : t.values) v *= scale;
  }
  return norm;
}

}  // namespace avb
