#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fuxi/errors.hpp"
#include "fuxi/model.hpp"
#include "fuxi/profiler.hpp"

namespace fuxi::testing {

// Closed-form parameter values shared with tests/oracles/reference.py; k is
// the tensor's position in for_each_tensor order.
inline Parameters formula_params(const ModelConfig& cfg) {
  Parameters p = Parameters::zeros(cfg);
  std::size_t k = 0;
  for_each_tensor(p, [&](const std::string&, Array& a, TensorRole role) {
    const double kk = static_cast<double>(k);
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double x = static_cast<double>(i);
      switch (role) {
        case TensorRole::Embedding:
        case TensorRole::Weight:
          a[i] = 0.3 * std::sin(0.7 * x + 1.1 * kk + 0.5);
          break;
        case TensorRole::Bias:
          a[i] = 0.05 * std::cos(0.9 * x + 0.4 * kk);
          break;
        case TensorRole::Gain:
          a[i] = 1.0 + 0.1 * std::sin(1.3 * x + 0.2 * kk);
          break;
      }
    }
    ++k;
  });
  return p;
}

inline ModelConfig reference_config() {
  ModelConfig c;
  c.n_layers = 2;
  c.d_model = 8;
  c.n_heads = 2;
  c.d_ff = 16;
  c.vocab_size = 11;
  c.context_len = 16;
  return c;
}

// Tracked activations are fixed tables h[layer][component] of shape [T×width]
// that do not depend on the tokens. Channel scales multiply a channel at
// every position and injections add their delta before the loss reads h.
class TableSubject : public ImportanceSubject {
 public:
  TableSubject(ChannelLayout layout, std::vector<std::array<Array, kNumComponents>> h)
      : layout_(layout), h_(std::move(h)) {}

  const ChannelLayout& layout() const override { return layout_; }

  double loss(std::span<const TokenId>, const Intervention* edit) const override { return evaluate(edited(edit)); }

  TrackedActivations track(std::span<const TokenId>) const override {
    TrackedActivations out;
    out.loss = evaluate(h_);
    out.values = h_;
    out.grads = gradient(h_);
    return out;
  }

 protected:
  using Tables = std::vector<std::array<Array, kNumComponents>>;

  virtual double evaluate(const Tables& h) const = 0;
  virtual Tables gradient(const Tables& h) const = 0;

  Tables edited(const Intervention* edit) const {
    Tables h = h_;
    if (!edit) return h;
    for (const auto& s : edit->scales) {
      layout_.flat(s.neuron);
      Array& a = h[s.neuron.layer][static_cast<std::size_t>(s.neuron.component)];
      for (std::size_t t = 0; t < a.rows(); ++t) a(t, s.neuron.channel) *= s.scale;
    }
    for (const auto& inj : edit->injections) {
      if (inj.site.kind != SiteKind::Component) throw InputError("table subject: only component sites");
      add_inplace(h[inj.site.layer][static_cast<std::size_t>(inj.site.component)], inj.delta);
    }
    return h;
  }

  template <typename F>
  void for_each_channel(const Tables& h, F&& fn) const {
    for (std::size_t l = 0; l < layout_.n_layers; ++l) {
      for (auto c : kAllComponents) {
        const auto ci = static_cast<std::size_t>(c);
        for (std::size_t ch = 0; ch < layout_.widths[ci]; ++ch) fn(layout_.offset(l, c) + ch, h[l][ci], ch);
      }
    }
  }

  static double column_mean(const Array& a, std::size_t ch) {
    double s = 0.0;
    for (std::size_t t = 0; t < a.rows(); ++t) s += a(t, ch);
    return s / static_cast<double>(a.rows());
  }

  Tables zeros_like(const Tables& h) const {
    Tables g(h.size());
    for (std::size_t l = 0; l < h.size(); ++l) {
      for (std::size_t c = 0; c < kNumComponents; ++c) {
        if (layout_.widths[c] > 0) g[l][c] = Array(h[l][c].shape());
      }
    }
    return g;
  }

  ChannelLayout layout_;
  Tables h_;
};

// L = bias + Σ_i w_i · mean_t h_i(t).
class LinearOracle final : public TableSubject {
 public:
  LinearOracle(ChannelLayout layout, Tables h, std::vector<double> w, double bias = 0.0)
      : TableSubject(layout, std::move(h)), w_(std::move(w)), bias_(bias) {
    if (w_.size() != layout_.total()) throw ShapeError("linear oracle: one weight per channel");
  }

  // The two-channel example: w = (1, −2), channel means (3, 1).
  static LinearOracle two_channel(std::size_t positions = 4) {
    ChannelLayout layout;
    layout.n_layers = 1;
    layout.widths[0] = 2;
    Array h({positions, 2});
    for (std::size_t t = 0; t < positions; ++t) {
      const double wiggle = (t % 2 == 0 ? 0.5 : -0.5) * (positions % 2 == 0 ? 1.0 : 0.0);
      h(t, 0) = 3.0 + wiggle;
      h(t, 1) = 1.0 - wiggle;
    }
    Tables tables(1);
    tables[0][0] = h;
    return LinearOracle(layout, tables, {1.0, -2.0});
  }

 private:
  double evaluate(const Tables& h) const override {
    double s = bias_;
    for_each_channel(h, [&](std::size_t i, const Array& a, std::size_t ch) { s += w_[i] * column_mean(a, ch); });
    return s;
  }

  Tables gradient(const Tables& h) const override {
    Tables g = zeros_like(h);
    for (std::size_t l = 0; l < layout_.n_layers; ++l) {
      for (auto comp : kAllComponents) {
        const auto ci = static_cast<std::size_t>(comp);
        for (std::size_t ch = 0; ch < layout_.widths[ci]; ++ch) {
          const double d = w_[layout_.offset(l, comp) + ch] / static_cast<double>(h[l][ci].rows());
          for (std::size_t t = 0; t < h[l][ci].rows(); ++t) g[l][ci](t, ch) = d;
        }
      }
    }
    return g;
  }

  std::vector<double> w_;
  double bias_;
};

// L = Σ_i (a_i·m_i + b_i·m_i² + c_i·m_i³) with m_i = mean_t h_i(t). The cubic
// term gives the central difference a leading error proportional to t².
class PolynomialOracle final : public TableSubject {
 public:
  PolynomialOracle(ChannelLayout layout, Tables h, std::vector<double> a, std::vector<double> b,
                   std::vector<double> c)
      : TableSubject(layout, std::move(h)), a_(std::move(a)), b_(std::move(b)), c_(std::move(c)) {}

 private:
  double evaluate(const Tables& h) const override {
    double s = 0.0;
    for_each_channel(h, [&](std::size_t i, const Array& arr, std::size_t ch) {
      const double m = column_mean(arr, ch);
      s += a_[i] * m + b_[i] * m * m + c_[i] * m * m * m;
    });
    return s;
  }

  Tables gradient(const Tables& h) const override {
    Tables g = zeros_like(h);
    for (std::size_t l = 0; l < layout_.n_layers; ++l) {
      for (auto comp : kAllComponents) {
        const auto ci = static_cast<std::size_t>(comp);
        const Array& arr = h[l][ci];
        for (std::size_t ch = 0; ch < layout_.widths[ci]; ++ch) {
          const std::size_t i = layout_.offset(l, comp) + ch;
          const double m = column_mean(arr, ch);
          const double d = (a_[i] + 2.0 * b_[i] * m + 3.0 * c_[i] * m * m) / static_cast<double>(arr.rows());
          for (std::size_t t = 0; t < arr.rows(); ++t) g[l][ci](t, ch) = d;
        }
      }
    }
    return g;
  }

  std::vector<double> a_, b_, c_;
};

// Triple-loop product, the reference for the BLAS-backed kernels.
inline Array naive_matmul(const Array& a, const Array& b) {
  Array c({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  }
  return c;
}

}  // namespace fuxi::testing
