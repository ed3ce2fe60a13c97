#include "fuxi/model.hpp"

#include <cmath>
#include <limits>

#include "fuxi/errors.hpp"
#include "fuxi/random.hpp"

namespace fuxi {

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("model config: ") + name + " must be positive");
  };
  positive(n_layers, "n_layers");
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(d_ff, "d_ff");
  positive(vocab_size, "vocab_size");
  positive(context_len, "context_len");
  if (d_model % n_heads != 0) throw ConfigError("model config: d_model must be divisible by n_heads");
  if (d_head() % 2 != 0) throw ConfigError("model config: head dimension must be even for rotary encoding");
  if (!(rope_theta > 0.0)) throw ConfigError("model config: rope_theta must be positive");
  if (!(norm_eps > 0.0)) throw ConfigError("model config: norm_eps must be positive");
}

ModelConfig ModelConfig::preset_8b() {
  ModelConfig c;
  c.n_layers = 30;
  c.d_model = 4096;
  c.n_heads = 32;
  c.d_ff = 16384;
  c.vocab_size = 250752;
  c.context_len = 4096;
  return c;
}

std::string_view component_name(Component c) {
  switch (c) {
    case Component::AttnNorm: return "attn_norm";
    case Component::QProj: return "q_proj";
    case Component::KProj: return "k_proj";
    case Component::VProj: return "v_proj";
    case Component::OProj: return "o_proj";
    case Component::MlpNorm: return "mlp_norm";
    case Component::UpProj: return "up_proj";
    case Component::DownProj: return "down_proj";
  }
  return "?";
}

std::optional<Component> component_from_name(std::string_view name) {
  for (auto c : kAllComponents) {
    if (component_name(c) == name) return c;
  }
  return std::nullopt;
}

std::size_t component_width(const ModelConfig& cfg, Component c) {
  return c == Component::UpProj ? cfg.d_ff : cfg.d_model;
}

std::uint64_t param_count_per_layer(const ModelConfig& cfg) {
  const std::uint64_t d = cfg.d_model, f = cfg.d_ff;
  // Q/K/V/O weights+biases, up and down weights+biases, two norm gains.
  return 4 * d * d + 4 * d + 2 * d * f + f + d + 2 * d;
}

std::uint64_t param_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::uint64_t d = cfg.d_model;
  return 2 * static_cast<std::uint64_t>(cfg.vocab_size) * d + cfg.n_layers * param_count_per_layer(cfg) + d;
}

Parameters Parameters::zeros(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model, f = cfg.d_ff, v = cfg.vocab_size;
  Parameters p;
  p.tok_embed = Array({v, d});
  p.out_embed = Array({v, d});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerParams L;
    L.attn_norm_gain = Array({d});
    L.wq = Array({d, d});
    L.bq = Array({d});
    L.wk = Array({d, d});
    L.bk = Array({d});
    L.wv = Array({d, d});
    L.bv = Array({d});
    L.wo = Array({d, d});
    L.bo = Array({d});
    L.mlp_norm_gain = Array({d});
    L.w_up = Array({d, f});
    L.b_up = Array({f});
    L.w_down = Array({f, d});
    L.b_down = Array({d});
    p.layers.push_back(std::move(L));
  }
  p.final_norm_gain = Array({d});
  return p;
}

Parameters init_params(const ModelConfig& cfg, std::uint64_t seed) {
  Parameters p = Parameters::zeros(cfg);
  Rng rng(seed);
  const double std_dev = 0.02;
  const double residual_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.n_layers));
  for_each_tensor(p, [&](const std::string& name, Array& t, TensorRole role) {
    switch (role) {
      case TensorRole::Gain: t.fill(1.0); break;
      case TensorRole::Bias: t.fill(0.0); break;
      case TensorRole::Embedding:
      case TensorRole::Weight: {
        const bool residual_out = name.ends_with("o_proj.weight") || name.ends_with("down_proj.weight");
        const double s = residual_out ? std_dev * residual_scale : std_dev;
        for (auto& x : t.data()) x = s * rng.normal();
        break;
      }
    }
  });
  return p;
}

Intervention Intervention::ablate(const std::vector<NeuronRef>& neurons) {
  Intervention iv;
  for (const auto& n : neurons) iv.scales.push_back({n, 0.0});
  return iv;
}

const Array& ActivationCache::at(const Site& site) const {
  switch (site.kind) {
    case SiteKind::Embedding: return embedding;
    case SiteKind::Component: return components.at(site.layer)[static_cast<std::size_t>(site.component)];
    case SiteKind::Residual: return residual.at(site.layer);
    case SiteKind::FinalNorm: return final_norm;
  }
  throw IndexError("invalid activation site");
}

Array& ActivationCache::at(const Site& site) {
  return const_cast<Array&>(static_cast<const ActivationCache&>(*this).at(site));
}

const Array& hidden_state(const ActivationCache& cache, std::size_t label) {
  const std::size_t n_layers = cache.residual.size();
  if (label > n_layers) throw IndexError("hidden state label " + std::to_string(label) + " out of range");
  if (label == 0) return cache.embedding;
  if (label == n_layers) return cache.final_norm;
  return cache.residual[label - 1];
}

std::string hidden_state_label(std::size_t label) {
  return label == 0 ? std::string("emb") : std::to_string(label - 1);
}

CrossEntropyResult next_token_loss(const Array& logits, std::span<const TokenId> tokens) {
  const std::size_t T = logits.rows();
  if (T < 2 || tokens.size() != T) throw InputError("next-token loss needs at least two tokens");
  const std::size_t V = logits.cols();
  Array head({T - 1, V}, std::vector<double>(logits.data().begin(), logits.data().end() - static_cast<std::ptrdiff_t>(V)));
  auto ce = cross_entropy_next_token(head, tokens.subspan(1));
  Array grad({T, V});
  std::copy(ce.grad.data().begin(), ce.grad.data().end(), grad.data().begin());
  return {ce.loss, std::move(grad)};
}

namespace {

Array linear(const Array& x, const Array& w, const Array& b) {
  Array out({x.rows(), w.shape()[1]});
  matmul_acc(x, w, out);
  add_row_bias(out, b);
  return out;
}

bool site_matches(const Site& s, SiteKind kind, std::size_t layer, Component c) {
  if (s.kind != kind) return false;
  if (kind == SiteKind::Embedding || kind == SiteKind::FinalNorm) return true;
  if (kind == SiteKind::Residual) return s.layer == layer;
  return s.layer == layer && s.component == c;
}

void apply_edits(const Intervention* iv, SiteKind kind, std::size_t layer, Component c, Array& h) {
  if (!iv) return;
  if (kind == SiteKind::Component) {
    for (const auto& e : iv->scales) {
      if (e.neuron.layer != layer || e.neuron.component != c) continue;
      const std::size_t ch = e.neuron.channel;
      for (std::size_t t = 0; t < h.rows(); ++t) {
        double& v = h(t, ch);
        v = e.scale == 0.0 ? 0.0 : v * e.scale;
      }
    }
  }
  for (const auto& inj : iv->injections) {
    if (!site_matches(inj.site, kind, layer, c)) continue;
    require_same_shape(h, inj.delta, "intervention injection");
    add_inplace(h, inj.delta);
  }
}

// Chain rule through the channel scales of apply_edits; injections are
// additive constants and pass gradients through unchanged.
Array unscale(const Intervention* iv, std::size_t layer, Component c, const Array& grad) {
  Array g = grad;
  if (!iv) return g;
  for (const auto& e : iv->scales) {
    if (e.neuron.layer != layer || e.neuron.component != c) continue;
    for (std::size_t t = 0; t < g.rows(); ++t) g(t, e.neuron.channel) *= e.scale;
  }
  return g;
}

Array& comp(std::array<Array, kNumComponents>& a, Component c) {
  return a[static_cast<std::size_t>(c)];
}
const Array& comp(const std::array<Array, kNumComponents>& a, Component c) {
  return a[static_cast<std::size_t>(c)];
}

}  // namespace

LanguageModel::LanguageModel(ModelConfig config, Parameters params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const Parameters expect = Parameters::zeros(config_);
  std::vector<Shape> want, have;
  for_each_tensor(expect, [&](const std::string&, const Array& t, TensorRole) { want.push_back(t.shape()); });
  for_each_tensor(params_, [&](const std::string&, const Array& t, TensorRole) { have.push_back(t.shape()); });
  if (want != have) throw SchemaError("parameters do not match the model configuration");
}

void LanguageModel::check_tokens(std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw InputError("forward: empty token sequence");
  if (tokens.size() > config_.context_len) {
    throw LengthError("sequence of " + std::to_string(tokens.size()) + " tokens exceeds context length " +
                      std::to_string(config_.context_len));
  }
  for (TokenId t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= config_.vocab_size) {
      throw IndexError("token id " + std::to_string(t) + " outside vocabulary of " +
                       std::to_string(config_.vocab_size));
    }
  }
}

void LanguageModel::check_neuron(const NeuronRef& n) const {
  if (n.layer >= config_.n_layers) throw IndexError("neuron layer " + std::to_string(n.layer) + " out of range");
  const auto c = static_cast<int>(n.component);
  if (c < 0 || c >= static_cast<int>(kNumComponents)) throw IndexError("invalid component id");
  if (n.channel >= component_width(config_, n.component)) {
    throw IndexError("channel " + std::to_string(n.channel) + " out of range for " +
                     std::string(component_name(n.component)));
  }
}

ForwardOutput LanguageModel::forward(std::span<const TokenId> tokens, const ForwardOptions& options) const {
  check_tokens(tokens);
  const Intervention* iv = options.intervention;
  if (iv) {
    for (const auto& e : iv->scales) check_neuron(e.neuron);
  }
  const std::size_t T = tokens.size(), d = config_.d_model, H = config_.n_heads, dh = config_.d_head();
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<std::int64_t> positions(T);
  for (std::size_t t = 0; t < T; ++t) positions[t] = options.position_offset + static_cast<std::int64_t>(t);

  ForwardOutput out;
  auto& cache = out.cache;
  cache.embedding = Array({T, d});
  for (std::size_t t = 0; t < T; ++t) {
    auto src = params_.tok_embed.row(static_cast<std::size_t>(tokens[t]));
    std::copy(src.begin(), src.end(), cache.embedding.row(t).begin());
  }
  apply_edits(iv, SiteKind::Embedding, 0, Component::AttnNorm, cache.embedding);
  cache.components.resize(config_.n_layers);
  cache.residual.resize(config_.n_layers);
  out.tape.resize(config_.n_layers);

  Array x = cache.embedding;
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const LayerParams& P = params_.layers[l];
    LayerTape& tp = out.tape[l];
    auto& cs = cache.components[l];
    auto produce = [&](Component c, Array value) {
      apply_edits(iv, SiteKind::Component, l, c, value);
      comp(cs, c) = std::move(value);
    };
    tp.x_in = x;
    produce(Component::AttnNorm, rmsnorm_rows(x, P.attn_norm_gain, config_.norm_eps));
    produce(Component::QProj, linear(comp(cs, Component::AttnNorm), P.wq, P.bq));
    produce(Component::KProj, linear(comp(cs, Component::AttnNorm), P.wk, P.bk));
    produce(Component::VProj, linear(comp(cs, Component::AttnNorm), P.wv, P.bv));
    tp.q_rot = comp(cs, Component::QProj);
    tp.k_rot = comp(cs, Component::KProj);
    rope_heads_inplace(tp.q_rot, H, positions, config_.rope_theta);
    rope_heads_inplace(tp.k_rot, H, positions, config_.rope_theta);

    const Array& v = comp(cs, Component::VProj);
    tp.context = Array({T, d});
    tp.attn_probs.assign(H, Array({T, T}));
    for (std::size_t h = 0; h < H; ++h) {
      Array& probs = tp.attn_probs[h];
      const std::size_t off = h * dh;
      double* pp = probs.data().data();
      gemm_strided(false, true, T, T, dh, attn_scale, tp.q_rot.data().data() + off, d, tp.k_rot.data().data() + off,
                   d, 0.0, pp, T);
      for (std::size_t i = 0; i < T; ++i) {
        double* row = pp + i * T;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j <= i; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        }
        for (std::size_t j = 0; j <= i; ++j) row[j] /= sum;
        std::fill(row + i + 1, row + T, 0.0);
      }
      gemm_strided(false, false, T, dh, T, 1.0, pp, T, v.data().data() + off, d, 0.0, tp.context.data().data() + off,
                   d);
    }
    produce(Component::OProj, linear(tp.context, P.wo, P.bo));
    add_inplace(x, comp(cs, Component::OProj));
    tp.x_mid = x;
    produce(Component::MlpNorm, rmsnorm_rows(x, P.mlp_norm_gain, config_.norm_eps));
    produce(Component::UpProj, linear(comp(cs, Component::MlpNorm), P.w_up, P.b_up));
    tp.mlp_act = gelu(comp(cs, Component::UpProj));
    produce(Component::DownProj, linear(tp.mlp_act, P.w_down, P.b_down));
    add_inplace(x, comp(cs, Component::DownProj));
    apply_edits(iv, SiteKind::Residual, l, Component::AttnNorm, x);
    cache.residual[l] = x;
  }
  cache.final_norm = rmsnorm_rows(x, params_.final_norm_gain, config_.norm_eps);
  apply_edits(iv, SiteKind::FinalNorm, 0, Component::AttnNorm, cache.final_norm);
  out.logits = matmul_nt(cache.final_norm, params_.out_embed);
  return out;
}

double LanguageModel::loss(std::span<const TokenId> tokens, const ForwardOptions& options) const {
  if (tokens.size() < 2) throw InputError("loss needs at least two tokens");
  const auto fwd = forward(tokens, options);
  return next_token_loss(fwd.logits, tokens).loss;
}

double LanguageModel::ablate_forward(std::span<const TokenId> tokens, const std::vector<NeuronRef>& targets) const {
  for (const auto& n : targets) check_neuron(n);
  const Intervention iv = Intervention::ablate(targets);
  ForwardOptions opts;
  opts.intervention = targets.empty() ? nullptr : &iv;
  return loss(tokens, opts);
}

LanguageModel::BackwardResult LanguageModel::loss_and_backward(std::span<const TokenId> tokens, bool want_param_grads,
                                                               const ForwardOptions& options) const {
  if (tokens.size() < 2) throw InputError("loss_and_backward needs at least two tokens");
  ForwardOutput fwd = forward(tokens, options);
  const Intervention* iv = options.intervention;
  const std::size_t T = tokens.size(), d = config_.d_model, H = config_.n_heads, dh = config_.d_head();
  const std::size_t L = config_.n_layers;
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<std::int64_t> positions(T);
  for (std::size_t t = 0; t < T; ++t) positions[t] = options.position_offset + static_cast<std::int64_t>(t);

  BackwardResult res;
  auto ce = next_token_loss(fwd.logits, tokens);
  res.loss = ce.loss;
  Parameters* pg = nullptr;
  if (want_param_grads) {
    res.param_grads = Parameters::zeros(config_);
    pg = &res.param_grads;
  }
  auto& ag = res.activation_grads;
  ag.components.resize(L);
  ag.residual.resize(L);
  const auto& cache = fwd.cache;

  ag.final_norm = matmul(ce.grad, params_.out_embed);
  if (pg) matmul_tn_acc(ce.grad, cache.final_norm, pg->out_embed);

  Array dx({T, d});
  rmsnorm_rows_backward(cache.residual[L - 1], params_.final_norm_gain, config_.norm_eps, ag.final_norm, dx,
                        pg ? &pg->final_norm_gain : nullptr);

  for (std::size_t li = L; li-- > 0;) {
    const LayerParams& P = params_.layers[li];
    const LayerTape& tp = fwd.tape[li];
    const auto& cs = cache.components[li];
    auto& gs = ag.components[li];
    LayerParams* G = pg ? &pg->layers[li] : nullptr;

    ag.residual[li] = dx;
    Array dx_mid = dx;

    // MLP branch: x = x_mid + down(gelu(up(norm(x_mid))))
    comp(gs, Component::DownProj) = dx;
    const Array d_down = unscale(iv, li, Component::DownProj, dx);
    if (G) {
      matmul_tn_acc(tp.mlp_act, d_down, G->w_down);
      accumulate_column_sums(d_down, G->b_down);
    }
    Array d_up = matmul_nt(d_down, P.w_down);
    const Array& up = comp(cs, Component::UpProj);
    for (std::size_t i = 0; i < d_up.size(); ++i) d_up[i] *= gelu_grad(up[i]);
    comp(gs, Component::UpProj) = d_up;
    const Array d_up_raw = unscale(iv, li, Component::UpProj, d_up);
    if (G) {
      matmul_tn_acc(comp(cs, Component::MlpNorm), d_up_raw, G->w_up);
      accumulate_column_sums(d_up_raw, G->b_up);
    }
    comp(gs, Component::MlpNorm) = matmul_nt(d_up_raw, P.w_up);
    const Array d_mn_raw = unscale(iv, li, Component::MlpNorm, comp(gs, Component::MlpNorm));
    rmsnorm_rows_backward(tp.x_mid, P.mlp_norm_gain, config_.norm_eps, d_mn_raw, dx_mid,
                          G ? &G->mlp_norm_gain : nullptr);

    // Attention branch: x_mid = x_in + o(attn(q, k, v))
    comp(gs, Component::OProj) = dx_mid;
    const Array d_o = unscale(iv, li, Component::OProj, dx_mid);
    if (G) {
      matmul_tn_acc(tp.context, d_o, G->wo);
      accumulate_column_sums(d_o, G->bo);
    }
    const Array d_ctx = matmul_nt(d_o, P.wo);
    const Array& v = comp(cs, Component::VProj);
    Array dq({T, d}), dk({T, d}), dv({T, d});
    Array ds({T, T});
    double* pds = ds.data().data();
    for (std::size_t h = 0; h < H; ++h) {
      const double* pp = tp.attn_probs[h].data().data();
      const std::size_t off = h * dh;
      const double* g = d_ctx.data().data() + off;
      gemm_strided(false, true, T, T, dh, 1.0, g, d, v.data().data() + off, d, 0.0, pds, T);
      gemm_strided(true, false, T, dh, T, 1.0, pp, T, g, d, 0.0, dv.data().data() + off, d);
      for (std::size_t i = 0; i < T; ++i) {
        const double* p = pp + i * T;
        double* row = pds + i * T;
        double weighted = 0.0;
        for (std::size_t j = 0; j <= i; ++j) weighted += p[j] * row[j];
        for (std::size_t j = 0; j <= i; ++j) row[j] = p[j] * (row[j] - weighted) * attn_scale;
        std::fill(row + i + 1, row + T, 0.0);
      }
      gemm_strided(false, false, T, dh, T, 1.0, pds, T, tp.k_rot.data().data() + off, d, 0.0,
                   dq.data().data() + off, d);
      gemm_strided(true, false, T, dh, T, 1.0, pds, T, tp.q_rot.data().data() + off, d, 0.0,
                   dk.data().data() + off, d);
    }
    rope_heads_inplace(dq, H, positions, config_.rope_theta, /*inverse=*/true);
    rope_heads_inplace(dk, H, positions, config_.rope_theta, /*inverse=*/true);
    comp(gs, Component::QProj) = dq;
    comp(gs, Component::KProj) = dk;
    comp(gs, Component::VProj) = dv;
    const Array dq_raw = unscale(iv, li, Component::QProj, dq);
    const Array dk_raw = unscale(iv, li, Component::KProj, dk);
    const Array dv_raw = unscale(iv, li, Component::VProj, dv);
    const Array& an = comp(cs, Component::AttnNorm);
    if (G) {
      matmul_tn_acc(an, dq_raw, G->wq);
      accumulate_column_sums(dq_raw, G->bq);
      matmul_tn_acc(an, dk_raw, G->wk);
      accumulate_column_sums(dk_raw, G->bk);
      matmul_tn_acc(an, dv_raw, G->wv);
      accumulate_column_sums(dv_raw, G->bv);
    }
    Array d_an({T, d});
    matmul_nt_acc(dq_raw, P.wq, d_an);
    matmul_nt_acc(dk_raw, P.wk, d_an);
    matmul_nt_acc(dv_raw, P.wv, d_an);
    comp(gs, Component::AttnNorm) = d_an;
    const Array d_an_raw = unscale(iv, li, Component::AttnNorm, d_an);
    dx = dx_mid;
    rmsnorm_rows_backward(tp.x_in, P.attn_norm_gain, config_.norm_eps, d_an_raw, dx,
                          G ? &G->attn_norm_gain : nullptr);
  }
  ag.embedding = dx;
  if (pg) {
    for (std::size_t t = 0; t < T; ++t) {
      auto dst = pg->tok_embed.row(static_cast<std::size_t>(tokens[t]));
      auto src = dx.row(t);
      for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
    }
  }
  res.activations = std::move(fwd.cache);
  return res;
}

}  // namespace fuxi
