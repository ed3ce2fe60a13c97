#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fuxi/array.hpp"
#include "fuxi/ops.hpp"

namespace fuxi {

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t d_ff = 512;
  std::size_t vocab_size = 4096;
  std::size_t context_len = 256;
  double rope_theta = 10000.0;
  double norm_eps = 1e-5;

  std::size_t d_head() const { return d_model / n_heads; }
  // Throws ConfigError describing the first violated constraint.
  void validate() const;

  // 30 layers, hidden 4096, 32 heads, intermediate 16384, vocabulary 250752
  // (250680 + 72 padding tokens), 4096 positions.
  static ModelConfig preset_8b();

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Per-layer sub-structures whose direct outputs are cached and attributable.
enum class Component : int {
  AttnNorm = 0,
  QProj,
  KProj,
  VProj,
  OProj,
  MlpNorm,
  UpProj,
  DownProj,
};

inline constexpr std::size_t kNumComponents = 8;
inline constexpr std::array<Component, kNumComponents> kAllComponents = {
    Component::AttnNorm, Component::QProj,   Component::KProj,  Component::VProj,
    Component::OProj,    Component::MlpNorm, Component::UpProj, Component::DownProj};

// Stable snake_case names; also the CSV column order.
std::string_view component_name(Component c);
std::optional<Component> component_from_name(std::string_view name);
std::size_t component_width(const ModelConfig& cfg, Component c);

std::uint64_t param_count(const ModelConfig& cfg);
std::uint64_t param_count_per_layer(const ModelConfig& cfg);

enum class TensorRole { Embedding, Weight, Bias, Gain };

struct LayerParams {
  Array attn_norm_gain;
  Array wq, bq, wk, bk, wv, bv, wo, bo;
  Array mlp_norm_gain;
  Array w_up, b_up, w_down, b_down;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

// Linear weights are stored [in × out] so a projection is x·W + b.
struct Parameters {
  Array tok_embed;  // [vocab × d_model], input side
  Array out_embed;  // [vocab × d_model], output side, independent storage
  std::vector<LayerParams> layers;
  Array final_norm_gain;

  // All-zero tensors with the shapes implied by cfg.
  static Parameters zeros(const ModelConfig& cfg);

  friend bool operator==(const Parameters&, const Parameters&) = default;
};

// Visits every tensor in a fixed order with a stable name. Works for const
// and mutable Parameters.
template <typename P, typename F>
void for_each_tensor(P& params, F&& fn) {
  fn(std::string("tok_embed"), params.tok_embed, TensorRole::Embedding);
  fn(std::string("out_embed"), params.out_embed, TensorRole::Embedding);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& L = params.layers[l];
    const std::string p = "layers." + std::to_string(l) + ".";
    fn(p + "attn_norm.gain", L.attn_norm_gain, TensorRole::Gain);
    fn(p + "q_proj.weight", L.wq, TensorRole::Weight);
    fn(p + "q_proj.bias", L.bq, TensorRole::Bias);
    fn(p + "k_proj.weight", L.wk, TensorRole::Weight);
    fn(p + "k_proj.bias", L.bk, TensorRole::Bias);
    fn(p + "v_proj.weight", L.wv, TensorRole::Weight);
    fn(p + "v_proj.bias", L.bv, TensorRole::Bias);
    fn(p + "o_proj.weight", L.wo, TensorRole::Weight);
    fn(p + "o_proj.bias", L.bo, TensorRole::Bias);
    fn(p + "mlp_norm.gain", L.mlp_norm_gain, TensorRole::Gain);
    fn(p + "up_proj.weight", L.w_up, TensorRole::Weight);
    fn(p + "up_proj.bias", L.b_up, TensorRole::Bias);
    fn(p + "down_proj.weight", L.w_down, TensorRole::Weight);
    fn(p + "down_proj.bias", L.b_down, TensorRole::Bias);
  }
  fn(std::string("final_norm.gain"), params.final_norm_gain, TensorRole::Gain);
}

// Weights ~ N(0, 0.02²); O and down projections further scaled by
// 1/sqrt(2·n_layers); biases 0; gains 1.
Parameters init_params(const ModelConfig& cfg, std::uint64_t seed);

// ---- activation addressing --------------------------------------------------

struct NeuronRef {
  std::size_t layer = 0;
  Component component = Component::AttnNorm;
  std::size_t channel = 0;
  friend bool operator==(const NeuronRef&, const NeuronRef&) = default;
};

enum class SiteKind { Embedding, Component, Residual, FinalNorm };

// A cached representation: the embedding output, a component output, a
// post-residual layer state, or the final-norm output.
struct Site {
  SiteKind kind = SiteKind::Component;
  std::size_t layer = 0;
  Component component = Component::AttnNorm;
  friend bool operator==(const Site&, const Site&) = default;
};

// Edits applied to representations as they are produced, before anything
// downstream consumes them. Channel scales model ablation (scale 0) and the
// h·(1−t) path; injections add a [T×width] delta.
struct Intervention {
  struct ChannelScale {
    NeuronRef neuron;
    double scale = 0.0;
  };
  struct Injection {
    Site site;
    Array delta;
  };
  std::vector<ChannelScale> scales;
  std::vector<Injection> injections;

  bool empty() const { return scales.empty() && injections.empty(); }
  static Intervention ablate(const std::vector<NeuronRef>& neurons);
};

struct LayerTape;

struct ActivationCache {
  Array embedding;                                         // [T×d]
  std::vector<std::array<Array, kNumComponents>> components;  // [layer][component], [T×width]
  std::vector<Array> residual;                             // [layer], post-residual [T×d]
  Array final_norm;                                        // [T×d]

  const Array& at(const Site& site) const;
  Array& at(const Site& site);
  const Array& component(std::size_t layer, Component c) const {
    return components[layer][static_cast<std::size_t>(c)];
  }
};

// Hidden state used for representation analysis: label 0 is the embedding
// output, label l+1 is layer l's post-residual state, and the last layer
// reports the final-norm output instead.
const Array& hidden_state(const ActivationCache& cache, std::size_t label);
std::string hidden_state_label(std::size_t label);  // "emb", "0", "1", ...

struct LayerTape {
  Array x_in;          // layer input (pre attention norm)
  Array q_rot, k_rot;  // RoPE-rotated queries/keys
  std::vector<Array> attn_probs;  // per head, [T×T]
  Array context;       // concatenated head outputs, [T×d]
  Array x_mid;         // after attention residual
  Array mlp_act;       // gelu(up)
};

struct ForwardOutput {
  Array logits;  // [T×vocab]
  ActivationCache cache;
  std::vector<LayerTape> tape;
};

struct ForwardOptions {
  std::int64_t position_offset = 0;
  const Intervention* intervention = nullptr;
};

class LanguageModel {
 public:
  LanguageModel(ModelConfig config, Parameters params);

  const ModelConfig& config() const noexcept { return config_; }
  const Parameters& params() const noexcept { return params_; }
  Parameters& mutable_params() noexcept { return params_; }

  ForwardOutput forward(std::span<const TokenId> tokens, const ForwardOptions& options = {}) const;

  struct BackwardResult {
    double loss = 0.0;
    Parameters param_grads;      // empty layers when not requested
    ActivationCache activation_grads;  // ∂L/∂h for every cached representation
    ActivationCache activations;       // the forward cache the grads refer to
  };

  // Mean next-token loss over the T−1 predicted positions and its exact
  // gradients. Requires T ≥ 2.
  BackwardResult loss_and_backward(std::span<const TokenId> tokens, bool want_param_grads = true,
                                   const ForwardOptions& options = {}) const;

  double loss(std::span<const TokenId> tokens, const ForwardOptions& options = {}) const;

  // Loss with the given channels zeroed at every position.
  double ablate_forward(std::span<const TokenId> tokens, const std::vector<NeuronRef>& targets) const;

  void check_neuron(const NeuronRef& n) const;

 private:
  void check_tokens(std::span<const TokenId> tokens) const;

  ModelConfig config_;
  Parameters params_;
};

// Mean next-token loss of logits rows 0..T−2 against tokens 1..T−1.
CrossEntropyResult next_token_loss(const Array& logits, std::span<const TokenId> tokens);

}  // namespace fuxi
