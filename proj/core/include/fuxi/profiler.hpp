#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fuxi/corpus.hpp"
#include "fuxi/exact_sum.hpp"
#include "fuxi/model.hpp"
#include "fuxi/tokenizer.hpp"

namespace fuxi {

// Flat addressing of every attributable channel: layer-major, then component
// in declaration order, then channel.
struct ChannelLayout {
  std::size_t n_layers = 0;
  std::array<std::size_t, kNumComponents> widths{};

  static ChannelLayout from_config(const ModelConfig& cfg);
  std::size_t layer_size() const;
  std::size_t total() const { return n_layers * layer_size(); }
  std::size_t offset(std::size_t layer, Component c) const;
  std::size_t flat(const NeuronRef& n) const;  // IndexError on invalid coordinates
  NeuronRef neuron(std::size_t flat) const;

  friend bool operator==(const ChannelLayout&, const ChannelLayout&) = default;
};

// Representations h and gradients ∂L/∂h per (layer, component).
struct TrackedActivations {
  double loss = 0.0;
  std::vector<std::array<Array, kNumComponents>> values;
  std::vector<std::array<Array, kNumComponents>> grads;
};

// Anything whose loss can be evaluated under channel edits and whose tracked
// activations and gradients are available. The transformer is the main
// implementation; tests supply analytic oracles through the same interface.
class ImportanceSubject {
 public:
  virtual ~ImportanceSubject() = default;
  virtual const ChannelLayout& layout() const = 0;
  virtual double loss(std::span<const TokenId> tokens, const Intervention* edit) const = 0;
  virtual TrackedActivations track(std::span<const TokenId> tokens) const = 0;
};

class ModelSubject final : public ImportanceSubject {
 public:
  explicit ModelSubject(const LanguageModel& model);
  const ChannelLayout& layout() const override { return layout_; }
  double loss(std::span<const TokenId> tokens, const Intervention* edit) const override;
  TrackedActivations track(std::span<const TokenId> tokens) const override;

 private:
  const LanguageModel& model_;
  ChannelLayout layout_;
};

enum class ImportanceMethod { FirstOrder, Exact };
// Where |·| is taken for the first-order estimate: on the position-summed
// product (default) or on each position's product before summing.
enum class AbsConvention { AfterPositionSum, PerPosition };

std::string_view method_name(ImportanceMethod m);
std::string_view convention_name(AbsConvention c);

struct ImportanceMap {
  std::string lang;
  ChannelLayout layout;
  std::vector<double> values;  // flat per layout, all >= 0
  ImportanceMethod method = ImportanceMethod::FirstOrder;
  AbsConvention convention = AbsConvention::AfterPositionSum;
  std::size_t sentence_count = 0;

  double at(const NeuronRef& n) const { return values[layout.flat(n)]; }
};

// |L(h_neuron = 0) − L| with the channel zeroed at every position.
double importance_exact(const ImportanceSubject& subject, std::span<const TokenId> tokens, const NeuronRef& neuron);

// Σ_positions (∂L/∂h)·h for every channel, signed, from one backward pass.
std::vector<double> first_order_signed(const ImportanceSubject& subject, std::span<const TokenId> tokens);
// Nonnegative first-order importance for every channel.
std::vector<double> importance_first_order(const ImportanceSubject& subject, std::span<const TokenId> tokens,
                                           AbsConvention convention = AbsConvention::AfterPositionSum);

struct TaylorCheck {
  double finite_difference = 0.0;  // central difference of L(h·(1−τ)) at τ = ±t
  double analytic = 0.0;           // −Σ (∂L/∂h)·h
  double relative_error = 0.0;
};

TaylorCheck taylor_consistency(const ImportanceSubject& subject, std::span<const TokenId> tokens,
                               const NeuronRef& neuron, double t, double denominator_floor = 1e-12);

struct NeuronSet {
  std::string name;
  std::vector<NeuronRef> members;
};

struct ComponentPartition {
  std::vector<NeuronSet> sets;

  static ComponentPartition by_component(const ChannelLayout& layout);
  static ComponentPartition by_layer(const ChannelLayout& layout);
  // Throws when sets overlap or reference invalid coordinates.
  void validate(const ChannelLayout& layout) const;
};

// Φ(α) = Σ_{i∈α} Φ(i), accumulated exactly so totals are additive over
// any partition.
ExactSum aggregate_exact(const ImportanceMap& map, const std::vector<NeuronRef>& set);
std::vector<double> aggregate(const ImportanceMap& map, const ComponentPartition& partition);

// Φ per (layer, component) and per layer.
std::vector<std::array<double, kNumComponents>> component_profile(const ImportanceMap& map);
std::vector<double> layer_profile(const ImportanceMap& map);

struct LanguageSentences {
  std::string lang;
  std::vector<std::vector<TokenId>> sentences;
};

// Each sentence becomes [eod] + encode(sentence), truncated to context_len.
std::vector<LanguageSentences> tokenize_parallel(const ParallelCorpus& corpus, const Tokenizer& tok,
                                                 std::size_t context_len, std::size_t max_sentences = 0);

struct ProfileOptions {
  ImportanceMethod method = ImportanceMethod::FirstOrder;
  AbsConvention convention = AbsConvention::AfterPositionSum;
  std::size_t workers = 1;
  std::size_t exact_neuron_limit = 100000;
};

// Per language: per-sentence importance, then the arithmetic mean over
// sentences in corpus order.
std::vector<ImportanceMap> profile_languages(const ImportanceSubject& subject,
                                             const std::vector<LanguageSentences>& languages,
                                             const ProfileOptions& options = {});

struct RankValidation {
  std::vector<NeuronRef> sample;
  std::vector<double> exact;
  std::vector<double> first_order;
  double spearman = 0.0;
  bool defined = true;  // false when either side has zero rank variance
};

// Exact ablation vs first-order importance (both averaged over `sentences`)
// on a seeded random neuron sample.
RankValidation validate_rank_agreement(const ImportanceSubject& subject,
                                       const std::vector<std::vector<TokenId>>& sentences, std::size_t sample_size,
                                       std::uint64_t seed, std::size_t workers = 1);

// Spearman rank correlation with average ranks for ties. NaN when undefined.
double spearman_correlation(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace fuxi
