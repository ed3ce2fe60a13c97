#include "fuxi/profiler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fuxi/errors.hpp"
#include "fuxi/parallel.hpp"
#include "fuxi/random.hpp"

namespace fuxi {

ChannelLayout ChannelLayout::from_config(const ModelConfig& cfg) {
  ChannelLayout l;
  l.n_layers = cfg.n_layers;
  for (auto c : kAllComponents) l.widths[static_cast<std::size_t>(c)] = component_width(cfg, c);
  return l;
}

std::size_t ChannelLayout::layer_size() const {
  return std::accumulate(widths.begin(), widths.end(), std::size_t{0});
}

std::size_t ChannelLayout::offset(std::size_t layer, Component c) const {
  std::size_t off = layer * layer_size();
  for (std::size_t i = 0; i < static_cast<std::size_t>(c); ++i) off += widths[i];
  return off;
}

std::size_t ChannelLayout::flat(const NeuronRef& n) const {
  const auto ci = static_cast<std::size_t>(n.component);
  if (n.layer >= n_layers || ci >= kNumComponents || n.channel >= widths[ci]) {
    throw IndexError("neuron (" + std::to_string(n.layer) + ", " + std::to_string(ci) + ", " +
                     std::to_string(n.channel) + ") outside layout");
  }
  return offset(n.layer, n.component) + n.channel;
}

NeuronRef ChannelLayout::neuron(std::size_t flat) const {
  if (flat >= total()) throw IndexError("flat neuron index out of range");
  NeuronRef n;
  n.layer = flat / layer_size();
  std::size_t rem = flat % layer_size();
  for (auto c : kAllComponents) {
    const std::size_t w = widths[static_cast<std::size_t>(c)];
    if (rem < w) {
      n.component = c;
      n.channel = rem;
      return n;
    }
    rem -= w;
  }
  throw IndexError("flat neuron index out of range");
}

ModelSubject::ModelSubject(const LanguageModel& model)
    : model_(model), layout_(ChannelLayout::from_config(model.config())) {}

double ModelSubject::loss(std::span<const TokenId> tokens, const Intervention* edit) const {
  ForwardOptions opts;
  opts.intervention = edit;
  return model_.loss(tokens, opts);
}

TrackedActivations ModelSubject::track(std::span<const TokenId> tokens) const {
  auto r = model_.loss_and_backward(tokens, /*want_param_grads=*/false);
  return {r.loss, std::move(r.activations.components), std::move(r.activation_grads.components)};
}

std::string_view method_name(ImportanceMethod m) {
  return m == ImportanceMethod::Exact ? "exact" : "first_order";
}

std::string_view convention_name(AbsConvention c) {
  return c == AbsConvention::PerPosition ? "abs_per_position" : "abs_after_position_sum";
}

double importance_exact(const ImportanceSubject& subject, std::span<const TokenId> tokens, const NeuronRef& neuron) {
  subject.layout().flat(neuron);
  const double base = subject.loss(tokens, nullptr);
  const Intervention iv = Intervention::ablate({neuron});
  return std::abs(subject.loss(tokens, &iv) - base);
}

namespace {

std::vector<double> first_order_impl(const ImportanceSubject& subject, std::span<const TokenId> tokens,
                                     bool signed_sum, bool abs_per_position) {
  const auto& layout = subject.layout();
  const TrackedActivations act = subject.track(tokens);
  std::vector<double> out(layout.total());
  for (std::size_t l = 0; l < layout.n_layers; ++l) {
    for (auto c : kAllComponents) {
      const auto ci = static_cast<std::size_t>(c);
      const Array& h = act.values[l][ci];
      const Array& g = act.grads[l][ci];
      const std::size_t off = layout.offset(l, c);
      const std::size_t width = layout.widths[ci];
      for (std::size_t ch = 0; ch < width; ++ch) {
        double s = 0.0;
        for (std::size_t t = 0; t < h.rows(); ++t) {
          const double prod = g(t, ch) * h(t, ch);
          s += abs_per_position ? std::abs(prod) : prod;
        }
        out[off + ch] = signed_sum ? s : std::abs(s);
      }
    }
  }
  return out;
}

}  // namespace

std::vector<double> first_order_signed(const ImportanceSubject& subject, std::span<const TokenId> tokens) {
  return first_order_impl(subject, tokens, true, false);
}

std::vector<double> importance_first_order(const ImportanceSubject& subject, std::span<const TokenId> tokens,
                                           AbsConvention convention) {
  return first_order_impl(subject, tokens, false, convention == AbsConvention::PerPosition);
}

TaylorCheck taylor_consistency(const ImportanceSubject& subject, std::span<const TokenId> tokens,
                               const NeuronRef& neuron, double t, double denominator_floor) {
  if (!(t > 0.0 && t <= 1.0)) throw ConfigError("taylor_consistency: step must be in (0, 1]");
  const std::size_t idx = subject.layout().flat(neuron);
  Intervention plus, minus;
  plus.scales.push_back({neuron, 1.0 - t});
  minus.scales.push_back({neuron, 1.0 + t});
  TaylorCheck out;
  out.finite_difference = (subject.loss(tokens, &plus) - subject.loss(tokens, &minus)) / (2.0 * t);
  out.analytic = -first_order_signed(subject, tokens)[idx];
  const double denom = std::max({std::abs(out.finite_difference), std::abs(out.analytic), denominator_floor});
  out.relative_error = std::abs(out.finite_difference - out.analytic) / denom;
  return out;
}

ComponentPartition ComponentPartition::by_component(const ChannelLayout& layout) {
  ComponentPartition p;
  for (std::size_t l = 0; l < layout.n_layers; ++l) {
    for (auto c : kAllComponents) {
      NeuronSet s{"layer" + std::to_string(l) + "." + std::string(component_name(c)), {}};
      for (std::size_t ch = 0; ch < layout.widths[static_cast<std::size_t>(c)]; ++ch) s.members.push_back({l, c, ch});
      p.sets.push_back(std::move(s));
    }
  }
  return p;
}

ComponentPartition ComponentPartition::by_layer(const ChannelLayout& layout) {
  ComponentPartition p;
  for (std::size_t l = 0; l < layout.n_layers; ++l) {
    NeuronSet s{"layer" + std::to_string(l), {}};
    for (auto c : kAllComponents) {
      for (std::size_t ch = 0; ch < layout.widths[static_cast<std::size_t>(c)]; ++ch) s.members.push_back({l, c, ch});
    }
    p.sets.push_back(std::move(s));
  }
  return p;
}

void ComponentPartition::validate(const ChannelLayout& layout) const {
  std::vector<bool> seen(layout.total(), false);
  for (const auto& s : sets) {
    for (const auto& n : s.members) {
      const std::size_t i = layout.flat(n);
      if (seen[i]) throw InputError("partition sets overlap at set '" + s.name + "'");
      seen[i] = true;
    }
  }
}

ExactSum aggregate_exact(const ImportanceMap& map, const std::vector<NeuronRef>& set) {
  ExactSum acc;
  for (const auto& n : set) acc.add(map.values[map.layout.flat(n)]);
  return acc;
}

std::vector<double> aggregate(const ImportanceMap& map, const ComponentPartition& partition) {
  std::vector<double> out;
  out.reserve(partition.sets.size());
  for (const auto& s : partition.sets) out.push_back(aggregate_exact(map, s.members).value());
  return out;
}

std::vector<std::array<double, kNumComponents>> component_profile(const ImportanceMap& map) {
  const auto totals = aggregate(map, ComponentPartition::by_component(map.layout));
  std::vector<std::array<double, kNumComponents>> out(map.layout.n_layers);
  for (std::size_t l = 0; l < map.layout.n_layers; ++l) {
    for (std::size_t c = 0; c < kNumComponents; ++c) out[l][c] = totals[l * kNumComponents + c];
  }
  return out;
}

std::vector<double> layer_profile(const ImportanceMap& map) {
  return aggregate(map, ComponentPartition::by_layer(map.layout));
}

std::vector<LanguageSentences> tokenize_parallel(const ParallelCorpus& corpus, const Tokenizer& tok,
                                                 std::size_t context_len, std::size_t max_sentences) {
  if (context_len < 2) throw ConfigError("tokenize_parallel: context_len must be at least 2");
  const std::size_t n = max_sentences ? std::min(max_sentences, corpus.rows.size()) : corpus.rows.size();
  std::vector<LanguageSentences> out;
  for (std::size_t li = 0; li < corpus.languages.size(); ++li) {
    LanguageSentences ls{corpus.languages[li], {}};
    for (std::size_t r = 0; r < n; ++r) {
      const std::string& text = corpus.rows[r][li];
      if (text.empty()) {
        throw InputError("empty sentence for language '" + corpus.languages[li] + "' in row " + std::to_string(r + 1));
      }
      std::vector<TokenId> ids{tok.eod_id()};
      const auto enc = tok.encode(text);
      ids.insert(ids.end(), enc.begin(), enc.end());
      if (ids.size() > context_len) ids.resize(context_len);
      ls.sentences.push_back(std::move(ids));
    }
    out.push_back(std::move(ls));
  }
  return out;
}

namespace {

std::vector<double> exact_all(const ImportanceSubject& subject, std::span<const TokenId> tokens) {
  const auto& layout = subject.layout();
  const double base = subject.loss(tokens, nullptr);
  std::vector<double> out(layout.total());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Intervention iv = Intervention::ablate({layout.neuron(i)});
    out[i] = std::abs(subject.loss(tokens, &iv) - base);
  }
  return out;
}

// Sentence-order mean of per-sentence vectors.
std::vector<double> mean_in_order(const std::vector<std::vector<double>>& per_sentence, std::size_t width) {
  std::vector<double> acc(width, 0.0);
  for (const auto& v : per_sentence) {
    for (std::size_t i = 0; i < width; ++i) acc[i] += v[i];
  }
  const double inv = 1.0 / static_cast<double>(per_sentence.size());
  for (auto& x : acc) x *= inv;
  return acc;
}

}  // namespace

std::vector<ImportanceMap> profile_languages(const ImportanceSubject& subject,
                                             const std::vector<LanguageSentences>& languages,
                                             const ProfileOptions& options) {
  if (languages.empty()) throw InputError("profile_languages: no languages");
  const auto& layout = subject.layout();
  if (options.method == ImportanceMethod::Exact && layout.total() > options.exact_neuron_limit) {
    throw ConfigError("exact ablation over " + std::to_string(layout.total()) + " neurons exceeds the limit of " +
                      std::to_string(options.exact_neuron_limit));
  }
  std::vector<ImportanceMap> maps;
  for (const auto& lang : languages) {
    if (lang.sentences.empty()) throw InputError("profile_languages: no sentences for '" + lang.lang + "'");
    std::vector<std::vector<double>> per_sentence(lang.sentences.size());
    parallel_for(lang.sentences.size(), options.workers, [&](std::size_t i) {
      per_sentence[i] = options.method == ImportanceMethod::Exact
                            ? exact_all(subject, lang.sentences[i])
                            : importance_first_order(subject, lang.sentences[i], options.convention);
    });
    ImportanceMap m;
    m.lang = lang.lang;
    m.layout = layout;
    m.values = mean_in_order(per_sentence, layout.total());
    m.method = options.method;
    m.convention = options.convention;
    m.sentence_count = lang.sentences.size();
    maps.push_back(std::move(m));
  }
  return maps;
}

double spearman_correlation(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
}

RankValidation validate_rank_agreement(const ImportanceSubject& subject,
                                       const std::vector<std::vector<TokenId>>& sentences, std::size_t sample_size,
                                       std::uint64_t seed, std::size_t workers) {
  if (sentences.empty()) throw InputError("validate_rank_agreement: no sentences");
  const auto& layout = subject.layout();
  std::vector<std::size_t> all(layout.total());
  std::iota(all.begin(), all.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "rank-validation"));
  rng.shuffle(all);
  all.resize(std::min(sample_size, all.size()));
  std::sort(all.begin(), all.end());

  RankValidation out;
  for (auto i : all) out.sample.push_back(layout.neuron(i));
  std::vector<std::vector<double>> exact(sentences.size()), first(sentences.size());
  parallel_for(sentences.size(), workers, [&](std::size_t s) {
    const auto fo = importance_first_order(subject, sentences[s]);
    const double base = subject.loss(sentences[s], nullptr);
    exact[s].resize(all.size());
    first[s].resize(all.size());
    for (std::size_t k = 0; k < all.size(); ++k) {
      const Intervention iv = Intervention::ablate({out.sample[k]});
      exact[s][k] = std::abs(subject.loss(sentences[s], &iv) - base);
      first[s][k] = fo[all[k]];
    }
  });
  out.exact = mean_in_order(exact, all.size());
  out.first_order = mean_in_order(first, all.size());
  out.spearman = spearman_correlation(out.exact, out.first_order);
  out.defined = !std::isnan(out.spearman);
  if (!out.defined) out.spearman = 0.0;
  return out;
}

}  // namespace fuxi
