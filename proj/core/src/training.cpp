#include "fuxi/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "fuxi/errors.hpp"
#include "fuxi/parallel.hpp"
#include "fuxi/random.hpp"

namespace fuxi {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (!(max_lr > 0.0)) throw ConfigError("train config: max_lr must be positive");
  if (!(min_lr_ratio > 0.0 && min_lr_ratio <= 1.0)) throw ConfigError("train config: min_lr_ratio must be in (0, 1]");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw ConfigError("train config: warmup_fraction must be in [0, 1)");
  }
  if (total_steps == 0) throw ConfigError("train config: total_steps must be positive");
  if (batch_size == 0) throw ConfigError("train config: batch_size must be positive");
  if (weight_decay < 0.0) throw ConfigError("train config: weight_decay must be nonnegative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train config: betas must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("train config: eps must be positive");
}

std::size_t TrainConfig::warmup_steps() const {
  return static_cast<std::size_t>(std::floor(warmup_fraction * static_cast<double>(total_steps)));
}

double cosine_lr(std::size_t step, const TrainConfig& cfg) {
  const double max_lr = cfg.max_lr;
  const double min_lr = cfg.min_lr_ratio * max_lr;
  if (step >= cfg.total_steps) return min_lr;
  const std::size_t warmup = cfg.warmup_steps();
  if (step < warmup) return max_lr * static_cast<double>(step) / static_cast<double>(warmup);
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(cfg.total_steps - warmup);
  // Exactly max_lr at the warmup boundary.
  return max_lr - 0.5 * (max_lr - min_lr) * (1.0 - std::cos(std::numbers::pi * progress));
}

OptimizerState OptimizerState::zeros(const ModelConfig& cfg) {
  return {Parameters::zeros(cfg), Parameters::zeros(cfg), 0};
}

bool is_decayed(TensorRole role) {
  return role == TensorRole::Weight || role == TensorRole::Embedding;
}

namespace {

// Visits matching tensors of several Parameters structs in lockstep.
template <typename F>
void zip_tensors(Parameters& params, const Parameters& grads, OptimizerState& st, F&& fn) {
  std::vector<Array*> ps, ms, vs;
  std::vector<const Array*> gs;
  std::vector<TensorRole> roles;
  for_each_tensor(params, [&](const std::string&, Array& t, TensorRole r) {
    ps.push_back(&t);
    roles.push_back(r);
  });
  for_each_tensor(grads, [&](const std::string&, const Array& t, TensorRole) { gs.push_back(&t); });
  for_each_tensor(st.m, [&](const std::string&, Array& t, TensorRole) { ms.push_back(&t); });
  for_each_tensor(st.v, [&](const std::string&, Array& t, TensorRole) { vs.push_back(&t); });
  if (gs.size() != ps.size() || ms.size() != ps.size() || vs.size() != ps.size()) {
    throw ShapeError("adamw: parameter, gradient and state structures differ");
  }
  for (std::size_t i = 0; i < ps.size(); ++i) {
    require_same_shape(*ps[i], *gs[i], "adamw gradient");
    require_same_shape(*ps[i], *ms[i], "adamw first moment");
    require_same_shape(*ps[i], *vs[i], "adamw second moment");
    fn(*ps[i], *gs[i], *ms[i], *vs[i], roles[i]);
  }
}

}  // namespace

void adamw_step(Parameters& params, const Parameters& grads, OptimizerState& state, double lr,
                const TrainConfig& cfg) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const double decay = 1.0 - lr * cfg.weight_decay;
  zip_tensors(params, grads, state, [&](Array& p, const Array& g, Array& m, Array& v, TensorRole role) {
    const bool decayed = is_decayed(role) && cfg.weight_decay != 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      if (decayed) p[i] *= decay;
      p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  });
}

double global_grad_norm(const Parameters& grads) {
  double acc = 0.0;
  for_each_tensor(grads, [&](const std::string&, const Array& t, TensorRole) { acc += squared_norm(t); });
  return std::sqrt(acc);
}

PackResult pack_encoded(const std::vector<std::vector<TokenId>>& docs, TokenId eod, std::size_t context_len) {
  if (docs.empty()) throw InputError("pack: empty corpus");
  if (context_len < 2) throw ConfigError("pack: context_len must be at least 2");
  std::vector<TokenId> stream;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    if (i) stream.push_back(eod);
    stream.insert(stream.end(), docs[i].begin(), docs[i].end());
  }
  PackResult res;
  res.total_tokens = stream.size();
  const std::size_t n_chunks = stream.size() / context_len;
  for (std::size_t c = 0; c < n_chunks; ++c) {
    res.chunks.emplace_back(stream.begin() + static_cast<std::ptrdiff_t>(c * context_len),
                            stream.begin() + static_cast<std::ptrdiff_t>((c + 1) * context_len));
  }
  res.dropped = stream.size() - n_chunks * context_len;
  return res;
}

PackResult pack_documents(const std::vector<Document>& docs, const Tokenizer& tok, std::size_t context_len,
                          std::uint64_t seed) {
  if (docs.empty()) throw InputError("pack: empty corpus");
  std::vector<std::size_t> order(docs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, "pack"));
  rng.shuffle(order);
  std::vector<std::vector<TokenId>> encoded;
  encoded.reserve(docs.size());
  for (auto i : order) encoded.push_back(tok.encode(docs[i].text));
  return pack_encoded(encoded, tok.eod_id(), context_len);
}

Checkpoint make_training_checkpoint(const ModelConfig& cfg, std::uint64_t step, const Parameters& params,
                                    const OptimizerState& opt) {
  Checkpoint ck;
  ck.config = cfg;
  ck.step = step;
  ck.params = params;
  for_each_tensor(opt.m, [&](const std::string& n, const Array& t, TensorRole) { ck.extra.emplace_back("adam.m." + n, t); });
  for_each_tensor(opt.v, [&](const std::string& n, const Array& t, TensorRole) { ck.extra.emplace_back("adam.v." + n, t); });
  ck.metadata["adam_t"] = std::to_string(opt.t);
  return ck;
}

OptimizerState optimizer_from_checkpoint(const Checkpoint& ckpt) {
  OptimizerState st = OptimizerState::zeros(ckpt.config);
  auto it = ckpt.metadata.find("adam_t");
  if (it == ckpt.metadata.end()) return st;  // weights-only checkpoint: fresh moments
  st.t = std::stoull(it->second);
  std::map<std::string, const Array*> extra;
  for (const auto& [n, t] : ckpt.extra) extra[n] = &t;
  auto fill = [&](Parameters& p, const std::string& prefix) {
    for_each_tensor(p, [&](const std::string& n, Array& t, TensorRole) {
      auto e = extra.find(prefix + n);
      if (e == extra.end()) throw SchemaError("checkpoint missing optimizer tensor " + prefix + n);
      require_same_shape(t, *e->second, "optimizer state");
      t = *e->second;
    });
  };
  fill(st.m, "adam.m.");
  fill(st.v, "adam.v.");
  return st;
}

namespace {

std::string checkpoint_name(std::size_t step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step-%06zu", step);
  return buf;
}

class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) {}

  std::size_t index(std::size_t global) {
    const std::size_t epoch = global / n_;
    if (epoch != epoch_ || perm_.empty()) {
      perm_.resize(n_);
      std::iota(perm_.begin(), perm_.end(), std::size_t{0});
      Rng rng(derive_seed(seed_, "epoch-" + std::to_string(epoch)));
      rng.shuffle(perm_);
      epoch_ = epoch;
    }
    return perm_[global % n_];
  }

 private:
  std::size_t n_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::vector<std::size_t> perm_;
};

}  // namespace

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const std::vector<std::vector<TokenId>>& chunks,
                  const TrainOptions& options) {
  model_cfg.validate();
  cfg.validate();
  if (chunks.empty()) throw InputError("train: no training chunks");
  for (const auto& c : chunks) {
    if (c.size() < 2) throw InputError("train: chunks need at least two tokens");
  }

  TrainResult res;
  std::size_t start = 0;
  if (options.resume) {
    if (!(options.resume->config == model_cfg)) throw SchemaError("resume checkpoint was trained with another model config");
    res.params = options.resume->params;
    res.optimizer = optimizer_from_checkpoint(*options.resume);
    start = options.resume->step;
  } else {
    res.params = init_params(model_cfg, cfg.seed);
    res.optimizer = OptimizerState::zeros(model_cfg);
  }

  const bool write = !options.out_dir.empty();
  std::ofstream log;
  if (write) {
    fs::create_directories(options.out_dir / "checkpoints");
    log.open(options.out_dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
    if (!log) throw InputError("cannot write metrics log in " + options.out_dir.string());
  }
  auto save = [&](std::size_t step, const std::string& name) {
    if (!write) return;
    const auto path = options.out_dir / "checkpoints" / name;
    save_checkpoint(path, make_training_checkpoint(model_cfg, step, res.params, res.optimizer));
    res.checkpoints.push_back(path);
  };

  BatchSampler sampler(chunks.size(), cfg.seed);
  const std::size_t B = cfg.batch_size;
  for (std::size_t step = start; step < cfg.total_steps; ++step) {
    const double lr = cosine_lr(step, cfg);
    std::vector<std::size_t> picks(B);
    for (std::size_t i = 0; i < B; ++i) picks[i] = sampler.index(step * B + i);

    const LanguageModel model(model_cfg, res.params);
    Parameters grads = Parameters::zeros(model_cfg);
    double loss = 0.0;
    auto accumulate = [&](const LanguageModel::BackwardResult& r) {
      loss += r.loss;
      std::vector<const Array*> src;
      for_each_tensor(r.param_grads, [&](const std::string&, const Array& t, TensorRole) { src.push_back(&t); });
      std::size_t k = 0;
      for_each_tensor(grads, [&](const std::string&, Array& t, TensorRole) { add_inplace(t, *src[k++]); });
    };
    if (options.workers <= 1) {
      for (std::size_t i = 0; i < B; ++i) accumulate(model.loss_and_backward(chunks[picks[i]]));
    } else {
      std::vector<LanguageModel::BackwardResult> results(B);
      parallel_for(B, options.workers, [&](std::size_t i) { results[i] = model.loss_and_backward(chunks[picks[i]]); });
      for (const auto& r : results) accumulate(r);
    }
    const double inv_b = 1.0 / static_cast<double>(B);
    loss *= inv_b;
    for_each_tensor(grads, [&](const std::string&, Array& t, TensorRole) { scale_inplace(t, inv_b); });

    const double norm = global_grad_norm(grads);
    if (!std::isfinite(loss) || !std::isfinite(norm)) {
      std::ostringstream os;
      os << "non-finite training state at step " << step << ": loss=" << loss << " lr=" << lr << " grad_norm=" << norm;
      throw TrainingDiverged(os.str());
    }
    StepMetrics sm{step, loss, lr, norm, false};
    if (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) {
      const double s = cfg.grad_clip / norm;
      for_each_tensor(grads, [&](const std::string&, Array& t, TensorRole) { scale_inplace(t, s); });
      sm.clipped = true;
    }
    adamw_step(res.params, grads, res.optimizer, lr, cfg);
    res.metrics.push_back(sm);
    if (write) {
      nlohmann::ordered_json rec = {{"step", sm.step}, {"loss", sm.loss}, {"lr", sm.lr}, {"grad_norm", sm.grad_norm}};
      if (sm.clipped) rec["clipped"] = true;
      log << rec.dump() << '\n';
      log.flush();
    }
    if (options.on_step) options.on_step(sm);
    const std::size_t done = step + 1;
    if (cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0) save(done, checkpoint_name(done));
  }
  save(cfg.total_steps, "final");
  return res;
}

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const std::vector<Document>& corpus,
                  const Tokenizer& tok, const TrainOptions& options) {
  if (tok.vocab_size() > model_cfg.vocab_size) {
    throw SchemaError("tokenizer vocabulary (" + std::to_string(tok.vocab_size()) + ") exceeds model vocab_size (" +
                      std::to_string(model_cfg.vocab_size) + ")");
  }
  auto packed = pack_documents(corpus, tok, model_cfg.context_len, train_cfg.seed);
  if (packed.chunks.empty()) throw InputError("train: corpus shorter than one context window");
  return train(model_cfg, train_cfg, packed.chunks, options);
}

}  // namespace fuxi
