#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "fuxi/checkpoint.hpp"
#include "fuxi/corpus.hpp"
#include "fuxi/model.hpp"
#include "fuxi/tokenizer.hpp"

namespace fuxi {

struct TrainConfig {
  double max_lr = 3e-4;
  double min_lr_ratio = 0.1;
  double warmup_fraction = 0.01;
  std::size_t total_steps = 1000;
  std::size_t batch_size = 2;
  double weight_decay = 0.1;  // matrices only
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double grad_clip = 1.0;     // global L2 norm; <= 0 disables
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only

  void validate() const;
  std::size_t warmup_steps() const;
};

// Linear warmup to max_lr, then cosine decay to min_lr_ratio·max_lr at
// total_steps. Steps beyond total_steps clamp to the floor.
double cosine_lr(std::size_t step, const TrainConfig& cfg);

struct OptimizerState {
  Parameters m;
  Parameters v;
  std::uint64_t t = 0;

  static OptimizerState zeros(const ModelConfig& cfg);
};

bool is_decayed(TensorRole role);

// Bias-corrected Adam step with decoupled weight decay θ ← θ·(1 − lr·λ) on
// weight matrices and embeddings.
void adamw_step(Parameters& params, const Parameters& grads, OptimizerState& state, double lr, const TrainConfig& cfg);

double global_grad_norm(const Parameters& grads);

struct PackResult {
  std::vector<std::vector<TokenId>> chunks;
  std::size_t total_tokens = 0;  // including separators
  std::size_t dropped = 0;       // tokens in the trailing partial chunk
};

// Joins already-encoded documents with `eod` between them and slices into
// chunks of exactly context_len, dropping the remainder.
PackResult pack_encoded(const std::vector<std::vector<TokenId>>& docs, TokenId eod, std::size_t context_len);
// Shuffles by seed, encodes, then packs.
PackResult pack_documents(const std::vector<Document>& docs, const Tokenizer& tok, std::size_t context_len,
                          std::uint64_t seed);

struct StepMetrics {
  std::size_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;  // before clipping
  bool clipped = false;
};

struct TrainOptions {
  // Checkpoints go to out_dir/checkpoints, the metrics log to
  // out_dir/metrics.jsonl. Empty: nothing is written.
  std::filesystem::path out_dir;
  std::size_t workers = 1;
  // Continue from a saved state; its step counter carries over.
  std::optional<Checkpoint> resume;
  std::function<void(const StepMetrics&)> on_step;
};

struct TrainResult {
  Parameters params;
  OptimizerState optimizer;
  std::vector<StepMetrics> metrics;
  std::vector<std::filesystem::path> checkpoints;
};

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const std::vector<std::vector<TokenId>>& chunks, const TrainOptions& options = {});

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const std::vector<Document>& corpus,
                  const Tokenizer& tok, const TrainOptions& options = {});

// Parameters plus optimizer moments packaged for save_checkpoint.
Checkpoint make_training_checkpoint(const ModelConfig& cfg, std::uint64_t step, const Parameters& params,
                                    const OptimizerState& opt);
OptimizerState optimizer_from_checkpoint(const Checkpoint& ckpt);

}  // namespace fuxi
