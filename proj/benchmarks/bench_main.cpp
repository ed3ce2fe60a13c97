#include <benchmark/benchmark.h>

#include "fuxi/model.hpp"
#include "fuxi/ops.hpp"
#include "fuxi/random.hpp"
#include "fuxi/synthetic.hpp"
#include "fuxi/tokenizer.hpp"

namespace {

fuxi::Array random_array(fuxi::Shape shape, std::uint64_t seed) {
  fuxi::Array a(std::move(shape));
  fuxi::Rng rng(seed);
  for (auto& v : a.data()) v = rng.normal();
  return a;
}

std::vector<fuxi::TokenId> random_tokens(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  fuxi::Rng rng(seed);
  std::vector<fuxi::TokenId> t(n);
  for (auto& x : t) x = static_cast<fuxi::TokenId>(rng.below(vocab));
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_array({n, n}, 1);
  const auto b = random_array({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(fuxi::matmul(a, b));
  state.counters["flops"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_Forward(benchmark::State& state) {
  const fuxi::ModelConfig cfg;
  const fuxi::LanguageModel model(cfg, fuxi::init_params(cfg, 1));
  const auto tokens = random_tokens(static_cast<std::size_t>(state.range(0)), cfg.vocab_size, 3);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(tokens));
}
BENCHMARK(BM_Forward)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Backward(benchmark::State& state) {
  const fuxi::ModelConfig cfg;
  const fuxi::LanguageModel model(cfg, fuxi::init_params(cfg, 1));
  const auto tokens = random_tokens(static_cast<std::size_t>(state.range(0)), cfg.vocab_size, 3);
  for (auto _ : state) benchmark::DoNotOptimize(model.loss_and_backward(tokens));
}
BENCHMARK(BM_Backward)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

void BM_Encode(benchmark::State& state) {
  const auto docs = fuxi::synth::make_documents(fuxi::synth::latin_dominant_mix(), 200, 4, 5);
  std::vector<std::string> texts;
  std::size_t bytes = 0;
  for (const auto& d : docs) {
    texts.push_back(d.text);
    bytes += d.text.size();
  }
  const auto tok = fuxi::train_bbpe(texts, 1000);
  for (auto _ : state) {
    for (const auto& t : texts) benchmark::DoNotOptimize(tok.encode(t));
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * bytes));
}
BENCHMARK(BM_Encode)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
