#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "ddr/metrics.hpp"
#include "ddr/synthetic.hpp"
#include "ddr/toy_policy.hpp"
#include "ddr/trainer.hpp"
#include "ddr/util.hpp"

namespace {

std::string random_text(ddr::Rng& rng, std::size_t len) {
  std::string out;
  for (std::size_t i = 0; i < len; ++i) out += (i ? " w" : "w") + std::to_string(rng.below(40));
  return out;
}

ddr::ToyPolicyParams random_params(ddr::Rng& rng, std::size_t vocab) {
  ddr::ToyPolicyParams p(vocab, rng.normal());
  for (auto& w : p.W) w = rng.normal();
  return p;
}

std::vector<ddr::TokenId> random_ids(ddr::Rng& rng, std::size_t vocab, std::size_t len) {
  std::vector<ddr::TokenId> out;
  for (std::size_t i = 0; i < len; ++i)
    out.push_back(static_cast<ddr::TokenId>(ddr::Vocab::kReserved + rng.below(vocab - ddr::Vocab::kReserved)));
  return out;
}

void BM_RougeL(benchmark::State& state) {
  ddr::Rng rng(1);
  const auto len = static_cast<std::size_t>(state.range(0));
  const auto a = random_text(rng, len);
  const auto b = random_text(rng, len);
  for (auto _ : state) benchmark::DoNotOptimize(ddr::rouge_l(a, b));
}
BENCHMARK(BM_RougeL)->Arg(16)->Arg(100);

void BM_TokenF1(benchmark::State& state) {
  ddr::Rng rng(2);
  const auto len = static_cast<std::size_t>(state.range(0));
  const auto a = random_text(rng, len);
  const auto b = random_text(rng, len);
  for (auto _ : state) benchmark::DoNotOptimize(ddr::token_f1(a, b));
}
BENCHMARK(BM_TokenF1)->Arg(16)->Arg(100);

void BM_SequenceLogprob(benchmark::State& state) {
  ddr::Rng rng(3);
  const auto vocab = static_cast<std::size_t>(state.range(0));
  const auto params = random_params(rng, vocab);
  const auto prompt = random_ids(rng, vocab, 200);
  const auto completion = random_ids(rng, vocab, 8);
  for (auto _ : state) benchmark::DoNotOptimize(ddr::sequence_logprob(params, prompt, completion));
}
BENCHMARK(BM_SequenceLogprob)->Arg(64)->Arg(512);

void BM_DpoGrad(benchmark::State& state) {
  ddr::Rng rng(4);
  const auto vocab = static_cast<std::size_t>(state.range(0));
  const auto params = random_params(rng, vocab);
  const ddr::ReferenceSnapshot ref(random_params(rng, vocab));
  std::vector<ddr::TokenizedPair> batch;
  for (int i = 0; i < 16; ++i)
    batch.push_back({random_ids(rng, vocab, 200), random_ids(rng, vocab, 4), random_ids(rng, vocab, 4)});
  for (auto _ : state) benchmark::DoNotOptimize(ddr::dpo_grad(params, ref, batch, 0.1));
}
BENCHMARK(BM_DpoGrad)->Arg(64)->Arg(512);

void BM_Sample(benchmark::State& state) {
  ddr::Rng rng(5);
  const auto params = random_params(rng, 256);
  const auto prompt = random_ids(rng, 256, 200);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(ddr::sample_ids(params, prompt, 0.7, 32, ++seed));
}
BENCHMARK(BM_Sample);

void BM_Synthetic(benchmark::State& state) {
  ddr::SyntheticOptions opt;
  opt.records = 20;
  for (auto _ : state) benchmark::DoNotOptimize(ddr::generate_synthetic(opt));
}
BENCHMARK(BM_Synthetic);

}  // namespace

BENCHMARK_MAIN();
