#include <benchmark/benchmark.h>

#include <vector>

#include "grlab/chunked_loss.hpp"
#include "grlab/policy.hpp"
#include "grlab/rng.hpp"
#include "grlab/vocab.hpp"

namespace {

struct HeadFixture {
  std::vector<double> hidden, head;
  std::vector<std::int32_t> targets;
  grlab::HeadInputs inputs;

  HeadFixture(std::size_t rows, std::size_t dim, std::size_t vocab) {
    grlab::Rng rng(17);
    hidden.resize(rows * dim);
    head.resize(dim * vocab);
    targets.resize(rows);
    for (auto& v : hidden) v = rng.normal();
    for (auto& v : head) v = 0.1 * rng.normal();
    for (auto& t : targets) t = static_cast<std::int32_t>(rng.below(vocab));
    inputs.hidden = hidden;
    inputs.head_weights = head;
    inputs.targets = targets;
    inputs.num_rows = rows;
    inputs.hidden_dim = dim;
    inputs.vocab_size = vocab;
  }
};

void BM_MonolithicNll(benchmark::State& state) {
  HeadFixture f(static_cast<std::size_t>(state.range(0)), 64, 4096);
  for (auto _ : state) {
    benchmark::DoNotOptimize(grlab::monolithic_nll(f.inputs).loss);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_MonolithicNll)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

void BM_ChunkedNll(benchmark::State& state) {
  HeadFixture f(static_cast<std::size_t>(state.range(0)), 64, 4096);
  grlab::ChunkPlan plan;
  plan.chunk_size = static_cast<std::size_t>(state.range(1));
  grlab::ScratchTracker tracker;
  for (auto _ : state) {
    grlab::ScratchScope scope(tracker);
    benchmark::DoNotOptimize(grlab::chunked_nll(f.inputs, plan).loss);
  }
  state.counters["peak_scratch"] = static_cast<double>(tracker.peak);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ChunkedNll)
    ->Args({256, 16})
    ->Args({1024, 16})
    ->Args({1024, 128})
    ->Unit(benchmark::kMillisecond);

grlab::PolicyParams bench_transformer(int embed) {
  grlab::ArchDescriptor arch;
  arch.kind = grlab::PolicyKind::kTinyTransformer;
  arch.max_seq_len = 32;
  arch.embed_dim = embed;
  arch.num_layers = 2;
  arch.num_heads = 2;
  arch.ffn_dim = 2 * embed;
  return grlab::init_policy(arch, 3);
}

void BM_TransformerForward(benchmark::State& state) {
  const auto params = bench_transformer(static_cast<int>(state.range(0)));
  const grlab::TokenSeq prompt(8, grlab::tok::kTaskMath);
  const grlab::TokenSeq response(16, grlab::tok::kStop);
  for (auto _ : state) {
    benchmark::DoNotOptimize(grlab::sequence_logprob(params, prompt, response));
  }
}
BENCHMARK(BM_TransformerForward)->Arg(16)->Arg(32);

void BM_TransformerBackward(benchmark::State& state) {
  const auto params = bench_transformer(static_cast<int>(state.range(0)));
  const grlab::TokenSeq prompt(8, grlab::tok::kTaskMath);
  const grlab::TokenSeq response(16, grlab::tok::kStop);
  const grlab::WeightedSequence item{prompt, response, 1.0};
  for (auto _ : state) {
    auto g = grlab::grad_weighted_logprob(params, {&item, 1});
    benchmark::DoNotOptimize(g.data());
  }
}
BENCHMARK(BM_TransformerBackward)->Arg(16)->Arg(32);

}  // namespace

BENCHMARK_MAIN();
