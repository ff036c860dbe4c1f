#include <benchmark/benchmark.h>

#include <random>

#include "paraclap/model.hpp"
#include "paraclap/querygen.hpp"

using namespace paraclap;

namespace {

struct Setup {
  ModelParams params;
  std::vector<TrainingPair> batch;
};

Setup make_setup(std::size_t n) {
  const Vocab vocab = build_vocab(default_template_bank());
  ModelConfig cfg;
  cfg.vocab_size = vocab.size();
  Rng rng = make_rng(3);
  Setup s{init_params(cfg, rng), {}};
  std::normal_distribution<double> nd;
  std::uniform_int_distribution<std::size_t> tok(0, vocab.size() - 1);
  s.batch.resize(n);
  for (auto& p : s.batch) {
    for (auto& f : p.features) f = nd(rng);
    for (int i = 0; i < 5; ++i) p.tokens.push_back(tok(rng));
  }
  return s;
}

void BM_ForwardBackward(benchmark::State& state) {
  const Setup s = make_setup(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(forward_backward(s.batch, s.params));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackward)->Arg(8)->Arg(64)->Arg(256)->Unit(benchmark::kMicrosecond);

void BM_BatchLoss(benchmark::State& state) {
  const Setup s = make_setup(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(batch_loss(s.batch, s.params));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BatchLoss)->Arg(64)->Unit(benchmark::kMicrosecond);

}  // namespace
