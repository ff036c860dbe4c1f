#include <benchmark/benchmark.h>

#include <cmath>
#include <numbers>
#include <random>

#include "paraclap/corpus.hpp"
#include "paraclap/features.hpp"

using namespace paraclap;

namespace {

// Vibrato tone with a little noise so every feature is defined.
Waveform voiced(double seconds) {
  Waveform w;
  w.samples.resize(static_cast<std::size_t>(seconds * kSampleRate));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> noise(0.0, 0.01);
  double phase = 0.0;
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    const double t = static_cast<double>(i) / kSampleRate;
    phase += 2.0 * std::numbers::pi * (220.0 + 15.0 * std::sin(2.0 * std::numbers::pi * 5.0 * t)) / kSampleRate;
    w.samples[i] = 0.4 * std::sin(phase) + noise(rng);
  }
  return w;
}

void BM_ExtractFeatures(benchmark::State& state) {
  const Waveform w = voiced(static_cast<double>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(extract_features(w));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(w.samples.size()));
}
BENCHMARK(BM_ExtractFeatures)->Arg(1)->Arg(3)->Arg(10)->Unit(benchmark::kMillisecond);

void BM_BinThresholds(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u;
  std::vector<double> v(static_cast<std::size_t>(state.range(0)));
  for (auto& x : v) x = u(rng);
  for (auto _ : state) benchmark::DoNotOptimize(compute_bin_thresholds(v));
}
BENCHMARK(BM_BinThresholds)->Arg(1000)->Arg(100000);

}  // namespace
