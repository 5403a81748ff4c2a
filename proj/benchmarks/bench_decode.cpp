#include <benchmark/benchmark.h>

#include "pd/engine.hpp"

namespace {

using namespace pd;

struct DecodeFixture {
  ParamsT<float> params;
  std::vector<TokenId> prompt = {kContentBase, kContentBase + 1};

  DecodeFixture() {
    ModelConfig cfg;
    cfg.vocab_size = 700;
    cfg.d_model = 128;
    cfg.n_layers = 4;
    cfg.n_heads = 4;
    cfg.d_ff = 512;
    cfg.max_seq_len = 2048;
    Rng rng(9);
    params = init_params(cfg, rng);
  }

  GenerationConfig cfg(uint64_t seed) const {
    GenerationConfig c;
    c.max_total_len = 320;
    c.max_stages = 2;
    c.seed = seed;
    return c;
  }
};

void BM_GeneratePlanned(benchmark::State& state) {
  DecodeFixture fx;
  uint64_t seed = 0;
  for (auto _ : state) {
    GenerationResult r = generate_planned(fx.params, fx.prompt, fx.cfg(seed++));
    benchmark::DoNotOptimize(r.trace.critical_path);
  }
}
BENCHMARK(BM_GeneratePlanned)->Unit(benchmark::kMillisecond);

void BM_GenerateAr(benchmark::State& state) {
  DecodeFixture fx;
  uint64_t seed = 0;
  for (auto _ : state) {
    GenerationConfig c = fx.cfg(seed++);
    c.max_total_len = 160;
    GenerationResult r = generate_ar(fx.params, fx.prompt, c);
    benchmark::DoNotOptimize(r.trace.critical_path);
  }
}
BENCHMARK(BM_GenerateAr)->Unit(benchmark::kMillisecond);

void BM_GenerateDiffusion(benchmark::State& state) {
  DecodeFixture fx;
  uint64_t seed = 0;
  for (auto _ : state) {
    GenerationResult r =
        generate_diffusion(fx.params, fx.prompt, 96, fx.cfg(seed++));
    benchmark::DoNotOptimize(r.trace.critical_path);
  }
}
BENCHMARK(BM_GenerateDiffusion)->Unit(benchmark::kMillisecond);

}  // namespace
