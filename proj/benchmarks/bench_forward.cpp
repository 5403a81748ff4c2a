#include <benchmark/benchmark.h>

#include "pd/model.hpp"

namespace {

using namespace pd;

ModelConfig bench_config() {
  ModelConfig cfg;
  cfg.vocab_size = 700;
  cfg.d_model = 128;
  cfg.n_layers = 4;
  cfg.n_heads = 4;
  cfg.d_ff = 512;
  cfg.max_seq_len = 2048;
  return cfg;
}

std::vector<TokenId> causal_tokens(int n, Rng& rng) {
  std::vector<TokenId> toks = {BOS};
  for (int i = 1; i < n; ++i)
    toks.push_back(kContentBase + TokenId(rng.uniform_int(0, 150)));
  return toks;
}

void BM_ForwardFull(benchmark::State& state) {
  int n = int(state.range(0));
  Rng rng(1);
  ParamsT<float> params = init_params(bench_config(), rng);
  auto toks = causal_tokens(n, rng);
  AttentionMask mask = AttentionMask::build(assign_roles(toks),
                                            MaskMode::SPAN_ISOLATED);
  for (auto _ : state) {
    MatX<float> logits = forward<float>(params, toks, mask);
    benchmark::DoNotOptimize(logits.data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * n);
}
BENCHMARK(BM_ForwardFull)->Arg(64)->Arg(256);

void BM_ForwardIncremental(benchmark::State& state) {
  int n = int(state.range(0));
  Rng rng(2);
  ParamsT<float> params = init_params(bench_config(), rng);
  auto toks = causal_tokens(n, rng);
  AttentionMask mask = AttentionMask::build(assign_roles(toks),
                                            MaskMode::SPAN_ISOLATED);
  for (auto _ : state) {
    KVCache cache;
    cache.init(params.cfg, n);
    for (int i = 0; i < n; ++i) {
      std::vector<TokenId> one = {toks[size_t(i)]};
      MatX<float> logits = forward<float>(params, one, mask, &cache, 1);
      benchmark::DoNotOptimize(logits.data());
    }
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * n);
}
BENCHMARK(BM_ForwardIncremental)->Arg(64)->Arg(256);

void BM_GradStep(benchmark::State& state) {
  Rng rng(3);
  ParamsT<float> params = init_params(bench_config(), rng);
  OptimizerState opt = OptimizerState::init(params);
  LrSchedule sched;
  sched.total_steps = 1 << 20;

  AnnotatedDocument doc;
  Stage st;
  for (int k = 0; k < 3; ++k) {
    st.plan.spans.push_back({{kContentBase + 7}, 40});
    std::vector<TokenId> span;
    for (int i = 0; i < 40; ++i)
      span.push_back(kContentBase + TokenId(rng.uniform_int(0, 150)));
    st.spans.push_back(span);
  }
  st.plan.terminator = Terminator::EOS;
  doc.stages.push_back(st);
  Rng ex_rng(4);
  TrainingExample ex =
      make_training_example(doc, 0.5, MaskMode::SPAN_ISOLATED, {}, ex_rng);

  for (auto _ : state) {
    double loss = grad_step(params, opt, {&ex}, sched);
    benchmark::DoNotOptimize(loss);
  }
}
BENCHMARK(BM_GradStep);

}  // namespace
