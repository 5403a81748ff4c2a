#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "pd/diffusion.hpp"
#include "test_support.hpp"

using namespace pd;
using namespace pdtest;

namespace {

Plan plan_of(std::vector<int> lens) {
  Plan p;
  for (int l : lens) p.spans.push_back({{kContentBase}, l});
  return p;
}

LogitsRow row_from(std::initializer_list<float> vals) {
  LogitsRow r(1, long(vals.size()));
  long i = 0;
  for (float v : vals) r[i++] = v;
  return r;
}

// Context (a short causal plan prefix) plus a MASK scaffold built from the
// given interior lengths; the cache holds the prefilled context.
struct Fixture {
  ParamsT<float> params;
  MaskBuilder mb;
  KVCache cache;
  Scaffold scaffold;

  Fixture(const Vocabulary& v, const std::vector<int>& lens, MaskMode mode,
          uint64_t seed = 2025)
      : mb(160, mode) {
    Rng rng(seed);
    params = init_params(tiny_model_config(v.size()), rng);
    std::vector<TokenId> ctx = {BOS, TOPIC_OPEN, kContentBase,
                                length_token(lens[0]), TOPIC_CLOSE};
    for (size_t i = 0; i < ctx.size(); ++i) mb.append_plan();
    cache.init(params.cfg, 160);
    forward<float>(params, ctx, mb.mask(), &cache, int(ctx.size()));

    scaffold.base_len = int(ctx.size());
    for (int l : lens) {
      scaffold.spans.push_back(
          {scaffold.base_len + int(scaffold.buffer.size()) + 1, l});
      scaffold.buffer.push_back(ASYNC_OPEN);
      scaffold.buffer.insert(scaffold.buffer.end(), size_t(l), MASK);
      scaffold.buffer.push_back(ASYNC_CLOSE);
    }
    mb.append_stage_blocks(lens);
  }
};

}  // namespace

TEST_CASE("schedule_steps follows ceil(r * max span length)") {
  CHECK(schedule_steps(plan_of({30, 10, 20}), 1.0) == 30);
  CHECK(schedule_steps(plan_of({30, 10, 20}), 0.5) == 15);
  CHECK(schedule_steps(plan_of({1}), 0.25) == 1);
  CHECK(schedule_steps(plan_of({40}), 0.75) == 30);
  CHECK(schedule_steps(plan_of({10, 7}), 0.33) == 4);  // ceil(3.3)
  CHECK_THROWS_AS(schedule_steps(Plan{}, 1.0), ConfigError);
  CHECK_THROWS_AS(schedule_steps(plan_of({10}), 0.0), ConfigError);
  CHECK_THROWS_AS(schedule_steps(plan_of({10}), 1.5), ConfigError);
}

TEST_CASE("entropy selection: ordering, ties, and budgets") {
  LogitsRow peaked = row_from({10.0f, 0.0f, 0.0f, 0.0f});
  LogitsRow uniform = row_from({1.0f, 1.0f, 1.0f, 1.0f});
  CHECK(row_entropy(peaked) < row_entropy(uniform));

  SUBCASE("single masked position wins regardless of entropy") {
    std::vector<LogitsRow> rows = {uniform};
    CHECK(select_unmask_entropy(rows, {4}, 1) == std::vector<int>{4});
  }
  SUBCASE("point mass beats uniform") {
    std::vector<LogitsRow> rows = {uniform, peaked};
    CHECK(select_unmask_entropy(rows, {3, 8}, 1) == std::vector<int>{8});
  }
  SUBCASE("equal entropies break toward the lower index") {
    std::vector<LogitsRow> rows = {uniform, uniform};
    CHECK(select_unmask_entropy(rows, {5, 9}, 1) == std::vector<int>{5});
  }
  SUBCASE("budget larger than the pool returns everything") {
    std::vector<LogitsRow> rows = {uniform, peaked};
    CHECK(select_unmask_entropy(rows, {3, 8}, 10) == std::vector<int>{3, 8});
  }
}

TEST_CASE("confidence selection: threshold and progress fallback") {
  // Four-way softmax: logit a against three zeros gives p = e^a/(e^a+3).
  auto with_top_p = [&](double p) {
    float a = float(std::log(p / (1.0 - p) * 3.0));
    return row_from({a, 0.0f, 0.0f, 0.0f});
  };
  std::vector<LogitsRow> rows = {with_top_p(0.95), with_top_p(0.2),
                                 with_top_p(0.2)};
  CHECK(select_unmask_confidence(rows, {1, 2, 3}, 0.9) == std::vector<int>{1});

  std::vector<LogitsRow> low = {with_top_p(0.4), with_top_p(0.6),
                                with_top_p(0.5)};
  CHECK(select_unmask_confidence(low, {1, 2, 3}, 0.9) == std::vector<int>{2});

  std::vector<LogitsRow> high = {with_top_p(0.95), with_top_p(0.93)};
  CHECK(select_unmask_confidence(high, {4, 7}, 0.9) ==
        std::vector<int>{4, 7});
}

TEST_CASE("sample_token: argmax, nucleus cutoff, categorical fidelity") {
  Rng rng(1);
  SUBCASE("temperature zero is argmax with low-index ties") {
    CHECK(sample_token(row_from({0.f, 3.f, 3.f}), 0.0, 1.0, rng) == 1);
  }
  SUBCASE("nucleus cutoff excludes the tail") {
    LogitsRow two = row_from({std::log(0.96f), std::log(0.04f)});
    for (int i = 0; i < 10000; ++i)
      CHECK(sample_token(two, 1.0, 0.95, rng) == 0);
  }
  SUBCASE("top_p = 1, temperature = 1 samples the softmax exactly") {
    LogitsRow logits = row_from({0.3f, -0.5f, 1.2f, 0.0f, -1.0f, 0.7f});
    Eigen::ArrayXf p = (logits.array() - logits.maxCoeff()).exp().transpose();
    p /= p.sum();
    int n = 20000;
    std::vector<int> counts(6, 0);
    for (int i = 0; i < n; ++i)
      counts[size_t(sample_token(logits, 1.0, 1.0, rng))] += 1;
    double chi2 = 0.0;
    for (int k = 0; k < 6; ++k) {
      double expect = double(p[k]) * n;
      chi2 += (counts[size_t(k)] - expect) * (counts[size_t(k)] - expect) /
              expect;
    }
    // chi-square with 5 dof: p > 0.01 iff stat < 15.086
    CHECK(chi2 < 15.086);
  }
}

TEST_CASE("denoise_spans: schedules, freezing, and step accounting") {
  Vocabulary v = tiny_vocab();
  DenoisePolicy policy;
  policy.mode = DenoiseMode::ENTROPY_ORDERED;
  policy.steps_ratio = 1.0;
  policy.temperature = 0.2;

  SUBCASE("span of length 1 finishes in one forward") {
    Fixture fx(v, {1}, MaskMode::SPAN_ISOLATED);
    DenoiseResult r = denoise_spans(fx.params, fx.scaffold, fx.mb.mask(),
                                    policy, fx.cache, 1, 0);
    CHECK(r.forwards == 1);
    CHECK(fx.scaffold.buffer[1] != MASK);
  }
  SUBCASE("spans {20, 10} at r=1 take exactly 20 forwards") {
    Fixture fx(v, {20, 10}, MaskMode::SPAN_ISOLATED);
    DenoiseResult r = denoise_spans(fx.params, fx.scaffold, fx.mb.mask(),
                                    policy, fx.cache, 2, 0);
    CHECK(r.forwards == 20);
    CHECK(int(r.steps.size()) == 20);
    for (TokenId t : fx.scaffold.buffer) CHECK(t != MASK);
    // The shorter span drains within its own 10-step schedule.
    int span2_last = 0;
    for (const auto& rec : r.steps)
      for (size_t i = 0; i < rec.span_ids.size(); ++i)
        if (rec.span_ids[i] == 1) span2_last = rec.step;
    CHECK(span2_last <= 10);
  }
  SUBCASE("each position unmasks exactly once (frozen tokens)") {
    Fixture fx(v, {7, 4}, MaskMode::SPAN_ISOLATED);
    DenoiseResult r = denoise_spans(fx.params, fx.scaffold, fx.mb.mask(),
                                    policy, fx.cache, 3, 0);
    std::set<int> seen;
    int total = 0;
    for (const auto& rec : r.steps)
      for (int p : rec.unmasked_positions) {
        CHECK(seen.insert(p).second);
        ++total;
      }
    CHECK(total == 11);
  }
  SUBCASE("forwards are monotone in the steps ratio") {
    int prev = 0;
    for (double r : {0.25, 0.5, 0.75, 1.0}) {
      Fixture fx(v, {12, 6}, MaskMode::SPAN_ISOLATED);
      DenoisePolicy p2 = policy;
      p2.steps_ratio = r;
      DenoiseResult res = denoise_spans(fx.params, fx.scaffold, fx.mb.mask(),
                                        p2, fx.cache, 4, 0);
      CHECK(res.forwards == schedule_steps(plan_of({12, 6}), r));
      CHECK(res.forwards >= prev);
      prev = res.forwards;
    }
  }
  SUBCASE("confidence mode terminates within the longest span length") {
    Fixture fx(v, {9, 5}, MaskMode::SPAN_ISOLATED);
    DenoisePolicy p2 = policy;
    p2.mode = DenoiseMode::CONFIDENCE_THRESHOLD;
    p2.confidence = 0.9;
    DenoiseResult res = denoise_spans(fx.params, fx.scaffold, fx.mb.mask(),
                                      p2, fx.cache, 5, 0);
    CHECK(res.forwards >= 1);
    CHECK(res.forwards <= 9);
    for (TokenId t : fx.scaffold.buffer) CHECK(t != MASK);
  }
}

TEST_CASE("joint denoising equals one-span-at-a-time (factorized sampling)") {
  Vocabulary v = tiny_vocab();
  DenoisePolicy policy;
  policy.steps_ratio = 1.0;
  policy.temperature = 0.4;
  policy.top_p = 0.95;

  Rng layout_rng(55);
  for (int iter = 0; iter < 10; ++iter) {
    std::vector<int> lens;
    int b = layout_rng.uniform_int(2, 3);
    for (int k = 0; k < b; ++k) lens.push_back(layout_rng.uniform_int(2, 9));
    uint64_t seed = derive_seed(99, uint64_t(iter));

    Fixture joint(v, lens, MaskMode::SPAN_ISOLATED);
    denoise_spans(joint.params, joint.scaffold, joint.mb.mask(), policy,
                  joint.cache, seed, 0);

    Fixture solo(v, lens, MaskMode::SPAN_ISOLATED);
    for (int k = 0; k < b; ++k) {
      std::vector<int> only = {k};
      denoise_spans(solo.params, solo.scaffold, solo.mb.mask(), policy,
                    solo.cache, seed, 0, nullptr, &only);
    }
    CHECK(joint.scaffold.buffer == solo.scaffold.buffer);
  }
}

TEST_CASE("span tokens ignore pre-filled sibling content under isolation") {
  Vocabulary v = tiny_vocab();
  DenoisePolicy policy;
  policy.steps_ratio = 1.0;
  policy.temperature = 0.3;
  std::vector<int> lens = {5, 5};
  uint64_t seed = 1234;

  Fixture a(v, lens, MaskMode::SPAN_ISOLATED);
  std::vector<int> only1 = {1};
  denoise_spans(a.params, a.scaffold, a.mb.mask(), policy, a.cache, seed, 0,
                nullptr, &only1);
  auto span1_a = std::vector<TokenId>(a.scaffold.buffer.begin() + 8,
                                      a.scaffold.buffer.begin() + 13);

  Fixture b(v, lens, MaskMode::SPAN_ISOLATED);
  // Scribble over the sibling span before denoising span 1.
  for (int i = 1; i <= 5; ++i)
    b.scaffold.buffer[size_t(i)] = kContentBase + TokenId(i);
  denoise_spans(b.params, b.scaffold, b.mb.mask(), policy, b.cache, seed, 0,
                nullptr, &only1);
  auto span1_b = std::vector<TokenId>(b.scaffold.buffer.begin() + 8,
                                      b.scaffold.buffer.begin() + 13);
  CHECK(span1_a == span1_b);
}

TEST_CASE("denoise preconditions") {
  Vocabulary v = tiny_vocab();
  DenoisePolicy policy;
  Fixture fx(v, {3}, MaskMode::SPAN_ISOLATED);
  fx.scaffold.buffer[1] = kContentBase;  // not MASK
  CHECK_THROWS_AS(denoise_spans(fx.params, fx.scaffold, fx.mb.mask(), policy,
                                fx.cache, 1, 0),
                  ConfigError);
  DenoisePolicy bad;
  bad.steps_ratio = 1.5;
  CHECK_THROWS_AS(bad.check(), ConfigError);
}
