#include <doctest.h>

#include <set>

#include "pd/engine.hpp"
#include "test_support.hpp"

using namespace pd;
using namespace pdtest;

namespace {

struct EngineFixture {
  Vocabulary v = tiny_vocab();
  ParamsT<float> params;
  std::vector<TokenId> prompt;

  explicit EngineFixture(uint64_t seed = 404) {
    Rng rng(seed);
    params = init_params(tiny_model_config(v.size()), rng);
    prompt = {*v.find("f0"), *v.find("f1")};
  }

  GenerationConfig cfg(uint64_t seed) const {
    GenerationConfig c;
    c.policy.steps_ratio = 1.0;
    c.policy.temperature = 0.3;
    c.max_total_len = 200;
    c.max_stages = 3;
    c.max_spans_per_stage = 3;
    c.seed = seed;
    return c;
  }
};

int count_kind(const GenerationTrace& tr, EventKind k) {
  int n = 0;
  for (const auto& ev : tr.events) n += ev.kind == k;
  return n;
}

}  // namespace

TEST_CASE("planned generation is structurally well-formed and accounted") {
  EngineFixture fx;
  for (uint64_t seed = 1; seed <= 8; ++seed) {
    GenerationResult r = generate_planned(fx.params, fx.prompt, fx.cfg(seed));
    // Trace identities.
    CHECK(r.trace.critical_path ==
          r.trace.plan_token_events + r.trace.denoise_step_events);
    CHECK(r.trace.tokens_generated == int(r.response_raw.size()));
    CHECK(r.stripped == strip_control(r.response_raw));
    CHECK(r.trace.content_tokens == int(r.stripped.size()));
    int f = 0;
    for (const auto& ev : r.trace.events) {
      CHECK(ev.forwards >= f);
      f = ev.forwards;
    }
    CHECK(f == r.trace.critical_path);
    if (!r.trace.truncated) {
      // Constrained sampling must produce a parseable tagged document.
      CHECK(validate_tokens(r.raw).ok);
      REQUIRE(!r.plans.empty());
      CHECK(r.plans.back().terminator == Terminator::EOS);
    }
    // Critical path beats token count whenever a stage has >= 2 spans.
    bool multi_span = false;
    for (const auto& p : r.plans) multi_span |= p.num_spans() >= 2;
    if (multi_span && !r.trace.used_ar_fallback)
      CHECK(r.trace.critical_path < r.trace.tokens_generated);
  }
}

TEST_CASE("planned generation is deterministic given the seed") {
  EngineFixture fx;
  GenerationResult a = generate_planned(fx.params, fx.prompt, fx.cfg(7));
  GenerationResult b = generate_planned(fx.params, fx.prompt, fx.cfg(7));
  GenerationResult c = generate_planned(fx.params, fx.prompt, fx.cfg(8));
  CHECK(a.raw == b.raw);
  CHECK(a.trace.critical_path == b.trace.critical_path);
  CHECK(a.raw != c.raw);  // overwhelmingly likely under random params
}

TEST_CASE("denoise step counts follow the scaled plan schedule") {
  EngineFixture fx;
  for (double r : {0.25, 0.5, 1.0}) {
    GenerationConfig cfg = fx.cfg(42);
    cfg.policy.steps_ratio = r;
    cfg.max_stages = 1;
    GenerationResult res = generate_planned(fx.params, fx.prompt, cfg);
    if (res.plans.empty()) continue;
    Plan scaled = res.plans[0];
    for (auto& d : scaled.spans)
      d.predicted_len = std::max(
          1, int(std::llround(cfg.length_scale * double(d.predicted_len))));
    CHECK(res.trace.denoise_step_events == schedule_steps(scaled, r));
  }
}

TEST_CASE("max_stages=1 truncates a sync-terminated generation") {
  EngineFixture fx;
  // Hunt for a seed whose first stage samples <sync/>.
  for (uint64_t seed = 1; seed < 200; ++seed) {
    GenerationConfig cfg = fx.cfg(seed);
    cfg.max_stages = 4;
    GenerationResult full = generate_planned(fx.params, fx.prompt, cfg);
    if (full.plans.empty() ||
        full.plans[0].terminator != Terminator::SYNC)
      continue;
    GenerationConfig one = fx.cfg(seed);
    one.max_stages = 1;
    GenerationResult r = generate_planned(fx.params, fx.prompt, one);
    CHECK(r.trace.truncated);
    CHECK(count_kind(r.trace, EventKind::SYNC) == 1);
    // Audit still passes on the truncated run.
    CHECK(cache_audit(r).ok);
    return;
  }
  FAIL("no sync-terminated seed found");
}

TEST_CASE("kv-cache cross check stays within 1e-4") {
  EngineFixture fx;
  GenerationConfig cfg = fx.cfg(3);
  cfg.cross_check = true;
  cfg.policy.temperature = 0.0;
  cfg.plan_temperature = 0.0;
  GenerationResult r = generate_planned(fx.params, fx.prompt, cfg);
  CHECK(r.trace.max_cache_rel_err <= 1e-4);
  CHECK(r.trace.max_cache_rel_err >= 0.0);
}

TEST_CASE("cache audit passes on planned runs, multi-stage included") {
  EngineFixture fx;
  int multi_stage_seen = 0;
  for (uint64_t seed = 1; seed <= 40 && multi_stage_seen < 3; ++seed) {
    GenerationResult r = generate_planned(fx.params, fx.prompt, fx.cfg(seed));
    AuditReport rep = cache_audit(r);
    CHECK(rep.ok);
    if (count_kind(r.trace, EventKind::SYNC) > 0) ++multi_stage_seen;
  }
  CHECK(multi_stage_seen >= 1);
}

TEST_CASE("unconstrained plan sampling on a random model falls back to AR") {
  EngineFixture fx;
  GenerationConfig cfg = fx.cfg(5);
  cfg.constrain_plan = false;
  cfg.max_total_len = 96;
  GenerationResult r = generate_planned(fx.params, fx.prompt, cfg);
  CHECK(r.trace.used_ar_fallback);
  CHECK(r.trace.critical_path == r.trace.plan_token_events);
}

TEST_CASE("ar baseline: event accounting and the uncached oracle") {
  EngineFixture fx;
  GenerationConfig cfg = fx.cfg(6);
  cfg.policy.temperature = 0.0;
  cfg.max_total_len = 64;
  GenerationResult r = generate_ar(fx.params, fx.prompt, cfg);
  CHECK(r.trace.critical_path == r.trace.tokens_generated);
  CHECK(count_kind(r.trace, EventKind::PLAN_TOKEN) == r.trace.tokens_generated);
  CHECK(cache_audit(r).ok);

  // Oracle: greedy decoding with full uncached forwards must agree.
  std::vector<TokenId> buf = {BOS};
  buf.insert(buf.end(), fx.prompt.begin(), fx.prompt.end());
  MaskBuilder mb(64, MaskMode::SPAN_ISOLATED);
  for (size_t i = 0; i < buf.size(); ++i) mb.append_plan();
  std::vector<TokenId> generated;
  while (int(buf.size()) < 64) {
    MatX<float> logits = forward<float>(fx.params, buf, mb.mask());
    LogitsRow row = logits.row(logits.rows() - 1);
    float ninf = -std::numeric_limits<float>::infinity();
    for (long j = 0; j < row.cols(); ++j)
      if (!(is_content(TokenId(j)) || TokenId(j) == EOS)) row[j] = ninf;
    Eigen::Index best;
    row.maxCoeff(&best);
    buf.push_back(TokenId(best));
    mb.append_plan();
    generated.push_back(TokenId(best));
    if (TokenId(best) == EOS) break;
  }
  CHECK(generated == r.response_raw);
}

TEST_CASE("ar overflow and prompt-too-long") {
  EngineFixture fx;
  GenerationConfig cfg = fx.cfg(9);
  cfg.max_total_len = 16;
  std::vector<TokenId> long_prompt(20, kContentBase);
  CHECK_THROWS_AS(generate_ar(fx.params, long_prompt, cfg), LengthOverflow);

  // Short cap without an EOS in reach: truncation flag set.
  cfg.policy.temperature = 0.0;
  GenerationResult r = generate_ar(fx.params, fx.prompt, cfg);
  if (r.trace.truncated) CHECK(r.trace.length_overflow);
}

TEST_CASE("plain diffusion canvas") {
  EngineFixture fx;
  GenerationConfig cfg = fx.cfg(10);

  SUBCASE("entropy schedule uses one forward per canvas token") {
    GenerationResult r = generate_diffusion(fx.params, fx.prompt, 64, cfg);
    CHECK(r.trace.critical_path == 64);
    CHECK(r.trace.denoise_step_events == 64);
    CHECK(r.trace.tokens_generated == 64);
    for (TokenId t : r.response_raw) CHECK(t != MASK);
  }
  SUBCASE("confidence mode uses at most canvas_len forwards") {
    GenerationConfig c2 = cfg;
    c2.policy.mode = DenoiseMode::CONFIDENCE_THRESHOLD;
    c2.policy.confidence = 0.9;
    GenerationResult r = generate_diffusion(fx.params, fx.prompt, 64, c2);
    CHECK(r.trace.critical_path >= 1);
    CHECK(r.trace.critical_path <= 64);
  }
  SUBCASE("empty canvas") {
    GenerationResult r = generate_diffusion(fx.params, fx.prompt, 0, cfg);
    CHECK(r.trace.critical_path == 0);
    CHECK(r.response_raw.empty());
  }
  SUBCASE("overflow") {
    GenerationConfig c2 = cfg;
    c2.max_total_len = 32;
    CHECK_THROWS_AS(generate_diffusion(fx.params, fx.prompt, 64, c2),
                    LengthOverflow);
  }
}

TEST_CASE("pd-da dense masks flow through generation") {
  EngineFixture fx;
  GenerationConfig cfg = fx.cfg(11);
  cfg.mask_mode = MaskMode::DENSE;
  GenerationResult r = generate_planned(fx.params, fx.prompt, cfg);
  CHECK(r.trace.critical_path ==
        r.trace.plan_token_events + r.trace.denoise_step_events);
  if (!r.trace.truncated) CHECK(validate_tokens(r.raw).ok);
  CHECK(cache_audit(r).ok);
}
