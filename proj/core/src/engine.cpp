#include "pd/engine.hpp"

#include <algorithm>
#include <cmath>

namespace pd {

const char* event_kind_name(EventKind kind) {
  switch (kind) {
    case EventKind::PLAN_TOKEN: return "plan_token";
    case EventKind::DENOISE_STEP: return "denoise_step";
    case EventKind::SYNC: return "sync";
    case EventKind::EOS_MARK: return "eos";
  }
  return "?";
}

void GenerationConfig::check(const ModelConfig& model_cfg) const {
  policy.check();
  if (length_scale <= 0.0) throw ConfigError("length_scale must be positive");
  if (max_total_len < 2) throw ConfigError("max_total_len too small");
  if (max_stages < 1) throw ConfigError("max_stages must be >= 1");
  if (max_spans_per_stage < 1)
    throw ConfigError("max_spans_per_stage must be >= 1");
  model_cfg.check();
}

int GenerationConfig::effective_max_len(const ModelConfig& model_cfg) const {
  return std::min(max_total_len, model_cfg.max_seq_len);
}

namespace {

TokenId sample_filtered(const LogitsRow& row, const TokenFilter& allowed,
                        double temperature, double top_p, Rng& rng) {
  if (!allowed) return sample_token(row, temperature, top_p, rng);
  LogitsRow filtered = row;
  float ninf = -std::numeric_limits<float>::infinity();
  for (long j = 0; j < filtered.cols(); ++j)
    if (!allowed(TokenId(j))) filtered[j] = ninf;
  return sample_token(filtered, temperature, top_p, rng);
}

bool content_or_pad(TokenId t) { return is_content(t) || t == PAD; }

// Plan-grammar state machine. Legal moves: <topic>, 1..3 label words, one
// length token, </topic>, then another <topic> or the <async> onset.
struct PlanFsm {
  enum class St { StageStart, Label, AfterLen, AfterClose };
  St st = St::StageStart;
  int max_spans;
  Plan plan;
  std::vector<TokenId> cur_topic;
  int cur_len = 0;

  explicit PlanFsm(int max_spans_in) : max_spans(max_spans_in) {}

  TokenFilter filter() const {
    switch (st) {
      case St::StageStart:
        return [](TokenId t) { return t == TOPIC_OPEN; };
      case St::Label: {
        size_t labels = cur_topic.size();
        return [labels](TokenId t) {
          if (labels == 0) return is_content(t);
          if (labels < 3) return is_content(t) || is_length_token(t);
          return is_length_token(t);
        };
      }
      case St::AfterLen:
        return [](TokenId t) { return t == TOPIC_CLOSE; };
      case St::AfterClose: {
        bool more = int(plan.spans.size()) < max_spans;
        return [more](TokenId t) {
          return t == ASYNC_OPEN || (more && t == TOPIC_OPEN);
        };
      }
    }
    return nullptr;
  }

  // Returns false on a grammar violation (possible without constraints).
  bool advance(TokenId tok) {
    switch (st) {
      case St::StageStart:
        if (tok != TOPIC_OPEN) return false;
        st = St::Label;
        cur_topic.clear();
        return true;
      case St::Label:
        if (is_content(tok) && cur_topic.size() < 3) {
          cur_topic.push_back(tok);
          return true;
        }
        if (is_length_token(tok) && !cur_topic.empty()) {
          cur_len = length_value(tok);
          st = St::AfterLen;
          return true;
        }
        return false;
      case St::AfterLen:
        if (tok != TOPIC_CLOSE) return false;
        plan.spans.push_back({cur_topic, cur_len});
        st = St::AfterClose;
        return true;
      case St::AfterClose:
        if (tok == TOPIC_OPEN && int(plan.spans.size()) < max_spans) {
          st = St::Label;
          cur_topic.clear();
          return true;
        }
        return false;  // ASYNC_OPEN ends the plan; handled by the caller
    }
    return false;
  }

  bool plan_ready() const {
    return st == St::AfterClose && !plan.spans.empty();
  }
};

// Shared generation machinery: token buffer, incremental mask, KV cache,
// forward accounting, and trace assembly.
struct EngineRun {
  const ParamsT<float>& params;
  const GenerationConfig& cfg;
  int max_len;
  std::vector<TokenId> buffer;
  MaskBuilder mb;
  KVCache cache;
  GenerationTrace trace;
  int forwards = 0;
  int prompt_end = 0;

  std::vector<TokenId> pending;
  int pending_base = 0;  // absolute position of pending.front()
  int last_cache_len_before = 0;

  EngineRun(const ParamsT<float>& p, const GenerationConfig& c,
            const std::vector<TokenId>& prompt)
      : params(p),
        cfg(c),
        max_len(c.effective_max_len(p.cfg)),
        mb(max_len, c.mask_mode) {
    cfg.check(p.cfg);
    if (int(prompt.size()) + 1 >= max_len)
      throw LengthOverflow("prompt does not fit in max_total_len");
    buffer.push_back(BOS);
    buffer.insert(buffer.end(), prompt.begin(), prompt.end());
    for (size_t i = 0; i < buffer.size(); ++i) mb.append_plan();
    prompt_end = int(buffer.size());
    cache.init(p.cfg, max_len);
    pending = buffer;
    pending_base = 0;
  }

  bool fits(int extra) const { return int(buffer.size()) + extra <= max_len; }

  void cross_check_rows(const MatX<float>& cached_logits, int base) {
    KVCache fresh;
    MatX<float> full = forward<float>(params, buffer, mb.mask(), nullptr, 0);
    for (long r = 0; r < cached_logits.rows(); ++r) {
      for (long j = 0; j < cached_logits.cols(); ++j) {
        double a = double(cached_logits(r, j));
        double b = double(full(base + r, j));
        // Relative above unit scale, absolute below it (logits are O(1+)).
        double rel = std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
        trace.max_cache_rel_err = std::max(trace.max_cache_rel_err, rel);
      }
    }
  }

  // Runs the model over the pending suffix, committing it to the cache, and
  // returns the logits row of the final pending position.
  LogitsRow flush() {
    if (pending.empty()) throw ConfigError("flush with no pending tokens");
    last_cache_len_before = cache.len;
    std::vector<Role> roles(mb.roles().roles.begin() + pending_base,
                            mb.roles().roles.begin() + pending_base +
                                long(pending.size()));
    MatX<float> logits = forward<float>(params, pending, mb.mask(), &cache,
                                        int(pending.size()), &roles);
    forwards += 1;
    if (cfg.cross_check) cross_check_rows(logits, pending_base);
    pending.clear();
    return logits.row(logits.rows() - 1);
  }

  void stage_pending(TokenId tok) {
    pending = {tok};
    pending_base = int(buffer.size()) - 1;
  }

  void event(EventKind kind, std::vector<int> positions) {
    TraceEvent ev;
    ev.kind = kind;
    ev.forwards = forwards;
    ev.positions = std::move(positions);
    ev.cache_len_before = last_cache_len_before;
    if (kind == EventKind::PLAN_TOKEN) trace.plan_token_events += 1;
    if (kind == EventKind::DENOISE_STEP) trace.denoise_step_events += 1;
    trace.events.push_back(std::move(ev));
  }

  void append_plan_token(TokenId tok) {
    buffer.push_back(tok);
    mb.append_plan();
    event(EventKind::PLAN_TOKEN, {int(buffer.size()) - 1});
    stage_pending(tok);
  }

  struct Snap {
    size_t buffer_len;
    int cache_len;
    int forwards;
    size_t events;
    int plan_events;
    std::vector<TokenId> pending;
    int pending_base;
  };

  Snap snap() const {
    return {buffer.size(), cache.len,           forwards,
            trace.events.size(), trace.plan_token_events, pending,
            pending_base};
  }

  void restore(const Snap& s) {
    buffer.resize(s.buffer_len);
    mb.truncate(int(s.buffer_len));
    cache.len = s.cache_len;
    cache.row_hash.resize(size_t(s.cache_len));
    cache.role_tags.resize(size_t(s.cache_len));
    forwards = s.forwards;
    trace.events.resize(s.events);
    trace.plan_token_events = s.plan_events;
    pending = s.pending;
    pending_base = s.pending_base;
  }

  GenerationResult finish(std::vector<Plan> plans) {
    GenerationResult res;
    res.raw = buffer;
    res.response_raw.assign(buffer.begin() + prompt_end, buffer.end());
    res.stripped = strip_control(res.response_raw);
    res.plans = std::move(plans);
    trace.critical_path = trace.plan_token_events + trace.denoise_step_events;
    trace.tokens_generated = int(buffer.size()) - prompt_end;
    trace.content_tokens = int(res.stripped.size());
    res.trace = trace;
    return res;
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// Planned diffusion
// ---------------------------------------------------------------------------

GenerationResult generate_planned(const ParamsT<float>& params,
                                  const std::vector<TokenId>& prompt,
                                  const GenerationConfig& cfg) {
  EngineRun run(params, cfg, prompt);
  Rng plan_rng(derive_seed(cfg.seed, 0x9a11));
  std::vector<Plan> plans;
  const int kPlanRetries = 3;
  const int kMaxPlanTokens = 64;

  TokenFilter content_filter =
      cfg.constrain_content ? TokenFilter(content_or_pad) : nullptr;
  TokenFilter free_filter = [](TokenId t) { return t != BOS && t != MASK; };

  // Plan sampling failed repeatedly; continue autoregressively. When the
  // failure happened right after a flush, its logits row seeds the loop.
  auto ar_tail = [&](std::optional<LogitsRow> row0) {
    run.trace.used_ar_fallback = true;
    while (true) {
      if (!run.fits(1)) {
        run.trace.truncated = true;
        run.trace.length_overflow = true;
        break;
      }
      LogitsRow row = row0 ? *row0 : run.flush();
      row0.reset();
      TokenId tok = sample_filtered(row, free_filter, cfg.plan_temperature,
                                    cfg.plan_top_p, plan_rng);
      run.append_plan_token(tok);
      if (tok == EOS) {
        run.event(EventKind::EOS_MARK, {int(run.buffer.size()) - 1});
        break;
      }
    }
    return run.finish(std::move(plans));
  };

  for (int stage = 0; stage < cfg.max_stages; ++stage) {
    // --- Plan sampling, with rollback-and-retry when unconstrained ---
    EngineRun::Snap stage_snap = run.snap();
    std::optional<Plan> plan;
    for (int attempt = 0; attempt <= kPlanRetries && !plan; ++attempt) {
      PlanFsm fsm(cfg.max_spans_per_stage);
      bool failed = false;
      int plan_tokens = 0;
      while (true) {
        if (!run.fits(1)) {
          run.trace.truncated = true;
          run.trace.length_overflow = true;
          return run.finish(std::move(plans));
        }
        LogitsRow row = run.flush();
        TokenFilter filter = cfg.constrain_plan ? fsm.filter() : free_filter;
        TokenId tok = sample_filtered(row, filter, cfg.plan_temperature,
                                      cfg.plan_top_p, plan_rng);
        if (tok == ASYNC_OPEN && fsm.plan_ready()) {
          plan = fsm.plan;
          break;
        }
        if (tok == ASYNC_OPEN || tok == EOS || tok == SYNC ||
            ++plan_tokens > kMaxPlanTokens || !fsm.advance(tok)) {
          failed = true;
          break;
        }
        run.append_plan_token(tok);
      }
      if (failed) {
        // Only reachable without grammar constraints.
        run.restore(stage_snap);
        if (attempt == kPlanRetries) return ar_tail(std::nullopt);
      }
    }

    // --- Scaffold ---
    std::vector<int> scaled;
    int scaffold_len = 0;
    for (const SpanDecl& d : plan->spans) {
      int m = std::max(1, int(std::llround(cfg.length_scale *
                                           double(d.predicted_len))));
      scaled.push_back(m);
      scaffold_len += m + 2;
    }
    if (!run.fits(scaffold_len + 1)) {
      run.trace.truncated = true;
      run.trace.length_overflow = true;
      return run.finish(std::move(plans));
    }
    Scaffold sc;
    sc.base_len = int(run.buffer.size());
    for (int m : scaled) {
      sc.spans.push_back({sc.base_len + int(sc.buffer.size()) + 1, m});
      sc.buffer.push_back(ASYNC_OPEN);
      sc.buffer.insert(sc.buffer.end(), size_t(m), MASK);
      sc.buffer.push_back(ASYNC_CLOSE);
    }
    run.mb.append_stage_blocks(scaled);
    run.buffer.insert(run.buffer.end(), sc.buffer.begin(), sc.buffer.end());
    // The sampled <async> onset consumed the forward that produced it.
    run.event(EventKind::PLAN_TOKEN, {sc.base_len});

    // --- Denoise all spans in parallel ---
    ForwardProbe probe = nullptr;
    if (cfg.cross_check) {
      probe = [&](const std::vector<TokenId>& suffix,
                  const MatX<float>& logits) {
        std::copy(suffix.begin(), suffix.end(),
                  run.buffer.begin() + sc.base_len);
        run.cross_check_rows(logits, sc.base_len);
      };
    }
    int fwd_base = run.forwards;
    run.last_cache_len_before = run.cache.len;
    DenoiseResult dr =
        denoise_spans(params, sc, run.mb.mask(), cfg.policy, run.cache,
                      cfg.seed, stage, content_filter, nullptr, probe);
    std::copy(sc.buffer.begin(), sc.buffer.end(),
              run.buffer.begin() + sc.base_len);
    run.forwards = fwd_base + dr.forwards;
    for (const auto& rec : dr.steps) {
      TraceEvent ev;
      ev.kind = EventKind::DENOISE_STEP;
      ev.forwards = fwd_base + rec.forwards_so_far;
      ev.positions = rec.unmasked_positions;
      ev.cache_len_before = sc.base_len;
      run.trace.denoise_step_events += 1;
      run.trace.events.push_back(std::move(ev));
    }

    // --- Stage terminator (the completion forward re-caches the scaffold) ---
    run.pending = sc.buffer;
    run.pending_base = sc.base_len;
    LogitsRow row = run.flush();
    TokenFilter term_filter =
        cfg.constrain_plan
            ? TokenFilter([](TokenId t) { return t == SYNC || t == EOS; })
            : free_filter;
    TokenId term = sample_filtered(row, term_filter, cfg.plan_temperature,
                                   cfg.plan_top_p, plan_rng);
    if (term != SYNC && term != EOS) return ar_tail(row);
    if (term == EOS) {
      plan->terminator = Terminator::EOS;
      plans.push_back(*plan);
      run.buffer.push_back(EOS);
      run.mb.append_plan();
      run.event(EventKind::PLAN_TOKEN, {int(run.buffer.size()) - 1});
      run.event(EventKind::EOS_MARK, {int(run.buffer.size()) - 1});
      return run.finish(std::move(plans));
    }
    plan->terminator = Terminator::SYNC;
    plans.push_back(*plan);
    run.buffer.push_back(SYNC);
    run.mb.append_barrier();
    run.event(EventKind::PLAN_TOKEN, {int(run.buffer.size()) - 1});
    run.event(EventKind::SYNC, {int(run.buffer.size()) - 1});
    run.stage_pending(SYNC);
    if (stage + 1 >= cfg.max_stages) {
      run.trace.truncated = true;
      return run.finish(std::move(plans));
    }
  }
  run.trace.truncated = true;
  return run.finish(std::move(plans));
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

GenerationResult generate_ar(const ParamsT<float>& params,
                             const std::vector<TokenId>& prompt,
                             const GenerationConfig& cfg) {
  EngineRun run(params, cfg, prompt);
  Rng rng(derive_seed(cfg.seed, 0xa7));
  TokenFilter filter = cfg.constrain_content
                           ? TokenFilter([](TokenId t) {
                               return is_content(t) || t == EOS;
                             })
                           : TokenFilter([](TokenId t) {
                               return t != BOS && t != MASK;
                             });
  while (true) {
    if (!run.fits(1)) {
      run.trace.truncated = true;
      run.trace.length_overflow = true;
      break;
    }
    LogitsRow row = run.flush();
    TokenId tok = sample_filtered(row, filter, cfg.policy.temperature,
                                  cfg.policy.top_p, rng);
    run.append_plan_token(tok);
    if (tok == EOS) {
      run.event(EventKind::EOS_MARK, {int(run.buffer.size()) - 1});
      break;
    }
  }
  return run.finish({});
}

GenerationResult generate_diffusion(const ParamsT<float>& params,
                                    const std::vector<TokenId>& prompt,
                                    int canvas_len,
                                    const GenerationConfig& cfg) {
  cfg.check(params.cfg);
  int max_len = cfg.effective_max_len(params.cfg);
  if (int(prompt.size()) + 1 + canvas_len > max_len)
    throw LengthOverflow("prompt + canvas exceeds max_total_len");
  if (canvas_len < 0) throw ConfigError("canvas_len must be >= 0");

  GenerationResult res;
  res.raw.push_back(BOS);
  res.raw.insert(res.raw.end(), prompt.begin(), prompt.end());
  int prompt_end = int(res.raw.size());
  if (canvas_len == 0) {
    res.trace.critical_path = 0;
    return res;
  }

  MaskBuilder mb(max_len, cfg.mask_mode);
  for (int i = 0; i < prompt_end; ++i) mb.append_plan();
  mb.append_canvas(canvas_len);

  Scaffold sc;
  sc.base_len = 0;
  sc.buffer = res.raw;
  sc.buffer.insert(sc.buffer.end(), size_t(canvas_len), MASK);
  sc.spans.push_back({prompt_end, canvas_len});

  KVCache cache;
  cache.init(params.cfg, max_len);
  TokenFilter content_filter =
      cfg.constrain_content ? TokenFilter(content_or_pad) : nullptr;
  DenoiseResult dr = denoise_spans(params, sc, mb.mask(), cfg.policy, cache,
                                   cfg.seed, 0, content_filter);
  res.raw = sc.buffer;
  res.response_raw.assign(res.raw.begin() + prompt_end, res.raw.end());
  res.stripped = strip_control(res.response_raw);
  for (const auto& rec : dr.steps) {
    TraceEvent ev;
    ev.kind = EventKind::DENOISE_STEP;
    ev.forwards = rec.forwards_so_far;
    ev.positions = rec.unmasked_positions;
    ev.cache_len_before = 0;
    res.trace.denoise_step_events += 1;
    res.trace.events.push_back(std::move(ev));
  }
  res.trace.critical_path = dr.forwards;
  res.trace.tokens_generated = canvas_len;
  res.trace.content_tokens = int(res.stripped.size());
  return res;
}

// ---------------------------------------------------------------------------
// Cache audit
// ---------------------------------------------------------------------------

AuditReport cache_audit(const GenerationResult& result) {
  AuditReport rep;
  auto violate = [&](const std::string& rule, const std::string& msg) {
    rep.ok = false;
    rep.violations.push_back({rule, msg});
  };
  int last_cache = 0;
  int last_sync_pos = -1;
  bool any_denoise = false;
  const TraceEvent* prev_plan = nullptr;
  for (const TraceEvent& ev : result.trace.events) {
    if (ev.cache_len_before < last_cache)
      violate("cache-monotone", "cache length shrank at forwards=" +
                                    std::to_string(ev.forwards));
    last_cache = std::max(last_cache, ev.cache_len_before);
    switch (ev.kind) {
      case EventKind::SYNC:
        last_sync_pos = ev.positions.empty() ? last_sync_pos : ev.positions[0];
        break;
      case EventKind::DENOISE_STEP:
        any_denoise = true;
        for (int p : ev.positions)
          if (p < ev.cache_len_before)
            violate("no-mask-cached",
                    "denoised position " + std::to_string(p) +
                        " lies inside the committed cache");
        break;
      case EventKind::PLAN_TOKEN: {
        if (last_sync_pos >= 0 && ev.cache_len_before < last_sync_pos)
          violate("stage-reuse",
                  "plan forward after sync at " +
                      std::to_string(last_sync_pos) + " saw cache length " +
                      std::to_string(ev.cache_len_before));
        if (rep.min_plan_cache_hit < 0 ||
            ev.cache_len_before < rep.min_plan_cache_hit)
          rep.min_plan_cache_hit = ev.cache_len_before;
        if (!any_denoise && prev_plan && prev_plan->cache_len_before > 0 &&
            ev.cache_len_before != prev_plan->cache_len_before + 1)
          violate("ar-growth", "AR cache did not grow by exactly 1 at forwards=" +
                                   std::to_string(ev.forwards));
        prev_plan = &ev;
        break;
      }
      case EventKind::EOS_MARK:
        break;
    }
  }
  return rep;
}

}  // namespace pd
