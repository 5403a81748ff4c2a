#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pd/diffusion.hpp"
#include "pd/model.hpp"

namespace pd {

struct GenerationConfig {
  DenoisePolicy policy;
  double length_scale = 1.0;  // multiplier on predicted span lengths
  MaskMode mask_mode = MaskMode::SPAN_ISOLATED;
  int max_total_len = 2048;
  int max_stages = 8;
  int max_spans_per_stage = 6;
  double plan_temperature = 0.2;
  double plan_top_p = 0.95;
  uint64_t seed = 0;
  bool constrain_plan = true;     // grammar-masked plan sampling
  bool constrain_content = true;  // content+PAD domain inside spans
  bool cross_check = false;       // recompute every forward without the cache

  void check(const ModelConfig& model_cfg) const;
  int effective_max_len(const ModelConfig& model_cfg) const;
};

enum class EventKind : uint8_t { PLAN_TOKEN, DENOISE_STEP, SYNC, EOS_MARK };

const char* event_kind_name(EventKind kind);

struct TraceEvent {
  EventKind kind;
  int forwards = 0;  // cumulative forward passes after this event
  std::vector<int> positions;
  int cache_len_before = 0;  // committed cache length when the forward ran
};

struct GenerationTrace {
  std::vector<TraceEvent> events;
  int critical_path = 0;     // plan-token events + denoise-step events
  int tokens_generated = 0;  // includes control and PAD tokens
  int content_tokens = 0;
  int plan_token_events = 0;
  int denoise_step_events = 0;
  bool truncated = false;
  bool used_ar_fallback = false;
  bool length_overflow = false;
  double max_cache_rel_err = 0.0;  // only populated under cross_check
};

struct GenerationResult {
  std::vector<TokenId> raw;           // BOS + prompt + response
  std::vector<TokenId> response_raw;  // tagged response region
  std::vector<TokenId> stripped;      // strip_control(response_raw)
  std::vector<Plan> plans;            // one per completed planning stage
  GenerationTrace trace;
};

// Algorithm: sample a plan autoregressively under the tag grammar, build a
// MASK scaffold from the declared lengths, denoise all spans in parallel,
// then sample the stage terminator; repeat until <eos>.
GenerationResult generate_planned(const ParamsT<float>& params,
                                  const std::vector<TokenId>& prompt,
                                  const GenerationConfig& cfg);

// Strict-causal baseline: one forward per token with KV caching.
GenerationResult generate_ar(const ParamsT<float>& params,
                             const std::vector<TokenId>& prompt,
                             const GenerationConfig& cfg);

// Single all-MASK canvas with bidirectional attention over the canvas.
GenerationResult generate_diffusion(const ParamsT<float>& params,
                                    const std::vector<TokenId>& prompt,
                                    int canvas_len, const GenerationConfig& cfg);

struct AuditViolation {
  std::string rule;
  std::string message;
};

struct AuditReport {
  bool ok = true;
  std::vector<AuditViolation> violations;
  int min_plan_cache_hit = -1;  // smallest cache length over plan forwards
};

// Replays the trace against the KV-cache invariants: cached positions are
// never MASK, cache length never shrinks, post-barrier plan forwards reuse
// cache covering all earlier stages, and AR runs grow the cache by one per
// forward.
AuditReport cache_audit(const GenerationResult& result);

}  // namespace pd
