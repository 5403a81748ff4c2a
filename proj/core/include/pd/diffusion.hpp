#pragma once

#include <functional>
#include <vector>

#include "pd/model.hpp"
#include "pd/tags.hpp"

namespace pd {

enum class DenoiseMode : uint8_t { ENTROPY_ORDERED, CONFIDENCE_THRESHOLD };

const char* denoise_mode_name(DenoiseMode mode);

struct DenoisePolicy {
  DenoiseMode mode = DenoiseMode::ENTROPY_ORDERED;
  double steps_ratio = 1.0;  // r in (0, 1]
  double confidence = 0.9;   // tau in (0, 1), threshold mode only
  double temperature = 0.2;
  double top_p = 0.95;

  void check() const;  // throws ConfigError
};

// s = ceil(r * max_k l_k), at least 1.
int schedule_steps(const Plan& plan, double steps_ratio);

using LogitsRow = Eigen::Matrix<float, 1, Eigen::Dynamic, Eigen::RowMajor>;

double row_entropy(const LogitsRow& logits);
double row_max_prob(const LogitsRow& logits);

// k masked positions with the lowest predictive entropy; ties break toward
// the lowest index. `logits` holds one row per masked position, aligned.
std::vector<int> select_unmask_entropy(const std::vector<LogitsRow>& logits,
                                       const std::vector<int>& masked_positions,
                                       int budget);

// All positions whose top-token probability clears tau; if none do, the
// single most confident position (progress fallback).
std::vector<int> select_unmask_confidence(
    const std::vector<LogitsRow>& logits,
    const std::vector<int>& masked_positions, double tau);

// Temperature 0 is argmax; otherwise nucleus sampling over the smallest
// probability prefix reaching top_p, renormalized.
TokenId sample_token(const LogitsRow& logits, double temperature, double top_p,
                     Rng& rng);

// Optional sampling-domain restriction (disallowed ids get -inf before any
// entropy/confidence/sampling computation).
using TokenFilter = std::function<bool(TokenId)>;

// Instrumentation hook invoked after each denoising forward with the scaffold
// tokens that produced it and the resulting logits.
using ForwardProbe =
    std::function<void(const std::vector<TokenId>&, const MatX<float>&)>;

struct ScaffoldSpan {
  int start = 0;  // absolute position of the first masked interior token
  int len = 0;    // masked interior length
};

struct Scaffold {
  int base_len = 0;                // context positions before the scaffold
  std::vector<TokenId> buffer;     // scaffold region (tags + MASK interiors)
  std::vector<ScaffoldSpan> spans;

  int end() const { return base_len + int(buffer.size()); }
};

struct DenoiseStepRecord {
  int step = 0;                 // 1-based global step
  int forwards_so_far = 0;      // forwards consumed by this denoising run
  std::vector<int> unmasked_positions;
  std::vector<int> span_ids;    // span index per unmasked position
};

struct DenoiseResult {
  int forwards = 0;
  std::vector<DenoiseStepRecord> steps;
};

// Runs the per-span denoising processes in lockstep: one forward over the
// whole scaffold per global step. Span k draws its token randomness from a
// stream derived from (seed, stage_id, k), and its selection depends only on
// its own logits, so joint and one-span-at-a-time runs produce identical
// tokens under SPAN_ISOLATED masks. `active` (when given) limits denoising
// to a subset of spans; the final step force-unmasks any remainder.
DenoiseResult denoise_spans(const ParamsT<float>& params, Scaffold& scaffold,
                            const AttentionMask& mask,
                            const DenoisePolicy& policy, KVCacheT<float>& cache,
                            uint64_t seed, int stage_id,
                            const TokenFilter& allowed = nullptr,
                            const std::vector<int>* active = nullptr,
                            const ForwardProbe& probe = nullptr);

}  // namespace pd
