#include "pd/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pd {

const char* denoise_mode_name(DenoiseMode mode) {
  return mode == DenoiseMode::ENTROPY_ORDERED ? "entropy" : "confidence";
}

void DenoisePolicy::check() const {
  if (!(steps_ratio > 0.0 && steps_ratio <= 1.0))
    throw ConfigError("steps_ratio must be in (0, 1]");
  if (mode == DenoiseMode::CONFIDENCE_THRESHOLD &&
      !(confidence > 0.0 && confidence < 1.0))
    throw ConfigError("confidence threshold must be in (0, 1)");
  if (temperature < 0.0) throw ConfigError("temperature must be >= 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must be in (0, 1]");
}

int schedule_steps(const Plan& plan, double steps_ratio) {
  if (plan.spans.empty()) throw ConfigError("schedule_steps: empty plan");
  if (!(steps_ratio > 0.0 && steps_ratio <= 1.0))
    throw ConfigError("steps_ratio must be in (0, 1]");
  int s = int(std::ceil(steps_ratio * double(plan.max_span_len()) - 1e-12));
  return std::max(1, s);
}

namespace {

Eigen::ArrayXf softmax_array(const LogitsRow& logits) {
  float mx = logits.maxCoeff();
  Eigen::ArrayXf p = (logits.array() - mx).exp().transpose();
  p /= p.sum();
  return p;
}

}  // namespace

double row_entropy(const LogitsRow& logits) {
  Eigen::ArrayXf p = softmax_array(logits);
  double h = 0.0;
  for (long i = 0; i < p.size(); ++i) {
    double v = double(p[i]);
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

double row_max_prob(const LogitsRow& logits) {
  return double(softmax_array(logits).maxCoeff());
}

std::vector<int> select_unmask_entropy(const std::vector<LogitsRow>& logits,
                                       const std::vector<int>& masked_positions,
                                       int budget) {
  if (masked_positions.empty())
    throw ConfigError("select_unmask_entropy: no masked positions");
  if (budget < 1) throw ConfigError("select_unmask_entropy: budget must be >= 1");
  struct Cand {
    double h;
    int pos;
  };
  std::vector<Cand> cands;
  cands.reserve(masked_positions.size());
  for (size_t i = 0; i < masked_positions.size(); ++i)
    cands.push_back({row_entropy(logits[i]), masked_positions[i]});
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.h != b.h) return a.h < b.h;
    return a.pos < b.pos;
  });
  int take = std::min<int>(budget, int(cands.size()));
  std::vector<int> out;
  out.reserve(size_t(take));
  for (int i = 0; i < take; ++i) out.push_back(cands[size_t(i)].pos);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<int> select_unmask_confidence(
    const std::vector<LogitsRow>& logits,
    const std::vector<int>& masked_positions, double tau) {
  if (masked_positions.empty())
    throw ConfigError("select_unmask_confidence: no masked positions");
  std::vector<int> out;
  double best = -1.0;
  int best_pos = masked_positions.front();
  for (size_t i = 0; i < masked_positions.size(); ++i) {
    double p = row_max_prob(logits[i]);
    if (p >= tau) out.push_back(masked_positions[i]);
    if (p > best) {
      best = p;
      best_pos = masked_positions[i];
    }
  }
  if (out.empty()) out.push_back(best_pos);  // progress guarantee
  return out;
}

TokenId sample_token(const LogitsRow& logits, double temperature, double top_p,
                     Rng& rng) {
  if (temperature < 0.0) throw ConfigError("temperature must be >= 0");
  if (temperature == 0.0) {
    Eigen::Index best;
    logits.maxCoeff(&best);
    return TokenId(best);
  }
  LogitsRow scaled = logits / float(temperature);
  Eigen::ArrayXf p = softmax_array(scaled);
  std::vector<int> order(size_t(p.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return p[a] > p[b]; });
  // Smallest prefix with cumulative mass >= top_p, then renormalize.
  double cum = 0.0;
  size_t keep = order.size();
  for (size_t i = 0; i < order.size(); ++i) {
    cum += double(p[order[i]]);
    if (cum >= top_p) {
      keep = i + 1;
      break;
    }
  }
  double mass = 0.0;
  for (size_t i = 0; i < keep; ++i) mass += double(p[order[i]]);
  double u = rng.uniform_real(0.0, 1.0) * mass;
  double acc = 0.0;
  for (size_t i = 0; i < keep; ++i) {
    acc += double(p[order[i]]);
    if (u <= acc) return TokenId(order[i]);
  }
  return TokenId(order[keep - 1]);
}

// ---------------------------------------------------------------------------
// Denoising loop
// ---------------------------------------------------------------------------

namespace {

struct SpanState {
  ScaffoldSpan extent;
  int span_index = 0;
  int steps_total = 0;  // entropy mode schedule for this span
  int steps_done = 0;
  std::vector<int> masked;  // absolute positions still masked
  Rng rng;

  SpanState(const ScaffoldSpan& e, int idx, int steps, uint64_t seed)
      : extent(e), span_index(idx), steps_total(steps), rng(seed) {
    masked.resize(size_t(e.len));
    std::iota(masked.begin(), masked.end(), e.start);
  }
  bool done() const { return masked.empty(); }
};

}  // namespace

DenoiseResult denoise_spans(const ParamsT<float>& params, Scaffold& scaffold,
                            const AttentionMask& mask,
                            const DenoisePolicy& policy, KVCacheT<float>& cache,
                            uint64_t seed, int stage_id,
                            const TokenFilter& allowed,
                            const std::vector<int>* active,
                            const ForwardProbe& probe) {
  policy.check();
  if (cache.len != scaffold.base_len)
    throw ConfigError("denoise_spans: cache must cover exactly the context");

  std::vector<SpanState> spans;
  for (size_t k = 0; k < scaffold.spans.size(); ++k) {
    if (active &&
        std::find(active->begin(), active->end(), int(k)) == active->end())
      continue;
    const ScaffoldSpan& e = scaffold.spans[k];
    if (e.len <= 0) continue;
    for (int p = e.start; p < e.start + e.len; ++p)
      if (scaffold.buffer[size_t(p - scaffold.base_len)] != MASK)
        throw ConfigError("denoise_spans: active span position not MASK");
    int steps = std::max(
        1, int(std::ceil(policy.steps_ratio * double(e.len) - 1e-12)));
    spans.emplace_back(e, int(k), steps,
                       derive_seed(seed, uint64_t(stage_id), k));
  }

  DenoiseResult result;
  float ninf = -std::numeric_limits<float>::infinity();
  int step = 0;
  while (std::any_of(spans.begin(), spans.end(),
                     [](const SpanState& s) { return !s.done(); })) {
    ++step;
    MatX<float> logits = forward<float>(params, scaffold.buffer, mask, &cache, 0);
    result.forwards += 1;
    if (probe) probe(scaffold.buffer, logits);

    DenoiseStepRecord rec;
    rec.step = step;
    rec.forwards_so_far = result.forwards;

    for (SpanState& sp : spans) {
      if (sp.done()) continue;
      sp.steps_done += 1;
      std::vector<LogitsRow> rows;
      rows.reserve(sp.masked.size());
      for (int p : sp.masked) {
        LogitsRow row = logits.row(p - scaffold.base_len);
        if (allowed) {
          for (long j = 0; j < row.cols(); ++j)
            if (!allowed(TokenId(j))) row[j] = ninf;
        }
        rows.push_back(std::move(row));
      }
      std::vector<int> chosen;
      if (policy.mode == DenoiseMode::ENTROPY_ORDERED) {
        int remaining_steps = std::max(1, sp.steps_total - sp.steps_done + 1);
        int budget =
            (int(sp.masked.size()) + remaining_steps - 1) / remaining_steps;
        chosen = select_unmask_entropy(rows, sp.masked, budget);
      } else {
        chosen = select_unmask_confidence(rows, sp.masked, policy.confidence);
      }
      for (int p : chosen) {
        size_t ri =
            size_t(std::find(sp.masked.begin(), sp.masked.end(), p) -
                   sp.masked.begin());
        TokenId tok = sample_token(rows[ri], policy.temperature, policy.top_p,
                                   sp.rng);
        scaffold.buffer[size_t(p - scaffold.base_len)] = tok;
        rec.unmasked_positions.push_back(p);
        rec.span_ids.push_back(sp.span_index);
      }
      std::vector<int> left;
      left.reserve(sp.masked.size());
      for (int p : sp.masked)
        if (std::find(chosen.begin(), chosen.end(), p) == chosen.end())
          left.push_back(p);
      sp.masked = std::move(left);
    }
    result.steps.push_back(std::move(rec));
  }
  return result;
}

}  // namespace pd
