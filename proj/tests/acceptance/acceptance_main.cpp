// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Later criteria share one trained pipeline (corpus, planned and
// baseline checkpoints, bench reports) built on first use.

#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pd/commands.hpp"
#include "test_support.hpp"

using namespace pd;
using namespace pdtest;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int prec = 4) { return format_double(v, prec); }

// ---------------------------------------------------------------------------
// Shared trained pipeline
// ---------------------------------------------------------------------------

struct Pipeline {
  std::string work;
  RunConfig cfg;
  GenCorpusResult corpus;
  TrainResult pd_train;
  TrainResult base_train;
  Checkpoint pd_ck;
  Checkpoint base_ck;
  std::vector<AnnotatedDocument> eval_docs;

  explicit Pipeline(const std::string& work_dir) : work(work_dir) {
    cfg.corpus.n_train = 2000;
    cfg.corpus.n_eval = 200;
    cfg.train.epochs = 6;
    cfg.train.batch_size = 16;
    cfg.train.peak_lr = 1.2e-3;
    cfg.train.warmup_steps = 100;
    cfg.bench.prompts = 50;

    std::cerr << "[pipeline] generating corpus...\n";
    corpus = run_gen_corpus(cfg, work + "/corpus");
    std::cerr << "[pipeline] training planned-diffusion checkpoint...\n";
    pd_train = run_train(cfg, work + "/corpus", work + "/pd");
    std::cerr << "[pipeline] pd eval loss " << pd_train.final_eval_loss
              << "\n";
    RunConfig base_cfg = cfg;
    base_cfg.train.objective = TrainObjective::STRIPPED_MIXED;
    base_cfg.train.seed = cfg.train.seed + 1;
    std::cerr << "[pipeline] training stripped baseline checkpoint...\n";
    base_train = run_train(base_cfg, work + "/corpus", work + "/baseline");
    std::cerr << "[pipeline] baseline eval loss "
              << base_train.final_eval_loss << "\n";
    pd_ck = load_checkpoint(pd_train.checkpoint_path);
    base_ck = load_checkpoint(base_train.checkpoint_path);
    auto [docs, rejects] = load_jsonl(corpus.eval_path, pd_ck.vocab);
    eval_docs = std::move(docs);
  }
};

std::optional<Pipeline>& pipeline_slot() {
  static std::optional<Pipeline> p;
  return p;
}

Pipeline& pipeline(const std::string& work_dir) {
  auto& slot = pipeline_slot();
  if (!slot) slot.emplace(work_dir);
  return *slot;
}

// ---------------------------------------------------------------------------
// Criteria 1..7: property checks on small models
// ---------------------------------------------------------------------------

Outcome criterion1_mask_rules() {
  Vocabulary v = tiny_vocab();
  Rng rng(101);
  long checked = 0;
  for (int iter = 0; iter < 500; ++iter) {
    auto toks = random_document(rng, v, 64);
    RoleSequence rs = assign_roles(toks);
    for (MaskMode mode : {MaskMode::SPAN_ISOLATED, MaskMode::DENSE}) {
      AttentionMask m = AttentionMask::build(rs, mode);
      for (int i = 0; i < rs.size(); ++i)
        for (int j = 0; j < rs.size(); ++j) {
          if (m.allowed(i, j) != ref_allowed(rs, i, j, mode))
            return {false, "mismatch at doc " + std::to_string(iter) + " (" +
                               std::to_string(i) + "," + std::to_string(j) +
                               ") mode " + mask_mode_name(mode)};
          ++checked;
        }
    }
  }
  // The cited rows of the 26-token worked layout.
  RoleSequence rs = assign_roles(example26(v));
  AttentionMask m = AttentionMask::build(rs, MaskMode::SPAN_ISOLATED);
  for (int j = 0; j < 26; ++j) {
    bool expect14 = (j <= 8) || (j >= 13 && j <= 16);
    if (m.allowed(14, j) != expect14)
      return {false, "row 14 wrong at column " + std::to_string(j)};
    if (m.allowed(17, j) != (j <= 17))
      return {false, "row 17 wrong at column " + std::to_string(j)};
  }
  return {true, std::to_string(checked) + " entries over 500 docs, 2 modes"};
}

Outcome criterion2_masking_soundness() {
  Vocabulary v = tiny_vocab();
  Rng init(5);
  ParamsT<float> params = init_params(tiny_model_config(v.size()), init);
  Rng rng(202);
  int trials = 0;
  while (trials < 1000) {
    auto toks = random_document(rng, v, 48);
    RoleSequence rs = assign_roles(toks);
    MaskMode mode =
        rng.uniform_int(0, 1) ? MaskMode::DENSE : MaskMode::SPAN_ISOLATED;
    AttentionMask mask = AttentionMask::build(rs, mode);
    int n = int(toks.size());
    int i = rng.uniform_int(0, n - 1);
    std::vector<int> hidden;
    for (int j = 0; j < n; ++j)
      if (!mask.allowed(i, j)) hidden.push_back(j);
    if (hidden.empty()) continue;
    ++trials;
    int j = hidden[size_t(rng.uniform_int(0, int(hidden.size()) - 1))];
    MatX<float> base = forward<float>(params, toks, mask);
    auto mutated = toks;
    mutated[size_t(j)] = kContentBase + TokenId(rng.uniform_int(0, 25));
    if (mutated[size_t(j)] == toks[size_t(j)]) mutated[size_t(j)] += 1;
    MatX<float> out = forward<float>(params, mutated, mask);
    for (long col = 0; col < base.cols(); ++col)
      if (base(i, col) != out(i, col))
        return {false, "logit moved by " +
                           fmt(double(out(i, col)) - double(base(i, col))) +
                           " at trial " + std::to_string(trials)};
  }
  return {true, "1000 randomized perturbation trials, all exactly zero"};
}

Outcome criterion3_gradients() {
  Vocabulary v = tiny_vocab();
  ModelConfig cfg;
  cfg.vocab_size = v.size();
  cfg.d_model = 64;
  cfg.n_layers = 3;
  cfg.n_heads = 4;
  cfg.d_ff = 128;
  cfg.max_seq_len = 256;
  Rng init(303);
  ParamsT<float> params = init_params(cfg, init);
  TrainingExample ex =
      tiny_training_example(v, 0.45, MaskMode::SPAN_ISOLATED, 909);
  Rng rng(304);
  double err = finite_difference_check(params, ex, 50, rng);
  if (!(err < 1e-3)) return {false, "max rel err " + fmt(err, 6)};
  return {true, "max rel err " + fmt(err, 6) + " over 50 probes"};
}

Outcome criterion4_forward_stats() {
  std::vector<TokenId> big(10000, kContentBase + 2);
  Rng rng(404);
  auto out = corrupt(big, 0.3, rng);
  int masks = 0;
  for (TokenId t : out) masks += t == MASK;
  double frac = double(masks) / 10000.0;
  if (frac < 0.2863 || frac > 0.3137)
    return {false, "masked fraction " + fmt(frac)};
  Rng rng2(405);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<TokenId> in;
    for (int i = 0; i < 25; ++i)
      in.push_back(kContentBase + TokenId(rng2.uniform_int(0, 30)));
    auto o = corrupt(in, rng2.uniform_real(0.05, 0.95), rng2);
    for (size_t i = 0; i < in.size(); ++i)
      if (o[i] != in[i] && o[i] != MASK)
        return {false,
                "substitution observed at trial " + std::to_string(trial)};
  }
  return {true, "fraction " + fmt(frac) +
                    " in [0.2863, 0.3137]; no substitutions in 1000 trials"};
}

Outcome criterion5_factorized_denoising() {
  Vocabulary v = tiny_vocab();
  Rng init(505);
  ParamsT<float> params = init_params(tiny_model_config(v.size()), init);
  DenoisePolicy policy;
  policy.steps_ratio = 1.0;
  policy.temperature = 0.5;
  Rng layout(506);
  for (int iter = 0; iter < 100; ++iter) {
    int b = layout.uniform_int(2, 4);
    std::vector<int> lens;
    for (int k = 0; k < b; ++k) lens.push_back(layout.uniform_int(1, 8));
    uint64_t seed = derive_seed(507, uint64_t(iter));

    auto build = [&](MaskBuilder& mb, KVCache& cache, Scaffold& sc) {
      std::vector<TokenId> ctx = {BOS, TOPIC_OPEN, kContentBase,
                                  length_token(lens[0]), TOPIC_CLOSE};
      for (size_t i = 0; i < ctx.size(); ++i) mb.append_plan();
      cache.init(params.cfg, 128);
      forward<float>(params, ctx, mb.mask(), &cache, int(ctx.size()));
      sc.base_len = int(ctx.size());
      for (int l : lens) {
        sc.spans.push_back({sc.base_len + int(sc.buffer.size()) + 1, l});
        sc.buffer.push_back(ASYNC_OPEN);
        sc.buffer.insert(sc.buffer.end(), size_t(l), MASK);
        sc.buffer.push_back(ASYNC_CLOSE);
      }
      mb.append_stage_blocks(lens);
    };

    MaskBuilder mb1(128, MaskMode::SPAN_ISOLATED);
    KVCache c1;
    Scaffold s1;
    build(mb1, c1, s1);
    denoise_spans(params, s1, mb1.mask(), policy, c1, seed, 0);

    MaskBuilder mb2(128, MaskMode::SPAN_ISOLATED);
    KVCache c2;
    Scaffold s2;
    build(mb2, c2, s2);
    for (int k = 0; k < b; ++k) {
      std::vector<int> only = {k};
      denoise_spans(params, s2, mb2.mask(), policy, c2, seed, 0, nullptr,
                    &only);
    }
    if (s1.buffer != s2.buffer)
      return {false,
              "joint != sequential at scaffold " + std::to_string(iter)};
  }
  return {true, "identical tokens on 100 random scaffolds"};
}

Outcome criterion6_cache_equivalence(const std::string& work) {
  Pipeline& p = pipeline(work);
  double worst = 0.0;
  int used = 0;
  for (size_t i = 0; i < p.eval_docs.size() && used < 50; ++i, ++used) {
    GenerationConfig gen = make_generation_config(
        p.cfg.generate, Method::PD, 1.0, 0.0, 1.0, derive_seed(606, i));
    gen.policy.temperature = 0.0;
    gen.plan_temperature = 0.0;
    gen.cross_check = true;
    GenerationResult r =
        generate_planned(p.pd_ck.params, p.eval_docs[i].prompt, gen);
    worst = std::max(worst, r.trace.max_cache_rel_err);
  }
  if (!(worst <= 1e-4))
    return {false, "max rel err " + fmt(worst, 6) + " over 50 prompts"};
  return {true, "max rel err " + fmt(worst, 6) + " over 50 prompts"};
}

Outcome criterion7_step_scheduling(const std::string& work) {
  Pipeline& p = pipeline(work);
  std::vector<double> ratios = {0.25, 0.5, 0.75, 1.0};
  int checked_stages = 0;
  for (size_t i = 0; i < 12 && i < p.eval_docs.size(); ++i) {
    int prev_forwards = -1;
    for (double r : ratios) {
      GenerationConfig gen = make_generation_config(
          p.cfg.generate, Method::PD, r, 0.0, 1.0, derive_seed(707, i));
      GenerationResult res =
          generate_planned(p.pd_ck.params, p.eval_docs[i].prompt, gen);
      int expect = 0;
      for (const Plan& plan : res.plans) {
        Plan scaled = plan;
        for (auto& d : scaled.spans)
          d.predicted_len = std::max(
              1, int(std::llround(gen.length_scale * d.predicted_len)));
        expect += schedule_steps(scaled, r);
        ++checked_stages;
      }
      if (res.trace.denoise_step_events != expect)
        return {false, "denoise steps " +
                           std::to_string(res.trace.denoise_step_events) +
                           " != ceil-schedule " + std::to_string(expect) +
                           " at r=" + fmt(r, 2)};
      if (res.trace.critical_path !=
          res.trace.plan_token_events + res.trace.denoise_step_events)
        return {false, "critical path identity violated"};
      if (res.trace.used_ar_fallback)
        return {false, "unexpected plan fallback on the trained model"};
      int fw = res.trace.events.empty() ? 0 : res.trace.events.back().forwards;
      if (fw != res.trace.critical_path)
        return {false, "trace forward count mismatch"};
      if (prev_forwards >= 0 && fw < prev_forwards)
        return {false, "forwards not monotone in r at prompt " +
                           std::to_string(i)};
      prev_forwards = fw;
    }
  }
  return {true, "s = ceil(r*max_k l_k) over " + std::to_string(checked_stages) +
                    " stages; forwards monotone in r"};
}

// ---------------------------------------------------------------------------
// Criteria 8..11: trained end-to-end behaviour
// ---------------------------------------------------------------------------

Outcome criterion8_end_to_end(const std::string& work) {
  Pipeline& p = pipeline(work);
  int n = std::min<int>(100, int(p.eval_docs.size()));
  int well_formed = 0, exact = 0;
  for (int i = 0; i < n; ++i) {
    const AnnotatedDocument& doc = p.eval_docs[size_t(i)];
    GenerationConfig gen = make_generation_config(
        p.cfg.generate, Method::PD, 1.0, 0.0, 1.0,
        derive_seed(808, uint64_t(i)));
    GenerationResult r = generate_planned(p.pd_ck.params, doc.prompt, gen);
    if (validate_tokens(r.raw).ok) ++well_formed;
    if (r.stripped == stripped_response(doc)) ++exact;
  }
  double wf = double(well_formed) / n, em = double(exact) / n;
  std::string detail = "well-formed " + fmt(wf) + ", exact-match " + fmt(em) +
                       " over " + std::to_string(n) + " held-out prompts";
  if (wf < 0.99 || em < 0.90) return {false, detail};
  return {true, detail};
}

BenchReport& shared_bench(const std::string& work) {
  static std::optional<BenchReport> report;
  if (!report) {
    Pipeline& p = pipeline(work);
    RunConfig bench_cfg = p.cfg;
    bench_cfg.bench.methods = {Method::AR, Method::DIFFUSION, Method::PD,
                               Method::PD_DA, Method::PD_TAU};
    bench_cfg.bench.steps_ratios = {0.25, 0.5, 0.75, 1.0};
    bench_cfg.bench.confidences = {0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    bench_cfg.bench.length_scales = {0.5, 1.0, 1.5, 2.0, 2.5};
    bench_cfg.bench.prompts = 50;
    std::cerr << "[pipeline] running the bench grid...\n";
    report = run_bench(bench_cfg, p.pd_train.checkpoint_path,
                       p.base_train.checkpoint_path, p.corpus.eval_path,
                       p.work + "/bench");
  }
  return *report;
}

Outcome criterion9_critical_path(const std::string& work) {
  BenchReport& rep = shared_bench(work);
  const BenchCell* ar = rep.find(Method::AR, 1.0, 0.0, 1.0);
  const BenchCell* pd = rep.find(Method::PD, 1.0, 0.0, 1.0);
  if (!ar || !pd) return {false, "missing bench cells"};
  double ratio = pd->mean_critical_path / ar->mean_critical_path;
  std::string detail = "PD " + fmt(pd->mean_critical_path) + " vs AR " +
                       fmt(ar->mean_critical_path) + " forwards (ratio " +
                       fmt(ratio) + ", need <= 0.67; AR exact-match " +
                       fmt(ar->exact_match) + ")";
  if (!(ratio <= 0.67)) return {false, detail};
  return {true, detail};
}

Outcome criterion10_length_scale(const std::string& work) {
  BenchReport& rep = shared_bench(work);
  std::vector<double> scales = {1.0, 1.5, 2.0, 2.5};
  double prev = -1.0;
  std::ostringstream cps;
  for (double ls : scales) {
    const BenchCell* c = rep.find(Method::PD, 1.0, 0.0, ls);
    if (!c) return {false, "missing cell ls=" + fmt(ls, 2)};
    cps << (prev < 0 ? "" : " -> ") << fmt(c->mean_critical_path);
    if (c->mean_critical_path + 1e-9 < prev)
      return {false, "critical path decreased at ls=" + fmt(ls, 2) + " (" +
                         cps.str() + ")"};
    prev = c->mean_critical_path;
  }
  const BenchCell* half = rep.find(Method::PD, 1.0, 0.0, 0.5);
  const BenchCell* one = rep.find(Method::PD, 1.0, 0.0, 1.0);
  const BenchCell* two5 = rep.find(Method::PD, 1.0, 0.0, 2.5);
  if (!half || !one || !two5) return {false, "missing score cells"};
  std::string detail = "critical path " + cps.str() +
                       "; exact-match 0.5/1.0/2.5 = " + fmt(half->exact_match) +
                       "/" + fmt(one->exact_match) + "/" +
                       fmt(two5->exact_match);
  if (one->exact_match + 1e-12 < half->exact_match ||
      one->exact_match + 1e-12 < two5->exact_match)
    return {false, detail};
  return {true, detail};
}

Outcome criterion11_threshold_sweep(const std::string& work) {
  BenchReport& rep = shared_bench(work);
  std::vector<double> taus = {0.9, 0.8, 0.7, 0.6, 0.5, 0.4};
  double prev_forwards = -1.0;
  std::ostringstream line;
  for (double tau : taus) {
    const BenchCell* c = rep.find(Method::PD_TAU, 1.0, tau, 1.0);
    if (!c) return {false, "missing cell tau=" + fmt(tau, 2)};
    line << "tau=" << fmt(tau, 2) << ":" << fmt(c->mean_critical_path) << "/"
         << fmt(c->exact_match) << " ";
    if (prev_forwards >= 0 && c->mean_critical_path > prev_forwards + 1e-9)
      return {false,
              "mean forwards increased as tau decreased (" + line.str() + ")"};
    prev_forwards = c->mean_critical_path;
  }
  return {true, "forwards nonincreasing as tau decreases: " + line.str()};
}

}  // namespace

int main(int argc, char** argv) {
  std::string work = "acceptance_work";
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--work") == 0 && i + 1 < argc) work = argv[++i];
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc)
      only = std::atoi(argv[++i]);
  }
  make_dirs(work);

  struct Entry {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  std::vector<Entry> entries = {
      {1, "mask-rule exhaustiveness", [&] { return criterion1_mask_rules(); }},
      {2, "masking soundness", [&] { return criterion2_masking_soundness(); }},
      {3, "gradient correctness", [&] { return criterion3_gradients(); }},
      {4, "forward-process statistics",
       [&] { return criterion4_forward_stats(); }},
      {5, "factorized span denoising",
       [&] { return criterion5_factorized_denoising(); }},
      {6, "kv-cache equivalence",
       [&] { return criterion6_cache_equivalence(work); }},
      {7, "step scheduling", [&] { return criterion7_step_scheduling(work); }},
      {8, "end-to-end learning", [&] { return criterion8_end_to_end(work); }},
      {9, "critical-path reduction",
       [&] { return criterion9_critical_path(work); }},
      {10, "length-scale sweep", [&] { return criterion10_length_scale(work); }},
      {11, "confidence-threshold sweep",
       [&] { return criterion11_threshold_sweep(work); }},
  };

  int failures = 0;
  for (auto& e : entries) {
    if (only != 0 && e.id != only) continue;
    Outcome oc;
    try {
      oc = e.run();
    } catch (const std::exception& ex) {
      oc = {false, std::string("exception: ") + ex.what()};
    }
    if (!oc.pass) ++failures;
    std::cout << "CRITERION " << e.id << " " << (oc.pass ? "PASS" : "FAIL")
              << " - " << e.name << " (" << oc.detail << ")" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
