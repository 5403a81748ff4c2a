#include "pd/commands.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace pd {

using nlohmann::json;

namespace {

std::string join_path(const std::string& dir, const std::string& name) {
  if (dir.empty()) return name;
  return dir.back() == '/' ? dir + name : dir + "/" + name;
}

WorldConfig world_config_from(const CorpusSection& c) {
  WorldConfig w;
  w.world_seed = c.world_seed;
  w.items_per_band = c.items_per_band;
  w.attr_pool = c.attr_pool;
  w.categories = c.categories;
  w.span_len_min = c.span_len_min;
  w.span_len_max = c.span_len_max;
  return w;
}

std::vector<TaskSpec> task_specs_from(const CorpusSection& c) {
  std::vector<TaskSpec> specs;
  for (const auto& tname : c.templates) {
    for (int b = c.num_spans_min; b <= c.num_spans_max; ++b) {
      TaskSpec s;
      s.template_id = template_from_name(tname);
      s.num_spans = b;
      s.span_len_min = c.span_len_min;
      s.span_len_max = c.span_len_max;
      s.sync_probability = c.sync_probability;
      s.check();
      specs.push_back(s);
    }
  }
  if (specs.empty()) throw ConfigError("no corpus templates configured");
  return specs;
}

}  // namespace

// ---------------------------------------------------------------------------
// gen-corpus
// ---------------------------------------------------------------------------

GenCorpusResult run_gen_corpus(const RunConfig& cfg, const std::string& out_dir) {
  const CorpusSection& c = cfg.corpus;
  SyntheticWorld world(world_config_from(c));
  std::vector<TaskSpec> specs = task_specs_from(c);

  make_dirs(out_dir);
  Rng rng(derive_seed(c.seed, 0xc0));
  int needed = c.n_train + c.n_eval;
  std::vector<AnnotatedDocument> docs;
  std::set<std::string> seen_prompts;
  int attempts = 0, max_attempts = needed * 50 + 1000;
  size_t spec_i = 0;
  while (int(docs.size()) < needed && attempts < max_attempts) {
    ++attempts;
    AnnotatedDocument doc =
        world.generate_document(specs[spec_i % specs.size()], rng);
    ++spec_i;
    std::string prompt = world.vocab().decode(doc.prompt);
    if (!seen_prompts.insert(prompt).second) continue;
    ValidationReport rep = validate(doc);
    if (!rep.ok) throw ConfigError("generator produced invalid document");
    docs.push_back(std::move(doc));
  }
  if (int(docs.size()) < needed)
    throw ConfigError("could not generate enough unique prompts; shrink n or "
                      "grow the item pool");

  std::vector<AnnotatedDocument> train_docs(docs.begin(),
                                            docs.begin() + c.n_train);
  std::vector<AnnotatedDocument> eval_docs(docs.begin() + c.n_train,
                                           docs.end());

  GenCorpusResult res;
  res.n_train = c.n_train;
  res.n_eval = c.n_eval;
  res.train_path = join_path(out_dir, "train.jsonl");
  res.eval_path = join_path(out_dir, "eval.jsonl");
  res.vocab_path = join_path(out_dir, "vocab.txt");
  res.manifest_path = join_path(out_dir, "manifest.txt");
  save_jsonl(train_docs, world.vocab(), res.train_path);
  save_jsonl(eval_docs, world.vocab(), res.eval_path);
  world.vocab().save(res.vocab_path);

  int span_hist[8] = {0};
  for (const auto& d : train_docs) {
    int b = int(d.stages.front().plan.spans.size());
    span_hist[std::min(b, 7)] += 1;
  }
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("seed", std::to_string(c.seed));
  kv.emplace_back("world_seed", std::to_string(c.world_seed));
  kv.emplace_back("n_train", std::to_string(c.n_train));
  kv.emplace_back("n_eval", std::to_string(c.n_eval));
  kv.emplace_back("vocab_size", std::to_string(world.vocab().size()));
  kv.emplace_back("vocab_sha1", git_blob_sha1_file(res.vocab_path));
  for (int b = 1; b <= 6; ++b)
    kv.emplace_back("stage1_spans_" + std::to_string(b),
                    std::to_string(span_hist[b]));
  std::istringstream echo(cfg.echo());
  std::string line;
  while (std::getline(echo, line)) kv.emplace_back("config." + line, "");
  // Manifest stays plain key=value; config lines carry their own '='.
  std::string out;
  for (const auto& [k, v] : kv) {
    if (k.rfind("config.", 0) == 0) {
      out += k.substr(7);
      if (!v.empty()) out += " = " + v;
      out.push_back('\n');
    } else {
      out += k + " = " + v + "\n";
    }
  }
  write_file(res.manifest_path, out);
  return res;
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

ValidateResult run_validate(const std::string& jsonl_path,
                            const std::string& vocab_path) {
  Vocabulary vocab = Vocabulary::load(vocab_path);
  auto [docs, rejects] = load_jsonl(jsonl_path, vocab);
  ValidateResult res;
  res.ok_count = int(docs.size());
  res.rejects = std::move(rejects);
  return res;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

namespace {

TrainingExample build_example(const AnnotatedDocument& doc,
                              const TrainSection& t, int64_t visit,
                              uint64_t seed) {
  Rng rng(derive_seed(seed, uint64_t(visit), 0x7e));
  double tval = rng.uniform_real(t.t_min, 1.0);
  switch (t.objective) {
    case TrainObjective::PD: {
      AblationFlags flags{t.strip_topics, t.strip_syncs};
      return make_training_example(doc, tval, t.mask_mode, flags, rng);
    }
    case TrainObjective::STRIPPED_AR:
      return make_ar_stripped_example(doc);
    case TrainObjective::STRIPPED_DIFFUSION:
      return make_diffusion_stripped_example(doc, tval, rng);
    case TrainObjective::STRIPPED_MIXED:
      if (visit % 2 == 0) return make_ar_stripped_example(doc);
      return make_diffusion_stripped_example(doc, tval, rng);
  }
  throw ConfigError("unhandled objective");
}

}  // namespace

TrainResult run_train(const RunConfig& cfg, const std::string& corpus_dir,
                      const std::string& out_dir,
                      const std::string& resume_path) {
  const TrainSection& t = cfg.train;
  Vocabulary vocab = Vocabulary::load(join_path(corpus_dir, "vocab.txt"));
  auto [docs, rejects] = load_jsonl(join_path(corpus_dir, "train.jsonl"), vocab);
  if (docs.empty()) throw IoError("no training documents in " + corpus_dir);
  auto [eval_docs, eval_rejects] =
      load_jsonl(join_path(corpus_dir, "eval.jsonl"), vocab);
  (void)eval_rejects;
  make_dirs(out_dir);

  ModelConfig mcfg = cfg.model;
  mcfg.vocab_size = vocab.size();
  mcfg.check();

  ParamsT<float> params;
  OptimizerState opt;
  int64_t start_step = 0;
  Rng init_rng(derive_seed(t.seed, 0x1417));
  if (!resume_path.empty()) {
    Checkpoint ck = load_checkpoint(resume_path);
    params = std::move(ck.params);
    if (ck.has_opt) {
      opt = std::move(ck.opt);
    } else {
      opt = OptimizerState::init(params);
      opt.step = ck.step;
    }
    start_step = opt.step;
  } else {
    params = init_params(mcfg, init_rng);
    opt = OptimizerState::init(params);
  }

  int steps_per_epoch =
      (int(docs.size()) + t.batch_size - 1) / t.batch_size;
  LrSchedule sched;
  sched.peak = t.peak_lr;
  sched.warmup_steps = t.warmup_steps;
  sched.total_steps = int(start_step) + t.epochs * steps_per_epoch;
  sched.weight_decay = t.weight_decay;

  TrainResult res;
  res.loss_log_path = join_path(out_dir, "loss_log.csv");
  std::ostringstream log;
  if (resume_path.empty())
    log << "step,epoch,loss,lr,t_mean\n";
  else if (file_exists(res.loss_log_path))
    log << read_file(res.loss_log_path);

  Rng order_rng(derive_seed(t.seed, 0x0d));
  std::vector<int> order(docs.size());
  for (size_t i = 0; i < order.size(); ++i) order[size_t(i)] = int(i);

  int64_t visit_counter = start_step * t.batch_size;
  for (int epoch = 1; epoch <= t.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), order_rng.gen());
    for (int b = 0; b < steps_per_epoch; ++b) {
      std::vector<TrainingExample> batch;
      double t_sum = 0.0;
      for (int j = b * t.batch_size;
           j < std::min<int>((b + 1) * t.batch_size, int(order.size())); ++j) {
        batch.push_back(build_example(docs[size_t(order[size_t(j)])], t,
                                      visit_counter++, t.seed));
        t_sum += batch.back().t;
      }
      std::vector<const TrainingExample*> ptrs;
      for (const auto& ex : batch) ptrs.push_back(&ex);
      double loss_val = grad_step(params, opt, ptrs, sched);
      res.step_losses.push_back(loss_val);
      if (t.log_every > 0 && (opt.step % t.log_every == 0 || b == 0)) {
        log << opt.step << "," << epoch << "," << format_double(loss_val, 8)
            << "," << format_double(sched.lr_at(opt.step), 8) << ","
            << format_double(t_sum / double(batch.size()), 6) << "\n";
      }
    }
    if (std::find(t.checkpoint_epochs.begin(), t.checkpoint_epochs.end(),
                  epoch) != t.checkpoint_epochs.end()) {
      std::string p =
          join_path(out_dir, "checkpoint_ep" + std::to_string(epoch) + ".pdc");
      save_checkpoint(p, params, vocab, t.seed, opt.step);
      res.epoch_checkpoints.push_back(p);
    }
  }

  // Held-out loss, averaged over a fixed noise draw per document.
  double eval_loss = 0.0;
  int eval_n = std::min<int>(64, int(eval_docs.size()));
  for (int i = 0; i < eval_n; ++i) {
    TrainingExample ex = build_example(eval_docs[size_t(i)], t, i, t.seed + 1);
    eval_loss += loss<float>(params, ex).total;
  }
  res.final_eval_loss = eval_n ? eval_loss / eval_n : 0.0;

  res.checkpoint_path = join_path(out_dir, "checkpoint.pdc");
  save_checkpoint(res.checkpoint_path, params, vocab, t.seed, opt.step, &opt);
  res.steps = opt.step;

  log << "# final_eval_loss = " << format_double(res.final_eval_loss, 8)
      << "\n";
  write_file(res.loss_log_path, log.str());
  write_file(join_path(out_dir, "train_config.txt"),
             cfg.echo() + "corpus_dir = " + corpus_dir + "\n");
  return res;
}

// ---------------------------------------------------------------------------
// generate
// ---------------------------------------------------------------------------

GenerationResult run_method(Method method, const ParamsT<float>& params,
                            const std::vector<TokenId>& prompt,
                            const GenerationConfig& gen_cfg, int canvas_len) {
  switch (method) {
    case Method::AR:
      return generate_ar(params, prompt, gen_cfg);
    case Method::DIFFUSION:
      return generate_diffusion(params, prompt, canvas_len, gen_cfg);
    case Method::PD:
    case Method::PD_DA:
    case Method::PD_TAU:
      return generate_planned(params, prompt, gen_cfg);
  }
  throw ConfigError("unhandled method");
}

namespace {

std::vector<std::string> load_prompts(const std::string& path) {
  std::vector<std::string> prompts;
  bool jsonl = path.size() > 6 && path.substr(path.size() - 6) == ".jsonl";
  for (const auto& line : read_lines(path)) {
    if (line.empty()) continue;
    if (jsonl) {
      json obj = json::parse(line, nullptr, false);
      if (obj.is_discarded() || !obj.contains("prompt"))
        throw IoError("bad prompt line in " + path);
      prompts.push_back(obj["prompt"].get<std::string>());
    } else {
      prompts.push_back(line);
    }
  }
  return prompts;
}

json trace_to_json(const GenerationTrace& tr, const DenoisePolicy& policy) {
  json events = json::array();
  for (const auto& ev : tr.events) {
    json e;
    e["kind"] = event_kind_name(ev.kind);
    e["forwards"] = ev.forwards;
    e["positions"] = ev.positions;
    e["cache_len"] = ev.cache_len_before;
    if (ev.kind == EventKind::DENOISE_STEP)
      e["policy"] = denoise_mode_name(policy.mode);
    events.push_back(std::move(e));
  }
  json totals;
  totals["critical_path"] = tr.critical_path;
  totals["tokens_generated"] = tr.tokens_generated;
  totals["content_tokens"] = tr.content_tokens;
  totals["truncated"] = tr.truncated;
  totals["used_ar_fallback"] = tr.used_ar_fallback;
  json out;
  out["events"] = std::move(events);
  out["totals"] = std::move(totals);
  return out;
}

}  // namespace

GenerateFileResult run_generate(const RunConfig& cfg,
                                const std::string& checkpoint_path,
                                const std::string& prompts_path,
                                const std::string& out_dir) {
  const GenerateSection& g = cfg.generate;
  Checkpoint ck = load_checkpoint(checkpoint_path);
  std::vector<std::string> prompts = load_prompts(prompts_path);
  make_dirs(out_dir);

  GenerateFileResult res;
  res.results_path = join_path(out_dir, "results.jsonl");
  res.trace_path = join_path(out_dir, "traces.jsonl");
  std::string results_out, traces_out;

  json meta;
  meta["checkpoint_sha1"] = git_blob_sha1_file(checkpoint_path);
  meta["config"] = cfg.echo();
  meta["method"] = method_name(g.method);
  results_out += json{{"meta", meta}}.dump() + "\n";
  traces_out += json{{"meta", meta}}.dump() + "\n";

  for (size_t i = 0; i < prompts.size(); ++i) {
    uint64_t seed = derive_seed(g.seed, i, 0x9e4);
    GenerationConfig gen_cfg = make_generation_config(
        g, g.method, g.steps_ratio, g.confidence, g.length_scale, seed);
    json rec, tre;
    rec["prompt"] = prompts[i];
    tre["prompt_index"] = i;
    try {
      std::vector<TokenId> ptoks = ck.vocab.encode(prompts[i]);
      GenerationResult r =
          run_method(g.method, ck.params, ptoks, gen_cfg, g.canvas_len);
      rec["raw"] = ck.vocab.decode(r.response_raw);
      rec["stripped"] = ck.vocab.decode(r.stripped);
      rec["critical_path"] = r.trace.critical_path;
      rec["tokens_generated"] = r.trace.tokens_generated;
      tre["trace"] = trace_to_json(r.trace, gen_cfg.policy);
      res.ok_count += 1;
    } catch (const LengthOverflow& e) {
      rec["error"] = std::string("length_overflow: ") + e.what();
      res.err_count += 1;
    } catch (const EncodingError& e) {
      rec["error"] = std::string("encoding: ") + e.what();
      res.err_count += 1;
    }
    results_out += rec.dump() + "\n";
    traces_out += tre.dump() + "\n";
  }
  write_file(res.results_path, results_out);
  write_file(res.trace_path, traces_out);
  return res;
}

// ---------------------------------------------------------------------------
// bench
// ---------------------------------------------------------------------------

const BenchCell* BenchReport::find(Method m, double r, double tau,
                                   double ls) const {
  for (const auto& c : cells) {
    if (c.method == m && std::abs(c.steps_ratio - r) < 1e-9 &&
        std::abs(c.confidence - tau) < 1e-9 &&
        std::abs(c.length_scale - ls) < 1e-9)
      return &c;
  }
  return nullptr;
}

BenchReport run_bench(const RunConfig& cfg, const std::string& pd_checkpoint,
                      const std::string& baseline_checkpoint,
                      const std::string& eval_jsonl,
                      const std::string& out_dir) {
  const BenchSection& b = cfg.bench;
  Checkpoint pd_ck = load_checkpoint(pd_checkpoint);
  Checkpoint base_ck;
  bool have_base = !baseline_checkpoint.empty();
  if (have_base) base_ck = load_checkpoint(baseline_checkpoint);
  make_dirs(out_dir);

  auto [eval_docs, rejects] = load_jsonl(eval_jsonl, pd_ck.vocab);
  if (eval_docs.empty()) throw IoError("no eval documents in " + eval_jsonl);
  int n_prompts = std::min<int>(b.prompts, int(eval_docs.size()));

  struct CellSpec {
    Method method;
    double r, tau, ls;
  };
  std::vector<CellSpec> specs;
  for (Method m : b.methods) {
    switch (m) {
      case Method::AR:
      case Method::DIFFUSION:
      case Method::PD_DA:
        specs.push_back({m, 1.0, 0.0, 1.0});
        break;
      case Method::PD: {
        for (double r : b.steps_ratios) specs.push_back({m, r, 0.0, 1.0});
        for (double ls : b.length_scales)
          if (std::abs(ls - 1.0) > 1e-12 ||
              std::find(b.steps_ratios.begin(), b.steps_ratios.end(), 1.0) ==
                  b.steps_ratios.end())
            specs.push_back({m, 1.0, 0.0, ls});
        break;
      }
      case Method::PD_TAU:
        for (double tau : b.confidences) specs.push_back({m, 1.0, tau, 1.0});
        break;
    }
  }

  std::vector<BenchCell> cells(specs.size());
  auto run_cell = [&](size_t ci) {
    const CellSpec& s = specs[ci];
    const Checkpoint& ck =
        (s.method == Method::AR || s.method == Method::DIFFUSION) && have_base
            ? base_ck
            : pd_ck;
    BenchCell cell;
    cell.method = s.method;
    cell.steps_ratio = s.r;
    cell.confidence = s.tau;
    cell.length_scale = s.ls;
    cell.prompts = n_prompts;
    double cp = 0, toks = 0, wall = 0, match = 0, wf = 0;
    uint64_t cell_key = fnv1a_str(std::string(method_name(s.method)) + "/" +
                                  format_double(s.r) + "/" +
                                  format_double(s.tau) + "/" +
                                  format_double(s.ls));
    for (int pi = 0; pi < n_prompts; ++pi) {
      const AnnotatedDocument& doc = eval_docs[size_t(pi)];
      uint64_t seed = derive_seed(b.seed, cell_key, uint64_t(pi));
      GenerationConfig gen_cfg = make_generation_config(
          cfg.generate, s.method, s.r, s.tau, s.ls, seed);
      auto t0 = std::chrono::steady_clock::now();
      GenerationResult r = run_method(s.method, ck.params, doc.prompt, gen_cfg,
                                      cfg.generate.canvas_len);
      auto t1 = std::chrono::steady_clock::now();
      wall += std::chrono::duration<double, std::milli>(t1 - t0).count();
      cp += r.trace.critical_path;
      toks += r.trace.tokens_generated;
      std::vector<TokenId> truth = stripped_response(doc);
      if (r.stripped == truth) match += 1;
      if (s.method == Method::AR || s.method == Method::DIFFUSION) {
        wf += 1;  // untagged output; well-formedness does not apply
      } else {
        wf += validate_tokens(r.raw).ok ? 1 : 0;
      }
    }
    cell.mean_critical_path = cp / n_prompts;
    cell.mean_tokens = toks / n_prompts;
    cell.mean_wall_ms = wall / n_prompts;
    cell.exact_match = match / n_prompts;
    cell.well_formed = wf / n_prompts;
    cells[ci] = cell;
  };

  int threads = b.threads > 0 ? b.threads
                              : int(std::thread::hardware_concurrency());
  threads = std::max(1, std::min<int>(threads, int(specs.size())));
  if (threads <= 1) {
    for (size_t ci = 0; ci < specs.size(); ++ci) run_cell(ci);
  } else {
    std::vector<std::thread> pool;
    std::atomic<size_t> next{0};
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&]() {
        while (true) {
          size_t ci = next.fetch_add(1);
          if (ci >= specs.size()) return;
          run_cell(ci);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  BenchReport report;
  report.cells = std::move(cells);
  report.csv_path = join_path(out_dir, "bench.csv");
  report.json_path = join_path(out_dir, "bench.json");

  std::ostringstream csv;
  csv << "method,steps_ratio,confidence,length_scale,prompts,"
         "mean_critical_path,mean_tokens,mean_wall_ms,exact_match,"
         "well_formed\n";
  json jcells = json::array();
  for (const auto& c : report.cells) {
    csv << method_name(c.method) << "," << c.steps_ratio << "," << c.confidence
        << "," << c.length_scale << "," << c.prompts << ","
        << format_double(c.mean_critical_path) << ","
        << format_double(c.mean_tokens) << "," << format_double(c.mean_wall_ms)
        << "," << format_double(c.exact_match) << ","
        << format_double(c.well_formed) << "\n";
    json jc;
    jc["method"] = method_name(c.method);
    jc["steps_ratio"] = c.steps_ratio;
    jc["confidence"] = c.confidence;
    jc["length_scale"] = c.length_scale;
    jc["prompts"] = c.prompts;
    jc["mean_critical_path"] = c.mean_critical_path;
    jc["mean_tokens"] = c.mean_tokens;
    jc["mean_wall_ms"] = c.mean_wall_ms;
    jc["exact_match"] = c.exact_match;
    jc["well_formed"] = c.well_formed;
    jcells.push_back(std::move(jc));
  }
  json jout;
  jout["cells"] = std::move(jcells);
  jout["config"] = cfg.echo();
  jout["pd_checkpoint_sha1"] = git_blob_sha1_file(pd_checkpoint);
  if (have_base)
    jout["baseline_checkpoint_sha1"] = git_blob_sha1_file(baseline_checkpoint);
  write_file(report.csv_path, csv.str());
  write_file(report.json_path, jout.dump(2) + "\n");
  return report;
}

}  // namespace pd
