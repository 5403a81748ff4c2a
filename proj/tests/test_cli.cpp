#include <doctest.h>

#include <set>

#include "pd/commands.hpp"
#include "pd/run_config.hpp"
#include "pd/util.hpp"

using namespace pd;

TEST_CASE("ini parsing, defaults, and overrides") {
  RunConfig cfg;
  cfg.apply_ini(
      "# comment\n"
      "[corpus]\n"
      "n_train = 12\n"
      "templates = listing , multi-section-answer\n"
      "[model]\n"
      "d_model = 64\n"
      "positional = learned\n"
      "[train]\n"
      "objective = stripped-mixed\n"
      "checkpoint_epochs = 1,2\n"
      "[generate]\n"
      "method = pd-da\n"
      "confidence = 0.7\n"
      "[bench]\n"
      "methods = ar,pd,pd-tau\n"
      "steps_ratios = 0.25,0.5\n");
  CHECK(cfg.corpus.n_train == 12);
  CHECK(cfg.corpus.templates ==
        std::vector<std::string>{"listing", "multi-section-answer"});
  CHECK(cfg.model.d_model == 64);
  CHECK_FALSE(cfg.model.rotary);
  CHECK(cfg.train.objective == TrainObjective::STRIPPED_MIXED);
  CHECK(cfg.train.checkpoint_epochs == std::vector<int>{1, 2});
  CHECK(cfg.generate.method == Method::PD_DA);
  CHECK(cfg.generate.confidence == doctest::Approx(0.7));
  CHECK(cfg.bench.methods ==
        std::vector<Method>{Method::AR, Method::PD, Method::PD_TAU});
  CHECK(cfg.bench.steps_ratios == std::vector<double>{0.25, 0.5});

  CHECK_THROWS_AS(cfg.apply_ini("[corpus]\nbogus_key = 1\n"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_ini("[nope]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(cfg.apply_ini("[corpus]\nn_train twelve\n"), ConfigError);
}

TEST_CASE("echo round-trips through the parser") {
  RunConfig cfg;
  cfg.corpus.n_train = 77;
  cfg.generate.length_scale = 1.5;
  cfg.bench.confidences = {0.4, 0.9};
  std::string echo1 = cfg.echo();
  RunConfig back;
  back.apply_ini(echo1);
  CHECK(back.echo() == echo1);
}

TEST_CASE("generation-config mapping per method") {
  GenerateSection g;
  g.mask_mode = MaskMode::SPAN_ISOLATED;
  GenerationConfig pd_cfg =
      make_generation_config(g, Method::PD, 0.5, 0.0, 1.0, 1);
  CHECK(pd_cfg.policy.mode == DenoiseMode::ENTROPY_ORDERED);
  CHECK(pd_cfg.policy.steps_ratio == doctest::Approx(0.5));
  CHECK(pd_cfg.mask_mode == MaskMode::SPAN_ISOLATED);

  GenerationConfig da_cfg =
      make_generation_config(g, Method::PD_DA, 1.0, 0.0, 1.0, 1);
  CHECK(da_cfg.mask_mode == MaskMode::DENSE);

  GenerationConfig tau_cfg =
      make_generation_config(g, Method::PD_TAU, 1.0, 0.8, 1.0, 1);
  CHECK(tau_cfg.policy.mode == DenoiseMode::CONFIDENCE_THRESHOLD);
  CHECK(tau_cfg.policy.confidence == doctest::Approx(0.8));
}

TEST_CASE("gen-corpus is deterministic and self-consistent") {
  RunConfig cfg;
  cfg.corpus.n_train = 24;
  cfg.corpus.n_eval = 8;
  cfg.corpus.num_spans_min = 1;
  cfg.corpus.num_spans_max = 2;

  GenCorpusResult a = run_gen_corpus(cfg, "/tmp/pd_cli_corpus_a");
  GenCorpusResult b = run_gen_corpus(cfg, "/tmp/pd_cli_corpus_b");
  CHECK(read_file(a.train_path) == read_file(b.train_path));
  CHECK(read_file(a.eval_path) == read_file(b.eval_path));
  CHECK(read_file(a.vocab_path) == read_file(b.vocab_path));

  // Everything the generator wrote validates.
  ValidateResult val = run_validate(a.train_path, a.vocab_path);
  CHECK(val.ok_count == 24);
  CHECK(val.rejects.empty());

  // Manifest records the counts.
  std::string manifest = read_file(a.manifest_path);
  CHECK(manifest.find("n_train = 24") != std::string::npos);
  CHECK(manifest.find("n_eval = 8") != std::string::npos);

  // Train and eval prompts are disjoint.
  Vocabulary vocab = Vocabulary::load(a.vocab_path);
  auto [train_docs, r1] = load_jsonl(a.train_path, vocab);
  auto [eval_docs, r2] = load_jsonl(a.eval_path, vocab);
  std::set<std::string> train_prompts;
  for (const auto& d : train_docs)
    train_prompts.insert(vocab.decode(d.prompt));
  for (const auto& d : eval_docs)
    CHECK(train_prompts.count(vocab.decode(d.prompt)) == 0);
}

TEST_CASE("invalid corpus spec fails before writing files") {
  RunConfig cfg;
  cfg.corpus.num_spans_min = 5;
  cfg.corpus.num_spans_max = 5;  // only 4 length bands by default
  CHECK_THROWS_AS(run_gen_corpus(cfg, "/tmp/pd_cli_corpus_bad"),
                  ConfigError);
}
