// Planned-diffusion command line: corpus generation, validation, training,
// generation, and benchmarking over one config file.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pd/commands.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitValidation = 3;

struct CommonArgs {
  std::string config_path;
  int64_t seed = -1;
  std::string method;
  double steps_ratio = -1.0;
  double confidence = -1.0;
  double length_scale = -1.0;
  std::string mask_mode;
  int max_len = -1;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config_path, "Config file (INI sections)");
  cmd->add_option("--seed", a.seed, "Override every section seed");
  cmd->add_option("--method", a.method, "ar|diffusion|pd|pd-da");
  cmd->add_option("--steps-ratio", a.steps_ratio, "Denoising steps ratio r");
  cmd->add_option("--confidence", a.confidence, "Confidence threshold tau");
  cmd->add_option("--length-scale", a.length_scale,
                  "Span length scaling factor");
  cmd->add_option("--mask-mode", a.mask_mode, "isolated|dense");
  cmd->add_option("--max-len", a.max_len, "Total sequence cap (default 2048)");
}

pd::RunConfig resolve(const CommonArgs& a) {
  pd::RunConfig cfg = a.config_path.empty()
                          ? pd::RunConfig::defaults()
                          : pd::RunConfig::from_file(a.config_path);
  if (a.seed >= 0) {
    cfg.corpus.seed = uint64_t(a.seed);
    cfg.train.seed = uint64_t(a.seed);
    cfg.generate.seed = uint64_t(a.seed);
    cfg.bench.seed = uint64_t(a.seed);
  }
  if (!a.method.empty()) cfg.generate.method = pd::method_from_name(a.method);
  if (a.steps_ratio > 0) {
    cfg.generate.steps_ratio = a.steps_ratio;
    cfg.bench.steps_ratios = {a.steps_ratio};
  }
  if (a.confidence > 0) {
    cfg.generate.confidence = a.confidence;
    cfg.generate.policy = pd::DenoiseMode::CONFIDENCE_THRESHOLD;
  }
  if (a.length_scale > 0) cfg.generate.length_scale = a.length_scale;
  if (!a.mask_mode.empty())
    cfg.generate.mask_mode = pd::mask_mode_from_name(a.mask_mode);
  if (a.max_len > 0) cfg.generate.max_len = a.max_len;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"planned diffusion workbench"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string out_dir = "out";
  std::string corpus_dir, checkpoint, baseline, prompts, jsonl, vocab, resume;

  CLI::App* c_gen = app.add_subcommand("gen-corpus", "Generate the synthetic corpus");
  add_common(c_gen, args);
  c_gen->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* c_val = app.add_subcommand("validate", "Validate an annotated JSONL file");
  add_common(c_val, args);
  c_val->add_option("--corpus", jsonl, "JSONL file to validate")->required();
  c_val->add_option("--vocab", vocab, "Vocabulary file")->required();

  CLI::App* c_train = app.add_subcommand("train", "Train a checkpoint");
  add_common(c_train, args);
  c_train->add_option("--corpus", corpus_dir, "Corpus directory")->required();
  c_train->add_option("--out", out_dir, "Output directory")->required();
  c_train->add_option("--resume", resume, "Resume from checkpoint");

  CLI::App* c_genr = app.add_subcommand("generate", "Generate from prompts");
  add_common(c_genr, args);
  c_genr->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  c_genr->add_option("--prompts", prompts, "Prompt file (text or JSONL)")->required();
  c_genr->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* c_bench = app.add_subcommand("bench", "Run the method/setting grid");
  add_common(c_bench, args);
  c_bench->add_option("--checkpoint", checkpoint, "Planned-diffusion checkpoint")
      ->required();
  c_bench->add_option("--baseline", baseline,
                      "Baseline checkpoint for ar/diffusion methods");
  c_bench->add_option("--eval", jsonl, "Held-out eval JSONL")->required();
  c_bench->add_option("--out", out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    pd::RunConfig cfg = resolve(args);
    if (c_gen->parsed()) {
      auto res = pd::run_gen_corpus(cfg, out_dir);
      std::cout << "wrote " << res.train_path << " (" << res.n_train
                << " docs), " << res.eval_path << " (" << res.n_eval
                << " docs)\n";
      return kExitOk;
    }
    if (c_val->parsed()) {
      auto res = pd::run_validate(jsonl, vocab);
      std::cout << res.ok_count << " valid, " << res.rejects.size()
                << " rejected\n";
      for (const auto& r : res.rejects)
        std::cout << "line " << r.line_no << ": rule=" << r.rule << " "
                  << r.message << "\n";
      return res.rejects.empty() ? kExitOk : kExitValidation;
    }
    if (c_train->parsed()) {
      auto res = pd::run_train(cfg, corpus_dir, out_dir, resume);
      std::cout << "trained " << res.steps << " steps; checkpoint at "
                << res.checkpoint_path
                << "; eval loss = " << res.final_eval_loss << "\n";
      return kExitOk;
    }
    if (c_genr->parsed()) {
      auto res = pd::run_generate(cfg, checkpoint, prompts, out_dir);
      std::cout << res.ok_count << " generated, " << res.err_count
                << " failed; results at " << res.results_path << "\n";
      return res.err_count == 0 ? kExitOk : kExitValidation;
    }
    if (c_bench->parsed()) {
      auto rep = pd::run_bench(cfg, checkpoint, baseline, jsonl, out_dir);
      std::cout << "bench cells: " << rep.cells.size() << "; report at "
                << rep.csv_path << "\n";
      return kExitOk;
    }
  } catch (const pd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const pd::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const pd::EncodingError& e) {
    std::cerr << "encoding error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  }
  return kExitUsage;
}
