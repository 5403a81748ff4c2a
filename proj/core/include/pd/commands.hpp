#pragma once

#include <string>
#include <vector>

#include "pd/run_config.hpp"

namespace pd {

struct GenCorpusResult {
  std::string train_path, eval_path, vocab_path, manifest_path;
  int n_train = 0, n_eval = 0;
};

GenCorpusResult run_gen_corpus(const RunConfig& cfg, const std::string& out_dir);

struct ValidateResult {
  int ok_count = 0;
  std::vector<RejectedLine> rejects;
};

ValidateResult run_validate(const std::string& jsonl_path,
                            const std::string& vocab_path);

struct TrainResult {
  std::string checkpoint_path;
  std::vector<std::string> epoch_checkpoints;
  std::string loss_log_path;
  std::vector<double> step_losses;
  double final_eval_loss = 0.0;
  int64_t steps = 0;
};

TrainResult run_train(const RunConfig& cfg, const std::string& corpus_dir,
                      const std::string& out_dir,
                      const std::string& resume_path = "");

struct GenerateFileResult {
  std::string results_path, trace_path;
  int ok_count = 0;
  int err_count = 0;
};

GenerateFileResult run_generate(const RunConfig& cfg,
                                const std::string& checkpoint_path,
                                const std::string& prompts_path,
                                const std::string& out_dir);

struct BenchCell {
  Method method = Method::PD;
  double steps_ratio = 1.0;
  double confidence = 0.0;  // 0 when not applicable
  double length_scale = 1.0;
  int prompts = 0;
  double mean_critical_path = 0.0;
  double mean_tokens = 0.0;
  double mean_wall_ms = 0.0;
  double exact_match = 0.0;
  double well_formed = 0.0;  // tagged methods only; 1.0 for baselines
};

struct BenchReport {
  std::vector<BenchCell> cells;
  std::string csv_path, json_path;

  const BenchCell* find(Method m, double r, double tau, double ls) const;
};

BenchReport run_bench(const RunConfig& cfg, const std::string& pd_checkpoint,
                      const std::string& baseline_checkpoint,
                      const std::string& eval_jsonl,
                      const std::string& out_dir);

// One generation through the method dispatch used by generate/bench.
GenerationResult run_method(Method method, const ParamsT<float>& params,
                            const std::vector<TokenId>& prompt,
                            const GenerationConfig& gen_cfg, int canvas_len);

}  // namespace pd
