#pragma once

#include <map>
#include <string>
#include <vector>

#include "pd/corpus.hpp"
#include "pd/engine.hpp"
#include "pd/model.hpp"

namespace pd {

enum class Method { AR, DIFFUSION, PD, PD_DA, PD_TAU };

const char* method_name(Method m);
Method method_from_name(const std::string& name);

enum class TrainObjective { PD, STRIPPED_AR, STRIPPED_DIFFUSION, STRIPPED_MIXED };

const char* objective_name(TrainObjective o);
TrainObjective objective_from_name(const std::string& name);

struct CorpusSection {
  uint64_t seed = 1;
  uint64_t world_seed = 7;
  int n_train = 2000;
  int n_eval = 200;
  std::vector<std::string> templates = {"listing", "definition-then-examples",
                                        "multi-section-answer"};
  int num_spans_min = 3;
  int num_spans_max = 4;
  int span_len_min = 30;
  int span_len_max = 61;
  double sync_probability = 0.25;
  int items_per_band = 8;
  int attr_pool = 120;
  int categories = 6;
};

struct TrainSection {
  uint64_t seed = 2;
  TrainObjective objective = TrainObjective::PD;
  MaskMode mask_mode = MaskMode::SPAN_ISOLATED;
  bool strip_topics = false;
  bool strip_syncs = false;
  int epochs = 14;
  int batch_size = 16;
  double peak_lr = 1.5e-3;
  int warmup_steps = 100;
  double weight_decay = 0.01;
  double t_min = 0.01;  // noise level drawn from U(t_min, 1)
  std::vector<int> checkpoint_epochs;
  int log_every = 10;
};

struct GenerateSection {
  uint64_t seed = 3;
  Method method = Method::PD;
  DenoiseMode policy = DenoiseMode::ENTROPY_ORDERED;
  double steps_ratio = 1.0;
  double confidence = 0.9;
  double temperature = 0.2;
  double top_p = 0.95;
  double plan_temperature = 0.2;
  double plan_top_p = 0.95;
  double length_scale = 1.0;
  MaskMode mask_mode = MaskMode::SPAN_ISOLATED;
  int max_len = 2048;
  int max_stages = 8;
  int canvas_len = 192;  // plain-diffusion canvas
  bool cross_check = false;
  bool constrain_plan = true;
  bool constrain_content = true;
};

struct BenchSection {
  uint64_t seed = 4;
  std::vector<Method> methods = {Method::AR, Method::PD};
  std::vector<double> steps_ratios = {1.0};
  std::vector<double> confidences = {};
  std::vector<double> length_scales = {1.0};
  int prompts = 50;
  int threads = 1;
};

struct RunConfig {
  CorpusSection corpus;
  ModelConfig model;  // vocab_size resolved at train time
  TrainSection train;
  GenerateSection generate;
  BenchSection bench;

  static RunConfig defaults();
  static RunConfig from_file(const std::string& path);
  void apply_ini(const std::string& text);  // throws ConfigError

  // Resolved key=value echo embedded into output artifacts.
  std::string echo() const;
};

MaskMode mask_mode_from_name(const std::string& name);
DenoiseMode denoise_mode_from_name(const std::string& name);

// Builds the GenerationConfig for one (method, r, tau, length_scale) cell.
GenerationConfig make_generation_config(const GenerateSection& g, Method method,
                                        double steps_ratio, double confidence,
                                        double length_scale, uint64_t seed);

}  // namespace pd
