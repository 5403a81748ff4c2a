#include "pd/run_config.hpp"

#include <algorithm>
#include <sstream>

namespace pd {

const char* method_name(Method m) {
  switch (m) {
    case Method::AR: return "ar";
    case Method::DIFFUSION: return "diffusion";
    case Method::PD: return "pd";
    case Method::PD_DA: return "pd-da";
    case Method::PD_TAU: return "pd-tau";
  }
  return "?";
}

Method method_from_name(const std::string& name) {
  if (name == "ar") return Method::AR;
  if (name == "diffusion") return Method::DIFFUSION;
  if (name == "pd") return Method::PD;
  if (name == "pd-da") return Method::PD_DA;
  if (name == "pd-tau") return Method::PD_TAU;
  throw ConfigError("unknown method: " + name);
}

const char* objective_name(TrainObjective o) {
  switch (o) {
    case TrainObjective::PD: return "pd";
    case TrainObjective::STRIPPED_AR: return "stripped-ar";
    case TrainObjective::STRIPPED_DIFFUSION: return "stripped-diffusion";
    case TrainObjective::STRIPPED_MIXED: return "stripped-mixed";
  }
  return "?";
}

TrainObjective objective_from_name(const std::string& name) {
  if (name == "pd") return TrainObjective::PD;
  if (name == "stripped-ar") return TrainObjective::STRIPPED_AR;
  if (name == "stripped-diffusion") return TrainObjective::STRIPPED_DIFFUSION;
  if (name == "stripped-mixed") return TrainObjective::STRIPPED_MIXED;
  throw ConfigError("unknown train objective: " + name);
}

MaskMode mask_mode_from_name(const std::string& name) {
  if (name == "isolated") return MaskMode::SPAN_ISOLATED;
  if (name == "dense") return MaskMode::DENSE;
  throw ConfigError("unknown mask mode: " + name);
}

DenoiseMode denoise_mode_from_name(const std::string& name) {
  if (name == "entropy") return DenoiseMode::ENTROPY_ORDERED;
  if (name == "confidence") return DenoiseMode::CONFIDENCE_THRESHOLD;
  throw ConfigError("unknown denoise policy: " + name);
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(s);
  while (std::getline(ss, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

uint64_t to_u64(const std::string& v) { return std::stoull(v); }
int to_int(const std::string& v) { return std::stoi(v); }
double to_dbl(const std::string& v) { return std::stod(v); }
bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("expected boolean, got: " + v);
}

std::vector<double> to_dbl_list(const std::string& v) {
  std::vector<double> out;
  for (const auto& s : split_csv(v)) out.push_back(to_dbl(s));
  return out;
}

std::vector<int> to_int_list(const std::string& v) {
  std::vector<int> out;
  for (const auto& s : split_csv(v)) out.push_back(to_int(s));
  return out;
}

}  // namespace

RunConfig RunConfig::defaults() { return RunConfig{}; }

RunConfig RunConfig::from_file(const std::string& path) {
  RunConfig cfg;
  cfg.apply_ini(read_file(path));
  return cfg;
}

void RunConfig::apply_ini(const std::string& text) {
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": expected key = value");
    std::string key = trim(t.substr(0, eq));
    std::string val = trim(t.substr(eq + 1));
    try {
      if (section == "corpus") {
        if (key == "seed") corpus.seed = to_u64(val);
        else if (key == "world_seed") corpus.world_seed = to_u64(val);
        else if (key == "n_train") corpus.n_train = to_int(val);
        else if (key == "n_eval") corpus.n_eval = to_int(val);
        else if (key == "templates") corpus.templates = split_csv(val);
        else if (key == "num_spans_min") corpus.num_spans_min = to_int(val);
        else if (key == "num_spans_max") corpus.num_spans_max = to_int(val);
        else if (key == "span_len_min") corpus.span_len_min = to_int(val);
        else if (key == "span_len_max") corpus.span_len_max = to_int(val);
        else if (key == "sync_probability") corpus.sync_probability = to_dbl(val);
        else if (key == "items_per_band") corpus.items_per_band = to_int(val);
        else if (key == "attr_pool") corpus.attr_pool = to_int(val);
        else if (key == "categories") corpus.categories = to_int(val);
        else throw ConfigError("unknown [corpus] key: " + key);
      } else if (section == "model") {
        if (key == "d_model") model.d_model = to_int(val);
        else if (key == "n_layers") model.n_layers = to_int(val);
        else if (key == "n_heads") model.n_heads = to_int(val);
        else if (key == "d_ff") model.d_ff = to_int(val);
        else if (key == "max_seq_len") model.max_seq_len = to_int(val);
        else if (key == "positional") model.rotary = (val == "rotary");
        else throw ConfigError("unknown [model] key: " + key);
      } else if (section == "train") {
        if (key == "seed") train.seed = to_u64(val);
        else if (key == "objective") train.objective = objective_from_name(val);
        else if (key == "mask_mode") train.mask_mode = mask_mode_from_name(val);
        else if (key == "strip_topics") train.strip_topics = to_bool(val);
        else if (key == "strip_syncs") train.strip_syncs = to_bool(val);
        else if (key == "epochs") train.epochs = to_int(val);
        else if (key == "batch_size") train.batch_size = to_int(val);
        else if (key == "peak_lr") train.peak_lr = to_dbl(val);
        else if (key == "warmup_steps") train.warmup_steps = to_int(val);
        else if (key == "weight_decay") train.weight_decay = to_dbl(val);
        else if (key == "t_min") train.t_min = to_dbl(val);
        else if (key == "checkpoint_epochs") train.checkpoint_epochs = to_int_list(val);
        else if (key == "log_every") train.log_every = to_int(val);
        else throw ConfigError("unknown [train] key: " + key);
      } else if (section == "generate") {
        if (key == "seed") generate.seed = to_u64(val);
        else if (key == "method") generate.method = method_from_name(val);
        else if (key == "policy") generate.policy = denoise_mode_from_name(val);
        else if (key == "steps_ratio") generate.steps_ratio = to_dbl(val);
        else if (key == "confidence") generate.confidence = to_dbl(val);
        else if (key == "temperature") generate.temperature = to_dbl(val);
        else if (key == "top_p") generate.top_p = to_dbl(val);
        else if (key == "plan_temperature") generate.plan_temperature = to_dbl(val);
        else if (key == "plan_top_p") generate.plan_top_p = to_dbl(val);
        else if (key == "length_scale") generate.length_scale = to_dbl(val);
        else if (key == "mask_mode") generate.mask_mode = mask_mode_from_name(val);
        else if (key == "max_len") generate.max_len = to_int(val);
        else if (key == "max_stages") generate.max_stages = to_int(val);
        else if (key == "canvas_len") generate.canvas_len = to_int(val);
        else if (key == "cross_check") generate.cross_check = to_bool(val);
        else if (key == "constrain_plan") generate.constrain_plan = to_bool(val);
        else if (key == "constrain_content") generate.constrain_content = to_bool(val);
        else throw ConfigError("unknown [generate] key: " + key);
      } else if (section == "bench") {
        if (key == "seed") bench.seed = to_u64(val);
        else if (key == "methods") {
          bench.methods.clear();
          for (const auto& s : split_csv(val))
            bench.methods.push_back(method_from_name(s));
        } else if (key == "steps_ratios") bench.steps_ratios = to_dbl_list(val);
        else if (key == "confidences") bench.confidences = to_dbl_list(val);
        else if (key == "length_scales") bench.length_scales = to_dbl_list(val);
        else if (key == "prompts") bench.prompts = to_int(val);
        else if (key == "threads") bench.threads = to_int(val);
        else throw ConfigError("unknown [bench] key: " + key);
      } else {
        throw ConfigError("unknown config section: [" + section + "]");
      }
    } catch (const std::invalid_argument&) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": bad value for " + key);
    } catch (const std::out_of_range&) {
      throw ConfigError("config line " + std::to_string(line_no) +
                        ": value out of range for " + key);
    }
  }
}

std::string RunConfig::echo() const {
  std::ostringstream out;
  out << "[corpus]\n";
  out << "seed = " << corpus.seed << "\n";
  out << "world_seed = " << corpus.world_seed << "\n";
  out << "n_train = " << corpus.n_train << "\n";
  out << "n_eval = " << corpus.n_eval << "\n";
  out << "templates = ";
  for (size_t i = 0; i < corpus.templates.size(); ++i)
    out << (i ? "," : "") << corpus.templates[i];
  out << "\n";
  out << "num_spans_min = " << corpus.num_spans_min << "\n";
  out << "num_spans_max = " << corpus.num_spans_max << "\n";
  out << "span_len_min = " << corpus.span_len_min << "\n";
  out << "span_len_max = " << corpus.span_len_max << "\n";
  out << "sync_probability = " << corpus.sync_probability << "\n";
  out << "items_per_band = " << corpus.items_per_band << "\n";
  out << "attr_pool = " << corpus.attr_pool << "\n";
  out << "categories = " << corpus.categories << "\n";
  out << "[model]\n";
  out << "d_model = " << model.d_model << "\n";
  out << "n_layers = " << model.n_layers << "\n";
  out << "n_heads = " << model.n_heads << "\n";
  out << "d_ff = " << model.d_ff << "\n";
  out << "max_seq_len = " << model.max_seq_len << "\n";
  out << "positional = " << (model.rotary ? "rotary" : "learned") << "\n";
  out << "[train]\n";
  out << "seed = " << train.seed << "\n";
  out << "objective = " << objective_name(train.objective) << "\n";
  out << "mask_mode = " << mask_mode_name(train.mask_mode) << "\n";
  out << "strip_topics = " << (train.strip_topics ? "true" : "false") << "\n";
  out << "strip_syncs = " << (train.strip_syncs ? "true" : "false") << "\n";
  out << "epochs = " << train.epochs << "\n";
  out << "batch_size = " << train.batch_size << "\n";
  out << "peak_lr = " << train.peak_lr << "\n";
  out << "warmup_steps = " << train.warmup_steps << "\n";
  out << "weight_decay = " << train.weight_decay << "\n";
  out << "t_min = " << train.t_min << "\n";
  out << "log_every = " << train.log_every << "\n";
  out << "[generate]\n";
  out << "seed = " << generate.seed << "\n";
  out << "method = " << method_name(generate.method) << "\n";
  out << "policy = " << denoise_mode_name(generate.policy) << "\n";
  out << "steps_ratio = " << generate.steps_ratio << "\n";
  out << "confidence = " << generate.confidence << "\n";
  out << "temperature = " << generate.temperature << "\n";
  out << "top_p = " << generate.top_p << "\n";
  out << "plan_temperature = " << generate.plan_temperature << "\n";
  out << "plan_top_p = " << generate.plan_top_p << "\n";
  out << "length_scale = " << generate.length_scale << "\n";
  out << "mask_mode = " << mask_mode_name(generate.mask_mode) << "\n";
  out << "max_len = " << generate.max_len << "\n";
  out << "max_stages = " << generate.max_stages << "\n";
  out << "canvas_len = " << generate.canvas_len << "\n";
  out << "cross_check = " << (generate.cross_check ? "true" : "false") << "\n";
  out << "[bench]\n";
  out << "seed = " << bench.seed << "\n";
  out << "methods = ";
  for (size_t i = 0; i < bench.methods.size(); ++i)
    out << (i ? "," : "") << method_name(bench.methods[i]);
  out << "\n";
  out << "steps_ratios = ";
  for (size_t i = 0; i < bench.steps_ratios.size(); ++i)
    out << (i ? "," : "") << bench.steps_ratios[i];
  out << "\n";
  out << "confidences = ";
  for (size_t i = 0; i < bench.confidences.size(); ++i)
    out << (i ? "," : "") << bench.confidences[i];
  out << "\n";
  out << "length_scales = ";
  for (size_t i = 0; i < bench.length_scales.size(); ++i)
    out << (i ? "," : "") << bench.length_scales[i];
  out << "\n";
  out << "prompts = " << bench.prompts << "\n";
  out << "threads = " << bench.threads << "\n";
  return out.str();
}

GenerationConfig make_generation_config(const GenerateSection& g, Method method,
                                        double steps_ratio, double confidence,
                                        double length_scale, uint64_t seed) {
  GenerationConfig cfg;
  cfg.policy.mode = method == Method::PD_TAU
                        ? DenoiseMode::CONFIDENCE_THRESHOLD
                        : g.policy;
  cfg.policy.steps_ratio = steps_ratio;
  cfg.policy.confidence = confidence;
  cfg.policy.temperature = g.temperature;
  cfg.policy.top_p = g.top_p;
  cfg.length_scale = length_scale;
  cfg.mask_mode = method == Method::PD_DA ? MaskMode::DENSE : g.mask_mode;
  cfg.max_total_len = g.max_len;
  cfg.max_stages = g.max_stages;
  cfg.plan_temperature = g.plan_temperature;
  cfg.plan_top_p = g.plan_top_p;
  cfg.seed = seed;
  cfg.constrain_plan = g.constrain_plan;
  cfg.constrain_content = g.constrain_content;
  cfg.cross_check = g.cross_check;
  return cfg;
}

}  // namespace pd
