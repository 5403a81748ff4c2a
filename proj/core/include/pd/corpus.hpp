#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pd/attention.hpp"
#include "pd/tags.hpp"
#include "pd/tokens.hpp"
#include "pd/util.hpp"

namespace pd {

enum class TemplateId { LISTING, DEFINITION_EXAMPLES, SECTIONS };

const char* template_name(TemplateId id);
TemplateId template_from_name(const std::string& name);

struct TaskSpec {
  TemplateId template_id = TemplateId::LISTING;
  int num_spans = 3;              // [1, 6]
  int span_len_min = 30;          // content tokens per span, inclusive
  int span_len_max = 61;
  double sync_probability = 0.25;

  void check() const;  // throws ConfigError
};

struct WorldConfig {
  uint64_t world_seed = 7;
  int items_per_band = 8;
  int attr_pool = 120;
  int categories = 6;
  int span_len_min = 30;
  int span_len_max = 61;
};

// A tiny closed world of items with fixed content phrases. Span slot k draws
// items from length band k, so sibling spans always have distinct sizes and
// every phrase is a deterministic function of the prompt and its topic.
class SyntheticWorld {
 public:
  explicit SyntheticWorld(const WorldConfig& cfg);

  const Vocabulary& vocab() const { return vocab_; }
  int num_bands() const { return int(bands_.size()); }

  AnnotatedDocument generate_document(const TaskSpec& spec, Rng& rng) const;
  std::vector<AnnotatedDocument> generate(const TaskSpec& spec, int n,
                                          Rng& rng) const;

 private:
  struct Item {
    TokenId name = 0;
    std::vector<TokenId> phrase;  // starts with the name token
  };
  struct Category {
    TokenId name = 0;
    std::vector<TokenId> definition;
  };

  const Item& pick(int band, Rng& rng) const;

  WorldConfig cfg_;
  Vocabulary vocab_;
  std::vector<std::vector<Item>> bands_;
  std::vector<Category> categories_;
  std::vector<TokenId> section_words_;
  TokenId w_list_, w_facts_, w_about_, w_define_, w_with_, w_examples_,
      w_report_, w_on_, w_definition_, w_summary_, w_overall_;
};

// JSONL corpus I/O: one {"prompt", "response"} object per line.
struct RejectedLine {
  int line_no = 0;  // 1-based
  std::string line;
  std::string rule;
  std::string message;
};

std::pair<std::vector<AnnotatedDocument>, std::vector<RejectedLine>> load_jsonl(
    const std::string& path, const Vocabulary& vocab);
void save_jsonl(const std::vector<AnnotatedDocument>& docs,
                const Vocabulary& vocab, const std::string& path);

// Absorbing-mask forward process: each position independently becomes MASK
// with probability t, otherwise stays itself.
std::vector<TokenId> corrupt(const std::vector<TokenId>& content_tokens,
                             double t, Rng& rng);

struct AblationFlags {
  bool strip_topics = false;
  bool strip_syncs = false;
};

struct TrainingExample {
  std::vector<TokenId> clean;   // Y
  std::vector<TokenId> noised;  // plan positions intact, content at rate t
  RoleSequence roles;
  double t = 0.5;
  // Per-target weights: 1 for supervised plan targets, 1/t at masked content
  // targets, 0 elsewhere (see model loss for the target/row convention).
  std::vector<float> loss_weight;
  MaskMode mask_mode = MaskMode::SPAN_ISOLATED;
  AblationFlags ablation;
};

// Token-level ablation transforms used for training-data variants.
std::vector<TokenId> apply_ablation(const std::vector<TokenId>& tokens,
                                    const AblationFlags& flags);

TrainingExample make_training_example(const AnnotatedDocument& doc, double t,
                                      MaskMode mask_mode,
                                      const AblationFlags& flags, Rng& rng);

// Baseline variants trained on control-stripped data.
TrainingExample make_ar_stripped_example(const AnnotatedDocument& doc);
TrainingExample make_diffusion_stripped_example(const AnnotatedDocument& doc,
                                                double t, Rng& rng);

void write_manifest(const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>& kv);

}  // namespace pd
