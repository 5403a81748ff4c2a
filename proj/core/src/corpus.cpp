#include "pd/corpus.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace pd {

using nlohmann::json;

const char* template_name(TemplateId id) {
  switch (id) {
    case TemplateId::LISTING: return "listing";
    case TemplateId::DEFINITION_EXAMPLES: return "definition-then-examples";
    case TemplateId::SECTIONS: return "multi-section-answer";
  }
  return "?";
}

TemplateId template_from_name(const std::string& name) {
  if (name == "listing") return TemplateId::LISTING;
  if (name == "definition-then-examples") return TemplateId::DEFINITION_EXAMPLES;
  if (name == "multi-section-answer") return TemplateId::SECTIONS;
  throw ConfigError("unknown template: " + name);
}

void TaskSpec::check() const {
  if (num_spans < 1 || num_spans > 6)
    throw ConfigError("num_spans must be in [1, 6]");
  if (span_len_min < 1) throw ConfigError("span_len_min must be >= 1");
  if (span_len_max > 200) throw ConfigError("span_len_max must be <= 200");
  if (span_len_min > span_len_max)
    throw ConfigError("span_len_min > span_len_max");
  if (sync_probability < 0.0 || sync_probability > 1.0)
    throw ConfigError("sync_probability must be in [0, 1]");
}

// ---------------------------------------------------------------------------
// Synthetic world
// ---------------------------------------------------------------------------

namespace {

std::string make_pseudoword(Rng& rng, int syllables) {
  static const char* cons = "bdfgklmnprstvz";
  static const char* vows = "aeiou";
  std::string w;
  for (int s = 0; s < syllables; ++s) {
    w.push_back(cons[rng.uniform_int(0, 13)]);
    w.push_back(vows[rng.uniform_int(0, 4)]);
  }
  return w;
}

std::string fresh_pseudoword(Rng& rng, int syllables,
                             std::set<std::string>& used) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::string w = make_pseudoword(rng, syllables);
    if (used.insert(w).second) return w;
  }
  throw ConfigError("pseudoword space exhausted");
}

}  // namespace

SyntheticWorld::SyntheticWorld(const WorldConfig& cfg) : cfg_(cfg) {
  Rng rng(derive_seed(cfg.world_seed, 0x7031d));
  std::set<std::string> used;

  auto word = [&](const char* fixed) {
    used.insert(fixed);
    return vocab_.add_word(fixed);
  };
  w_list_ = word("list");
  w_facts_ = word("facts");
  w_about_ = word("about");
  w_define_ = word("define");
  w_with_ = word("with");
  w_examples_ = word("examples");
  w_report_ = word("report");
  w_on_ = word("on");
  w_definition_ = word("definition");
  w_summary_ = word("summary");
  w_overall_ = word("overall");
  for (const char* s : {"overview", "details", "analysis", "notes", "review",
                        "outline"})
    section_words_.push_back(word(s));

  std::vector<TokenId> attrs;
  attrs.reserve(size_t(cfg.attr_pool));
  for (int i = 0; i < cfg.attr_pool; ++i)
    attrs.push_back(vocab_.add_word(fresh_pseudoword(rng, 2, used)));

  auto build_phrase = [&](TokenId head, int len) {
    std::vector<TokenId> p;
    p.reserve(size_t(len));
    p.push_back(head);
    for (int i = 1; i < len; ++i)
      p.push_back(attrs[size_t(rng.uniform_int(0, int(attrs.size()) - 1))]);
    return p;
  };

  // Band k holds items whose phrase length is 10*(k + base/10) or one more,
  // so sibling spans drawn from distinct bands always differ in size.
  int lo = (cfg.span_len_min + 9) / 10 * 10;
  for (; lo + 1 <= cfg.span_len_max && int(bands_.size()) < 6; lo += 10) {
    std::vector<Item> band;
    for (int i = 0; i < cfg.items_per_band; ++i) {
      Item item;
      item.name = vocab_.add_word(fresh_pseudoword(rng, 3, used));
      item.phrase = build_phrase(item.name, lo + rng.uniform_int(0, 1));
      band.push_back(std::move(item));
    }
    bands_.push_back(std::move(band));
  }
  if (bands_.empty())
    throw ConfigError("span length range admits no 10-token band");

  for (int c = 0; c < cfg.categories; ++c) {
    Category cat;
    cat.name = vocab_.add_word(fresh_pseudoword(rng, 3, used));
    int len = (cfg.span_len_min + 9) / 10 * 10;
    cat.definition = build_phrase(cat.name, len + rng.uniform_int(0, 1));
    categories_.push_back(std::move(cat));
  }
}

const SyntheticWorld::Item& SyntheticWorld::pick(int band, Rng& rng) const {
  const auto& b = bands_[size_t(band)];
  return b[size_t(rng.uniform_int(0, int(b.size()) - 1))];
}

AnnotatedDocument SyntheticWorld::generate_document(const TaskSpec& spec,
                                                    Rng& rng) const {
  spec.check();
  if (spec.num_spans > num_bands())
    throw ConfigError("num_spans exceeds available length bands (" +
                      std::to_string(num_bands()) + ")");

  AnnotatedDocument doc;
  Stage stage;
  int b = spec.num_spans;

  auto add_span = [&](std::vector<TokenId> topic, std::vector<TokenId> content) {
    SpanDecl decl;
    decl.topic = std::move(topic);
    decl.predicted_len = int(content.size());
    stage.plan.spans.push_back(std::move(decl));
    stage.spans.push_back(std::move(content));
  };

  switch (spec.template_id) {
    case TemplateId::LISTING: {
      doc.prompt = {w_list_, w_facts_, w_about_};
      for (int k = 0; k < b; ++k) {
        const Item& it = pick(k, rng);
        doc.prompt.push_back(it.name);
        add_span({it.name}, it.phrase);
      }
      break;
    }
    case TemplateId::DEFINITION_EXAMPLES: {
      const Category& cat =
          categories_[size_t(rng.uniform_int(0, int(categories_.size()) - 1))];
      doc.prompt = {w_define_, cat.name, w_with_, w_examples_};
      add_span({w_definition_, cat.name}, cat.definition);
      for (int k = 1; k < b; ++k) {
        const Item& it = pick(k, rng);
        doc.prompt.push_back(it.name);
        add_span({it.name}, it.phrase);
      }
      break;
    }
    case TemplateId::SECTIONS: {
      doc.prompt = {w_report_, w_on_};
      for (int k = 0; k < b; ++k) {
        const Item& it = pick(k, rng);
        doc.prompt.push_back(it.name);
        add_span({section_words_[size_t(k) % section_words_.size()], it.name},
                 it.phrase);
      }
      break;
    }
  }

  bool synced = rng.uniform_real(0.0, 1.0) < spec.sync_probability;
  if (synced) {
    // The prompt must determine the whole response, follow-up included.
    doc.prompt.push_back(w_with_);
    doc.prompt.push_back(w_summary_);
    stage.plan.terminator = Terminator::SYNC;
    // The follow-up names each span head and echoes the token right after
    // it. That bigram occurs only inside stage-1 span content, so the
    // summary genuinely depends on the completed spans across the barrier.
    std::vector<TokenId> summary = {w_overall_};
    for (const auto& span : stage.spans) {
      summary.push_back(span[0]);
      summary.push_back(span.size() > 1 ? span[1] : span[0]);
    }
    doc.stages.push_back(std::move(stage));
    Stage s2;
    SpanDecl decl;
    decl.topic = {w_summary_};
    decl.predicted_len = int(summary.size());
    s2.plan.spans.push_back(decl);
    s2.spans.push_back(std::move(summary));
    s2.plan.terminator = Terminator::EOS;
    doc.stages.push_back(std::move(s2));
  } else {
    stage.plan.terminator = Terminator::EOS;
    doc.stages.push_back(std::move(stage));
  }

  return insert_stochastic_padding(doc, rng);
}

std::vector<AnnotatedDocument> SyntheticWorld::generate(const TaskSpec& spec,
                                                        int n, Rng& rng) const {
  std::vector<AnnotatedDocument> docs;
  docs.reserve(size_t(n));
  for (int i = 0; i < n; ++i) docs.push_back(generate_document(spec, rng));
  return docs;
}

// ---------------------------------------------------------------------------
// JSONL
// ---------------------------------------------------------------------------

std::pair<std::vector<AnnotatedDocument>, std::vector<RejectedLine>> load_jsonl(
    const std::string& path, const Vocabulary& vocab) {
  std::vector<AnnotatedDocument> docs;
  std::vector<RejectedLine> rejects;
  auto lines = read_lines(path);
  for (size_t ln = 0; ln < lines.size(); ++ln) {
    const std::string& line = lines[ln];
    if (line.empty()) continue;
    auto reject = [&](const std::string& rule, const std::string& msg) {
      rejects.push_back({int(ln) + 1, line, rule, msg});
    };
    json obj = json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object() || !obj.contains("prompt") ||
        !obj.contains("response")) {
      reject("json", "line is not a {prompt, response} object");
      continue;
    }
    std::vector<TokenId> toks;
    try {
      toks.push_back(BOS);
      auto p = vocab.encode(obj["prompt"].get<std::string>());
      toks.insert(toks.end(), p.begin(), p.end());
      auto r = vocab.encode(obj["response"].get<std::string>());
      toks.insert(toks.end(), r.begin(), r.end());
      toks.push_back(EOS);
    } catch (const EncodingError& e) {
      reject("oov", e.what());
      continue;
    }
    ValidationReport report = validate_tokens(toks);
    if (!report.ok) {
      const Violation& v = report.violations.front();
      reject(v.rule, v.message);
      continue;
    }
    docs.push_back(parse_document(toks));
  }
  return {std::move(docs), std::move(rejects)};
}

void save_jsonl(const std::vector<AnnotatedDocument>& docs,
                const Vocabulary& vocab, const std::string& path) {
  std::string out;
  for (const auto& doc : docs) {
    json obj;
    obj["prompt"] = vocab.decode(doc.prompt);
    obj["response"] = response_text(doc, vocab);
    out += obj.dump();
    out.push_back('\n');
  }
  write_file(path, out);
}

// ---------------------------------------------------------------------------
// Forward process and training examples
// ---------------------------------------------------------------------------

std::vector<TokenId> corrupt(const std::vector<TokenId>& content_tokens,
                             double t, Rng& rng) {
  if (!(t > 0.0 && t < 1.0)) throw ConfigError("noise level t must be in (0,1)");
  std::vector<TokenId> out;
  out.reserve(content_tokens.size());
  for (TokenId tok : content_tokens) {
    if (tok == MASK) throw ConfigError("corrupt input already contains MASK");
    out.push_back(rng.uniform_real(0.0, 1.0) < t ? MASK : tok);
  }
  return out;
}

std::vector<TokenId> apply_ablation(const std::vector<TokenId>& tokens,
                                    const AblationFlags& flags) {
  if (!flags.strip_topics && !flags.strip_syncs) return tokens;
  std::vector<TokenId> out;
  out.reserve(tokens.size());
  bool in_topic = false;
  for (TokenId t : tokens) {
    if (flags.strip_syncs && t == SYNC) continue;
    if (flags.strip_topics) {
      if (t == TOPIC_OPEN) in_topic = true;
      if (t == TOPIC_CLOSE) in_topic = false;
      // Keep tags and the length attribute, drop label words.
      if (in_topic && is_content(t)) continue;
    }
    out.push_back(t);
  }
  return out;
}

TrainingExample make_training_example(const AnnotatedDocument& doc, double t,
                                      MaskMode mask_mode,
                                      const AblationFlags& flags, Rng& rng) {
  TrainingExample ex;
  ex.t = t;
  ex.mask_mode = mask_mode;
  ex.ablation = flags;
  ex.clean = apply_ablation(serialize(doc), flags);
  ex.roles = assign_roles(ex.clean);
  ex.noised = ex.clean;
  int n = int(ex.clean.size());
  ex.loss_weight.assign(size_t(n), 0.0f);
  for (int i = 0; i < n; ++i) {
    if (ex.roles.roles[size_t(i)] == Role::CONTENT &&
        rng.uniform_real(0.0, 1.0) < t)
      ex.noised[size_t(i)] = MASK;
  }
  for (int i = 1; i < n; ++i) {
    Role r = ex.roles.roles[size_t(i)];
    Role prev = ex.roles.roles[size_t(i) - 1];
    if (r == Role::CONTENT) {
      if (ex.noised[size_t(i)] == MASK) ex.loss_weight[size_t(i)] = float(1.0 / t);
    } else if (prev != Role::CONTENT) {
      // Plan target predicted from the previous position; positions right
      // after span interiors (</async>) have no usable causal predictor.
      ex.loss_weight[size_t(i)] = 1.0f;
    }
  }
  return ex;
}

TrainingExample make_ar_stripped_example(const AnnotatedDocument& doc) {
  TrainingExample ex;
  ex.t = 1.0;
  ex.mask_mode = MaskMode::SPAN_ISOLATED;
  ex.clean.push_back(BOS);
  ex.clean.insert(ex.clean.end(), doc.prompt.begin(), doc.prompt.end());
  auto body = stripped_response(doc);
  ex.clean.insert(ex.clean.end(), body.begin(), body.end());
  ex.clean.push_back(EOS);
  ex.noised = ex.clean;
  ex.roles = assign_roles(ex.clean);  // no tags: everything causal plan
  int n = int(ex.clean.size());
  ex.loss_weight.assign(size_t(n), 0.0f);
  for (int i = 1; i < n; ++i) ex.loss_weight[size_t(i)] = 1.0f;
  return ex;
}

TrainingExample make_diffusion_stripped_example(const AnnotatedDocument& doc,
                                                double t, Rng& rng) {
  TrainingExample ex;
  ex.t = t;
  ex.mask_mode = MaskMode::SPAN_ISOLATED;
  ex.clean.push_back(BOS);
  ex.clean.insert(ex.clean.end(), doc.prompt.begin(), doc.prompt.end());
  auto body = stripped_response(doc);
  int canvas_start = int(ex.clean.size());
  ex.clean.insert(ex.clean.end(), body.begin(), body.end());
  ex.clean.push_back(EOS);
  int n = int(ex.clean.size());

  // Prompt is causal context; the response is one tagless bidirectional
  // canvas, as the plain-diffusion baseline decodes it.
  ex.roles.roles.assign(size_t(n), Role::PLAN);
  ex.roles.block_of.assign(size_t(n), -1);
  if (!body.empty()) {
    SpanExtent e;
    e.open = canvas_start;
    e.close = canvas_start + int(body.size()) - 1;
    e.stage_id = 0;
    e.span_id = 0;
    ex.roles.extents.push_back(e);
    for (int i = e.open; i <= e.close; ++i) {
      ex.roles.roles[size_t(i)] = Role::CONTENT;
      ex.roles.block_of[size_t(i)] = 0;
    }
  }

  ex.noised = ex.clean;
  ex.loss_weight.assign(size_t(n), 0.0f);
  for (int i = 0; i < n; ++i) {
    if (ex.roles.roles[size_t(i)] == Role::CONTENT &&
        rng.uniform_real(0.0, 1.0) < t) {
      ex.noised[size_t(i)] = MASK;
      ex.loss_weight[size_t(i)] = float(1.0 / t);
    }
  }
  return ex;
}

void write_manifest(const std::string& path,
                    const std::vector<std::pair<std::string, std::string>>& kv) {
  std::string out;
  for (const auto& [k, v] : kv) {
    out += k;
    out += " = ";
    out += v;
    out.push_back('\n');
  }
  write_file(path, out);
}

}  // namespace pd
