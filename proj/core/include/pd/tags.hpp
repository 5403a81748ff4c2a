#pragma once

#include <string>
#include <vector>

#include "pd/tokens.hpp"
#include "pd/util.hpp"

namespace pd {

// One declared span: a short topic label plus a predicted token count.
struct SpanDecl {
  std::vector<TokenId> topic;  // <= 3 tokens in valid documents
  int predicted_len = 0;       // [1, kMaxLength]

  bool operator==(const SpanDecl&) const = default;
};

enum class Terminator : uint8_t { SYNC, EOS };

struct Plan {
  std::vector<SpanDecl> spans;
  Terminator terminator = Terminator::EOS;

  int num_spans() const { return int(spans.size()); }
  int span_len(int k) const { return spans[size_t(k)].predicted_len; }
  int max_span_len() const;

  bool operator==(const Plan&) const = default;
};

struct Stage {
  Plan plan;
  std::vector<std::vector<TokenId>> spans;  // realized content, plan order

  bool operator==(const Stage&) const = default;
};

// A tokenized prompt/response pair segmented into planning stages.
// Serialized layout per stage: topic declarations, async blocks, terminator.
struct AnnotatedDocument {
  std::vector<TokenId> prompt;
  std::vector<Stage> stages;

  bool operator==(const AnnotatedDocument&) const = default;
};

struct Violation {
  std::string rule;  // rule id, e.g. "balance", "coverage", "topic-length"
  int position = -1;
  std::string message;
};

struct ValidationReport {
  bool ok = true;
  std::vector<Violation> violations;

  void add(const std::string& rule, int position, const std::string& message) {
    ok = false;
    violations.push_back({rule, position, message});
  }
};

// Full token sequence: BOS, prompt words, stages, final EOS.
// Throws MalformedTag / MissingAttribute / AttributeRange / MissingSpan.
AnnotatedDocument parse_document(const std::vector<TokenId>& tokens);

std::vector<TokenId> serialize(const AnnotatedDocument& doc);

// Structural checks with deterministic rule ordering; never throws.
ValidationReport validate(const AnnotatedDocument& doc);

// Token-level validation: parse failures become violations (rule "balance",
// "missing-attribute", "attribute-range", "span-count") instead of throws.
ValidationReport validate_tokens(const std::vector<TokenId>& tokens);

// Removes the whole control apparatus: control tokens, PAD, length tokens,
// and topic-label attributes. Keeps content order. Idempotent.
std::vector<TokenId> strip_control(const std::vector<TokenId>& tokens);

// Appends k ~ U{0..10} PAD tokens per span and re-declares predicted_len as
// the padded length rounded up to the next multiple of 10.
AnnotatedDocument insert_stochastic_padding(const AnnotatedDocument& doc,
                                            Rng& rng);

// Content tokens of the response, in order (the exact-match ground truth).
std::vector<TokenId> stripped_response(const AnnotatedDocument& doc);

// Response text (no BOS/EOS) <-> document glue used by the JSONL corpus.
std::string response_text(const AnnotatedDocument& doc, const Vocabulary& v);
AnnotatedDocument document_from_text(const std::string& prompt,
                                     const std::string& response,
                                     const Vocabulary& v);

int round_up_multiple(int value, int multiple);

}  // namespace pd
