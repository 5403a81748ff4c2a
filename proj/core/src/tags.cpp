#include "pd/tags.hpp"

#include <algorithm>

namespace pd {

int Plan::max_span_len() const {
  int m = 0;
  for (const auto& s : spans) m = std::max(m, s.predicted_len);
  return m;
}

int round_up_multiple(int value, int multiple) {
  if (value <= 0) return multiple;
  return ((value + multiple - 1) / multiple) * multiple;
}

namespace {

struct Cursor {
  const std::vector<TokenId>& toks;
  size_t i = 0;

  bool done() const { return i >= toks.size(); }
  TokenId peek() const {
    if (done()) throw MalformedTag("unexpected end of sequence");
    return toks[i];
  }
  TokenId take() {
    TokenId t = peek();
    ++i;
    return t;
  }
  int pos() const { return int(i); }
};

SpanDecl parse_topic_block(Cursor& c) {
  if (c.take() != TOPIC_OPEN) throw MalformedTag("expected <topic>");
  SpanDecl decl;
  while (!c.done() && is_content(c.peek())) decl.topic.push_back(c.take());
  if (c.done()) throw MalformedTag("unterminated topic block");
  if (decl.topic.empty() && !is_length_token(c.peek()))
    throw MissingAttribute("topic block missing label and length at position " +
                           std::to_string(c.pos()));
  if (!is_length_token(c.peek()))
    throw MissingAttribute("topic block missing length at position " +
                           std::to_string(c.pos()));
  decl.predicted_len = length_value(c.take());
  if (c.done() || c.peek() != TOPIC_CLOSE)
    throw MalformedTag("expected </topic> at position " + std::to_string(c.pos()));
  c.take();
  return decl;
}

std::vector<TokenId> parse_async_block(Cursor& c) {
  if (c.take() != ASYNC_OPEN) throw MalformedTag("expected <async>");
  std::vector<TokenId> content;
  while (!c.done() && c.peek() != ASYNC_CLOSE) {
    TokenId t = c.take();
    if (t == TOPIC_OPEN || t == TOPIC_CLOSE || t == ASYNC_OPEN || t == SYNC ||
        t == EOS || t == BOS)
      throw MalformedTag("control token inside span at position " +
                         std::to_string(c.pos() - 1));
    content.push_back(t);
  }
  if (c.done()) throw MalformedTag("unterminated <async> block");
  c.take();  // </async>
  return content;
}

}  // namespace

AnnotatedDocument parse_document(const std::vector<TokenId>& tokens) {
  if (tokens.empty() || tokens.front() != BOS)
    throw MalformedTag("document must begin with <bos>");
  if (tokens.back() != EOS)
    throw MalformedTag("document must end with <eos>");

  Cursor c{tokens, 1};
  AnnotatedDocument doc;
  while (!c.done() && is_content(c.peek())) doc.prompt.push_back(c.take());

  while (true) {
    Stage stage;
    if (c.peek() != TOPIC_OPEN)
      throw MalformedTag("expected <topic> at position " +
                         std::to_string(c.pos()));
    while (!c.done() && c.peek() == TOPIC_OPEN)
      stage.plan.spans.push_back(parse_topic_block(c));
    int declared = int(stage.plan.spans.size());
    int actual = 0;
    while (!c.done() && c.peek() == ASYNC_OPEN) {
      stage.spans.push_back(parse_async_block(c));
      ++actual;
    }
    if (actual < declared)
      throw MissingSpan("plan declares " + std::to_string(declared) +
                        " spans, found " + std::to_string(actual));
    if (c.done()) throw MalformedTag("missing stage terminator");
    TokenId term = c.take();
    if (term == SYNC) {
      stage.plan.terminator = Terminator::SYNC;
      doc.stages.push_back(std::move(stage));
      continue;
    }
    if (term == EOS) {
      stage.plan.terminator = Terminator::EOS;
      doc.stages.push_back(std::move(stage));
      if (!c.done())
        throw MalformedTag("tokens after <eos> at position " +
                           std::to_string(c.pos()));
      break;
    }
    throw MalformedTag("expected <sync/> or <eos> at position " +
                       std::to_string(c.pos() - 1));
  }
  return doc;
}

std::vector<TokenId> serialize(const AnnotatedDocument& doc) {
  std::vector<TokenId> out;
  out.push_back(BOS);
  out.insert(out.end(), doc.prompt.begin(), doc.prompt.end());
  for (const auto& stage : doc.stages) {
    for (const auto& decl : stage.plan.spans) {
      out.push_back(TOPIC_OPEN);
      out.insert(out.end(), decl.topic.begin(), decl.topic.end());
      out.push_back(length_token(decl.predicted_len));
      out.push_back(TOPIC_CLOSE);
    }
    for (const auto& span : stage.spans) {
      out.push_back(ASYNC_OPEN);
      out.insert(out.end(), span.begin(), span.end());
      out.push_back(ASYNC_CLOSE);
    }
    out.push_back(stage.plan.terminator == Terminator::SYNC ? SYNC : EOS);
  }
  return out;
}

ValidationReport validate(const AnnotatedDocument& doc) {
  ValidationReport report;
  // Rule order: structure, span-count, topic-length, length-range,
  // coverage/content, terminator placement.
  if (doc.stages.empty()) report.add("structure", 0, "document has no stages");
  int pos = 1 + int(doc.prompt.size());
  for (size_t s = 0; s < doc.stages.size(); ++s) {
    const Stage& stage = doc.stages[s];
    if (stage.plan.spans.empty())
      report.add("structure", pos,
                 "stage " + std::to_string(s) + " declares no spans");
    if (stage.spans.size() != stage.plan.spans.size())
      report.add("span-count", pos,
                 "stage " + std::to_string(s) + " declares " +
                     std::to_string(stage.plan.spans.size()) + " spans, has " +
                     std::to_string(stage.spans.size()) + " async blocks");
    for (size_t k = 0; k < stage.plan.spans.size(); ++k) {
      const SpanDecl& d = stage.plan.spans[k];
      if (d.topic.empty())
        report.add("topic-missing", pos, "span has no topic label");
      if (d.topic.size() > 3)
        report.add("topic-length", pos,
                   "topic label has " + std::to_string(d.topic.size()) +
                       " tokens (max 3)");
      for (TokenId t : d.topic)
        if (!is_content(t))
          report.add("topic-content", pos, "topic label must be content words");
      if (d.predicted_len < 1 || d.predicted_len > kMaxLength)
        report.add("length-range", pos,
                   "predicted length " + std::to_string(d.predicted_len) +
                       " outside [1, " + std::to_string(kMaxLength) + "]");
      pos += 3 + int(d.topic.size());
    }
    for (const auto& span : stage.spans) {
      ++pos;  // <async>
      for (TokenId t : span) {
        if (t == MASK)
          report.add("content", pos, "MASK token inside clean span");
        else if (is_control(t) && t != PAD)
          report.add("content", pos, "control token inside span");
        else if (is_length_token(t))
          report.add("content", pos, "length token inside span");
        ++pos;
      }
      ++pos;  // </async>
    }
    bool last = (s + 1 == doc.stages.size());
    if (last && stage.plan.terminator != Terminator::EOS)
      report.add("terminator", pos, "final stage must terminate with <eos>");
    if (!last && stage.plan.terminator != Terminator::SYNC)
      report.add("terminator", pos,
                 "non-final stage must terminate with <sync/>");
    ++pos;
  }
  for (TokenId t : doc.prompt)
    if (!is_content(t))
      report.add("prompt", 0, "prompt must contain content words only");
  return report;
}

ValidationReport validate_tokens(const std::vector<TokenId>& tokens) {
  try {
    return validate(parse_document(tokens));
  } catch (const MissingAttribute& e) {
    ValidationReport r;
    r.add("missing-attribute", -1, e.what());
    return r;
  } catch (const AttributeRange& e) {
    ValidationReport r;
    r.add("attribute-range", -1, e.what());
    return r;
  } catch (const MissingSpan& e) {
    ValidationReport r;
    r.add("span-count", -1, e.what());
    return r;
  } catch (const MalformedTag& e) {
    ValidationReport r;
    r.add("balance", -1, e.what());
    return r;
  }
}

std::vector<TokenId> strip_control(const std::vector<TokenId>& tokens) {
  std::vector<TokenId> out;
  out.reserve(tokens.size());
  bool in_topic = false;
  for (TokenId t : tokens) {
    if (t == TOPIC_OPEN) {
      in_topic = true;
      continue;
    }
    if (t == TOPIC_CLOSE) {
      in_topic = false;
      continue;
    }
    if (in_topic || is_control(t) || is_length_token(t)) continue;
    out.push_back(t);
  }
  return out;
}

AnnotatedDocument insert_stochastic_padding(const AnnotatedDocument& doc,
                                            Rng& rng) {
  AnnotatedDocument out = doc;
  for (auto& stage : out.stages) {
    for (size_t k = 0; k < stage.spans.size(); ++k) {
      int pad = rng.uniform_int(0, 10);
      stage.spans[k].insert(stage.spans[k].end(), size_t(pad), PAD);
      if (k < stage.plan.spans.size())
        stage.plan.spans[k].predicted_len =
            round_up_multiple(int(stage.spans[k].size()), 10);
    }
  }
  return out;
}

std::vector<TokenId> stripped_response(const AnnotatedDocument& doc) {
  std::vector<TokenId> toks = serialize(doc);
  std::vector<TokenId> body(toks.begin() + 1 + long(doc.prompt.size()),
                            toks.end());
  return strip_control(body);
}

std::string response_text(const AnnotatedDocument& doc, const Vocabulary& v) {
  std::vector<TokenId> toks = serialize(doc);
  // Drop the BOS, the prompt prefix, and the final EOS: the JSONL response
  // field holds the tagged stages only.
  std::vector<TokenId> body(toks.begin() + 1 + long(doc.prompt.size()),
                            toks.end() - 1);
  return v.decode(body);
}

AnnotatedDocument document_from_text(const std::string& prompt,
                                     const std::string& response,
                                     const Vocabulary& v) {
  std::vector<TokenId> toks;
  toks.push_back(BOS);
  auto p = v.encode(prompt);
  toks.insert(toks.end(), p.begin(), p.end());
  auto r = v.encode(response);
  toks.insert(toks.end(), r.begin(), r.end());
  toks.push_back(EOS);
  return parse_document(toks);
}

}  // namespace pd
