#include "pd/tokens.hpp"

#include <sstream>

namespace pd {

const char* control_text(ControlKind kind) {
  switch (kind) {
    case ControlKind::BOS: return "<bos>";
    case ControlKind::EOS: return "<eos>";
    case ControlKind::MASK: return "[MASK]";
    case ControlKind::PAD: return "[PAD]";
    case ControlKind::TOPIC_OPEN: return "<topic>";
    case ControlKind::TOPIC_CLOSE: return "</topic>";
    case ControlKind::ASYNC_OPEN: return "<async>";
    case ControlKind::ASYNC_CLOSE: return "</async>";
    case ControlKind::SYNC: return "<sync/>";
  }
  return "?";
}

std::vector<std::string> split_ws(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

Vocabulary::Vocabulary() {
  id_to_text_.reserve(kContentBase);
  for (int i = 0; i < kNumControl; ++i) {
    id_to_text_.push_back(control_text(ControlKind(i)));
  }
  for (int len = 1; len <= kMaxLength; ++len) {
    id_to_text_.push_back(std::to_string(len));
  }
  for (TokenId i = 0; i < TokenId(id_to_text_.size()); ++i) {
    text_to_id_.emplace(id_to_text_[size_t(i)], i);
  }
}

Vocabulary::Vocabulary(const std::vector<std::string>& content_words)
    : Vocabulary() {
  for (const auto& w : content_words) add_word(w);
}

TokenId Vocabulary::add_word(const std::string& word) {
  auto it = text_to_id_.find(word);
  if (it != text_to_id_.end()) {
    if (it->second < kContentBase)
      throw EncodingError("word collides with reserved token: " + word);
    return it->second;
  }
  TokenId id = TokenId(id_to_text_.size());
  id_to_text_.push_back(word);
  text_to_id_.emplace(word, id);
  return id;
}

std::optional<TokenId> Vocabulary::find(const std::string& word) const {
  auto it = text_to_id_.find(word);
  if (it == text_to_id_.end()) return std::nullopt;
  return it->second;
}

std::vector<TokenId> Vocabulary::encode(const std::string& text) const {
  std::vector<TokenId> out;
  for (const auto& w : split_ws(text)) {
    auto id = find(w);
    if (!id) throw EncodingError("out-of-vocabulary word: " + w);
    out.push_back(*id);
  }
  return out;
}

std::string Vocabulary::decode(const std::vector<TokenId>& tokens) const {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += text(tokens[i]);
  }
  return out;
}

const std::string& Vocabulary::text(TokenId t) const {
  if (t < 0 || size_t(t) >= id_to_text_.size())
    throw EncodingError("token id out of range: " + std::to_string(t));
  return id_to_text_[size_t(t)];
}

std::vector<std::string> Vocabulary::content_words() const {
  return {id_to_text_.begin() + kContentBase, id_to_text_.end()};
}

void Vocabulary::save(const std::string& path) const {
  std::string out;
  for (const auto& w : content_words()) {
    out += w;
    out.push_back('\n');
  }
  write_file(path, out);
}

Vocabulary Vocabulary::load(const std::string& path) {
  Vocabulary v;
  for (const auto& line : read_lines(path)) {
    if (!line.empty()) v.add_word(line);
  }
  return v;
}

}  // namespace pd
