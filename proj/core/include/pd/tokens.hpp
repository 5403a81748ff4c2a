#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "pd/util.hpp"

namespace pd {

using TokenId = int32_t;

// Reserved vocabulary layout. Control ids come first, then the dedicated
// length vocabulary (one token per integer length in [1, kMaxLength]),
// then content words. Classification is pure id arithmetic.
enum class ControlKind : uint8_t {
  BOS = 0,
  EOS = 1,
  MASK = 2,
  PAD = 3,
  TOPIC_OPEN = 4,
  TOPIC_CLOSE = 5,
  ASYNC_OPEN = 6,
  ASYNC_CLOSE = 7,
  SYNC = 8,
};

inline constexpr int kNumControl = 9;
inline constexpr int kMaxLength = 512;
inline constexpr TokenId kLengthBase = kNumControl;  // length L -> id 9 + L - 1
inline constexpr TokenId kContentBase = kLengthBase + kMaxLength;

inline constexpr TokenId BOS = TokenId(ControlKind::BOS);
inline constexpr TokenId EOS = TokenId(ControlKind::EOS);
inline constexpr TokenId MASK = TokenId(ControlKind::MASK);
inline constexpr TokenId PAD = TokenId(ControlKind::PAD);
inline constexpr TokenId TOPIC_OPEN = TokenId(ControlKind::TOPIC_OPEN);
inline constexpr TokenId TOPIC_CLOSE = TokenId(ControlKind::TOPIC_CLOSE);
inline constexpr TokenId ASYNC_OPEN = TokenId(ControlKind::ASYNC_OPEN);
inline constexpr TokenId ASYNC_CLOSE = TokenId(ControlKind::ASYNC_CLOSE);
inline constexpr TokenId SYNC = TokenId(ControlKind::SYNC);

inline bool is_control(TokenId t) { return t >= 0 && t < kNumControl; }
inline bool is_length_token(TokenId t) {
  return t >= kLengthBase && t < kContentBase;
}
inline bool is_content(TokenId t) { return t >= kContentBase; }
inline int length_value(TokenId t) { return int(t - kLengthBase) + 1; }
inline TokenId length_token(int len) {
  if (len < 1 || len > kMaxLength)
    throw AttributeRange("length out of range: " + std::to_string(len));
  return kLengthBase + TokenId(len - 1);
}

const char* control_text(ControlKind kind);

// Whitespace word tokenizer over a closed vocabulary. Control tags and
// length numerals map onto the reserved id ranges; everything else must be
// a registered content word (unknown words are rejected).
class Vocabulary {
 public:
  Vocabulary();
  explicit Vocabulary(const std::vector<std::string>& content_words);

  int size() const { return int(id_to_text_.size()); }

  TokenId add_word(const std::string& word);
  std::optional<TokenId> find(const std::string& word) const;

  // Throws EncodingError on out-of-vocabulary words.
  std::vector<TokenId> encode(const std::string& text) const;
  std::string decode(const std::vector<TokenId>& tokens) const;
  const std::string& text(TokenId t) const;

  std::vector<std::string> content_words() const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> id_to_text_;
  std::unordered_map<std::string, TokenId> text_to_id_;
};

std::vector<std::string> split_ws(const std::string& text);

}  // namespace pd
