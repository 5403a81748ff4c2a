#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pd/tags.hpp"
#include "pd/tokens.hpp"

namespace pd {

enum class Role : uint8_t { PLAN, CONTENT, BARRIER };
enum class MaskMode : uint8_t { SPAN_ISOLATED, DENSE };

const char* mask_mode_name(MaskMode mode);

// One async block, tags included: positions [open, close] attend each other
// bidirectionally during denoising.
struct SpanExtent {
  int open = 0;   // position of <async>
  int close = 0;  // position of </async>
  int stage_id = 0;
  int span_id = 0;  // ordinal within its stage
};

struct RoleSequence {
  std::vector<Role> roles;
  std::vector<int32_t> block_of;  // extent index or -1, tags included
  std::vector<SpanExtent> extents;
  std::vector<int> barriers;      // positions of <sync/> tokens
  std::vector<int> stage_begin;   // first position of each stage

  int size() const { return int(roles.size()); }
  bool in_block(int i) const { return block_of[size_t(i)] >= 0; }
  // Content role only; -1 for plan/barrier/tag positions.
  int span_id_at(int i) const;
  int stage_id_at(int i) const;
};

// Deterministic labeling of a (possibly partial) tagged sequence: control
// tags, attributes, prompt and BOS/EOS map to PLAN; <sync/> to BARRIER;
// async interiors (including PAD and MASK placeholders) to CONTENT.
// Throws MalformedTag when content appears outside any span.
RoleSequence assign_roles(const std::vector<TokenId>& tokens);

// Dense boolean attention mask with per-row content hashes. Rows are fixed
// at construction; allowed(i, j) == row i may attend column j.
class AttentionMask {
 public:
  AttentionMask() = default;
  explicit AttentionMask(int n);

  static AttentionMask build(const RoleSequence& roles, MaskMode mode);

  int size() const { return n_; }
  bool allowed(int i, int j) const {
    return (bits_[size_t(i) * size_t(wpr_) + size_t(j >> 6)] >>
            (unsigned(j) & 63u)) & 1u;
  }
  void set(int i, int j) {
    bits_[size_t(i) * size_t(wpr_) + size_t(j >> 6)] |= (1ULL << (unsigned(j) & 63u));
  }
  void set_range(int i, int lo, int hi);    // [lo, hi] inclusive
  void clear_range(int i, int lo, int hi);  // [lo, hi] inclusive
  void clear_row(int i);

  // Order-independent hash of the set of allowed columns in row i.
  uint64_t row_hash(int i) const;

  // Text grid of 0/1 characters, one row per line.
  std::string to_grid() const;

 private:
  int n_ = 0;
  int wpr_ = 0;  // 64-bit words per row
  std::vector<uint64_t> bits_;
};

// Incrementally grown mask for generation: rows are appended as structure
// unfolds and never change afterwards, so prefix rows stay valid for KV
// caching. Produces rows identical to AttentionMask::build on the final
// layout.
class MaskBuilder {
 public:
  MaskBuilder(int capacity, MaskMode mode);

  int size() const { return n_; }
  MaskMode mode() const { return mode_; }
  const RoleSequence& roles() const { return roles_; }

  void append_plan();     // prompt word, tag, attribute, or EOS
  void append_barrier();  // <sync/>
  // Whole async block including its tags; interior_len >= 1.
  void append_block(int interior_len);
  // All concurrent blocks of one stage at once, so DENSE rows see their
  // stage-mates in both directions.
  void append_stage_blocks(const std::vector<int>& interior_lens);
  // Tagless bidirectional region (the plain-diffusion canvas).
  void append_canvas(int len);
  // Rewinds to length n; only valid at block boundaries.
  void truncate(int n);

  bool allowed(int i, int j) const { return mask_.allowed(i, j); }
  uint64_t row_hash(int i) const { return mask_.row_hash(i); }
  const AttentionMask& mask() const { return mask_; }

 private:
  void fill_row(int i);

  int capacity_;
  int n_ = 0;
  MaskMode mode_;
  RoleSequence roles_;
  AttentionMask mask_;
};

}  // namespace pd
