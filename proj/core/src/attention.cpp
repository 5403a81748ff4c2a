#include "pd/attention.hpp"

#include <algorithm>

namespace pd {

const char* mask_mode_name(MaskMode mode) {
  return mode == MaskMode::SPAN_ISOLATED ? "isolated" : "dense";
}

int RoleSequence::span_id_at(int i) const {
  int b = block_of[size_t(i)];
  return b < 0 ? -1 : extents[size_t(b)].span_id;
}

int RoleSequence::stage_id_at(int i) const {
  int b = block_of[size_t(i)];
  return b < 0 ? -1 : extents[size_t(b)].stage_id;
}

// ---------------------------------------------------------------------------
// Role assignment
// ---------------------------------------------------------------------------

RoleSequence assign_roles(const std::vector<TokenId>& tokens) {
  RoleSequence rs;
  int n = int(tokens.size());
  if (n == 0) return rs;
  if (tokens[0] != BOS)
    throw MalformedTag("sequence must begin with <bos>; content outside any span");
  rs.roles.assign(size_t(n), Role::PLAN);
  rs.block_of.assign(size_t(n), -1);

  enum class St {
    Prompt,
    TopicBody,
    AfterTopicClose,
    BlockInterior,
    AfterBlock,
    AfterBarrier,
    Done
  };
  St st = St::Prompt;
  int stage = 0;
  int span_ordinal = 0;
  int open_extent = -1;

  auto start_block = [&](int i) {
    SpanExtent e;
    e.open = i;
    e.close = i;  // patched at close (or sequence end for partial input)
    e.stage_id = stage;
    e.span_id = span_ordinal++;
    rs.extents.push_back(e);
    open_extent = int(rs.extents.size()) - 1;
    rs.block_of[size_t(i)] = open_extent;
    st = St::BlockInterior;
  };
  auto begin_stage = [&](int i) {
    rs.stage_begin.push_back(i);
    span_ordinal = 0;
  };

  for (int i = 1; i < n; ++i) {
    TokenId t = tokens[i];
    switch (st) {
      case St::Prompt:
        if (is_content(t)) break;
        if (t == TOPIC_OPEN) {
          begin_stage(i);
          st = St::TopicBody;
          break;
        }
        if (t == EOS) {
          st = St::Done;
          break;
        }
        throw MalformedTag("unexpected token at position " + std::to_string(i));
      case St::TopicBody:
        if (is_content(t) || is_length_token(t)) break;
        if (t == TOPIC_CLOSE) {
          st = St::AfterTopicClose;
          break;
        }
        throw MalformedTag("malformed topic block at position " +
                           std::to_string(i));
      case St::AfterTopicClose:
        if (t == TOPIC_OPEN) {
          st = St::TopicBody;
          break;
        }
        if (t == ASYNC_OPEN) {
          start_block(i);
          break;
        }
        if (t == EOS) {
          st = St::Done;
          break;
        }
        throw MalformedTag("expected <topic> or <async> at position " +
                           std::to_string(i));
      case St::BlockInterior:
        if (is_content(t) || t == PAD || t == MASK) {
          rs.roles[size_t(i)] = Role::CONTENT;
          rs.block_of[size_t(i)] = open_extent;
          break;
        }
        if (t == ASYNC_CLOSE) {
          rs.block_of[size_t(i)] = open_extent;
          rs.extents[size_t(open_extent)].close = i;
          open_extent = -1;
          st = St::AfterBlock;
          break;
        }
        throw MalformedTag("illegal token inside span at position " +
                           std::to_string(i));
      case St::AfterBlock:
        if (t == ASYNC_OPEN) {
          start_block(i);
          break;
        }
        if (t == SYNC) {
          rs.roles[size_t(i)] = Role::BARRIER;
          rs.barriers.push_back(i);
          ++stage;
          st = St::AfterBarrier;
          break;
        }
        if (t == EOS) {
          st = St::Done;
          break;
        }
        if (t == TOPIC_OPEN) {
          // Barrier-free stage continuation (sync-stripped training data).
          begin_stage(i);
          st = St::TopicBody;
          break;
        }
        throw MalformedTag("content outside any span at position " +
                           std::to_string(i));
      case St::AfterBarrier:
        if (t == TOPIC_OPEN) {
          begin_stage(i);
          st = St::TopicBody;
          break;
        }
        if (t == EOS) {
          st = St::Done;
          break;
        }
        throw MalformedTag("expected <topic> after <sync/> at position " +
                           std::to_string(i));
      case St::Done:
        throw MalformedTag("tokens after <eos> at position " + std::to_string(i));
    }
  }
  // Partial input may end inside a block; close the extent at the end.
  if (open_extent >= 0) rs.extents[size_t(open_extent)].close = n - 1;
  return rs;
}

// ---------------------------------------------------------------------------
// Mask construction
// ---------------------------------------------------------------------------

AttentionMask::AttentionMask(int n)
    : n_(n), wpr_((n + 63) / 64), bits_(size_t(n) * size_t(wpr_), 0) {}

void AttentionMask::set_range(int i, int lo, int hi) {
  for (int j = lo; j <= hi; ++j) set(i, j);
}

void AttentionMask::clear_range(int i, int lo, int hi) {
  for (int j = lo; j <= hi; ++j)
    bits_[size_t(i) * size_t(wpr_) + size_t(j >> 6)] &=
        ~(1ULL << (unsigned(j) & 63u));
}

void AttentionMask::clear_row(int i) {
  std::fill_n(bits_.begin() + long(i) * wpr_, wpr_, 0ULL);
}

uint64_t AttentionMask::row_hash(int i) const {
  // Hash of the set of allowed column indices; independent of row storage
  // width so incremental and batch-built masks agree.
  uint64_t h = 0xcbf29ce484222325ULL;
  const uint64_t* row = &bits_[size_t(i) * size_t(wpr_)];
  for (int w = 0; w < wpr_; ++w) {
    uint64_t word = row[w];
    while (word) {
      int bit = __builtin_ctzll(word);
      word &= word - 1;
      uint64_t j = uint64_t(w) * 64 + uint64_t(bit);
      h ^= j + 0x9e3779b97f4a7c15ULL;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::string AttentionMask::to_grid() const {
  std::string out;
  out.reserve(size_t(n_) * size_t(n_ + 1));
  for (int i = 0; i < n_; ++i) {
    for (int j = 0; j < n_; ++j) out.push_back(allowed(i, j) ? '1' : '0');
    out.push_back('\n');
  }
  return out;
}

namespace {

bool block_synced_before(const RoleSequence& rs, const SpanExtent& e, int i) {
  for (int q : rs.barriers)
    if (q > e.close && q < i) return true;
  return false;
}

// Mask rules. (1) plan and barrier rows are causal; (2) rows inside an async
// block attend the whole block bidirectionally, tags included; (3) a block is
// hidden from every later row until a barrier follows it, which also keeps
// concurrent siblings isolated; in DENSE mode same-stage blocks cross-attend;
// (4) a barrier row attends everything up to itself.
void fill_mask_row(const RoleSequence& rs, int i, MaskMode mode,
                   AttentionMask& m) {
  m.set_range(i, 0, i);
  if (rs.roles[size_t(i)] == Role::BARRIER) return;
  int my_block = rs.block_of[size_t(i)];
  int my_stage = my_block >= 0 ? rs.extents[size_t(my_block)].stage_id : -1;
  for (size_t b = 0; b < rs.extents.size(); ++b) {
    const SpanExtent& e = rs.extents[b];
    bool mine = int(b) == my_block;
    bool stage_mate = mode == MaskMode::DENSE && my_block >= 0 &&
                      e.stage_id == my_stage;
    if (mine || stage_mate) {
      m.set_range(i, e.open, e.close);
    } else if (e.open <= i && !block_synced_before(rs, e, i)) {
      m.clear_range(i, e.open, std::min(e.close, i));
    }
  }
}

}  // namespace

AttentionMask AttentionMask::build(const RoleSequence& rs, MaskMode mode) {
  AttentionMask m(rs.size());
  for (int i = 0; i < rs.size(); ++i) fill_mask_row(rs, i, mode, m);
  return m;
}

// ---------------------------------------------------------------------------
// Incremental builder
// ---------------------------------------------------------------------------

MaskBuilder::MaskBuilder(int capacity, MaskMode mode)
    : capacity_(capacity), mode_(mode), mask_(capacity) {}

void MaskBuilder::fill_row(int i) {
  mask_.clear_row(i);  // rows may be refilled after truncate()
  fill_mask_row(roles_, i, mode_, mask_);
}

void MaskBuilder::truncate(int n) {
  if (n < 0 || n > n_) throw ConfigError("MaskBuilder::truncate out of range");
  for (const auto& e : roles_.extents)
    if (e.open < n && e.close >= n)
      throw ConfigError("MaskBuilder::truncate inside a block");
  roles_.roles.resize(size_t(n));
  roles_.block_of.resize(size_t(n));
  while (!roles_.extents.empty() && roles_.extents.back().open >= n)
    roles_.extents.pop_back();
  while (!roles_.barriers.empty() && roles_.barriers.back() >= n)
    roles_.barriers.pop_back();
  while (!roles_.stage_begin.empty() && roles_.stage_begin.back() >= n)
    roles_.stage_begin.pop_back();
  n_ = n;
}

void MaskBuilder::append_plan() {
  if (n_ >= capacity_) throw SequenceTooLong("mask capacity exceeded");
  roles_.roles.push_back(Role::PLAN);
  roles_.block_of.push_back(-1);
  fill_row(n_);
  ++n_;
}

void MaskBuilder::append_barrier() {
  if (n_ >= capacity_) throw SequenceTooLong("mask capacity exceeded");
  roles_.roles.push_back(Role::BARRIER);
  roles_.block_of.push_back(-1);
  roles_.barriers.push_back(n_);
  fill_row(n_);
  ++n_;
}

void MaskBuilder::append_block(int interior_len) {
  append_stage_blocks({interior_len});
}

void MaskBuilder::append_stage_blocks(const std::vector<int>& interior_lens) {
  int total = 0;
  for (int l : interior_lens) total += l + 2;
  if (n_ + total > capacity_) throw SequenceTooLong("mask capacity exceeded");
  int first = n_;
  for (int l : interior_lens) {
    int len = l + 2;  // tags included
    SpanExtent e;
    e.open = n_;
    e.close = n_ + len - 1;
    // Stage = number of barriers so far; span ordinal counts stage-mates.
    e.stage_id = int(roles_.barriers.size());
    e.span_id = 0;
    for (auto it = roles_.extents.rbegin(); it != roles_.extents.rend(); ++it) {
      if (it->stage_id == e.stage_id) {
        e.span_id = it->span_id + 1;
        break;
      }
    }
    int idx = int(roles_.extents.size());
    roles_.extents.push_back(e);
    for (int p = e.open; p <= e.close; ++p) {
      bool tag = (p == e.open || p == e.close);
      roles_.roles.push_back(tag ? Role::PLAN : Role::CONTENT);
      roles_.block_of.push_back(idx);
    }
    n_ += len;
  }
  for (int p = first; p < n_; ++p) fill_row(p);
}

void MaskBuilder::append_canvas(int len) {
  if (n_ + len > capacity_) throw SequenceTooLong("mask capacity exceeded");
  SpanExtent e;
  e.open = n_;
  e.close = n_ + len - 1;
  e.stage_id = int(roles_.barriers.size());
  e.span_id = 0;
  int idx = int(roles_.extents.size());
  roles_.extents.push_back(e);
  for (int p = e.open; p <= e.close; ++p) {
    roles_.roles.push_back(Role::CONTENT);
    roles_.block_of.push_back(idx);
  }
  for (int p = e.open; p <= e.close; ++p) fill_row(p);
  n_ += len;
}

}  // namespace pd
