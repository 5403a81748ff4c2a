#include "test_support.hpp"

#include <string>

namespace pdtest {

Vocabulary tiny_vocab() {
  std::vector<std::string> words = {"task1", "task2", "task3", "A", "B",
                                    "C",     "D",     "E",     "w", "t"};
  for (int i = 0; i < 20; ++i) words.push_back("f" + std::to_string(i));
  return Vocabulary(words);
}

std::vector<TokenId> example26(const Vocabulary& v) {
  auto w = [&](const char* s) { return *v.find(s); };
  return {BOS,
          TOPIC_OPEN, w("task1"), length_token(3), TOPIC_CLOSE,
          TOPIC_OPEN, w("task2"), length_token(2), TOPIC_CLOSE,
          ASYNC_OPEN, w("A"), w("B"), ASYNC_CLOSE,
          ASYNC_OPEN, w("C"), w("D"), ASYNC_CLOSE,
          SYNC,
          TOPIC_OPEN, w("task3"), length_token(1), TOPIC_CLOSE,
          ASYNC_OPEN, w("E"), ASYNC_CLOSE,
          EOS};
}

bool ref_allowed(const RoleSequence& rs, int i, int j, MaskMode mode) {
  if (i == j) return true;
  // Rule 4 variant: the barrier token itself sees everything before it.
  if (rs.roles[size_t(i)] == Role::BARRIER) return j <= i;

  int bi = rs.block_of[size_t(i)];
  int bj = rs.block_of[size_t(j)];
  // Rule 2: bidirectional inside one block (tags included); rule 3 dense
  // variant: concurrent same-stage blocks fully cross-attend.
  if (bi >= 0 && bj >= 0) {
    if (bi == bj) return true;
    if (mode == MaskMode::DENSE &&
        rs.extents[size_t(bi)].stage_id == rs.extents[size_t(bj)].stage_id)
      return true;
  }
  if (j > i) return false;
  // Rule 1/3/4: a prior block is visible only once a barrier follows it;
  // prior plan and barrier positions are always visible.
  if (bj >= 0) {
    const SpanExtent& e = rs.extents[size_t(bj)];
    for (int q : rs.barriers)
      if (q > e.close && q < i) return true;
    return false;
  }
  return true;
}

std::vector<TokenId> random_document(Rng& rng, const Vocabulary& v,
                                     int max_len) {
  // Build a random structured document, then retry if it exceeds max_len.
  for (int attempt = 0; attempt < 64; ++attempt) {
    AnnotatedDocument doc;
    int n_prompt = rng.uniform_int(0, 3);
    for (int i = 0; i < n_prompt; ++i)
      doc.prompt.push_back(kContentBase + TokenId(rng.uniform_int(0, 9)));
    int n_stages = rng.uniform_int(1, 3);
    for (int s = 0; s < n_stages; ++s) {
      Stage stage;
      int n_spans = rng.uniform_int(1, 3);
      for (int k = 0; k < n_spans; ++k) {
        SpanDecl decl;
        int topic_len = rng.uniform_int(1, 3);
        for (int j = 0; j < topic_len; ++j)
          decl.topic.push_back(kContentBase + TokenId(rng.uniform_int(0, 9)));
        int len = rng.uniform_int(1, 5);
        decl.predicted_len = len;
        stage.plan.spans.push_back(decl);
        std::vector<TokenId> span;
        for (int j = 0; j < len; ++j)
          span.push_back(kContentBase + TokenId(rng.uniform_int(0, 29)));
        stage.spans.push_back(span);
      }
      stage.plan.terminator =
          (s + 1 == n_stages) ? Terminator::EOS : Terminator::SYNC;
      doc.stages.push_back(stage);
    }
    std::vector<TokenId> toks = serialize(doc);
    if (int(toks.size()) <= max_len) return toks;
  }
  // Fallback: minimal document.
  AnnotatedDocument doc;
  Stage st;
  st.plan.spans.push_back({{kContentBase}, 1});
  st.spans.push_back({kContentBase});
  st.plan.terminator = Terminator::EOS;
  doc.stages.push_back(st);
  return serialize(doc);
}

ModelConfig tiny_model_config(int vocab_size) {
  ModelConfig cfg;
  cfg.vocab_size = vocab_size;
  cfg.d_model = 32;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.d_ff = 64;
  cfg.max_seq_len = 256;
  cfg.rotary = true;
  return cfg;
}

TrainingExample tiny_training_example(const Vocabulary& v, double t,
                                      MaskMode mode, uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenId> toks = example26(v);
  AnnotatedDocument doc = parse_document(toks);
  return make_training_example(doc, t, mode, {}, rng);
}

}  // namespace pdtest
