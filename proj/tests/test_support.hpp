#pragma once

#include <vector>

#include "pd/attention.hpp"
#include "pd/corpus.hpp"
#include "pd/model.hpp"
#include "pd/tags.hpp"

namespace pdtest {

using namespace pd;

// Vocabulary holding the worked-example words plus filler for random docs.
Vocabulary tiny_vocab();

// The 26-token two-stage layout: plan of two spans ("task1" len 3, "task2"
// len 2), spans "A B" and "C D", a sync barrier, then one planned span
// ("task3" len 1) holding "E". Position indices 0..25.
std::vector<TokenId> example26(const Vocabulary& v);

// Independent per-entry evaluation of the mask rules, written directly from
// the rule statements (no interval tricks shared with the implementation).
bool ref_allowed(const RoleSequence& rs, int i, int j, MaskMode mode);

// Random well-formed annotated document (as a token sequence) with total
// length <= max_len.
std::vector<TokenId> random_document(Rng& rng, const Vocabulary& v,
                                     int max_len);

ModelConfig tiny_model_config(int vocab_size);

// Fixed tiny training example over tiny_vocab for gradient checks.
TrainingExample tiny_training_example(const Vocabulary& v, double t,
                                      MaskMode mode, uint64_t seed);

}  // namespace pdtest
