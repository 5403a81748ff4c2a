#include <benchmark/benchmark.h>

#include "pd/attention.hpp"
#include "pd/tags.hpp"

namespace {

using namespace pd;

std::vector<TokenId> layout_tokens(int stages, int spans, int span_len) {
  AnnotatedDocument doc;
  doc.prompt = {kContentBase, kContentBase + 1};
  for (int s = 0; s < stages; ++s) {
    Stage st;
    for (int k = 0; k < spans; ++k) {
      st.plan.spans.push_back({{kContentBase + 2}, span_len});
      st.spans.push_back(std::vector<TokenId>(size_t(span_len), kContentBase));
    }
    st.plan.terminator = s + 1 == stages ? Terminator::EOS : Terminator::SYNC;
    doc.stages.push_back(st);
  }
  return serialize(doc);
}

void BM_AssignRoles(benchmark::State& state) {
  auto toks = layout_tokens(2, 4, int(state.range(0)));
  for (auto _ : state) {
    RoleSequence rs = assign_roles(toks);
    benchmark::DoNotOptimize(rs.extents.data());
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * int64_t(toks.size()));
}
BENCHMARK(BM_AssignRoles)->Arg(16)->Arg(64);

void BM_BuildMask(benchmark::State& state) {
  auto toks = layout_tokens(2, 4, int(state.range(0)));
  RoleSequence rs = assign_roles(toks);
  for (auto _ : state) {
    AttentionMask m = AttentionMask::build(rs, MaskMode::SPAN_ISOLATED);
    benchmark::DoNotOptimize(m.row_hash(0));
  }
  state.SetItemsProcessed(int64_t(state.iterations()) * int64_t(rs.size()) *
                          int64_t(rs.size()));
}
BENCHMARK(BM_BuildMask)->Arg(16)->Arg(64)->Arg(160);

void BM_IncrementalAppend(benchmark::State& state) {
  int span_len = int(state.range(0));
  for (auto _ : state) {
    MaskBuilder mb(8 + 4 * (span_len + 2), MaskMode::SPAN_ISOLATED);
    for (int i = 0; i < 8; ++i) mb.append_plan();
    mb.append_stage_blocks({span_len, span_len, span_len, span_len});
    benchmark::DoNotOptimize(mb.row_hash(mb.size() - 1));
  }
}
BENCHMARK(BM_IncrementalAppend)->Arg(16)->Arg(48);

}  // namespace
