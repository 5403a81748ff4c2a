#pragma once

#include <Eigen/Dense>
#include <memory>
#include <string>
#include <vector>

#include "pd/attention.hpp"
#include "pd/corpus.hpp"
#include "pd/tokens.hpp"
#include "pd/util.hpp"

namespace pd {

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int d_ff = 512;
  int max_seq_len = 2048;
  bool rotary = true;  // false: learned absolute positions

  int head_dim() const { return d_model / n_heads; }
  void check() const;  // throws ConfigError
};

template <typename T>
struct LayerParamsT {
  MatX<T> attn_norm;  // 1 x d RMSNorm gain
  MatX<T> wq, wk, wv, wo;
  MatX<T> mlp_norm;
  MatX<T> w1, w2;
};

template <typename T>
struct ParamsT {
  ModelConfig cfg;
  MatX<T> embed;  // V x d
  MatX<T> pos;    // max_seq x d when not rotary, else 0 x 0
  std::vector<LayerParamsT<T>> layers;
  MatX<T> final_norm;  // 1 x d
  MatX<T> head;        // d x V

  // Visits every tensor in a fixed order (checkpoint and optimizer order).
  template <typename Fn>
  void for_each(Fn&& fn) {
    fn("embed", embed);
    if (!cfg.rotary) fn("pos", pos);
    for (size_t l = 0; l < layers.size(); ++l) {
      std::string p = "layer" + std::to_string(l) + ".";
      fn(p + "attn_norm", layers[l].attn_norm);
      fn(p + "wq", layers[l].wq);
      fn(p + "wk", layers[l].wk);
      fn(p + "wv", layers[l].wv);
      fn(p + "wo", layers[l].wo);
      fn(p + "mlp_norm", layers[l].mlp_norm);
      fn(p + "w1", layers[l].w1);
      fn(p + "w2", layers[l].w2);
    }
    fn("final_norm", final_norm);
    fn("head", head);
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    const_cast<ParamsT*>(this)->for_each(
        [&](const std::string& name, MatX<T>& m) {
          fn(name, const_cast<const MatX<T>&>(m));
        });
  }

  size_t num_params() const;
  bool all_finite() const;
};

using Params = ParamsT<float>;

ParamsT<float> init_params(const ModelConfig& cfg, Rng& rng);
template <typename T>
ParamsT<T> zeros_like(const ParamsT<float>& p);
ParamsT<double> to_double(const ParamsT<float>& p);

// ---------------------------------------------------------------------------
// KV cache
// ---------------------------------------------------------------------------

template <typename T>
struct KVCacheT {
  int len = 0;       // committed prefix length
  int capacity = 0;  // rows reserved (uncommitted scratch lives above len)
  std::vector<MatX<T>> k, v;        // per layer, capacity x d
  std::vector<uint64_t> row_hash;   // mask-row hash per committed position
  std::vector<Role> role_tags;      // role per committed position

  void init(const ModelConfig& cfg, int cap);
};

using KVCache = KVCacheT<float>;

// ---------------------------------------------------------------------------
// Forward / loss / optimizer
// ---------------------------------------------------------------------------

// Runs the model over `tokens` placed at absolute positions
// [cache.len, cache.len + |tokens|) when a cache is given (positions [0, n)
// otherwise) and returns one logits row per input token. Mask rows are
// indexed by absolute position; rows of cached positions are re-hashed and
// must match the rows in effect when they were cached. The first
// `n_cacheable` new positions are committed to the cache; committing a MASK
// token throws. `new_roles`, when given, supplies cache role tags.
template <typename T>
MatX<T> forward(const ParamsT<T>& params, const std::vector<TokenId>& tokens,
                const AttentionMask& mask, KVCacheT<T>* cache = nullptr,
                int n_cacheable = 0,
                const std::vector<Role>* new_roles = nullptr);

struct LossBreakdown {
  double total = 0.0;
  double plan_ce = 0.0;     // weighted autoregressive term (already / |Y|)
  double content_ce = 0.0;  // weighted denoising term (already / |Y|)
  int plan_targets = 0;
  int content_targets = 0;
};

template <typename T>
LossBreakdown loss(const ParamsT<T>& params, const TrainingExample& ex,
                   const AttentionMask* prebuilt_mask = nullptr);

// Backward pass accumulating into `grads`, scaled by `grad_scale`.
template <typename T>
LossBreakdown loss_and_grad(const ParamsT<T>& params, const TrainingExample& ex,
                            ParamsT<T>& grads, T grad_scale,
                            const AttentionMask* prebuilt_mask = nullptr);

struct LrSchedule {
  double peak = 1e-3;
  int warmup_steps = 50;
  int total_steps = 1000;  // linear decay to zero at this step
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  double lr_at(int64_t step) const;  // step is 1-based
};

struct OptimizerState {
  int64_t step = 0;
  ParamsT<float> m;
  ParamsT<float> v;

  static OptimizerState init(const ParamsT<float>& params);
};

// One decoupled-weight-decay Adam update on the mean batch loss.
// Deterministic given inputs; throws NonFiniteLoss.
double grad_step(ParamsT<float>& params, OptimizerState& opt,
                 const std::vector<const TrainingExample*>& batch,
                 const LrSchedule& schedule);

// Central-difference gradient probe at k random coordinates, run in double
// precision. Returns the max relative error.
double finite_difference_check(const ParamsT<float>& params,
                               const TrainingExample& ex, int k, Rng& rng);

// ---------------------------------------------------------------------------
// Checkpoint container: text header, then raw little-endian float32 arrays
// in header order.
// ---------------------------------------------------------------------------

struct Checkpoint {
  ModelConfig cfg;
  ParamsT<float> params;
  Vocabulary vocab;
  uint64_t seed = 0;
  int64_t step = 0;
  bool has_opt = false;
  OptimizerState opt;
};

void save_checkpoint(const std::string& path, const ParamsT<float>& params,
                     const Vocabulary& vocab, uint64_t seed, int64_t step,
                     const OptimizerState* opt = nullptr);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pd
