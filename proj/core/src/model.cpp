#include "pd/model.hpp"

#include <cmath>

#include <unsupported/Eigen/SpecialFunctions>

namespace pd {

void ModelConfig::check() const {
  if (vocab_size <= 0) throw ConfigError("vocab_size must be positive");
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0)
    throw ConfigError("model dimensions must be positive");
  if (d_model % n_heads != 0)
    throw ConfigError("d_model must be divisible by n_heads");
  if (max_seq_len < 256) throw ConfigError("max_seq_len must be >= 256");
}

template <typename T>
size_t ParamsT<T>::num_params() const {
  size_t n = 0;
  for_each([&](const std::string&, const MatX<T>& m) { n += size_t(m.size()); });
  return n;
}

template <typename T>
bool ParamsT<T>::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const MatX<T>& m) {
    if (!m.allFinite()) ok = false;
  });
  return ok;
}

ParamsT<float> init_params(const ModelConfig& cfg, Rng& rng) {
  cfg.check();
  ParamsT<float> p;
  p.cfg = cfg;
  float sd = 1.0f / std::sqrt(float(cfg.d_model));
  float sf = 1.0f / std::sqrt(float(cfg.d_ff));
  auto fill = [&](MatX<float>& m, long r, long c, float std_dev) {
    m.resize(r, c);
    for (long i = 0; i < r; ++i)
      for (long j = 0; j < c; ++j)
        m(i, j) = float(rng.normal(0.0, double(std_dev)));
  };
  fill(p.embed, cfg.vocab_size, cfg.d_model, sd);
  if (!cfg.rotary) fill(p.pos, cfg.max_seq_len, cfg.d_model, sd);
  p.layers.resize(size_t(cfg.n_layers));
  for (auto& l : p.layers) {
    l.attn_norm = MatX<float>::Ones(1, cfg.d_model);
    fill(l.wq, cfg.d_model, cfg.d_model, sd);
    fill(l.wk, cfg.d_model, cfg.d_model, sd);
    fill(l.wv, cfg.d_model, cfg.d_model, sd);
    fill(l.wo, cfg.d_model, cfg.d_model, sd);
    l.mlp_norm = MatX<float>::Ones(1, cfg.d_model);
    fill(l.w1, cfg.d_model, cfg.d_ff, sd);
    fill(l.w2, cfg.d_ff, cfg.d_model, sf);
  }
  p.final_norm = MatX<float>::Ones(1, cfg.d_model);
  fill(p.head, cfg.d_model, cfg.vocab_size, sd);
  return p;
}

template <typename T>
ParamsT<T> zeros_like(const ParamsT<float>& src) {
  ParamsT<T> out;
  out.cfg = src.cfg;
  out.embed = MatX<T>::Zero(src.embed.rows(), src.embed.cols());
  if (!src.cfg.rotary) out.pos = MatX<T>::Zero(src.pos.rows(), src.pos.cols());
  out.layers.resize(src.layers.size());
  for (size_t l = 0; l < src.layers.size(); ++l) {
    const auto& a = src.layers[l];
    auto& b = out.layers[l];
    b.attn_norm = MatX<T>::Zero(a.attn_norm.rows(), a.attn_norm.cols());
    b.wq = MatX<T>::Zero(a.wq.rows(), a.wq.cols());
    b.wk = MatX<T>::Zero(a.wk.rows(), a.wk.cols());
    b.wv = MatX<T>::Zero(a.wv.rows(), a.wv.cols());
    b.wo = MatX<T>::Zero(a.wo.rows(), a.wo.cols());
    b.mlp_norm = MatX<T>::Zero(a.mlp_norm.rows(), a.mlp_norm.cols());
    b.w1 = MatX<T>::Zero(a.w1.rows(), a.w1.cols());
    b.w2 = MatX<T>::Zero(a.w2.rows(), a.w2.cols());
  }
  out.final_norm = MatX<T>::Zero(1, src.cfg.d_model);
  out.head = MatX<T>::Zero(src.head.rows(), src.head.cols());
  return out;
}
template ParamsT<float> zeros_like<float>(const ParamsT<float>&);
template ParamsT<double> zeros_like<double>(const ParamsT<float>&);

ParamsT<double> to_double(const ParamsT<float>& p) {
  ParamsT<double> out = zeros_like<double>(p);
  std::vector<MatX<double>*> dst;
  out.for_each([&](const std::string&, MatX<double>& m) { dst.push_back(&m); });
  size_t i = 0;
  p.for_each([&](const std::string&, const MatX<float>& m) {
    *dst[i++] = m.template cast<double>();
  });
  return out;
}

template <typename T>
void KVCacheT<T>::init(const ModelConfig& cfg, int cap) {
  len = 0;
  capacity = cap;
  k.assign(size_t(cfg.n_layers), MatX<T>::Zero(cap, cfg.d_model));
  v.assign(size_t(cfg.n_layers), MatX<T>::Zero(cap, cfg.d_model));
  row_hash.clear();
  role_tags.clear();
}
template struct KVCacheT<float>;
template struct KVCacheT<double>;

// ---------------------------------------------------------------------------
// Primitives
// ---------------------------------------------------------------------------

namespace {

constexpr double kNormEps = 1e-6;
constexpr double kRopeBase = 10000.0;

template <typename T>
void rms_norm(const MatX<T>& x, const MatX<T>& gain, MatX<T>& out,
              std::vector<T>& inv_rms) {
  long n = x.rows(), d = x.cols();
  out.resize(n, d);
  inv_rms.resize(size_t(n));
  for (long i = 0; i < n; ++i) {
    T ms = x.row(i).squaredNorm() / T(d);
    T inv = T(1) / std::sqrt(ms + T(kNormEps));
    inv_rms[size_t(i)] = inv;
    out.row(i) = x.row(i).cwiseProduct(gain.row(0)) * inv;
  }
}

// d(rms_norm)/dx given upstream grad dOut; accumulates the gain grad.
template <typename T>
void rms_norm_backward(const MatX<T>& x, const MatX<T>& gain,
                       const std::vector<T>& inv_rms, const MatX<T>& d_out,
                       MatX<T>& d_x, MatX<T>& d_gain) {
  long n = x.rows(), d = x.cols();
  d_x.resize(n, d);
  for (long i = 0; i < n; ++i) {
    T inv = inv_rms[size_t(i)];
    auto xh = x.row(i) * inv;
    d_gain.row(0) += d_out.row(i).cwiseProduct(xh);
    auto dxh = d_out.row(i).cwiseProduct(gain.row(0));
    T proj = dxh.cwiseProduct(x.row(i)).sum() / T(d);
    d_x.row(i) = dxh * inv - x.row(i) * (proj * inv * inv * inv);
  }
}

template <typename T>
void gelu_rows(const MatX<T>& u, MatX<T>& out) {
  out = (u.array() * T(0.5) *
         (T(1) + (u.array() * T(0.7071067811865476)).erf()))
            .matrix();
}

template <typename T>
void gelu_grad_rows(const MatX<T>& u, MatX<T>& d_inout) {
  auto cdf = T(0.5) * (T(1) + (u.array() * T(0.7071067811865476)).erf());
  auto pdf = (T(-0.5) * u.array().square()).exp() * T(0.3989422804014327);
  d_inout.array() *= cdf + u.array() * pdf;
}

// Cached cos/sin per (position, rotation pair); extended lazily per thread.
template <typename T>
struct RopeTable {
  int dh = 0;
  int max_pos = 0;
  std::vector<T> cosv, sinv;  // [pos * dh/2 + u]

  void ensure(int dh_in, int pos_end) {
    int half = dh_in / 2;
    if (dh == dh_in && pos_end <= max_pos) return;
    if (dh != dh_in) {
      dh = dh_in;
      max_pos = 0;
      cosv.clear();
      sinv.clear();
    }
    int new_max = std::max(pos_end, std::max(256, max_pos * 2));
    cosv.resize(size_t(new_max) * size_t(half));
    sinv.resize(size_t(new_max) * size_t(half));
    for (int p = max_pos; p < new_max; ++p) {
      for (int u = 0; u < half; ++u) {
        double theta =
            double(p) * std::pow(kRopeBase, -double(2 * u) / double(dh));
        cosv[size_t(p) * size_t(half) + size_t(u)] = T(std::cos(theta));
        sinv[size_t(p) * size_t(half) + size_t(u)] = T(std::sin(theta));
      }
    }
    max_pos = new_max;
  }
};

// In-place rotary rotation of one head block at absolute positions
// pos0 + row index. `sign` = -1 applies the inverse rotation (backward).
template <typename T>
void rope_apply(Eigen::Block<MatX<T>> block, int pos0, int sign) {
  static thread_local RopeTable<T> table;
  long n = block.rows(), dh = block.cols();
  table.ensure(int(dh), pos0 + int(n));
  long half = dh / 2;
  for (long i = 0; i < n; ++i) {
    const T* crow = &table.cosv[size_t(pos0 + i) * size_t(half)];
    const T* srow = &table.sinv[size_t(pos0 + i) * size_t(half)];
    for (long u = 0; u < half; ++u) {
      T c = crow[u], s = T(sign) * srow[u];
      T a = block(i, 2 * u), b = block(i, 2 * u + 1);
      block(i, 2 * u) = a * c - b * s;
      block(i, 2 * u + 1) = a * s + b * c;
    }
  }
}

template <typename T>
void softmax_rows_inplace(MatX<T>& s) {
  for (long i = 0; i < s.rows(); ++i) {
    T mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp();
    T sum = s.row(i).sum();
    s.row(i) /= sum;
  }
}

template <typename T>
MatX<T> mask_additive(const AttentionMask& mask, int rows0, int n_rows,
                      int n_cols) {
  MatX<T> add = MatX<T>::Zero(n_rows, n_cols);
  T ninf = -std::numeric_limits<T>::infinity();
  for (int i = 0; i < n_rows; ++i)
    for (int j = 0; j < n_cols; ++j)
      if (!mask.allowed(rows0 + i, j)) add(i, j) = ninf;
  return add;
}

}  // namespace

// ---------------------------------------------------------------------------
// Inference forward (optional KV cache)
// ---------------------------------------------------------------------------

template <typename T>
MatX<T> forward(const ParamsT<T>& params, const std::vector<TokenId>& tokens,
                const AttentionMask& mask, KVCacheT<T>* cache, int n_cacheable,
                const std::vector<Role>* new_roles) {
  const ModelConfig& cfg = params.cfg;
  int m = int(tokens.size());
  int c = cache ? cache->len : 0;
  int n = c + m;
  if (n > cfg.max_seq_len)
    throw SequenceTooLong("sequence length " + std::to_string(n) +
                          " exceeds max_seq_len " +
                          std::to_string(cfg.max_seq_len));
  if (mask.size() < n)
    throw SequenceTooLong("attention mask smaller than sequence");
  if (n_cacheable > m) throw ConfigError("n_cacheable exceeds suffix length");

  KVCacheT<T> local;
  if (!cache) {
    local.init(cfg, n);
    cache = &local;
    n_cacheable = 0;
  }
  if (cache->capacity < n) throw SequenceTooLong("KV cache capacity exceeded");
  for (int i = 0; i < c; ++i) {
    if (mask.row_hash(i) != cache->row_hash[size_t(i)])
      throw CacheMismatch("mask row changed for cached position " +
                          std::to_string(i));
  }

  int d = cfg.d_model, H = cfg.n_heads, dh = cfg.head_dim();
  T inv_sqrt_dh = T(1) / std::sqrt(T(dh));

  MatX<T> x(m, d);
  for (int i = 0; i < m; ++i) {
    TokenId t = tokens[size_t(i)];
    if (t < 0 || t >= cfg.vocab_size)
      throw EncodingError("token id outside vocabulary: " + std::to_string(t));
    x.row(i) = params.embed.row(t);
    if (!cfg.rotary) x.row(i) += params.pos.row(c + i);
  }

  MatX<T> add = mask_additive<T>(mask, c, m, n);
  MatX<T> a, q, ctx(m, d), scores, b, u;
  std::vector<T> inv_rms;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& L = params.layers[size_t(l)];
    rms_norm(x, L.attn_norm, a, inv_rms);
    q.noalias() = a * L.wq;
    cache->k[size_t(l)].middleRows(c, m).noalias() = a * L.wk;
    cache->v[size_t(l)].middleRows(c, m).noalias() = a * L.wv;
    if (cfg.rotary) {
      for (int h = 0; h < H; ++h) {
        rope_apply<T>(q.block(0, h * dh, m, dh), c, +1);
        rope_apply<T>(cache->k[size_t(l)].block(c, h * dh, m, dh), c, +1);
      }
    }
    for (int h = 0; h < H; ++h) {
      auto kh = cache->k[size_t(l)].block(0, h * dh, n, dh);
      auto vh = cache->v[size_t(l)].block(0, h * dh, n, dh);
      scores.noalias() = q.middleCols(h * dh, dh) * kh.transpose();
      scores *= inv_sqrt_dh;
      scores += add;
      softmax_rows_inplace(scores);
      ctx.middleCols(h * dh, dh).noalias() = scores * vh;
    }
    x.noalias() += ctx * L.wo;
    rms_norm(x, L.mlp_norm, b, inv_rms);
    u.noalias() = b * L.w1;
    gelu_rows(u, b);
    x.noalias() += b * L.w2;
  }
  rms_norm(x, params.final_norm, a, inv_rms);
  MatX<T> logits;
  logits.noalias() = a * params.head;

  for (int r = 0; r < n_cacheable; ++r) {
    if (tokens[size_t(r)] == MASK)
      throw CacheMismatch("attempt to cache a MASK position");
    cache->row_hash.push_back(mask.row_hash(c + r));
    cache->role_tags.push_back(new_roles ? (*new_roles)[size_t(r)]
                                         : Role::PLAN);
  }
  cache->len += n_cacheable;
  return logits;
}
template MatX<float> forward<float>(const ParamsT<float>&,
                                    const std::vector<TokenId>&,
                                    const AttentionMask&, KVCacheT<float>*, int,
                                    const std::vector<Role>*);
template MatX<double> forward<double>(const ParamsT<double>&,
                                      const std::vector<TokenId>&,
                                      const AttentionMask&, KVCacheT<double>*,
                                      int, const std::vector<Role>*);

// ---------------------------------------------------------------------------
// Training forward with stored activations, loss, and backward
// ---------------------------------------------------------------------------

namespace {

template <typename T>
struct LayerActs {
  MatX<T> x_in, a;        // residual input and post-norm
  std::vector<T> inv_rms1, inv_rms2;
  MatX<T> q, k, v;        // q/k post-rope
  std::vector<MatX<T>> probs;  // per head, n x n
  MatX<T> ctx;
  MatX<T> x_mid, b;       // post-attention residual and post-norm
  MatX<T> u;              // pre-gelu
  MatX<T> g;              // post-gelu
};

template <typename T>
struct Acts {
  std::vector<LayerActs<T>> layers;
  MatX<T> x_last, f;
  std::vector<T> inv_rms_f;
  MatX<T> logits;
};

template <typename T>
void forward_train(const ParamsT<T>& params, const std::vector<TokenId>& tokens,
                   const AttentionMask& mask, Acts<T>& acts) {
  const ModelConfig& cfg = params.cfg;
  int n = int(tokens.size());
  if (n > cfg.max_seq_len) throw SequenceTooLong("training sequence too long");
  int d = cfg.d_model, H = cfg.n_heads, dh = cfg.head_dim();
  T inv_sqrt_dh = T(1) / std::sqrt(T(dh));

  MatX<T> x(n, d);
  for (int i = 0; i < n; ++i) {
    x.row(i) = params.embed.row(tokens[size_t(i)]);
    if (!cfg.rotary) x.row(i) += params.pos.row(i);
  }
  MatX<T> add = mask_additive<T>(mask, 0, n, n);

  acts.layers.assign(size_t(cfg.n_layers), {});
  for (int l = 0; l < cfg.n_layers; ++l) {
    const auto& L = params.layers[size_t(l)];
    auto& A = acts.layers[size_t(l)];
    A.x_in = x;
    rms_norm(A.x_in, L.attn_norm, A.a, A.inv_rms1);
    A.q.noalias() = A.a * L.wq;
    A.k.noalias() = A.a * L.wk;
    A.v.noalias() = A.a * L.wv;
    if (cfg.rotary) {
      for (int h = 0; h < H; ++h) {
        rope_apply<T>(A.q.block(0, h * dh, n, dh), 0, +1);
        rope_apply<T>(A.k.block(0, h * dh, n, dh), 0, +1);
      }
    }
    A.probs.resize(size_t(H));
    A.ctx.resize(n, d);
    for (int h = 0; h < H; ++h) {
      MatX<T>& p = A.probs[size_t(h)];
      p.noalias() = A.q.middleCols(h * dh, dh) *
                    A.k.middleCols(h * dh, dh).transpose();
      p *= inv_sqrt_dh;
      p += add;
      softmax_rows_inplace(p);
      A.ctx.middleCols(h * dh, dh).noalias() = p * A.v.middleCols(h * dh, dh);
    }
    x.noalias() += A.ctx * L.wo;
    A.x_mid = x;
    rms_norm(A.x_mid, L.mlp_norm, A.b, A.inv_rms2);
    A.u.noalias() = A.b * L.w1;
    gelu_rows(A.u, A.g);
    x.noalias() += A.g * L.w2;
  }
  acts.x_last = x;
  rms_norm(acts.x_last, params.final_norm, acts.f, acts.inv_rms_f);
  acts.logits.noalias() = acts.f * params.head;
}

// Per-logits-row target list: (target token, weight, is_content).
struct RowTarget {
  TokenId target;
  double weight;
  bool content;
};

template <typename T>
LossBreakdown targets_and_loss(const TrainingExample& ex, const MatX<T>& logits,
                               std::vector<std::vector<RowTarget>>& per_row) {
  int n = int(ex.clean.size());
  per_row.assign(size_t(n), {});
  LossBreakdown lb;
  for (int i = 1; i < n; ++i) {
    double w = double(ex.loss_weight[size_t(i)]);
    if (w <= 0.0) continue;
    bool content = ex.roles.roles[size_t(i)] == Role::CONTENT;
    int row = content ? i : i - 1;
    per_row[size_t(row)].push_back({ex.clean[size_t(i)], w, content});
  }
  for (int r = 0; r < n; ++r) {
    if (per_row[size_t(r)].empty()) continue;
    // log-sum-exp in double for a stable CE regardless of T
    double mx = double(logits.row(r).maxCoeff());
    double lse = 0.0;
    for (long j = 0; j < logits.cols(); ++j)
      lse += std::exp(double(logits(r, j)) - mx);
    lse = std::log(lse) + mx;
    for (const RowTarget& t : per_row[size_t(r)]) {
      double ce = lse - double(logits(r, t.target));
      double contrib = t.weight * ce / double(n);
      lb.total += contrib;
      if (t.content) {
        lb.content_ce += contrib;
        lb.content_targets += 1;
      } else {
        lb.plan_ce += contrib;
        lb.plan_targets += 1;
      }
    }
  }
  return lb;
}

}  // namespace

template <typename T>
LossBreakdown loss(const ParamsT<T>& params, const TrainingExample& ex,
                   const AttentionMask* prebuilt_mask) {
  AttentionMask local;
  const AttentionMask* mask = prebuilt_mask;
  if (!mask) {
    local = AttentionMask::build(ex.roles, ex.mask_mode);
    mask = &local;
  }
  Acts<T> acts;
  forward_train(params, ex.noised, *mask, acts);
  std::vector<std::vector<RowTarget>> per_row;
  return targets_and_loss(ex, acts.logits, per_row);
}
template LossBreakdown loss<float>(const ParamsT<float>&,
                                   const TrainingExample&,
                                   const AttentionMask*);
template LossBreakdown loss<double>(const ParamsT<double>&,
                                    const TrainingExample&,
                                    const AttentionMask*);

template <typename T>
LossBreakdown loss_and_grad(const ParamsT<T>& params, const TrainingExample& ex,
                            ParamsT<T>& grads, T grad_scale,
                            const AttentionMask* prebuilt_mask) {
  const ModelConfig& cfg = params.cfg;
  AttentionMask local;
  const AttentionMask* mask = prebuilt_mask;
  if (!mask) {
    local = AttentionMask::build(ex.roles, ex.mask_mode);
    mask = &local;
  }
  Acts<T> acts;
  forward_train(params, ex.noised, *mask, acts);
  std::vector<std::vector<RowTarget>> per_row;
  LossBreakdown lb = targets_and_loss(ex, acts.logits, per_row);

  int n = int(ex.clean.size());
  int d = cfg.d_model, H = cfg.n_heads, dh = cfg.head_dim();
  T inv_sqrt_dh = T(1) / std::sqrt(T(dh));

  MatX<T> d_logits = MatX<T>::Zero(n, cfg.vocab_size);
  for (int r = 0; r < n; ++r) {
    if (per_row[size_t(r)].empty()) continue;
    T mx = acts.logits.row(r).maxCoeff();
    Eigen::Array<T, 1, Eigen::Dynamic> p =
        (acts.logits.row(r).array() - mx).exp();
    p /= p.sum();
    double wsum = 0.0;
    for (const RowTarget& t : per_row[size_t(r)]) wsum += t.weight;
    d_logits.row(r) = p.matrix() * T(wsum / double(n)) * grad_scale;
    for (const RowTarget& t : per_row[size_t(r)])
      d_logits(r, t.target) -= T(t.weight / double(n)) * grad_scale;
  }

  // Head and final norm.
  grads.head.noalias() += acts.f.transpose() * d_logits;
  MatX<T> d_f;
  d_f.noalias() = d_logits * params.head.transpose();
  MatX<T> d_x;
  rms_norm_backward(acts.x_last, params.final_norm, acts.inv_rms_f, d_f, d_x,
                    grads.final_norm);

  MatX<T> d_mid, d_b, d_u, d_a, d_q, d_k, d_v, d_ctx, tmp;
  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const auto& L = params.layers[size_t(l)];
    auto& G = grads.layers[size_t(l)];
    auto& A = acts.layers[size_t(l)];

    // MLP block: x_out = x_mid + gelu(rms(x_mid) W1) W2
    G.w2.noalias() += A.g.transpose() * d_x;
    d_u.noalias() = d_x * L.w2.transpose();
    gelu_grad_rows(A.u, d_u);
    G.w1.noalias() += A.b.transpose() * d_u;
    d_b.noalias() = d_u * L.w1.transpose();
    rms_norm_backward(A.x_mid, L.mlp_norm, A.inv_rms2, d_b, d_mid, G.mlp_norm);
    d_mid += d_x;

    // Attention block: x_mid = x_in + ctx Wo
    G.wo.noalias() += A.ctx.transpose() * d_mid;
    d_ctx.noalias() = d_mid * L.wo.transpose();
    d_q = MatX<T>::Zero(n, d);
    d_k = MatX<T>::Zero(n, d);
    d_v = MatX<T>::Zero(n, d);
    for (int h = 0; h < H; ++h) {
      const MatX<T>& p = A.probs[size_t(h)];
      auto d_ctx_h = d_ctx.middleCols(h * dh, dh);
      tmp.noalias() = d_ctx_h * A.v.middleCols(h * dh, dh).transpose();  // dP
      d_v.middleCols(h * dh, dh).noalias() = p.transpose() * d_ctx_h;
      // softmax backward: dS = P o (dP - rowsum(P o dP))
      for (int i = 0; i < n; ++i) {
        T dot = p.row(i).cwiseProduct(tmp.row(i)).sum();
        tmp.row(i) =
            p.row(i).array() * (tmp.row(i).array() - dot);
      }
      tmp *= inv_sqrt_dh;
      d_q.middleCols(h * dh, dh).noalias() = tmp * A.k.middleCols(h * dh, dh);
      d_k.middleCols(h * dh, dh).noalias() =
          tmp.transpose() * A.q.middleCols(h * dh, dh);
    }
    if (cfg.rotary) {
      for (int h = 0; h < H; ++h) {
        rope_apply<T>(d_q.block(0, h * dh, n, dh), 0, -1);
        rope_apply<T>(d_k.block(0, h * dh, n, dh), 0, -1);
      }
    }
    G.wq.noalias() += A.a.transpose() * d_q;
    G.wk.noalias() += A.a.transpose() * d_k;
    G.wv.noalias() += A.a.transpose() * d_v;
    d_a.noalias() = d_q * L.wq.transpose();
    d_a.noalias() += d_k * L.wk.transpose();
    d_a.noalias() += d_v * L.wv.transpose();
    rms_norm_backward(A.x_in, L.attn_norm, A.inv_rms1, d_a, d_x, G.attn_norm);
    d_x += d_mid;
  }

  for (int i = 0; i < n; ++i) {
    grads.embed.row(ex.noised[size_t(i)]) += d_x.row(i);
    if (!cfg.rotary) grads.pos.row(i) += d_x.row(i);
  }
  return lb;
}
template LossBreakdown loss_and_grad<float>(const ParamsT<float>&,
                                            const TrainingExample&,
                                            ParamsT<float>&, float,
                                            const AttentionMask*);
template LossBreakdown loss_and_grad<double>(const ParamsT<double>&,
                                             const TrainingExample&,
                                             ParamsT<double>&, double,
                                             const AttentionMask*);

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

double LrSchedule::lr_at(int64_t step) const {
  if (step <= 0) return 0.0;
  if (warmup_steps > 0 && step <= warmup_steps)
    return peak * double(step) / double(warmup_steps);
  if (step >= total_steps) return 0.0;
  return peak * double(total_steps - step) /
         double(std::max(1, total_steps - warmup_steps));
}

OptimizerState OptimizerState::init(const ParamsT<float>& params) {
  OptimizerState s;
  s.step = 0;
  s.m = zeros_like<float>(params);
  s.v = zeros_like<float>(params);
  return s;
}

double grad_step(ParamsT<float>& params, OptimizerState& opt,
                 const std::vector<const TrainingExample*>& batch,
                 const LrSchedule& schedule) {
  if (batch.empty()) throw ConfigError("grad_step: empty batch");
  ParamsT<float> grads = zeros_like<float>(params);
  double total = 0.0;
  float scale = 1.0f / float(batch.size());
  for (const TrainingExample* ex : batch)
    total += loss_and_grad<float>(params, *ex, grads, scale).total;
  double mean_loss = total / double(batch.size());
  if (!std::isfinite(mean_loss)) throw NonFiniteLoss("non-finite batch loss");

  opt.step += 1;
  double lr = schedule.lr_at(opt.step);
  double bc1 = 1.0 - std::pow(schedule.beta1, double(opt.step));
  double bc2 = 1.0 - std::pow(schedule.beta2, double(opt.step));

  std::vector<MatX<float>*> pv, gv, mv, vv;
  std::vector<std::string> names;
  params.for_each([&](const std::string& nm, MatX<float>& t) {
    names.push_back(nm);
    pv.push_back(&t);
  });
  grads.for_each([&](const std::string&, MatX<float>& t) { gv.push_back(&t); });
  opt.m.for_each([&](const std::string&, MatX<float>& t) { mv.push_back(&t); });
  opt.v.for_each([&](const std::string&, MatX<float>& t) { vv.push_back(&t); });

  for (size_t i = 0; i < pv.size(); ++i) {
    auto& p = *pv[i];
    auto& g = *gv[i];
    auto& m = *mv[i];
    auto& v = *vv[i];
    m = float(schedule.beta1) * m + float(1.0 - schedule.beta1) * g;
    v = (float(schedule.beta2) * v.array() +
         float(1.0 - schedule.beta2) * g.array().square())
            .matrix();
    bool decay = names[i].find("norm") == std::string::npos;
    auto m_hat = m.array() / float(bc1);
    auto v_hat = v.array() / float(bc2);
    p.array() -= float(lr) * (m_hat / (v_hat.sqrt() + float(schedule.eps)));
    if (decay && schedule.weight_decay > 0.0)
      p.array() -= float(lr * schedule.weight_decay) * p.array();
  }
  return mean_loss;
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

double finite_difference_check(const ParamsT<float>& params,
                               const TrainingExample& ex, int k, Rng& rng) {
  if (k <= 0) return 0.0;
  ParamsT<double> pd = to_double(params);
  AttentionMask mask = AttentionMask::build(ex.roles, ex.mask_mode);
  ParamsT<double> grads = zeros_like<double>(params);
  loss_and_grad<double>(pd, ex, grads, 1.0, &mask);

  std::vector<MatX<double>*> tensors, gtensors;
  pd.for_each([&](const std::string&, MatX<double>& t) { tensors.push_back(&t); });
  grads.for_each(
      [&](const std::string&, MatX<double>& t) { gtensors.push_back(&t); });
  size_t total = 0;
  for (auto* t : tensors) total += size_t(t->size());

  const double h = 1e-5;
  double max_rel = 0.0;
  for (int probe = 0; probe < k; ++probe) {
    size_t flat = size_t(rng.uniform_int(0, int(total - 1)));
    size_t ti = 0;
    while (flat >= size_t(tensors[ti]->size())) {
      flat -= size_t(tensors[ti]->size());
      ++ti;
    }
    double* cell = tensors[ti]->data() + flat;
    double saved = *cell;
    *cell = saved + h;
    double lp = loss<double>(pd, ex, &mask).total;
    *cell = saved - h;
    double lm = loss<double>(pd, ex, &mask).total;
    *cell = saved;
    double numeric = (lp - lm) / (2.0 * h);
    double analytic = *(gtensors[ti]->data() + flat);
    double rel = std::abs(analytic - numeric) /
                 std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

template struct ParamsT<float>;
template struct ParamsT<double>;

}  // namespace pd
