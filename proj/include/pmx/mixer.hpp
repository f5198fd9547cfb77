#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "pmx/bags.hpp"
#include "pmx/errors.hpp"
#include "pmx/matrix.hpp"
#include "pmx/ops.hpp"
#include "pmx/rng.hpp"

namespace pmx {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct MixerConfig {
  std::size_t tokens = 5;           // k: prototype rows per bag
  std::size_t channels = 1024;      // N: embedding width
  std::size_t token_hidden = 1024;  // hidden width of the token-mixing MLP
  std::size_t channel_hidden = 2048;  // hidden width of the channel-mixing MLP
  std::size_t blocks = 12;          // stacked mixer blocks
  std::size_t num_classes = 2;
  std::size_t num_domains = 1;
  std::size_t domain_hidden = 512;  // width of the domain-predictor MLP
  double dropout_rate = 0.0;        // applied after each mixing MLP, train only
  bool final_norm = true;           // normalize once more before pooling
  double norm_eps = 1e-6;
};

inline void validate_config(const MixerConfig& c) {
  if (c.tokens == 0 || c.channels == 0 || c.token_hidden == 0 ||
      c.channel_hidden == 0 || c.blocks == 0 || c.num_classes == 0 ||
      c.num_domains == 0 || c.domain_hidden == 0) {
    throw ParamError("mixer config: all counts must be >= 1");
  }
  if (!(c.dropout_rate >= 0.0) || c.dropout_rate >= 1.0) {
    throw ParamError("mixer config: dropout_rate must be in [0, 1)");
  }
  if (!(c.norm_eps > 0.0)) throw ParamError("mixer config: norm_eps must be > 0");
}

// ---------------------------------------------------------------------------
// Parameters. The field order below is the serialization order.
// ---------------------------------------------------------------------------

struct BlockParams {
  Matrix token_norm_gain, token_norm_bias;  // 1 x N
  Matrix token_w1, token_b1;                // D_S x k, 1 x D_S
  Matrix token_w2, token_b2;                // k x D_S, 1 x k
  Matrix chan_norm_gain, chan_norm_bias;    // 1 x N
  Matrix chan_w1, chan_b1;                  // D_C x N, 1 x D_C
  Matrix chan_w2, chan_b2;                  // N x D_C, 1 x N
};

struct MixerParams {
  MixerConfig config;
  std::vector<BlockParams> blocks;
  Matrix final_norm_gain, final_norm_bias;  // 1 x N (allocated even when off)
  Matrix cls_w, cls_b;                      // C x N, 1 x C
  Matrix dom_w1, dom_b1;                    // H x N, 1 x H
  Matrix dom_w2, dom_b2;                    // H x H, 1 x H
  Matrix dom_w3, dom_b3;                    // D x H, 1 x D
};

/// Visit every parameter tensor in serialization order.
/// Fn: void(const std::string& name, Matrix& tensor, bool is_weight).
template <class Params, class Fn>
void for_each_param(Params& p, Fn&& fn) {
  for (std::size_t m = 0; m < p.blocks.size(); ++m) {
    auto& b = p.blocks[m];
    const std::string pre = "block" + std::to_string(m) + ".";
    fn(pre + "token_norm_gain", b.token_norm_gain, false);
    fn(pre + "token_norm_bias", b.token_norm_bias, false);
    fn(pre + "token_w1", b.token_w1, true);
    fn(pre + "token_b1", b.token_b1, false);
    fn(pre + "token_w2", b.token_w2, true);
    fn(pre + "token_b2", b.token_b2, false);
    fn(pre + "chan_norm_gain", b.chan_norm_gain, false);
    fn(pre + "chan_norm_bias", b.chan_norm_bias, false);
    fn(pre + "chan_w1", b.chan_w1, true);
    fn(pre + "chan_b1", b.chan_b1, false);
    fn(pre + "chan_w2", b.chan_w2, true);
    fn(pre + "chan_b2", b.chan_b2, false);
  }
  fn("final_norm_gain", p.final_norm_gain, false);
  fn("final_norm_bias", p.final_norm_bias, false);
  fn("cls_w", p.cls_w, true);
  fn("cls_b", p.cls_b, false);
  fn("dom_w1", p.dom_w1, true);
  fn("dom_b1", p.dom_b1, false);
  fn("dom_w2", p.dom_w2, true);
  fn("dom_b2", p.dom_b2, false);
  fn("dom_w3", p.dom_w3, true);
  fn("dom_b3", p.dom_b3, false);
}

/// All tensors allocated to the configured shapes, values zero.
inline MixerParams make_zero_params(const MixerConfig& c) {
  validate_config(c);
  MixerParams p;
  p.config = c;
  p.blocks.resize(c.blocks);
  for (BlockParams& b : p.blocks) {
    b.token_norm_gain = Matrix(1, c.channels);
    b.token_norm_bias = Matrix(1, c.channels);
    b.token_w1 = Matrix(c.token_hidden, c.tokens);
    b.token_b1 = Matrix(1, c.token_hidden);
    b.token_w2 = Matrix(c.tokens, c.token_hidden);
    b.token_b2 = Matrix(1, c.tokens);
    b.chan_norm_gain = Matrix(1, c.channels);
    b.chan_norm_bias = Matrix(1, c.channels);
    b.chan_w1 = Matrix(c.channel_hidden, c.channels);
    b.chan_b1 = Matrix(1, c.channel_hidden);
    b.chan_w2 = Matrix(c.channels, c.channel_hidden);
    b.chan_b2 = Matrix(1, c.channels);
  }
  p.final_norm_gain = Matrix(1, c.channels);
  p.final_norm_bias = Matrix(1, c.channels);
  p.cls_w = Matrix(c.num_classes, c.channels);
  p.cls_b = Matrix(1, c.num_classes);
  p.dom_w1 = Matrix(c.domain_hidden, c.channels);
  p.dom_b1 = Matrix(1, c.domain_hidden);
  p.dom_w2 = Matrix(c.domain_hidden, c.domain_hidden);
  p.dom_b2 = Matrix(1, c.domain_hidden);
  p.dom_w3 = Matrix(c.num_domains, c.domain_hidden);
  p.dom_b3 = Matrix(1, c.num_domains);
  return p;
}

/// Weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] (fan_in = input
/// width = column count), drawn from one seeded stream in serialization
/// order. Norm gains start at 1, every bias at 0.
inline MixerParams init_params(const MixerConfig& c, std::uint64_t seed) {
  MixerParams p = make_zero_params(c);
  Rng rng(derive_seed(seed, "init"));
  for_each_param(p, [&](const std::string& name, Matrix& m, bool is_weight) {
    if (is_weight) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(m.cols()));
      for (std::size_t i = 0; i < m.size(); ++i) m[i] = rng.uniform(-bound, bound);
    } else if (name.find("norm_gain") != std::string::npos) {
      m.fill(1.0);
    }
  });
  return p;
}

inline std::size_t param_count(const MixerConfig& c) {
  const std::size_t per_block =
      2 * c.channels +                            // token norm
      c.token_hidden * c.tokens + c.token_hidden  // W1, b1
      + c.tokens * c.token_hidden + c.tokens      // W2, b2
      + 2 * c.channels +                          // channel norm
      c.channel_hidden * c.channels + c.channel_hidden  // W3, b3
      + c.channels * c.channel_hidden + c.channels;     // W4, b4
  return c.blocks * per_block + 2 * c.channels  // final norm
         + c.num_classes * c.channels + c.num_classes   // class head
         + c.domain_hidden * c.channels + c.domain_hidden
         + c.domain_hidden * c.domain_hidden + c.domain_hidden
         + c.num_domains * c.domain_hidden + c.num_domains;
}

// ---------------------------------------------------------------------------
// Analytic cost model of one forward pass. Counted in floating-point
// operations with a multiply-add as 2, layer norm as 6 per element and GELU
// as 8 per element. Everything inside the blocks is proportional to the
// token count; only the heads are not.
// ---------------------------------------------------------------------------

struct FlopCount {
  double per_token = 0.0;  // multiplied by k
  double constant = 0.0;   // heads, independent of k
  double total(std::size_t tokens) const {
    return per_token * static_cast<double>(tokens) + constant;
  }
};

// Accounting: matmul (m x p)(p x q) = 2mpq, layer norm = 6/element,
// GELU = 8/element, bias and residual adds = 1/element.
inline FlopCount analytic_flops(const MixerConfig& c) {
  const double n = static_cast<double>(c.channels);
  const double ds = static_cast<double>(c.token_hidden);
  const double dc = static_cast<double>(c.channel_hidden);
  const double h = static_cast<double>(c.domain_hidden);
  const double cls = static_cast<double>(c.num_classes);
  const double dom = static_cast<double>(c.num_domains);
  const double blocks = static_cast<double>(c.blocks);

  // Terms inside a block that carry one factor of the token count k.
  double per_token = 0.0;
  per_token += 6.0 * n;       // token-mix norm, k x N
  per_token += 2.0 * ds * n;  // W1 (D_S x k)(k x N)
  per_token += 2.0 * ds * n;  // W2 (k x D_S)(D_S x N)
  per_token += n;             // token-MLP output bias, k x N
  per_token += n;             // token residual, k x N
  per_token += 6.0 * n;       // channel-mix norm, k x N
  per_token += 2.0 * n * dc;  // W3 (k x N)(N x D_C)
  per_token += dc;            // channel hidden bias, k x D_C
  per_token += 8.0 * dc;      // channel GELU, k x D_C
  per_token += 2.0 * dc * n;  // W4 (k x D_C)(D_C x N)
  per_token += n;             // channel-MLP output bias, k x N
  per_token += n;             // channel residual, k x N
  per_token *= blocks;
  // The token-MLP hidden table is D_S x N regardless of k: its bias add and
  // GELU are k-independent, so they belong in the constant part.
  double constant = blocks * (ds * n + 8.0 * ds * n);
  if (c.final_norm) per_token += 6.0 * n;  // final norm, k x N
  per_token += n;   // pooling accumulate, k x N reads
  constant += n;    // pooling divide
  constant += 2.0 * cls * n + cls;        // class head
  constant += 2.0 * h * n + h + 8.0 * h;  // domain layer 1 + GELU
  constant += 2.0 * h * h + h + 8.0 * h;  // domain layer 2 + GELU
  constant += 2.0 * dom * h + dom;        // domain output
  return {per_token, constant};
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

struct BlockCache {
  LayerNormCache ln1, ln2;
  Matrix a;      // k x N, token-norm output
  Matrix u;      // D_S x N, token hidden pre-GELU
  Matrix hidden; // D_S x N, token hidden post-GELU
  Matrix b;      // k x N, channel-norm output
  Matrix u2;     // k x D_C, channel hidden pre-GELU
  Matrix h2;     // k x D_C, channel hidden post-GELU
  Matrix mask1, mask2;  // dropout keep masks (empty when rate = 0)
};

struct ForwardCache {
  bool valid = false;
  bool train = false;
  std::vector<BlockCache> blocks;
  LayerNormCache lnf;
  Matrix pooled;          // 1 x N, the global vector g
  Matrix dom_a1, dom_h1;  // 1 x H
  Matrix dom_a2, dom_h2;  // 1 x H
};

struct ForwardResult {
  std::vector<double> class_logits;
  std::vector<double> domain_logits;
};

namespace detail {

inline Matrix dropout_mask(std::size_t rows, std::size_t cols, double rate,
                           Rng& rng) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = rng.uniform() >= rate ? 1.0 : 0.0;
  }
  return m;
}

inline void apply_dropout(Matrix& x, const Matrix& mask, double rate) {
  const double inv_keep = 1.0 / (1.0 - rate);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] *= mask[i] * inv_keep;
}

// Adds bias[r] to every element of row r.
inline void add_row_bias(Matrix& x, const Matrix& bias) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double* row = x.row_ptr(r);
    const double b = bias[r];
    for (std::size_t j = 0; j < x.cols(); ++j) row[j] += b;
  }
}

// Adds bias[j] to column j of every row.
inline void add_col_bias(Matrix& x, const Matrix& bias) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double* row = x.row_ptr(r);
    for (std::size_t j = 0; j < x.cols(); ++j) row[j] += bias[j];
  }
}

}  // namespace detail

/// One mixer block: token mixing across the k rows (per channel column),
/// then channel mixing across the N channels (per token row), both with a
/// pre-norm and a residual connection. `rng` is consulted only in train mode
/// with a positive dropout rate.
inline Matrix mixer_block_forward(const Matrix& x, const BlockParams& bp,
                                  const MixerConfig& cfg, bool train, Rng* rng,
                                  BlockCache* cache) {
  if (x.rows() != cfg.tokens || x.cols() != cfg.channels) {
    throw DimensionError("mixer block: input " + x.shape_str() + ", expected " +
                         std::to_string(cfg.tokens) + "x" +
                         std::to_string(cfg.channels));
  }
  const bool use_dropout = train && cfg.dropout_rate > 0.0;

  // Token mixing: per column i, x[:,i] + W2 * gelu(W1 * norm(x)[:,i]).
  LayerNormCache ln1;
  Matrix a = layer_norm(x, bp.token_norm_gain, bp.token_norm_bias, cfg.norm_eps,
                        cache ? &ln1 : nullptr);
  Matrix u = matmul(bp.token_w1, a);
  detail::add_row_bias(u, bp.token_b1);
  Matrix hidden = gelu(u);
  Matrix v = matmul(bp.token_w2, hidden);
  detail::add_row_bias(v, bp.token_b2);
  Matrix mask1;
  if (use_dropout) {
    mask1 = detail::dropout_mask(v.rows(), v.cols(), cfg.dropout_rate, *rng);
    detail::apply_dropout(v, mask1, cfg.dropout_rate);
  }
  Matrix y = add(x, v);

  // Channel mixing: per row j, y[j,:] + gelu(norm(y)[j,:] * W3^T) * W4^T.
  LayerNormCache ln2;
  Matrix b = layer_norm(y, bp.chan_norm_gain, bp.chan_norm_bias, cfg.norm_eps,
                        cache ? &ln2 : nullptr);
  Matrix u2 = matmul_nt(b, bp.chan_w1);
  detail::add_col_bias(u2, bp.chan_b1);
  Matrix h2 = gelu(u2);
  Matrix v2 = matmul_nt(h2, bp.chan_w2);
  detail::add_col_bias(v2, bp.chan_b2);
  Matrix mask2;
  if (use_dropout) {
    mask2 = detail::dropout_mask(v2.rows(), v2.cols(), cfg.dropout_rate, *rng);
    detail::apply_dropout(v2, mask2, cfg.dropout_rate);
  }
  Matrix z = add(y, v2);

  if (cache) {
    cache->ln1 = std::move(ln1);
    cache->ln2 = std::move(ln2);
    cache->a = std::move(a);
    cache->u = std::move(u);
    cache->hidden = std::move(hidden);
    cache->b = std::move(b);
    cache->u2 = std::move(u2);
    cache->h2 = std::move(h2);
    cache->mask1 = std::move(mask1);
    cache->mask2 = std::move(mask2);
  }
  return z;
}

/// Full forward pass over a k x N prototype table. In train mode, pass a
/// cache (filled for the backward pass) and an rng when dropout is active.
/// In eval mode the call is a pure function of (x, params).
inline ForwardResult forward(const Matrix& x, const MixerParams& params,
                             bool train = false, Rng* rng = nullptr,
                             ForwardCache* cache = nullptr) {
  const MixerConfig& cfg = params.config;
  if (x.rows() != cfg.tokens || x.cols() != cfg.channels) {
    throw DimensionError("forward: input " + x.shape_str() + ", expected " +
                         std::to_string(cfg.tokens) + "x" +
                         std::to_string(cfg.channels));
  }
  if (train && cfg.dropout_rate > 0.0 && rng == nullptr) {
    throw ParamError("forward: dropout requires an rng in train mode");
  }
  if (cache) {
    cache->blocks.assign(cfg.blocks, BlockCache{});
    cache->train = train;
  }

  Matrix cur = x;
  for (std::size_t m = 0; m < cfg.blocks; ++m) {
    cur = mixer_block_forward(cur, params.blocks[m], cfg, train, rng,
                              cache ? &cache->blocks[m] : nullptr);
  }

  if (cfg.final_norm) {
    cur = layer_norm(cur, params.final_norm_gain, params.final_norm_bias,
                     cfg.norm_eps, cache ? &cache->lnf : nullptr);
  }

  // Mean over the k token rows -> global vector g.
  Matrix g(1, cfg.channels);
  for (std::size_t r = 0; r < cfg.tokens; ++r) {
    const double* row = cur.row_ptr(r);
    for (std::size_t j = 0; j < cfg.channels; ++j) g[j] += row[j];
  }
  for (std::size_t j = 0; j < cfg.channels; ++j) {
    g[j] /= static_cast<double>(cfg.tokens);
  }

  ForwardResult out;
  Matrix cls = matmul_nt(g, params.cls_w);  // 1 x C
  out.class_logits.resize(cfg.num_classes);
  for (std::size_t i = 0; i < cfg.num_classes; ++i) {
    out.class_logits[i] = cls[i] + params.cls_b[i];
  }

  // Domain branch; the reversal layer is the identity in the forward pass.
  Matrix a1 = matmul_nt(g, params.dom_w1);
  for (std::size_t i = 0; i < cfg.domain_hidden; ++i) a1[i] += params.dom_b1[i];
  Matrix h1 = gelu(a1);
  Matrix a2 = matmul_nt(h1, params.dom_w2);
  for (std::size_t i = 0; i < cfg.domain_hidden; ++i) a2[i] += params.dom_b2[i];
  Matrix h2 = gelu(a2);
  Matrix dom = matmul_nt(h2, params.dom_w3);
  out.domain_logits.resize(cfg.num_domains);
  for (std::size_t i = 0; i < cfg.num_domains; ++i) {
    out.domain_logits[i] = dom[i] + params.dom_b3[i];
  }

  if (cache) {
    cache->pooled = std::move(g);
    cache->dom_a1 = std::move(a1);
    cache->dom_h1 = std::move(h1);
    cache->dom_a2 = std::move(a2);
    cache->dom_h2 = std::move(h2);
    cache->valid = true;
  }
  return out;
}

inline ForwardResult forward(const PrototypeBag& bag, const MixerParams& params,
                             bool train = false, Rng* rng = nullptr,
                             ForwardCache* cache = nullptr) {
  return forward(bag.prototypes, params, train, rng, cache);
}

/// Backward map of the gradient-reversal layer: -lambda * upstream.
/// (The forward map is the identity; reversal exists only for gradients.)
inline Matrix grad_reverse(const Matrix& upstream, double lambda) {
  return scale(upstream, -lambda);
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

namespace detail {

// d(bias) for a bias broadcast across columns: row sums of d_out.
inline void accumulate_row_bias_grad(const Matrix& d_out, Matrix& d_bias) {
  for (std::size_t r = 0; r < d_out.rows(); ++r) {
    const double* row = d_out.row_ptr(r);
    double acc = 0.0;
    for (std::size_t j = 0; j < d_out.cols(); ++j) acc += row[j];
    d_bias[r] += acc;
  }
}

// d(bias) for a bias broadcast across rows: column sums of d_out.
inline void accumulate_col_bias_grad(const Matrix& d_out, Matrix& d_bias) {
  for (std::size_t r = 0; r < d_out.rows(); ++r) {
    const double* row = d_out.row_ptr(r);
    for (std::size_t j = 0; j < d_out.cols(); ++j) d_bias[j] += row[j];
  }
}

}  // namespace detail

/// Gradients of (class loss + domain loss) w.r.t. every parameter, given the
/// loss gradients at both logit heads. Domain-MLP parameters receive the
/// plain domain gradient; everything upstream of the pooled vector receives
/// class gradient plus the reversed (-lambda) domain gradient. The cache is
/// consumed: a second backward against it raises a state error.
inline MixerParams backward(const MixerParams& params, ForwardCache& cache,
                            const std::vector<double>& d_class_logits,
                            const std::vector<double>& d_domain_logits,
                            double lambda) {
  const MixerConfig& cfg = params.config;
  if (!cache.valid) {
    throw StateError("backward: cache is absent or already consumed");
  }
  if (!cache.train) {
    throw StateError("backward: cache must come from a train-mode forward");
  }
  if (cache.blocks.size() != cfg.blocks) {
    throw StateError("backward: cache does not match the configuration");
  }
  if (d_class_logits.size() != cfg.num_classes ||
      d_domain_logits.size() != cfg.num_domains) {
    throw DimensionError("backward: logit gradient sizes do not match config");
  }

  MixerParams grads = make_zero_params(cfg);
  const Matrix d_cls = Matrix::row(d_class_logits);
  const Matrix d_dom = Matrix::row(d_domain_logits);

  // Class head.
  add_inplace(grads.cls_w, matmul_tn(d_cls, cache.pooled));  // C x N
  add_inplace(grads.cls_b, d_cls);
  Matrix d_g = matmul(d_cls, params.cls_w);  // 1 x N

  // Domain head (parameters see the unreversed gradient).
  add_inplace(grads.dom_b3, d_dom);
  add_inplace(grads.dom_w3, matmul_tn(d_dom, cache.dom_h2));  // D x H
  Matrix d_h2 = matmul(d_dom, params.dom_w3);                 // 1 x H
  Matrix d_a2 = hadamard(d_h2, gelu_grad(cache.dom_a2));
  add_inplace(grads.dom_b2, d_a2);
  add_inplace(grads.dom_w2, matmul_tn(d_a2, cache.dom_h1));  // H x H
  Matrix d_h1 = matmul(d_a2, params.dom_w2);                 // 1 x H
  Matrix d_a1 = hadamard(d_h1, gelu_grad(cache.dom_a1));
  add_inplace(grads.dom_b1, d_a1);
  add_inplace(grads.dom_w1, matmul_tn(d_a1, cache.pooled));  // H x N
  Matrix d_g_domain = matmul(d_a1, params.dom_w1);           // 1 x N

  // The reversal layer flips and scales the domain gradient entering the
  // backbone.
  add_inplace(d_g, grad_reverse(d_g_domain, lambda));

  // Mean-pool backward: every token row receives d_g / k.
  Matrix d_cur(cfg.tokens, cfg.channels);
  const double inv_k = 1.0 / static_cast<double>(cfg.tokens);
  for (std::size_t r = 0; r < cfg.tokens; ++r) {
    double* row = d_cur.row_ptr(r);
    for (std::size_t j = 0; j < cfg.channels; ++j) row[j] = d_g[j] * inv_k;
  }

  if (cfg.final_norm) {
    d_cur = layer_norm_backward(d_cur, cache.lnf, params.final_norm_gain,
                                grads.final_norm_gain, grads.final_norm_bias);
  }

  // Blocks in reverse.
  for (std::size_t mi = cfg.blocks; mi-- > 0;) {
    const BlockParams& bp = params.blocks[mi];
    BlockParams& bg = grads.blocks[mi];
    const BlockCache& bc = cache.blocks[mi];

    // Channel-mixing sub-block: z = y + drop(gelu(norm(y) W3^T) W4^T + b4).
    Matrix d_v2 = d_cur;
    if (!bc.mask2.empty()) detail::apply_dropout(d_v2, bc.mask2, cfg.dropout_rate);
    detail::accumulate_col_bias_grad(d_v2, bg.chan_b2);
    add_inplace(bg.chan_w2, matmul_tn(d_v2, bc.h2));       // N x D_C
    Matrix d_h2m = matmul(d_v2, bp.chan_w2);               // k x D_C
    Matrix d_u2 = hadamard(d_h2m, gelu_grad(bc.u2));
    detail::accumulate_col_bias_grad(d_u2, bg.chan_b1);
    add_inplace(bg.chan_w1, matmul_tn(d_u2, bc.b));        // D_C x N
    Matrix d_b = matmul(d_u2, bp.chan_w1);                 // k x N
    Matrix d_y = layer_norm_backward(d_b, bc.ln2, bp.chan_norm_gain,
                                     bg.chan_norm_gain, bg.chan_norm_bias);
    add_inplace(d_y, d_cur);  // residual

    // Token-mixing sub-block: y = x + drop(W2 gelu(W1 norm(x) + b1) + b2).
    Matrix d_v = d_y;
    if (!bc.mask1.empty()) detail::apply_dropout(d_v, bc.mask1, cfg.dropout_rate);
    detail::accumulate_row_bias_grad(d_v, bg.token_b2);
    add_inplace(bg.token_w2, matmul_nt(d_v, bc.hidden));   // k x D_S
    Matrix d_hidden = matmul_tn(bp.token_w2, d_v);         // D_S x N
    Matrix d_u = hadamard(d_hidden, gelu_grad(bc.u));
    detail::accumulate_row_bias_grad(d_u, bg.token_b1);
    add_inplace(bg.token_w1, matmul_nt(d_u, bc.a));        // D_S x k
    Matrix d_a = matmul_tn(bp.token_w1, d_u);              // k x N
    Matrix d_x = layer_norm_backward(d_a, bc.ln1, bp.token_norm_gain,
                                     bg.token_norm_gain, bg.token_norm_bias);
    add_inplace(d_x, d_y);  // residual
    d_cur = std::move(d_x);
  }

  cache.valid = false;  // consumed
  return grads;
}

}  // namespace pmx
