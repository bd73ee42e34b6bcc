#pragma once

// Pre-norm decoder-only transformer with hand-written reverse-mode gradients.
//
//   x0 = E[token] + E[vocab + position]
//   per layer:  x += Wo * attn(Wq, Wk, Wv; rms(x) * g1)
//               x += Wd * (silu(Wg h) * (Wu h)),  h = rms(x) * g2
//   logits = Wlm * (rms(x) * gf)

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "soupkit/error.hpp"
#include "soupkit/model.hpp"
#include "soupkit/tensor.hpp"

namespace soupkit {

/// Row-major integer matrix [rows, cols].
struct TokenMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<int> ids;

  TokenMatrix() = default;
  TokenMatrix(std::size_t r, std::size_t c, int fill = 0) : rows(r), cols(c), ids(r * c, fill) {}

  int& operator()(std::size_t r, std::size_t c) { return ids[r * cols + c]; }
  int operator()(std::size_t r, std::size_t c) const { return ids[r * cols + c]; }
  [[nodiscard]] std::span<const int> row(std::size_t r) const {
    return {ids.data() + r * cols, cols};
  }

  bool operator==(const TokenMatrix&) const = default;
};

/// Gradients keyed like the checkpoint tensors.
struct LossAndGrads {
  double loss = 0.0;
  TensorMap grads;
};

namespace detail {

template <class Ptr>
struct LayerRefs {
  Ptr input_norm, q, k, v, o, post_norm, gate, up, down;
};

template <class Ptr>
struct NetRefs {
  Ptr embed;
  std::vector<LayerRefs<Ptr>> layers;
  Ptr final_norm;
  Ptr lm_head;
};

template <class Ptr, class Map>
NetRefs<Ptr> bind(Map& tensors, const ModelConfig& cfg) {
  auto get = [&](const SoupUnitId& u) -> Ptr {
    auto it = tensors.find(u.tensor_name());
    if (it == tensors.end()) fail("missing tensor '", u.tensor_name(), "'");
    if (it->second.shape != unit_shape(cfg, u.kind))
      fail("tensor '", u.tensor_name(), "' has shape ", shape_string(it->second.shape));
    return it->second.data.data();
  };
  NetRefs<Ptr> refs;
  refs.embed = get({UnitKind::embed, std::nullopt});
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    LayerRefs<Ptr> lr;
    lr.input_norm = get({UnitKind::input_norm, l});
    lr.q = get({UnitKind::attn_q, l});
    lr.k = get({UnitKind::attn_k, l});
    lr.v = get({UnitKind::attn_v, l});
    lr.o = get({UnitKind::attn_o, l});
    lr.post_norm = get({UnitKind::post_attn_norm, l});
    lr.gate = get({UnitKind::mlp_gate, l});
    lr.up = get({UnitKind::mlp_up, l});
    lr.down = get({UnitKind::mlp_down, l});
    refs.layers.push_back(lr);
  }
  refs.final_norm = get({UnitKind::final_norm, std::nullopt});
  refs.lm_head = get({UnitKind::lm_head, std::nullopt});
  return refs;
}

// out[t, o] = sum_i w[o, i] * in[t, i]
inline void linear(const double* in, const double* w, double* out, std::size_t rows,
                   std::size_t in_dim, std::size_t out_dim) {
  for (std::size_t t = 0; t < rows; ++t) {
    const double* x = in + t * in_dim;
    double* y = out + t * out_dim;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double* wr = w + o * in_dim;
      double acc = 0.0;
      for (std::size_t i = 0; i < in_dim; ++i) acc += wr[i] * x[i];
      y[o] = acc;
    }
  }
}

// d_in += d_out * w ;  d_w += d_out^T * in
inline void linear_backward(const double* in, const double* w, const double* d_out, double* d_in,
                            double* d_w, std::size_t rows, std::size_t in_dim, std::size_t out_dim) {
  for (std::size_t t = 0; t < rows; ++t) {
    const double* x = in + t * in_dim;
    const double* dy = d_out + t * out_dim;
    double* dx = d_in + t * in_dim;
    for (std::size_t o = 0; o < out_dim; ++o) {
      const double g = dy[o];
      if (g == 0.0) continue;
      const double* wr = w + o * in_dim;
      double* dwr = d_w + o * in_dim;
      for (std::size_t i = 0; i < in_dim; ++i) {
        dx[i] += g * wr[i];
        dwr[i] += g * x[i];
      }
    }
  }
}

inline void rms_norm(const double* x, const double* gain, double* y, double* inv_rms,
                     std::size_t rows, std::size_t dim, double eps) {
  for (std::size_t t = 0; t < rows; ++t) {
    const double* xr = x + t * dim;
    double ss = 0.0;
    for (std::size_t i = 0; i < dim; ++i) ss += xr[i] * xr[i];
    const double r = 1.0 / std::sqrt(ss / static_cast<double>(dim) + eps);
    inv_rms[t] = r;
    for (std::size_t i = 0; i < dim; ++i) y[t * dim + i] = xr[i] * r * gain[i];
  }
}

inline void rms_norm_backward(const double* x, const double* gain, const double* inv_rms,
                              const double* dy, double* dx, double* d_gain, std::size_t rows,
                              std::size_t dim) {
  for (std::size_t t = 0; t < rows; ++t) {
    const double* xr = x + t * dim;
    const double* dyr = dy + t * dim;
    const double r = inv_rms[t];
    double dot = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      d_gain[i] += dyr[i] * xr[i] * r;
      dot += dyr[i] * gain[i] * xr[i];
    }
    const double coef = r * r * r * dot / static_cast<double>(dim);
    for (std::size_t i = 0; i < dim; ++i) dx[t * dim + i] += r * dyr[i] * gain[i] - coef * xr[i];
  }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct LayerCache {
  std::vector<double> x_in, inv1, h1, q, k, v, probs, attn, x_mid, inv2, h2, gate, up, act;
};

struct RowCache {
  std::vector<LayerCache> layers;
  std::vector<double> x_out, inv_f, h_f;
};

/// Forward pass of one sequence; fills `logits` [len, vocab].
inline void forward_row(const NetRefs<const double*>& net, const ModelConfig& cfg,
                        std::span<const int> tokens, RowCache& cache, double* logits) {
  const std::size_t T = tokens.size();
  const std::size_t d = cfg.d_model, f = cfg.d_ff, H = cfg.n_heads, hd = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<double> x(T * d);
  for (std::size_t t = 0; t < T; ++t) {
    const double* te = net.embed + static_cast<std::size_t>(tokens[t]) * d;
    const double* pe = net.embed + (cfg.vocab_size + t) * d;
    for (std::size_t i = 0; i < d; ++i) x[t * d + i] = te[i] + pe[i];
  }

  cache.layers.resize(cfg.n_layers);
  std::vector<double> tmp(T * d);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& w = net.layers[l];
    auto& c = cache.layers[l];
    c.x_in = x;
    c.inv1.assign(T, 0.0);
    c.h1.assign(T * d, 0.0);
    rms_norm(x.data(), w.input_norm, c.h1.data(), c.inv1.data(), T, d, cfg.rms_eps);
    c.q.assign(T * d, 0.0);
    c.k.assign(T * d, 0.0);
    c.v.assign(T * d, 0.0);
    linear(c.h1.data(), w.q, c.q.data(), T, d, d);
    linear(c.h1.data(), w.k, c.k.data(), T, d, d);
    linear(c.h1.data(), w.v, c.v.data(), T, d, d);

    c.probs.assign(H * T * T, 0.0);
    c.attn.assign(T * d, 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * hd;
      for (std::size_t t = 0; t < T; ++t) {
        double* p = c.probs.data() + (h * T + t) * T;
        const double* qt = c.q.data() + t * d + off;
        double mx = -INFINITY;
        for (std::size_t j = 0; j <= t; ++j) {
          const double* kj = c.k.data() + j * d + off;
          double s = 0.0;
          for (std::size_t i = 0; i < hd; ++i) s += qt[i] * kj[i];
          p[j] = s * scale;
          mx = std::max(mx, p[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j <= t; ++j) {
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        double* at = c.attn.data() + t * d + off;
        for (std::size_t j = 0; j <= t; ++j) {
          p[j] /= z;
          const double* vj = c.v.data() + j * d + off;
          for (std::size_t i = 0; i < hd; ++i) at[i] += p[j] * vj[i];
        }
      }
    }
    linear(c.attn.data(), w.o, tmp.data(), T, d, d);
    for (std::size_t i = 0; i < T * d; ++i) x[i] += tmp[i];
    c.x_mid = x;

    c.inv2.assign(T, 0.0);
    c.h2.assign(T * d, 0.0);
    rms_norm(x.data(), w.post_norm, c.h2.data(), c.inv2.data(), T, d, cfg.rms_eps);
    c.gate.assign(T * f, 0.0);
    c.up.assign(T * f, 0.0);
    c.act.assign(T * f, 0.0);
    linear(c.h2.data(), w.gate, c.gate.data(), T, d, f);
    linear(c.h2.data(), w.up, c.up.data(), T, d, f);
    for (std::size_t i = 0; i < T * f; ++i) c.act[i] = c.gate[i] * sigmoid(c.gate[i]) * c.up[i];
    linear(c.act.data(), w.down, tmp.data(), T, f, d);
    for (std::size_t i = 0; i < T * d; ++i) x[i] += tmp[i];
  }

  cache.x_out = x;
  cache.inv_f.assign(T, 0.0);
  cache.h_f.assign(T * d, 0.0);
  rms_norm(x.data(), net.final_norm, cache.h_f.data(), cache.inv_f.data(), T, d, cfg.rms_eps);
  linear(cache.h_f.data(), net.lm_head, logits, T, d, cfg.vocab_size);
}

/// Accumulates weight gradients for one sequence given d(loss)/d(logits).
inline void backward_row(const NetRefs<const double*>& net, const NetRefs<double*>& grad,
                         const ModelConfig& cfg, std::span<const int> tokens,
                         const RowCache& cache, const double* d_logits) {
  const std::size_t T = tokens.size();
  const std::size_t d = cfg.d_model, f = cfg.d_ff, H = cfg.n_heads, hd = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  std::vector<double> dh(T * d, 0.0);
  linear_backward(cache.h_f.data(), net.lm_head, d_logits, dh.data(), grad.lm_head, T, d,
                  cfg.vocab_size);
  std::vector<double> dx(T * d, 0.0);
  rms_norm_backward(cache.x_out.data(), net.final_norm, cache.inv_f.data(), dh.data(), dx.data(),
                    grad.final_norm, T, d);

  std::vector<double> d_act(T * f), d_gate(T * f), d_up(T * f), d_attn(T * d), dq(T * d),
      dk(T * d), dv(T * d), dp(T);
  for (std::size_t l = cfg.n_layers; l-- > 0;) {
    const auto& w = net.layers[l];
    const auto& gw = grad.layers[l];
    const auto& c = cache.layers[l];

    // MLP block: dx carries d/d(x_out of layer) and passes through the residual.
    std::fill(d_act.begin(), d_act.end(), 0.0);
    std::fill(dh.begin(), dh.end(), 0.0);
    linear_backward(c.act.data(), w.down, dx.data(), d_act.data(), gw.down, T, f, d);
    for (std::size_t i = 0; i < T * f; ++i) {
      const double g = c.gate[i];
      const double s = sigmoid(g);
      d_up[i] = d_act[i] * g * s;
      d_gate[i] = d_act[i] * c.up[i] * s * (1.0 + g * (1.0 - s));
    }
    linear_backward(c.h2.data(), w.gate, d_gate.data(), dh.data(), gw.gate, T, d, f);
    linear_backward(c.h2.data(), w.up, d_up.data(), dh.data(), gw.up, T, d, f);
    rms_norm_backward(c.x_mid.data(), w.post_norm, c.inv2.data(), dh.data(), dx.data(),
                      gw.post_norm, T, d);

    // Attention block.
    std::fill(d_attn.begin(), d_attn.end(), 0.0);
    linear_backward(c.attn.data(), w.o, dx.data(), d_attn.data(), gw.o, T, d, d);
    std::fill(dq.begin(), dq.end(), 0.0);
    std::fill(dk.begin(), dk.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);
    for (std::size_t h = 0; h < H; ++h) {
      const std::size_t off = h * hd;
      for (std::size_t t = 0; t < T; ++t) {
        const double* p = c.probs.data() + (h * T + t) * T;
        const double* da = d_attn.data() + t * d + off;
        double weighted = 0.0;
        for (std::size_t j = 0; j <= t; ++j) {
          const double* vj = c.v.data() + j * d + off;
          double* dvj = dv.data() + j * d + off;
          double s = 0.0;
          for (std::size_t i = 0; i < hd; ++i) {
            s += da[i] * vj[i];
            dvj[i] += p[j] * da[i];
          }
          dp[j] = s;
          weighted += p[j] * s;
        }
        const double* qt = c.q.data() + t * d + off;
        double* dqt = dq.data() + t * d + off;
        for (std::size_t j = 0; j <= t; ++j) {
          const double ds = p[j] * (dp[j] - weighted) * scale;
          if (ds == 0.0) continue;
          const double* kj = c.k.data() + j * d + off;
          double* dkj = dk.data() + j * d + off;
          for (std::size_t i = 0; i < hd; ++i) {
            dqt[i] += ds * kj[i];
            dkj[i] += ds * qt[i];
          }
        }
      }
    }
    std::fill(dh.begin(), dh.end(), 0.0);
    linear_backward(c.h1.data(), w.q, dq.data(), dh.data(), gw.q, T, d, d);
    linear_backward(c.h1.data(), w.k, dk.data(), dh.data(), gw.k, T, d, d);
    linear_backward(c.h1.data(), w.v, dv.data(), dh.data(), gw.v, T, d, d);
    rms_norm_backward(c.x_in.data(), w.input_norm, c.inv1.data(), dh.data(), dx.data(),
                      gw.input_norm, T, d);
  }

  for (std::size_t t = 0; t < T; ++t) {
    double* te = grad.embed + static_cast<std::size_t>(tokens[t]) * d;
    double* pe = grad.embed + (cfg.vocab_size + t) * d;
    for (std::size_t i = 0; i < d; ++i) {
      te[i] += dx[t * d + i];
      pe[i] += dx[t * d + i];
    }
  }
}

inline void check_tokens(const ModelConfig& cfg, const TokenMatrix& tokens) {
  if (tokens.ids.size() != tokens.rows * tokens.cols) fail("token matrix size mismatch");
  if (tokens.cols == 0) fail("token sequence must not be empty");
  if (tokens.cols > cfg.max_seq_len)
    fail("sequence too long: ", std::to_string(tokens.cols), " > max_seq_len ",
         std::to_string(cfg.max_seq_len));
  for (int id : tokens.ids)
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size)
      fail("token id ", std::to_string(id), " out of range for vocab ",
           std::to_string(cfg.vocab_size));
}

// Cross-entropy of one logit row; writes softmax into `probs` when non-null.
inline double row_cross_entropy(const double* logits, std::size_t vocab, int target,
                                double* probs) {
  double mx = logits[0];
  for (std::size_t v = 1; v < vocab; ++v) mx = std::max(mx, logits[v]);
  double z = 0.0;
  for (std::size_t v = 0; v < vocab; ++v) z += std::exp(logits[v] - mx);
  if (probs)
    for (std::size_t v = 0; v < vocab; ++v) probs[v] = std::exp(logits[v] - mx) / z;
  return std::log(z) + mx - logits[static_cast<std::size_t>(target)];
}

}  // namespace detail

/// Logits [batch, seq, vocab]. Position t only sees tokens 0..t.
inline Tensor forward(const Checkpoint& ckpt, const TokenMatrix& tokens) {
  const auto& cfg = ckpt.config;
  detail::check_tokens(cfg, tokens);
  const auto net = detail::bind<const double*>(ckpt.tensors, cfg);
  Tensor logits({tokens.rows, tokens.cols, cfg.vocab_size});
  detail::RowCache cache;
  for (std::size_t r = 0; r < tokens.rows; ++r)
    detail::forward_row(net, cfg, tokens.row(r), cache,
                        logits.data.data() + r * tokens.cols * cfg.vocab_size);
  return logits;
}

/// Mean cross-entropy over positions whose target is not `pad_id`.
inline double nll_loss(const Tensor& logits, const TokenMatrix& targets, int pad_id) {
  if (logits.shape.size() != 3 || logits.shape[0] != targets.rows || logits.shape[1] != targets.cols)
    fail("nll_loss: logits shape ", shape_string(logits.shape), " does not match targets [",
         std::to_string(targets.rows), ", ", std::to_string(targets.cols), "]");
  const std::size_t vocab = logits.shape[2];
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < targets.ids.size(); ++i) {
    const int tgt = targets.ids[i];
    if (tgt == pad_id) continue;
    if (tgt < 0 || static_cast<std::size_t>(tgt) >= vocab) fail("target id out of range");
    total += detail::row_cross_entropy(logits.data.data() + i * vocab, vocab, tgt, nullptr);
    ++count;
  }
  if (count == 0) fail("empty loss support");
  return total / static_cast<double>(count);
}

inline TensorMap zeros_like(const TensorMap& tensors) {
  TensorMap out;
  for (const auto& [name, t] : tensors) out.emplace(name, Tensor(t.shape));
  return out;
}

/// Mean next-token loss and its gradient with respect to every weight tensor.
inline LossAndGrads loss_and_weight_grads(const Checkpoint& ckpt, const TokenMatrix& tokens,
                                          const TokenMatrix& targets, int pad_id) {
  const auto& cfg = ckpt.config;
  detail::check_tokens(cfg, tokens);
  if (targets.rows != tokens.rows || targets.cols != tokens.cols)
    fail("targets shape does not match tokens");
  std::size_t count = 0;
  for (int id : targets.ids) {
    if (id == pad_id) continue;
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) fail("target id out of range");
    ++count;
  }
  if (count == 0) fail("empty loss support");
  const double inv_count = 1.0 / static_cast<double>(count);

  LossAndGrads out;
  out.grads = zeros_like(ckpt.tensors);
  const auto net = detail::bind<const double*>(ckpt.tensors, cfg);
  const auto gnet = detail::bind<double*>(out.grads, cfg);
  const std::size_t V = cfg.vocab_size;

  detail::RowCache cache;
  std::vector<double> logits, d_logits;
  double total = 0.0;
  for (std::size_t r = 0; r < tokens.rows; ++r) {
    // Positions past the last supervised target cannot influence the loss.
    std::size_t len = 0;
    for (std::size_t t = 0; t < tokens.cols; ++t)
      if (targets(r, t) != pad_id) len = t + 1;
    if (len == 0) continue;
    const auto row = tokens.row(r).first(len);
    logits.assign(len * V, 0.0);
    detail::forward_row(net, cfg, row, cache, logits.data());
    d_logits.assign(len * V, 0.0);
    for (std::size_t t = 0; t < len; ++t) {
      const int tgt = targets(r, t);
      if (tgt == pad_id) continue;
      double* g = d_logits.data() + t * V;
      total += detail::row_cross_entropy(logits.data() + t * V, V, tgt, g);
      g[static_cast<std::size_t>(tgt)] -= 1.0;
      for (std::size_t v = 0; v < V; ++v) g[v] *= inv_count;
    }
    detail::backward_row(net, gnet, cfg, row, cache, d_logits.data());
  }
  out.loss = total * inv_count;
  return out;
}

}  // namespace soupkit
