#pragma once

// Naive reference implementations used as independent oracles. Everything
// here works on flat std::vector<double> buffers with explicit loops and never
// calls the tensor engine.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

inline Vec random_vec(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vec v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

inline double max_abs_diff(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }
inline double relu(double v) { return v > 0 ? v : 0.0; }
inline double elu(double v) { return v > 0 ? v : std::exp(v) - 1.0; }
inline double leaky(double v, double s) { return v > 0 ? v : s * v; }

/// C[m,n] = A[m,k] B[k,n], triple loop.
inline Vec matmul(const Vec& a, const Vec& b, std::size_t m, std::size_t k, std::size_t n) {
  Vec c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  return c;
}

/// Softmax of each row of a [rows, cols] matrix by direct exp/normalize.
inline Vec softmax_rows(const Vec& x, std::size_t rows, std::size_t cols) {
  Vec y(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(x[r * cols + c]);
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = std::exp(x[r * cols + c]) / total;
  }
  return y;
}

inline Vec layer_norm(const Vec& x, const Vec& gamma, const Vec& beta, std::size_t f,
                      double eps = 1e-5) {
  Vec y(x.size());
  for (std::size_t r = 0; r < x.size() / f; ++r) {
    double mu = 0.0;
    for (std::size_t i = 0; i < f; ++i) mu += x[r * f + i];
    mu /= static_cast<double>(f);
    double var = 0.0;
    for (std::size_t i = 0; i < f; ++i) var += (x[r * f + i] - mu) * (x[r * f + i] - mu);
    var /= static_cast<double>(f);
    for (std::size_t i = 0; i < f; ++i)
      y[r * f + i] = gamma[i] * (x[r * f + i] - mu) / std::sqrt(var + eps) + beta[i];
  }
  return y;
}

/// Sliding window along T of x[T,N,C] with kernel[k,C,Co], zero padding.
inline Vec conv_temporal(const Vec& x, const Vec& kernel, std::size_t t_len, std::size_t nodes,
                         std::size_t c, std::size_t k, std::size_t co) {
  Vec y(t_len * nodes * co, 0.0);
  const long pad = static_cast<long>(k / 2);
  for (std::size_t t = 0; t < t_len; ++t)
    for (std::size_t n = 0; n < nodes; ++n)
      for (std::size_t o = 0; o < co; ++o) {
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
          long src = static_cast<long>(t) + static_cast<long>(j) - pad;
          if (src < 0 || src >= static_cast<long>(t_len)) continue;
          for (std::size_t ci = 0; ci < c; ++ci)
            s += x[(static_cast<std::size_t>(src) * nodes + n) * c + ci] * kernel[(j * c + ci) * co + o];
        }
        y[(t * nodes + n) * co + o] = s;
      }
  return y;
}

/// softmax(relu(E E^T)) row by row, E: [n, d].
inline Vec adaptive_adjacency(const Vec& e, std::size_t n, std::size_t d) {
  Vec scores(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < d; ++p) s += e[i * d + p] * e[j * d + p];
      scores[i * n + j] = relu(s);
    }
  Vec a(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    double mx = scores[i * n];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, scores[i * n + j]);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(scores[i * n + j] - mx);
    for (std::size_t j = 0; j < n; ++j) a[i * n + j] = std::exp(scores[i * n + j] - mx) / total;
  }
  return a;
}

/// Dynamic graph convolution with explicit per-node weights.
/// x: [n, ci]; e: [n, d]; pool: [d, K, ci, co]; bias pool: [d, co].
/// Supports are I, A, A^2, ... (K of them).
inline Vec dynamic_graph_conv(const Vec& x, const Vec& e, const Vec& pool, const Vec& bias_pool,
                              std::size_t n, std::size_t d, std::size_t k_order, std::size_t ci,
                              std::size_t co) {
  Vec adj = adaptive_adjacency(e, n, d);
  // supports[k] as dense n x n matrices
  std::vector<Vec> supports;
  Vec eye(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) eye[i * n + i] = 1.0;
  supports.push_back(eye);
  for (std::size_t k = 1; k < k_order; ++k) supports.push_back(matmul(adj, supports.back(), n, n, n));
  Vec z(n * co, 0.0);
  for (std::size_t node = 0; node < n; ++node) {
    for (std::size_t o = 0; o < co; ++o) {
      double acc = 0.0;
      for (std::size_t p = 0; p < d; ++p) acc += e[node * d + p] * bias_pool[p * co + o];
      for (std::size_t k = 0; k < k_order; ++k) {
        for (std::size_t c = 0; c < ci; ++c) {
          // aggregated feature (S_k X)[node, c]
          double agg = 0.0;
          for (std::size_t j = 0; j < n; ++j) agg += supports[k][node * n + j] * x[j * ci + c];
          // per-node weight W[node, k, c, o] = sum_p e[node,p] pool[p,k,c,o]
          double w = 0.0;
          for (std::size_t p = 0; p < d; ++p) w += e[node * d + p] * pool[((p * k_order + k) * ci + c) * co + o];
          acc += agg * w;
        }
      }
      z[node * co + o] = acc;
    }
  }
  return z;
}

/// Squeeze-excite over x[T,N,C]: per-channel mean, bottleneck MLP, sigmoid gate.
inline Vec channel_calibration(const Vec& x, std::size_t t_len, std::size_t nodes, std::size_t c, const Vec& w1,
                               const Vec& b1, const Vec& w2, const Vec& b2, std::size_t cb) {
  Vec desc(c, 0.0);
  for (std::size_t i = 0; i < t_len * nodes; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) desc[ch] += x[i * c + ch];
  for (auto& v : desc) v /= static_cast<double>(t_len * nodes);
  Vec hidden(cb);
  for (std::size_t j = 0; j < cb; ++j) {
    double s = b1[j];
    for (std::size_t ch = 0; ch < c; ++ch) s += desc[ch] * w1[ch * cb + j];
    hidden[j] = relu(s);
  }
  Vec gate(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double s = b2[ch];
    for (std::size_t j = 0; j < cb; ++j) s += hidden[j] * w2[j * c + ch];
    gate[ch] = sigmoid(s);
  }
  Vec y(x.size());
  for (std::size_t i = 0; i < t_len * nodes; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) y[i * c + ch] = x[i * c + ch] * gate[ch];
  return y;
}

/// Dense GRU on per-row inputs: x[N,C], h[N,D]; gate weights act on [x, h].
/// wg: [C+D, 2D] (z then r), wc: [C+D, D].
inline Vec gru_step(const Vec& x, const Vec& h, std::size_t nodes, std::size_t c, std::size_t d, const Vec& wg,
                    const Vec& bg, const Vec& wc, const Vec& bc) {
  Vec out(nodes * d);
  const std::size_t w = c + d;
  for (std::size_t n = 0; n < nodes; ++n) {
    Vec in(w);
    for (std::size_t i = 0; i < c; ++i) in[i] = x[n * c + i];
    for (std::size_t i = 0; i < d; ++i) in[c + i] = h[n * d + i];
    Vec z(d), r(d);
    for (std::size_t o = 0; o < d; ++o) {
      double sz = bg[o], sr = bg[d + o];
      for (std::size_t i = 0; i < w; ++i) {
        sz += in[i] * wg[i * 2 * d + o];
        sr += in[i] * wg[i * 2 * d + d + o];
      }
      z[o] = sigmoid(sz);
      r[o] = sigmoid(sr);
    }
    for (std::size_t i = 0; i < d; ++i) in[c + i] = r[i] * h[n * d + i];
    for (std::size_t o = 0; o < d; ++o) {
      double s = bc[o];
      for (std::size_t i = 0; i < w; ++i) s += in[i] * wc[i * d + o];
      out[n * d + o] = z[o] * h[n * d + o] + (1.0 - z[o]) * std::tanh(s);
    }
  }
  return out;
}

struct AttentionWeights {
  Vec wq, wk, wv, wo, g1, be1, f1, fb1, f2, fb2, g2, be2;
  std::size_t ffn = 0;
};

/// Single-head self-attention block over time for each node of h[T,N,D]
/// (positional encoding already added by the caller).
inline Vec attention_block(const Vec& h, std::size_t t_len, std::size_t nodes, std::size_t d,
                           const AttentionWeights& p) {
  Vec out(h.size());
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  for (std::size_t n = 0; n < nodes; ++n) {
    Vec x(t_len * d);
    for (std::size_t t = 0; t < t_len; ++t)
      for (std::size_t i = 0; i < d; ++i) x[t * d + i] = h[(t * nodes + n) * d + i];
    Vec q = matmul(x, p.wq, t_len, d, d), k = matmul(x, p.wk, t_len, d, d), v = matmul(x, p.wv, t_len, d, d);
    Vec scores(t_len * t_len);
    for (std::size_t a = 0; a < t_len; ++a)
      for (std::size_t b = 0; b < t_len; ++b) {
        double s = 0.0;
        for (std::size_t i = 0; i < d; ++i) s += q[a * d + i] * k[b * d + i];
        scores[a * t_len + b] = s * inv;
      }
    Vec att = softmax_rows(scores, t_len, t_len);
    Vec ctx = matmul(att, v, t_len, t_len, d);
    Vec mha = matmul(ctx, p.wo, t_len, d, d);
    for (std::size_t i = 0; i < x.size(); ++i) mha[i] += x[i];
    Vec y = layer_norm(mha, p.g1, p.be1, d);
    Vec hid = matmul(y, p.f1, t_len, d, p.ffn);
    for (std::size_t t = 0; t < t_len; ++t)
      for (std::size_t j = 0; j < p.ffn; ++j) hid[t * p.ffn + j] = relu(hid[t * p.ffn + j] + p.fb1[j]);
    Vec f = matmul(hid, p.f2, t_len, p.ffn, d);
    for (std::size_t t = 0; t < t_len; ++t)
      for (std::size_t i = 0; i < d; ++i) f[t * d + i] += p.fb2[i] + y[t * d + i];
    Vec z = layer_norm(f, p.g2, p.be2, d);
    for (std::size_t t = 0; t < t_len; ++t)
      for (std::size_t i = 0; i < d; ++i) out[(t * nodes + n) * d + i] = z[t * d + i];
  }
  return out;
}

/// Graph attention by explicit edge loops. adj is N x N; self-loops implied.
inline Vec graph_attention(const Vec& h, const Vec& adj, std::size_t nodes, std::size_t d, const Vec& w,
                           const Vec& a) {
  Vec wh = matmul(h, w, nodes, d, d);
  Vec out(nodes * d, 0.0);
  for (std::size_t i = 0; i < nodes; ++i) {
    std::vector<std::size_t> nbrs;
    for (std::size_t j = 0; j < nodes; ++j)
      if (i == j || adj[i * nodes + j] > 0.0) nbrs.push_back(j);
    Vec e;
    for (auto j : nbrs) {
      double s = 0.0;
      for (std::size_t p = 0; p < d; ++p) s += a[p] * wh[i * d + p] + a[d + p] * wh[j * d + p];
      e.push_back(leaky(s, 0.2));
    }
    Vec alpha = softmax_rows(e, 1, e.size());
    for (std::size_t p = 0; p < d; ++p) {
      double s = 0.0;
      for (std::size_t q = 0; q < nbrs.size(); ++q) s += alpha[q] * wh[nbrs[q] * d + p];
      out[i * d + p] = elu(s);
    }
  }
  return out;
}

/// Head on f[T,N,D] -> [Q,N,Co].
inline Vec prediction_head(const Vec& f, std::size_t t_len, std::size_t nodes, std::size_t d, std::size_t co,
                           std::size_t q_len, const Vec& w1, const Vec& b1, const Vec& w2, const Vec& b2) {
  Vec y(q_len * nodes * co);
  for (std::size_t q = 0; q < q_len; ++q)
    for (std::size_t n = 0; n < nodes; ++n)
      for (std::size_t o = 0; o < co; ++o) {
        double s = b2[q];
        for (std::size_t t = 0; t < t_len; ++t) {
          double c = b1[o];
          for (std::size_t i = 0; i < d; ++i) c += f[(t * nodes + n) * d + i] * w1[i * co + o];
          s += c * w2[t * q_len + q];
        }
        y[(q * nodes + n) * co + o] = s;
      }
  return y;
}

}  // namespace oracle
