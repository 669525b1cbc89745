#include "afdgcn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "afdgcn/ops.hpp"

namespace afdgcn {

namespace {

Shape leading(const Tensor& x, std::size_t trailing) {
  if (x.rank() < trailing) {
    throw ShapeError("expected rank >= " + std::to_string(trailing) + ", got " + shape_str(x.shape()));
  }
  return Shape(x.shape().begin(), x.shape().end() - static_cast<std::ptrdiff_t>(trailing));
}

Shape join(Shape lead, std::initializer_list<std::size_t> tail) {
  lead.insert(lead.end(), tail);
  return lead;
}

}  // namespace

Tensor uniform_parameter(Shape shape, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-limit, limit);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor xavier_parameter(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  return uniform_parameter(std::move(shape), std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)), rng);
}

// Feature augmentation ---------------------------------------------------------

ChannelCalibration ChannelCalibration::init(std::size_t channels, std::size_t reduction, std::mt19937_64& rng) {
  const std::size_t bottleneck = std::max<std::size_t>(1, channels / reduction);
  ChannelCalibration p;
  p.w1 = xavier_parameter({channels, bottleneck}, channels, bottleneck, rng);
  p.b1 = Tensor::zeros({bottleneck}, true);
  p.w2 = xavier_parameter({bottleneck, channels}, bottleneck, channels, rng);
  p.b2 = Tensor::zeros({channels}, true);
  return p;
}

TemporalCalibration TemporalCalibration::init(std::size_t channels, std::size_t kernel, std::mt19937_64& rng) {
  TemporalCalibration p;
  p.inner = xavier_parameter({kernel, channels, channels}, kernel * channels, kernel * channels, rng);
  p.outer = xavier_parameter({kernel, channels, channels}, kernel * channels, kernel * channels, rng);
  return p;
}

Tensor channel_calibration(const Tensor& x, const ChannelCalibration& p) {
  leading(x, 3);
  Tensor descriptor = mean(mean(x, -3, true), -2, true);  // [..., 1, 1, C]
  Tensor hidden = relu(add(matmul(descriptor, p.w1), p.b1));
  Tensor gate = sigmoid(add(matmul(hidden, p.w2), p.b2));
  return mul(x, gate);
}

Tensor temporal_calibration(const Tensor& x, const TemporalCalibration& p) {
  Tensor gate = sigmoid(conv_temporal(relu(conv_temporal(x, p.inner)), p.outer));
  return mul(x, gate);
}

// Recurrent graph convolution ---------------------------------------------------

GruPools GruPools::init(std::size_t embed_dim, std::size_t order, std::size_t in_channels, std::size_t hidden,
                        std::mt19937_64& rng) {
  const std::size_t width = in_channels + hidden;
  GruPools p;
  p.gate.weight_pool = xavier_parameter({embed_dim, order, width, 2 * hidden}, width, 2 * hidden, rng);
  p.gate.bias_pool = Tensor::zeros({embed_dim, 2 * hidden}, true);
  p.update.weight_pool = xavier_parameter({embed_dim, order, width, hidden}, width, hidden, rng);
  p.update.bias_pool = Tensor::zeros({embed_dim, hidden}, true);
  return p;
}

Tensor dgcgru_step(const Tensor& x_t, const Tensor& h_prev, const Tensor& embeddings, const Tensor& adaptive,
                   const GruPools& pools) {
  const std::size_t hidden = pools.hidden_dim();
  if (pools.gate.out_channels() != 2 * hidden) throw ShapeError("dgcgru_step: gate pool must produce 2D outputs");
  if (h_prev.size(-1) != hidden) throw ShapeError("dgcgru_step: hidden state width does not match the pools");
  Tensor gates = sigmoid(dynamic_graph_conv(concat({x_t, h_prev}, -1), embeddings, adaptive, pools.gate));
  Tensor z = slice(gates, -1, 0, hidden);
  Tensor r = slice(gates, -1, hidden, hidden);
  Tensor candidate = tanh(dynamic_graph_conv(concat({x_t, mul(r, h_prev)}, -1), embeddings, adaptive, pools.update));
  return add(mul(z, h_prev), mul(one_minus(z), candidate));
}

Tensor dgcgru_unroll(const Tensor& x, const Tensor& h0, const Tensor& embeddings, const Tensor& adaptive,
                     const GruPools& pools) {
  Shape lead = leading(x, 3);
  const std::size_t steps = x.size(-3), n = x.size(-2), c = x.size(-1);
  if (steps < 1) throw ShapeError("dgcgru_unroll: need at least one time step");
  const std::size_t hidden = pools.hidden_dim();
  if (pools.gate.out_channels() != 2 * hidden) throw ShapeError("dgcgru_unroll: gate pool must produce 2D outputs");
  const std::size_t batch = shape_numel(lead);

  // The recurrence runs node-major, [N, B, C], so each step is one dense
  // product with A and one batched product with the per-node weights.
  ResolvedGraphConv gate = resolve_graph_conv(embeddings, pools.gate);
  ResolvedGraphConv update = resolve_graph_conv(embeddings, pools.update);
  Tensor xs = permute(reshape(x, {batch, steps, n, c}), {1, 2, 0, 3});  // [T, N, B, C]
  Tensor h = h0.defined() ? permute(reshape(h0, {batch, n, hidden}), {1, 0, 2})
                          : Tensor::zeros({n, batch, hidden});
  std::vector<Tensor> states;
  states.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor x_t = reshape(slice(xs, 0, t, 1), {n, batch, c});
    Tensor gates = sigmoid(node_major_graph_conv(concat({x_t, h}, -1), adaptive, gate));
    Tensor z = slice(gates, -1, 0, hidden);
    Tensor r = slice(gates, -1, hidden, hidden);
    Tensor candidate = tanh(node_major_graph_conv(concat({x_t, mul(r, h)}, -1), adaptive, update));
    h = add(mul(z, h), mul(one_minus(z), candidate));
    states.push_back(reshape(h, {1, n, batch, hidden}));
  }
  Tensor stacked = steps == 1 ? states[0] : concat(std::span<const Tensor>(states), 0);  // [T, N, B, D]
  return reshape(permute(stacked, {2, 0, 1, 3}), join(lead, {steps, n, hidden}));
}

// Temporal attention -------------------------------------------------------------

Tensor positional_encoding(std::size_t steps, std::size_t dim, PositionalEncoding variant) {
  if (dim < 1) throw std::invalid_argument("positional_encoding: dim must be >= 1");
  std::vector<double> pe(steps * dim);
  const double d = static_cast<double>(dim);
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      double angle;
      bool use_sin;
      if (variant == PositionalEncoding::paper) {
        angle = static_cast<double>(t) / std::pow(10000.0, 2.0 * static_cast<double>(i) / d);
        use_sin = t % 2 == 0;
      } else {
        angle = static_cast<double>(t) / std::pow(10000.0, 2.0 * static_cast<double>(i / 2) / d);
        use_sin = i % 2 == 0;
      }
      pe[t * dim + i] = use_sin ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor({steps, dim}, std::move(pe));
}

TemporalAttention TemporalAttention::init(std::size_t dim, std::size_t ffn_expansion, std::mt19937_64& rng) {
  const std::size_t width = dim * ffn_expansion;
  TemporalAttention p;
  p.wq = xavier_parameter({dim, dim}, dim, dim, rng);
  p.wk = xavier_parameter({dim, dim}, dim, dim, rng);
  p.wv = xavier_parameter({dim, dim}, dim, dim, rng);
  p.wo = xavier_parameter({dim, dim}, dim, dim, rng);
  p.ln1_gamma = Tensor::full({dim}, 1.0, true);
  p.ln1_beta = Tensor::zeros({dim}, true);
  p.ffn_w1 = xavier_parameter({dim, width}, dim, width, rng);
  p.ffn_b1 = Tensor::zeros({width}, true);
  p.ffn_w2 = xavier_parameter({width, dim}, width, dim, rng);
  p.ffn_b2 = Tensor::zeros({dim}, true);
  p.ln2_gamma = Tensor::full({dim}, 1.0, true);
  p.ln2_beta = Tensor::zeros({dim}, true);
  return p;
}

Tensor multi_head_temporal_attention(const Tensor& h, const TemporalAttention& p, std::size_t heads,
                                     PositionalEncoding variant, Tensor* weights_out) {
  Shape lead = leading(h, 3);
  const std::size_t steps = h.size(-3), n = h.size(-2), dim = h.size(-1);
  if (heads < 1 || dim % heads != 0) {
    throw std::invalid_argument("temporal attention: hidden size " + std::to_string(dim) +
                                " is not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t batch = shape_numel(lead);

  // Every projection and the feed-forward block act on the last axis, so the
  // [B, T, N, D] layout is kept throughout.
  Tensor x = reshape(add(h, reshape(positional_encoding(steps, dim, variant), {steps, 1, dim})),
                     {batch, steps, n, dim});
  Tensor context = temporal_attention(matmul(x, p.wq), matmul(x, p.wk), matmul(x, p.wv), heads, weights_out);
  if (weights_out) *weights_out = reshape(*weights_out, join(lead, {n, heads, steps, steps}));
  Tensor attended = matmul(context, p.wo);

  Tensor y = layer_norm(add(x, attended), p.ln1_gamma, p.ln1_beta);
  Tensor ffn = feed_forward(y, p.ffn_w1, p.ffn_b1, p.ffn_w2, p.ffn_b2);
  Tensor out = layer_norm(add(y, ffn), p.ln2_gamma, p.ln2_beta);
  return reshape(out, join(lead, {steps, n, dim}));
}

// Graph attention ------------------------------------------------------------------

GraphAttention GraphAttention::init(std::size_t dim, std::mt19937_64& rng) {
  GraphAttention p;
  p.w = xavier_parameter({dim, dim}, dim, dim, rng);
  p.a = xavier_parameter({2 * dim, 1}, 2 * dim, 1, rng);
  return p;
}

std::vector<std::uint8_t> attention_mask(const Tensor& adjacency) {
  if (adjacency.rank() != 2 || adjacency.size(0) != adjacency.size(1)) {
    throw ShapeError("attention_mask: adjacency must be square");
  }
  const std::size_t n = adjacency.size(0);
  auto a = adjacency.values();
  std::vector<std::uint8_t> mask(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) mask[i * n + j] = (i == j || a[i * n + j] > 0.0) ? 1 : 0;
  return mask;
}

Tensor graph_attention(const Tensor& h, const GraphAttention& p, std::span<const std::uint8_t> mask,
                       double dropout_p, std::mt19937_64* rng, Tensor* alpha_out) {
  leading(h, 2);
  const std::size_t dim = h.size(-1);
  if (p.w.rank() != 2 || p.w.size(0) != dim || p.a.rank() != 2 || p.a.size(0) != 2 * dim) {
    throw ShapeError("graph_attention: parameters do not match hidden size " + std::to_string(dim));
  }
  Tensor wh = matmul(h, p.w);
  Tensor self_score = matmul(wh, slice(p.a, 0, 0, dim));             // [..., N, 1]
  Tensor neighbour_score = matmul(wh, slice(p.a, 0, dim, dim));      // [..., N, 1]
  Tensor e = leaky_relu(add(self_score, transpose(neighbour_score, -1, -2)), 0.2);
  Tensor alpha = masked_softmax(e, mask);
  if (alpha_out) *alpha_out = alpha;
  if (rng && dropout_p > 0.0) alpha = dropout(alpha, dropout_p, *rng);
  return elu(matmul(alpha, wh));
}

// Prediction head --------------------------------------------------------------

PredictionHead PredictionHead::init(std::size_t dim, std::size_t out_channels, std::size_t steps,
                                    std::size_t horizon, std::mt19937_64& rng) {
  PredictionHead p;
  p.w1 = xavier_parameter({dim, out_channels}, dim, out_channels, rng);
  p.b1 = Tensor::zeros({out_channels}, true);
  p.w2 = xavier_parameter({steps, horizon}, steps, horizon, rng);
  p.b2 = Tensor::zeros({horizon}, true);
  return p;
}

Tensor prediction_head(const Tensor& h_t, const Tensor& h_s, const PredictionHead& p) {
  Shape lead = leading(h_t, 3);
  const std::size_t n = h_t.size(-2), dim = h_t.size(-1);
  Tensor fused = h_t;
  if (h_s.defined()) {
    if (h_s.shape() != join(lead, {n, dim})) {
      throw ShapeError("prediction_head: spatial branch " + shape_str(h_s.shape()) + " does not match " +
                       shape_str(h_t.shape()));
    }
    fused = add(h_t, reshape(h_s, join(lead, {1, n, dim})));
  }
  Tensor channels = add(matmul(fused, p.w1), p.b1);  // [..., T, N, C_out]
  const std::size_t r = channels.rank();
  std::vector<std::size_t> to_time_last(r);
  std::iota(to_time_last.begin(), to_time_last.end(), 0);
  std::rotate(to_time_last.begin() + static_cast<std::ptrdiff_t>(r - 3),
              to_time_last.begin() + static_cast<std::ptrdiff_t>(r - 2), to_time_last.end());
  Tensor projected = add(matmul(permute(channels, to_time_last), p.w2), p.b2);  // [..., N, C_out, Q]
  std::vector<std::size_t> back(r);
  std::iota(back.begin(), back.end(), 0);
  std::rotate(back.begin() + static_cast<std::ptrdiff_t>(r - 3), back.begin() + static_cast<std::ptrdiff_t>(r - 1),
              back.end());
  return permute(projected, back);
}

}  // namespace afdgcn
