#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "afdgcn/config.hpp"
#include "afdgcn/graph.hpp"
#include "afdgcn/tensor.hpp"

namespace afdgcn {

// All layers take a leading batch: tensors are [..., T, N, C] or [..., N, C]
// and the same parameters are mapped over the leading axes.

/// Uniform(-limit, limit) leaf with requires_grad.
Tensor uniform_parameter(Shape shape, double limit, std::mt19937_64& rng);
/// Xavier-uniform over the given fans.
Tensor xavier_parameter(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

// Feature augmentation ---------------------------------------------------------

struct ChannelCalibration {
  Tensor w1;  // [C, C_b]
  Tensor b1;  // [C_b]
  Tensor w2;  // [C_b, C]
  Tensor b2;  // [C]

  static ChannelCalibration init(std::size_t channels, std::size_t reduction, std::mt19937_64& rng);
};

struct TemporalCalibration {
  Tensor inner;  // [k, C, C]
  Tensor outer;  // [k, C, C]

  static TemporalCalibration init(std::size_t channels, std::size_t kernel, std::mt19937_64& rng);
};

/// Squeeze over (T, N), excite per channel: x * sigmoid(W2 relu(W1 s + b1) + b2).
Tensor channel_calibration(const Tensor& x, const ChannelCalibration& p);
/// x * sigmoid(outer * relu(inner * x)) with temporal convolutions.
Tensor temporal_calibration(const Tensor& x, const TemporalCalibration& p);

// Recurrent graph convolution ---------------------------------------------------

struct GruPools {
  /// Produces [z, r] (2D outputs) from [x, h].
  NodeAdaptiveWeights gate;
  /// Produces the candidate state (D outputs) from [x, r * h].
  NodeAdaptiveWeights update;

  std::size_t hidden_dim() const { return update.out_channels(); }
  static GruPools init(std::size_t embed_dim, std::size_t order, std::size_t in_channels, std::size_t hidden,
                       std::mt19937_64& rng);
};

/// One step: x_t [..., N, C], h_prev [..., N, D] -> [..., N, D].
/// H = z * H_prev + (1 - z) * tanh(conv([x, r * H_prev])).
Tensor dgcgru_step(const Tensor& x_t, const Tensor& h_prev, const Tensor& embeddings, const Tensor& adaptive,
                   const GruPools& pools);

/// x [..., T, N, C] -> stacked states [..., T, N, D]. An undefined h0 means zeros.
Tensor dgcgru_unroll(const Tensor& x, const Tensor& h0, const Tensor& embeddings, const Tensor& adaptive,
                     const GruPools& pools);

// Temporal attention -------------------------------------------------------------

/// [T, D] position tokens.
Tensor positional_encoding(std::size_t steps, std::size_t dim, PositionalEncoding variant);

struct TemporalAttention {
  Tensor wq, wk, wv, wo;   // [D, D]
  Tensor ln1_gamma, ln1_beta;
  Tensor ffn_w1, ffn_b1;   // [D, F], [F]
  Tensor ffn_w2, ffn_b2;   // [F, D], [D]
  Tensor ln2_gamma, ln2_beta;

  static TemporalAttention init(std::size_t dim, std::size_t ffn_expansion, std::mt19937_64& rng);
};

/// Per-node self-attention over time on h [..., T, N, D], followed by the
/// post-norm residual and feed-forward block. When `weights_out` is given it
/// receives the attention distributions [..., N, heads, T, T].
Tensor multi_head_temporal_attention(const Tensor& h, const TemporalAttention& p, std::size_t heads,
                                     PositionalEncoding variant, Tensor* weights_out = nullptr);

// Graph attention ------------------------------------------------------------------

struct GraphAttention {
  Tensor w;  // [D, D]
  Tensor a;  // [2D, 1], first half scores the node itself, second half the neighbour

  static GraphAttention init(std::size_t dim, std::mt19937_64& rng);
};

/// Mask of A > 0 with the diagonal set.
std::vector<std::uint8_t> attention_mask(const Tensor& adjacency);

/// h [..., N, D] -> ELU(alpha W h). Dropout of probability `dropout_p` is applied
/// to alpha only when `rng` is given. `alpha_out` receives alpha before dropout.
Tensor graph_attention(const Tensor& h, const GraphAttention& p, std::span<const std::uint8_t> mask,
                       double dropout_p = 0.0, std::mt19937_64* rng = nullptr, Tensor* alpha_out = nullptr);

// Prediction head --------------------------------------------------------------

struct PredictionHead {
  Tensor w1;  // [D, C_out]
  Tensor b1;  // [C_out]
  Tensor w2;  // [T, Q]
  Tensor b2;  // [Q]

  static PredictionHead init(std::size_t dim, std::size_t out_channels, std::size_t steps, std::size_t horizon,
                             std::mt19937_64& rng);
};

/// h_t [..., T, N, D] plus h_s [..., N, D] (broadcast over T; may be undefined)
/// -> [..., Q, N, C_out].
Tensor prediction_head(const Tensor& h_t, const Tensor& h_s, const PredictionHead& p);

}  // namespace afdgcn
