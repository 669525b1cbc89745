#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "afdgcn/tensor.hpp"

namespace afdgcn {

// Elementwise -------------------------------------------------------------
//
// Binary ops broadcast over trailing dimensions: shapes are right-aligned and
// size-1 (or missing) axes expand.

Shape broadcast_shapes(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor elu(const Tensor& x, double alpha = 1.0);
Tensor leaky_relu(const Tensor& x, double slope = 0.01);
Tensor exp(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double offset);
/// 1 - x
Tensor one_minus(const Tensor& x);

enum class ElementwiseOp {
  add,
  sub,
  mul,
  sigmoid,
  relu,
  tanh,
  elu,
  leaky_relu,
  exp,
  scale,
};

/// Dispatches on `kind`. Binary kinds require `b`; `param` is the slope for
/// leaky_relu, alpha for elu and the factor for scale.
Tensor elementwise(ElementwiseOp kind, const Tensor& a, const std::optional<Tensor>& b = {},
                   double param = 0.0);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// Linear algebra and layout --------------------------------------------------

/// [..., m, k] x [..., k, n] -> [..., m, n]; leading batch dims broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor permute(const Tensor& x, std::vector<std::size_t> order);
Tensor transpose(const Tensor& x, int axis0, int axis1);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat(std::initializer_list<Tensor> parts, int axis);
/// `length` entries of `axis` starting at `start`.
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);

// Reductions ---------------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);

// Normalization --------------------------------------------------------------

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, int axis);

/// Softmax over the last axis restricted to entries where `mask` is nonzero.
/// `mask` is row-major with the shape of the last two axes of `x` and is
/// broadcast over the leading ones. Masked-out entries are exactly zero.
Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> mask);

inline constexpr double kLayerNormEpsilon = 1e-5;

/// Normalizes over the last axis (population variance), then applies the
/// affine `gamma`/`beta` of last-axis size.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double epsilon = kLayerNormEpsilon);

/// Position-wise feed-forward block relu(x w1 + b1) w2 + b2 over the last
/// axis: x [..., C], w1 [C, F], b1 [F], w2 [F, C_out], b2 [C_out]. Rows are
/// processed in cache-sized blocks and the hidden activations are recomputed
/// during backward instead of being stored.
Tensor feed_forward(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2);

// Attention ------------------------------------------------------------------

/// Multi-head scaled dot-product attention along T for q, k, v of shape
/// [..., T, N, D]: every node and head attends over its own T positions,
/// softmax(q k^T / sqrt(D / heads)) v. Returns [..., T, N, D]; when
/// `weights_out` is given it receives the detached weights [..., N, heads, T, T].
Tensor temporal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                          Tensor* weights_out = nullptr);

// Convolution ----------------------------------------------------------------

/// x: [..., T, N, C], kernel: [k, C, C_out] -> [..., T, N, C_out].
/// Slides along T independently per node with zero "same" padding; k odd.
Tensor conv_temporal(const Tensor& x, const Tensor& kernel);

// Regularization / losses ----------------------------------------------------

/// Inverted dropout with drop probability `p`.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

/// Mean over elements of 0.5 d^2 (|d| < 1) or |d| - 0.5, d = pred - target.
Tensor smooth_l1_loss(const Tensor& pred, const Tensor& target);

// Kinks ----------------------------------------------------------------------

/// While alive on this thread, records the smallest |input| passed to relu
/// and leaky_relu, i.e. how close a forward pass came to a point where the
/// function is not differentiable.
class KinkProbe {
 public:
  KinkProbe();
  ~KinkProbe();
  KinkProbe(const KinkProbe&) = delete;
  KinkProbe& operator=(const KinkProbe&) = delete;

  double nearest() const { return nearest_; }

 private:
  friend void note_kink_inputs(std::span<const double> inputs);
  double nearest_;
  KinkProbe* previous_;
};

void note_kink_inputs(std::span<const double> inputs);

}  // namespace afdgcn
