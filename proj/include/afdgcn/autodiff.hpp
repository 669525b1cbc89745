#pragma once

// Internals shared by op implementations. Not part of the public surface.

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "afdgcn/tensor.hpp"

namespace afdgcn::detail {

using Buffer = std::vector<double>;

/// Receives the output gradient and the output values; accumulates into the
/// gradient buffers of the inputs it captured. grad_out is dead after the
/// call, so an input may take it over (see adopt_grad).
using BackwardFn = std::function<void(Buffer& grad_out, const Buffer& out)>;

struct TapeNode {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
  std::uint64_t seq = 0;
};

struct TensorImpl {
  Shape shape;
  Buffer data;
  Buffer grad;
  bool requires_grad = false;
  std::shared_ptr<TapeNode> node;
};

/// Wraps freshly computed values as an op result and records a tape node when
/// any input requires a gradient and recording is enabled.
Tensor make_result(Shape shape, Buffer data, const char* op, std::vector<Tensor> inputs,
                   BackwardFn backward);

/// Gradient buffer of `t`, allocated as zeros on first use. nullptr when `t`
/// does not participate in differentiation.
Buffer* grad_sink(const Tensor& t);

/// Moves `grad_out` into the gradient of `t` when `t` participates, has no
/// gradient yet and matches in size. The caller then transforms the returned
/// buffer in place instead of accumulating; `grad_out` is left empty.
/// nullptr otherwise, with `grad_out` untouched.
Buffer* adopt_grad(const Tensor& t, Buffer& grad_out);

void check_finite(const char* op, std::span<const double> values);
void check_inputs(const char* op, std::initializer_list<const Tensor*> inputs);

}  // namespace afdgcn::detail
