#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "afdgcn/tensor.hpp"

namespace afdgcn {

struct AdamOptions {
  double lr = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Per-parameter Adam moments.
struct AdamState {
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
  AdamOptions options;
};

/// One bias-corrected Adam update of `param` in place. `state` buffers are
/// sized on first use.
void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state);

/// Adam over a fixed list of leaf parameters. Parameters without a gradient
/// are treated as having a zero gradient.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options = {});

  void step();
  void zero_grad();

  const std::vector<AdamState>& states() const { return states_; }
  const AdamOptions& options() const { return options_; }

 private:
  std::vector<Tensor> params_;
  std::vector<AdamState> states_;
  AdamOptions options_;
};

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

}  // namespace afdgcn
