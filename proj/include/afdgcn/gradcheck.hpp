#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "afdgcn/tensor.hpp"

namespace afdgcn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  /// Parameter (within the checked list) and flat coordinate of the worst entry.
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Compares the tape gradient of the scalar `loss_fn()` with respect to each
/// leaf in `params` against central differences of step `h`. The error of a
/// coordinate is |analytic - numeric| / max(1, |analytic|). Parameters are
/// perturbed in place and restored.
GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                           double h = 1e-5);

/// Single-input form: checks d f(x) / dx at `x`. Returns the max relative error.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

}  // namespace afdgcn
