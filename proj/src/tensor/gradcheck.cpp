#include "afdgcn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace afdgcn {

namespace {

double eval_scalar(const std::function<Tensor()>& loss_fn) {
  NoGradGuard guard;
  Tensor v = loss_fn();
  if (v.numel() != 1) throw ShapeError("grad_check: function must return a scalar");
  return v.item();
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                           double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) throw std::invalid_argument("grad_check: h must lie in [1e-7, 1e-3]");
  for (auto& p : params) {
    if (!p.is_leaf() || !p.requires_grad()) {
      throw std::invalid_argument("grad_check: parameters must be leaves with requires_grad");
    }
    p.zero_grad();
  }
  Tensor loss = loss_fn();
  if (loss.numel() != 1) throw ShapeError("grad_check: function must return a scalar");
  backward(loss);

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    std::vector<double> analytic(p.grad().begin(), p.grad().end());
    if (analytic.empty()) analytic.assign(p.numel(), 0.0);
    auto values = p.mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = eval_scalar(loss_fn);
      values[i] = saved - h;
      const double down = eval_scalar(loss_fn);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      ++result.coordinates;
      if (err > result.max_rel_error || result.coordinates == 1) {
        result.max_rel_error = err;
        result.worst_param = pi;
        result.worst_index = i;
        result.analytic = analytic[i];
        result.numeric = numeric;
      }
    }
    p.zero_grad();
  }
  return result;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor leaf(x.shape(), x.to_vector(), true);
  std::vector<Tensor> params{leaf};
  return grad_check([&] { return f(leaf); }, params, h).max_rel_error;
}

}  // namespace afdgcn
