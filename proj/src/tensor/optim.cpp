#include "afdgcn/optim.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "afdgcn/autodiff.hpp"

namespace afdgcn {

void adam_step(std::span<double> param, std::span<const double> grad, AdamState& state) {
  const auto& o = state.options;
  if (o.beta1 < 0.0 || o.beta1 >= 1.0 || o.beta2 < 0.0 || o.beta2 >= 1.0) {
    throw std::invalid_argument("adam: betas must lie in [0, 1)");
  }
  if (grad.size() != param.size()) {
    throw ShapeError("adam: gradient has " + std::to_string(grad.size()) + " entries, parameter " +
                     std::to_string(param.size()));
  }
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(param.size(), 0.0);
    state.v.assign(param.size(), 0.0);
  }
  if (state.m.size() != param.size() || state.v.size() != param.size()) {
    throw ShapeError("adam: moment buffers do not match parameter size");
  }
  if (state.t == std::numeric_limits<std::uint64_t>::max()) {
    throw std::overflow_error("adam: step counter overflow");
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    state.m[i] = o.beta1 * state.m[i] + (1.0 - o.beta1) * g;
    state.v[i] = o.beta2 * state.v[i] + (1.0 - o.beta2) * g * g;
    const double m_hat = state.m[i] / bc1;
    const double v_hat = state.v[i] / bc2;
    param[i] -= o.lr * m_hat / (std::sqrt(v_hat) + o.epsilon);
  }
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  states_.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].is_leaf()) throw std::invalid_argument("Adam: parameters must be leaf tensors");
    states_[i].options = options_;
    states_[i].m.assign(params_[i].numel(), 0.0);
    states_[i].v.assign(params_[i].numel(), 0.0);
  }
}

void Adam::step() {
  std::vector<double> zeros;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    std::span<const double> g = p.grad();
    if (g.empty()) {
      zeros.assign(p.numel(), 0.0);
      g = zeros;
    }
    adam_step(p.mutable_values(), g, states_[i]);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double total = 0.0;
  for (const auto& p : params) {
    for (double g : p.grad()) total += g * g;
  }
  const double norm = std::sqrt(total);
  if (max_norm > 0.0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& p : params) {
      if (auto* buf = detail::grad_sink(p); buf && !p.grad().empty()) {
        for (auto& g : *buf) g *= f;
      }
    }
  }
  return norm;
}

}  // namespace afdgcn
