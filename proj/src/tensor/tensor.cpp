#include "afdgcn/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "afdgcn/autodiff.hpp"

namespace afdgcn {

namespace {

std::atomic<std::uint64_t> g_next_seq{1};
std::atomic<bool> g_checked{false};
thread_local bool t_grad_enabled = true;

struct GradientFault {
  std::string op;
  double scale = 1.0;
};
GradientFault g_fault;

detail::TensorImpl& require(const std::shared_ptr<detail::TensorImpl>& impl) {
  if (!impl) throw std::logic_error("operation on an undefined tensor");
  return *impl;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " does not hold " +
                     std::to_string(values.size()) + " values");
  }
  impl_ = std::make_shared<detail::TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
  if (checked_mode()) detail::check_finite("tensor", impl_->data);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({}, {value}, requires_grad);
}

Tensor Tensor::eye(std::size_t n) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return Tensor({n, n}, std::move(v));
}

const Shape& Tensor::shape() const { return require(impl_).shape; }

std::size_t Tensor::size(int axis) const {
  const auto& s = shape();
  int r = static_cast<int>(s.size());
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  }
  return s[static_cast<std::size_t>(a)];
}

std::size_t Tensor::numel() const { return require(impl_).data.size(); }

std::span<const double> Tensor::values() const { return require(impl_).data; }

std::vector<double> Tensor::to_vector() const { return require(impl_).data; }

std::span<double> Tensor::mutable_values() {
  auto& impl = require(impl_);
  if (impl.node) throw std::logic_error("mutable_values() on a non-leaf tensor");
  return impl.data;
}

double Tensor::item() const {
  const auto& impl = require(impl_);
  if (impl.data.size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_str(impl.shape));
  }
  return impl.data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& impl = require(impl_);
  if (index.size() != impl.shape.size()) throw ShapeError("at(): rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= impl.shape[axis]) throw ShapeError("at(): index out of range");
    flat = flat * impl.shape[axis] + i;
    ++axis;
  }
  return impl.data[flat];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  auto& impl = require(impl_);
  if (impl.node) throw std::logic_error("set_requires_grad() on a non-leaf tensor");
  impl.requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return !require(impl_).node; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const { return require(impl_).grad; }

void Tensor::zero_grad() {
  auto& impl = require(impl_);
  impl.grad.clear();
}

Tensor Tensor::detach() const {
  const auto& impl = require(impl_);
  return Tensor(impl.shape, impl.data, false);
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

void set_checked_mode(bool on) { g_checked.store(on); }
bool checked_mode() { return g_checked.load(std::memory_order_relaxed); }

CheckedModeGuard::CheckedModeGuard(bool on) : previous_(checked_mode()) { set_checked_mode(on); }
CheckedModeGuard::~CheckedModeGuard() { set_checked_mode(previous_); }

void set_gradient_fault(std::string op, double scale) {
  g_fault.op = std::move(op);
  g_fault.scale = scale;
}

namespace detail {

void check_finite(const char* op, std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite value");
  }
}

void check_inputs(const char* op, std::initializer_list<const Tensor*> inputs) {
  if (!checked_mode()) return;
  for (const auto* t : inputs) {
    if (t && t->defined()) check_finite(op, t->values());
  }
}

Tensor make_result(Shape shape, Buffer data, const char* op, std::vector<Tensor> inputs,
                   BackwardFn backward) {
  if (checked_mode()) check_finite(op, data);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  if (t_grad_enabled) {
    bool any = std::any_of(inputs.begin(), inputs.end(),
                           [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      auto node = std::make_shared<TapeNode>();
      node->op = op;
      node->seq = g_next_seq.fetch_add(1, std::memory_order_relaxed);
      node->backward = std::move(backward);
      node->inputs.reserve(inputs.size());
      for (auto& t : inputs) node->inputs.push_back(t.impl_ptr());
      impl->node = std::move(node);
      impl->requires_grad = true;
    }
  }
  return Tensor(std::move(impl));
}

Buffer* grad_sink(const Tensor& t) {
  auto* impl = t.impl();
  if (!impl || !impl->requires_grad) return nullptr;
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
  return &impl->grad;
}

Buffer* adopt_grad(const Tensor& t, Buffer& grad_out) {
  auto* impl = t.impl();
  if (!impl || !impl->requires_grad || !impl->grad.empty() || grad_out.size() != impl->data.size()) return nullptr;
  impl->grad.swap(grad_out);
  return &impl->grad;
}

}  // namespace detail

void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::logic_error("backward() on an undefined tensor");
  if (loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  }
  auto* root = loss.impl();
  if (!root->node) {
    if (!root->requires_grad) throw std::logic_error("backward(): tape is empty");
    if (root->grad.empty()) root->grad.assign(1, 0.0);
    root->grad[0] += 1.0;
    return;
  }

  // Gather every recorded node reachable from the loss.
  std::vector<std::shared_ptr<detail::TensorImpl>> order;
  std::unordered_set<const detail::TensorImpl*> seen;
  std::vector<std::shared_ptr<detail::TensorImpl>> stack{loss.impl_ptr()};
  seen.insert(root);
  while (!stack.empty()) {
    auto cur = std::move(stack.back());
    stack.pop_back();
    if (!cur->node) continue;
    for (const auto& in : cur->node->inputs) {
      if (in && in->requires_grad && seen.insert(in.get()).second) stack.push_back(in);
    }
    order.push_back(std::move(cur));
  }
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a->node->seq > b->node->seq; });

  if (root->grad.empty()) root->grad.assign(1, 0.0);
  root->grad[0] += 1.0;

  for (const auto& impl : order) {
    if (impl->grad.empty()) continue;
    auto& node = *impl->node;
    if (!g_fault.op.empty() && g_fault.op == node.op) {
      detail::Buffer scaled = impl->grad;
      for (auto& g : scaled) g *= g_fault.scale;
      node.backward(scaled, impl->data);
    } else {
      node.backward(impl->grad, impl->data);
    }
    // Consume the tape as it goes: the gradient and closure of a node are
    // dead once it has propagated, and freeing them keeps the heap warm.
    impl->node.reset();
    impl->requires_grad = false;
    detail::Buffer().swap(impl->grad);
  }

  for (const auto& impl : order) {
    impl->node.reset();
    impl->requires_grad = false;
  }
}

void retain_freed_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace afdgcn
