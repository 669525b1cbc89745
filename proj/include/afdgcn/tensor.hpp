#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace afdgcn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a non-finite value crosses an op boundary in checked mode,
/// or when an optimizer/training step produces one.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
struct TensorImpl;
}

/// Dense row-major double tensor. Copies are cheap handles onto the same
/// storage; values are immutable after construction except for leaf tensors
/// (parameters), which the optimizer updates in place.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor eye(std::size_t n);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  /// Size of `axis`; negative axes count from the end.
  std::size_t size(int axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  std::vector<double> to_vector() const;
  /// Writable storage. Only valid on leaf tensors.
  std::span<double> mutable_values();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  /// Gradient buffer; empty span when no gradient has been accumulated.
  std::span<const double> grad() const;
  void zero_grad();
  /// Same values, cut from the tape.
  Tensor detach() const;

  detail::TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<detail::TensorImpl>& impl_ptr() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Tape control ------------------------------------------------------------

/// Runs reverse-mode differentiation from a scalar `loss`. Every reachable
/// leaf with requires_grad receives d(loss)/d(leaf) (accumulated). The tape
/// behind `loss` is consumed.
void backward(const Tensor& loss);

bool grad_enabled();

/// Disables tape recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Checked mode rejects NaN/Inf at every op boundary.
void set_checked_mode(bool on);
bool checked_mode();

class CheckedModeGuard {
 public:
  explicit CheckedModeGuard(bool on = true);
  ~CheckedModeGuard();
  CheckedModeGuard(const CheckedModeGuard&) = delete;
  CheckedModeGuard& operator=(const CheckedModeGuard&) = delete;

 private:
  bool previous_;
};

/// Test fixture hook: scales the incoming gradient of every tape node whose
/// op name equals `op` during backward. An empty name disables the fault.
void set_gradient_fault(std::string op, double scale);

/// Asks the C allocator to keep large freed buffers for reuse instead of
/// returning them to the OS after every op. No effect outside glibc.
void retain_freed_memory();

}  // namespace afdgcn
