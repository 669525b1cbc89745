#pragma once

#include <span>

namespace afdgcn::kernels {

// In-place exp and tanh over a buffer, vectorised through glibc's libmvec
// when it is available and scalar otherwise.
void exp_inplace(std::span<double> v);
void tanh_inplace(std::span<double> v);
/// Logistic function, evaluated from exp(-|v|) so it never overflows.
void sigmoid_inplace(std::span<double> v);

}  // namespace afdgcn::kernels
