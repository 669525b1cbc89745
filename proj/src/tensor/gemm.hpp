#pragma once

#include <cstddef>

namespace afdgcn::kernels {

// Row-major dense kernels. Every output element accumulates over the inner
// dimension in ascending order, so results are bit-stable across runs.

/// C[m,n] (+)= A[m,k] * B[k,n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c, bool accumulate);

/// C[m,n] += A[k,m]^T * B[k,n]
void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
                 double* c);

/// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt_acc(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
                 double* c);

}  // namespace afdgcn::kernels
