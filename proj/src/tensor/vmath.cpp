#include "vmath.hpp"

#include <algorithm>
#include <cmath>

namespace afdgcn::kernels {

namespace {

#if defined(AFDGCN_HAVE_MVEC) && defined(__AVX512F__)
constexpr std::size_t kWidth = 8;
typedef double Lane __attribute__((vector_size(64)));
extern "C" Lane _ZGVeN8v_exp(Lane);
extern "C" Lane _ZGVeN8v_tanh(Lane);
Lane lane_exp(Lane x) { return _ZGVeN8v_exp(x); }
Lane lane_tanh(Lane x) { return _ZGVeN8v_tanh(x); }
#elif defined(AFDGCN_HAVE_MVEC) && defined(__AVX2__)
constexpr std::size_t kWidth = 4;
typedef double Lane __attribute__((vector_size(32)));
extern "C" Lane _ZGVdN4v_exp(Lane);
extern "C" Lane _ZGVdN4v_tanh(Lane);
Lane lane_exp(Lane x) { return _ZGVdN4v_exp(x); }
Lane lane_tanh(Lane x) { return _ZGVdN4v_tanh(x); }
#else
constexpr std::size_t kWidth = 1;
typedef double Lane;
Lane lane_exp(Lane x) { return std::exp(x); }
Lane lane_tanh(Lane x) { return std::tanh(x); }
#endif

template <class F>
void apply(std::span<double> v, F f) {
  const std::size_t full = v.size() / kWidth * kWidth;
  for (std::size_t i = 0; i < full; i += kWidth) {
    Lane x;
    __builtin_memcpy(&x, v.data() + i, sizeof(x));
    x = f(x);
    __builtin_memcpy(v.data() + i, &x, sizeof(x));
  }
  if (full == v.size()) return;
  double tail[kWidth] = {};
  std::copy(v.begin() + static_cast<std::ptrdiff_t>(full), v.end(), tail);
  Lane x;
  __builtin_memcpy(&x, tail, sizeof(x));
  x = f(x);
  __builtin_memcpy(tail, &x, sizeof(x));
  std::copy(tail, tail + (v.size() - full), v.begin() + static_cast<std::ptrdiff_t>(full));
}

}  // namespace

void exp_inplace(std::span<double> v) { apply(v, lane_exp); }
void tanh_inplace(std::span<double> v) { apply(v, lane_tanh); }

void sigmoid_inplace(std::span<double> v) {
  apply(v, [](Lane x) {
    const Lane neg = x < 0.0 ? x : -x;
    const Lane e = lane_exp(neg);
    const Lane r = 1.0 / (1.0 + e);
    return x >= 0.0 ? r : e * r;
  });
}

}  // namespace afdgcn::kernels
