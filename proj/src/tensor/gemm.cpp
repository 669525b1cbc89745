#include "gemm.hpp"

#include <algorithm>
#include <vector>

namespace afdgcn::kernels {

namespace {

// Register tile and cache blocks of the blocked path.
constexpr std::size_t kMr = 8;
constexpr std::size_t kNr = 8;
constexpr std::size_t kKc = 256;
constexpr std::size_t kMc = 64;

// Below this many multiply-adds blocking costs more than it saves.
constexpr std::size_t kSmallWork = 32 * 32 * 32;

// A(i, p) = a[i * rs + p * cs]
struct View {
  const double* data;
  std::size_t rs;
  std::size_t cs;
  double operator()(std::size_t i, std::size_t p) const { return data[i * rs + p * cs]; }
};

// Eight doubles; lowered to whatever vector width the target has.
typedef double Lane __attribute__((vector_size(64)));
constexpr std::size_t kLane = 8;
constexpr std::size_t kLanes = kNr / kLane;

[[gnu::always_inline]] inline Lane load_lane(const double* p) {
  Lane v;
  __builtin_memcpy(&v, p, sizeof(v));
  return v;
}

[[gnu::always_inline]] inline void store_lane(double* p, Lane v) { __builtin_memcpy(p, &v, sizeof(v)); }

// Full kMr x kNr tile of C (leading dimension ldc) += A panel * B panel, or
// = when `fresh`. Row p of the B panel is the kNr doubles at b + p * b_rs.
// A(r, p) is a[r * stride + p] when kRowMajor, else a[r + p * stride].
// Each element accumulates over p in ascending order.
template <bool kRowMajor>
void micro_kernel(std::size_t kc, const double* __restrict a, std::size_t stride, const double* __restrict b,
                  std::size_t b_rs, double* c, std::size_t ldc, bool fresh) {
  Lane acc[kMr][kLanes];
  for (std::size_t r = 0; r < kMr; ++r)
    for (std::size_t v = 0; v < kLanes; ++v) acc[r][v] = fresh ? Lane{} : load_lane(c + r * ldc + v * kLane);
  for (std::size_t p = 0; p < kc; ++p) {
    Lane bv[kLanes];
    for (std::size_t v = 0; v < kLanes; ++v) bv[v] = load_lane(b + p * b_rs + v * kLane);
    for (std::size_t r = 0; r < kMr; ++r) {
      const double av = kRowMajor ? a[r * stride + p] : a[r + p * stride];
      for (std::size_t v = 0; v < kLanes; ++v) acc[r][v] += av * bv[v];
    }
  }
  for (std::size_t r = 0; r < kMr; ++r)
    for (std::size_t v = 0; v < kLanes; ++v) store_lane(c + r * ldc + v * kLane, acc[r][v]);
}

void run_kernel(std::size_t kc, const double* a, std::size_t a_rs, std::size_t a_cs, const double* b,
                std::size_t b_rs, double* c, std::size_t ldc, bool fresh) {
  if (a_cs == 1) {
    micro_kernel<true>(kc, a, a_rs, b, b_rs, c, ldc, fresh);
  } else if (a_rs == 1) {
    micro_kernel<false>(kc, a, a_cs, b, b_rs, c, ldc, fresh);
  } else {
    double pack[kMr * kKc];
    for (std::size_t p = 0; p < kc; ++p)
      for (std::size_t r = 0; r < kMr; ++r) pack[p * kMr + r] = a[r * a_rs + p * a_cs];
    micro_kernel<false>(kc, pack, kMr, b, b_rs, c, ldc, fresh);
  }
}

// A is read in place; B panels are read in place when their rows are
// contiguous and copied into zero-padded panels otherwise. With `overwrite`
// the first inner block replaces C instead of adding to it.
void gemm_blocked(std::size_t m, std::size_t k, std::size_t n, const View& a, const View& b, double* c,
                  bool overwrite) {
  thread_local std::vector<double> b_pack, a_edge;
  const std::size_t full_m = m / kMr * kMr;
  const std::size_t panels = (n + kNr - 1) / kNr;
  for (std::size_t p0 = 0; p0 < k; p0 += kKc) {
    const std::size_t kc = std::min(kKc, k - p0);
    const bool fresh = overwrite && p0 == 0;
    b_pack.resize(panels * kc * kNr);
    for (std::size_t jr = 0; jr < n; jr += kNr) {
      const std::size_t cols = std::min(kNr, n - jr);
      if (b.cs == 1 && cols == kNr) continue;
      double* dst = b_pack.data() + jr * kc;
      for (std::size_t p = 0; p < kc; ++p)
        for (std::size_t q = 0; q < kNr; ++q) dst[p * kNr + q] = q < cols ? b(p0 + p, jr + q) : 0.0;
    }
    double tile[kMr * kNr];
    for (std::size_t i0 = 0; i0 < m; i0 += kMc) {
      const std::size_t i_end = std::min(m, i0 + kMc);
      for (std::size_t jr = 0; jr < n; jr += kNr) {
        const std::size_t cols = std::min(kNr, n - jr);
        const bool direct = b.cs == 1 && cols == kNr;
        const double* bp = direct ? b.data + p0 * b.rs + jr : b_pack.data() + jr * kc;
        const std::size_t b_rs = direct ? b.rs : kNr;
        for (std::size_t ir = i0; ir < i_end; ir += kMr) {
          const std::size_t rows = std::min(kMr, m - ir);
          const double* ap = a.data + ir * a.rs + p0 * a.cs;
          std::size_t a_rs = a.rs, a_cs = a.cs;
          if (ir >= full_m) {
            a_edge.assign(kMr * kc, 0.0);
            for (std::size_t r = 0; r < rows; ++r)
              for (std::size_t p = 0; p < kc; ++p) a_edge[p * kMr + r] = a(ir + r, p0 + p);
            ap = a_edge.data();
            a_rs = 1;
            a_cs = kMr;
          }
          double* cp = c + ir * n + jr;
          if (rows == kMr && cols == kNr) {
            run_kernel(kc, ap, a_rs, a_cs, bp, b_rs, cp, n, fresh);
            continue;
          }
          std::fill(tile, tile + kMr * kNr, 0.0);
          if (!fresh) {
            for (std::size_t r = 0; r < rows; ++r) std::copy(cp + r * n, cp + r * n + cols, tile + r * kNr);
          }
          run_kernel(kc, ap, a_rs, a_cs, bp, b_rs, tile, kNr, false);
          for (std::size_t r = 0; r < rows; ++r) std::copy(tile + r * kNr, tile + r * kNr + cols, cp + r * n);
        }
      }
    }
  }
}

// Straightforward loops for small products.
void gemm_simple(std::size_t m, std::size_t k, std::size_t n, const View& a, const View& b, double* c) {
  if (a.cs == 1 && b.rs == 1) {
    // Rows of A against rows of B^T: both operands contiguous along p.
    for (std::size_t i = 0; i < m; ++i) {
      const double* __restrict arow = a.data + i * a.rs;
      for (std::size_t j = 0; j < n; ++j) {
        const double* __restrict bcol = b.data + j * b.cs;
        double s = 0.0;
        for (std::size_t p = 0; p < k; ++p) s += arow[p] * bcol[p];
        c[i * n + j] += s;
      }
    }
    return;
  }
  for (std::size_t i = 0; i < m; ++i) {
    double* __restrict crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a(i, p);
      if (b.cs == 1) {
        const double* __restrict brow = b.data + p * b.rs;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b(p, j);
      }
    }
  }
}

void gemm(std::size_t m, std::size_t k, std::size_t n, const View& a, const View& b, double* c, bool overwrite) {
  if (m * k * n < kSmallWork || k == 0) {
    if (overwrite) std::fill(c, c + m * n, 0.0);
    gemm_simple(m, k, n, a, b, c);
  } else {
    gemm_blocked(m, k, n, a, b, c, overwrite);
  }
}

}  // namespace

void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
             double* c, bool accumulate) {
  gemm(m, k, n, View{a, k, 1}, View{b, n, 1}, c, !accumulate);
}

void gemm_tn_acc(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
                 double* c) {
  gemm(m, k, n, View{a, 1, m}, View{b, n, 1}, c, false);
}

void gemm_nt_acc(std::size_t m, std::size_t k, std::size_t n, const double* a, const double* b,
                 double* c) {
  gemm(m, k, n, View{a, k, 1}, View{b, 1, k}, c, false);
}

}  // namespace afdgcn::kernels
