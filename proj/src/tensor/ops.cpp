#include "afdgcn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>

#include "afdgcn/autodiff.hpp"
#include "gemm.hpp"
#include "vmath.hpp"

namespace afdgcn {

using detail::Buffer;
using detail::check_inputs;
using detail::adopt_grad;
using detail::grad_sink;
using detail::make_result;

namespace {

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  int r = static_cast<int>(rank);
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

std::vector<std::size_t> contiguous_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Strides of `in` addressed in `out` coordinates (right-aligned); 0 on axes
// that broadcast.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::size_t> st(out.size(), 0);
  auto cs = contiguous_strides(in);
  std::size_t off = out.size() - in.size();
  for (std::size_t i = 0; i < in.size(); ++i) st[off + i] = in[i] == 1 ? 0 : cs[i];
  return st;
}

// Visits every flat index of `out` with the matching offsets under strides
// `sa` and `sb`.
template <class F>
void for_each_strided(const Shape& out, const std::vector<std::size_t>& sa,
                      const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t r = out.size();
  const std::size_t total = shape_numel(out);
  if (total == 0) return;
  if (r == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t inner = out[r - 1];
  const std::size_t step_a = sa[r - 1];
  const std::size_t step_b = sb[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t base_a = 0, base_b = 0;
  for (std::size_t o = 0; o < total; o += inner) {
    std::size_t ia = base_a, ib = base_b;
    for (std::size_t j = 0; j < inner; ++j) {
      f(o + j, ia, ib);
      ia += step_a;
      ib += step_b;
    }
    for (std::size_t d = r - 1; d-- > 0;) {
      ++idx[d];
      base_a += sa[d];
      base_b += sb[d];
      if (idx[d] < out[d]) break;
      base_a -= sa[d] * out[d];
      base_b -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

// fwd(x, y) -> z; da/db(x, y, z) -> partial derivatives.
template <class Fwd, class Da, class Db>
Tensor binary(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Da da, Db db) {
  check_inputs(name, {&a, &b});
  Shape out = broadcast_shapes(a.shape(), b.shape());
  Buffer data(shape_numel(out));
  const auto& av = a.impl()->data;
  const auto& bv = b.impl()->data;
  const bool same = a.shape() == out && b.shape() == out;
  std::vector<std::size_t> sa, sb;
  if (same) {
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = fwd(av[i], bv[i]);
  } else {
    sa = broadcast_strides(a.shape(), out);
    sb = broadcast_strides(b.shape(), out);
    for_each_strided(out, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
      data[o] = fwd(av[i], bv[j]);
    });
  }
  return make_result(out, std::move(data), name, {a, b},
                     [a, b, out, same, sa, sb, da, db](Buffer& g_out, const Buffer& z) {
                       const auto& av = a.impl()->data;
                       const auto& bv = b.impl()->data;
                       // A full-shaped operand may take over the incoming
                       // buffer; its entries are then overwritten in place.
                       const bool distinct = a.impl() != b.impl();
                       Buffer* own_a = distinct && a.shape() == out ? adopt_grad(a, g_out) : nullptr;
                       Buffer* own_b = distinct && !own_a && b.shape() == out ? adopt_grad(b, g_out) : nullptr;
                       const Buffer& g = own_a ? *own_a : own_b ? *own_b : g_out;
                       Buffer* ga = own_a ? nullptr : grad_sink(a);
                       Buffer* gb = own_b ? nullptr : grad_sink(b);
                       auto visit = [&](std::size_t o, std::size_t i, std::size_t j) {
                         const double go = g[o];
                         if (ga) (*ga)[i] += go * da(av[i], bv[j], z[o]);
                         if (gb) (*gb)[j] += go * db(av[i], bv[j], z[o]);
                         if (own_a) (*own_a)[o] = go * da(av[i], bv[j], z[o]);
                         if (own_b) (*own_b)[o] = go * db(av[i], bv[j], z[o]);
                       };
                       if (same) {
                         // Plain loops per sink; an adopted buffer is also the
                         // incoming gradient, so it is rewritten last.
                         const std::size_t len = g.size();
                         if (ga) {
                           double* dst = ga->data();
                           for (std::size_t i = 0; i < len; ++i) dst[i] += g[i] * da(av[i], bv[i], z[i]);
                         }
                         if (gb) {
                           double* dst = gb->data();
                           for (std::size_t i = 0; i < len; ++i) dst[i] += g[i] * db(av[i], bv[i], z[i]);
                         }
                         if (own_a) {
                           double* dst = own_a->data();
                           for (std::size_t i = 0; i < len; ++i) dst[i] = dst[i] * da(av[i], bv[i], z[i]);
                         }
                         if (own_b) {
                           double* dst = own_b->data();
                           for (std::size_t i = 0; i < len; ++i) dst[i] = dst[i] * db(av[i], bv[i], z[i]);
                         }
                       } else {
                         for_each_strided(out, sa, sb, visit);
                       }
                     });
}

// fwd(x) -> y; d(x, y) -> dy/dx.
// `data` already holds the forward values.
template <class D>
Tensor unary_result(const char* name, const Tensor& x, Buffer data, D d) {
  return make_result(x.shape(), std::move(data), name, {x}, [x, d](Buffer& g, const Buffer& y) {
    const auto& xv = x.impl()->data;
    if (Buffer* own = adopt_grad(x, g)) {
      for (std::size_t i = 0; i < own->size(); ++i) (*own)[i] *= d(xv[i], y[i]);
      return;
    }
    Buffer* gx = grad_sink(x);
    if (!gx) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * d(xv[i], y[i]);
  });
}

template <class Fwd, class D>
Tensor unary(const char* name, const Tensor& x, Fwd fwd, D d) {
  check_inputs(name, {&x});
  const auto& xv = x.impl()->data;
  Buffer data(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) data[i] = fwd(xv[i]);
  return unary_result(name, x, std::move(data), d);
}


struct AxisSplit {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    out[i] = da == 1 ? db : da;
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Tensor sigmoid(const Tensor& x) {
  check_inputs("sigmoid", {&x});
  Buffer data = x.impl()->data;
  kernels::sigmoid_inplace(data);
  return unary_result("sigmoid", x, std::move(data), [](double, double y) { return y * (1.0 - y); });
}

namespace {
thread_local KinkProbe* t_kink_probe = nullptr;
}  // namespace

KinkProbe::KinkProbe() : nearest_(std::numeric_limits<double>::infinity()), previous_(t_kink_probe) {
  t_kink_probe = this;
}

KinkProbe::~KinkProbe() { t_kink_probe = previous_; }

void note_kink_inputs(std::span<const double> inputs) {
  if (!t_kink_probe) return;
  for (double v : inputs) t_kink_probe->nearest_ = std::min(t_kink_probe->nearest_, std::abs(v));
}

Tensor relu(const Tensor& x) {
  note_kink_inputs(x.values());
  return unary(
      "relu", x, [](double v) { return v > 0 ? v : 0.0; },
      [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& x) {
  check_inputs("tanh", {&x});
  Buffer data = x.impl()->data;
  kernels::tanh_inplace(data);
  return unary_result("tanh", x, std::move(data), [](double, double y) { return 1.0 - y * y; });
}

Tensor elu(const Tensor& x, double alpha) {
  return unary(
      "elu", x, [alpha](double v) { return v > 0 ? v : alpha * std::expm1(v); },
      [alpha](double v, double y) { return v > 0 ? 1.0 : y + alpha; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  note_kink_inputs(x.values());
  return unary(
      "leaky_relu", x, [slope](double v) { return v > 0 ? v : slope * v; },
      [slope](double v, double) { return v > 0 ? 1.0 : slope; });
}

Tensor exp(const Tensor& x) {
  check_inputs("exp", {&x});
  Buffer data = x.impl()->data;
  kernels::exp_inplace(data);
  return unary_result("exp", x, std::move(data), [](double, double y) { return y; });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [factor](double v) { return factor * v; },
      [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double offset) {
  return unary(
      "add_scalar", x, [offset](double v) { return v + offset; },
      [](double, double) { return 1.0; });
}

Tensor one_minus(const Tensor& x) {
  return unary(
      "one_minus", x, [](double v) { return 1.0 - v; }, [](double, double) { return -1.0; });
}

Tensor elementwise(ElementwiseOp kind, const Tensor& a, const std::optional<Tensor>& b,
                   double param) {
  auto need_b = [&]() -> const Tensor& {
    if (!b || !b->defined()) throw ShapeError("elementwise: binary op needs a second operand");
    return *b;
  };
  switch (kind) {
    case ElementwiseOp::add: return add(a, need_b());
    case ElementwiseOp::sub: return sub(a, need_b());
    case ElementwiseOp::mul: return mul(a, need_b());
    case ElementwiseOp::sigmoid: return sigmoid(a);
    case ElementwiseOp::relu: return relu(a);
    case ElementwiseOp::tanh: return tanh(a);
    case ElementwiseOp::elu: return elu(a, param == 0.0 ? 1.0 : param);
    case ElementwiseOp::leaky_relu: return leaky_relu(a, param);
    case ElementwiseOp::exp: return exp(a);
    case ElementwiseOp::scale: return scale(a, param);
  }
  throw std::invalid_argument("elementwise: unknown op kind");
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_inputs("matmul", {&a, &b});
  if (a.rank() < 2 || b.rank() < 2) {
    throw ShapeError("matmul needs rank >= 2, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const std::size_t m = a.size(-2), k = a.size(-1), n = b.size(-1);
  if (b.size(-2) != k) {
    throw ShapeError("matmul inner dimension mismatch: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Shape batch_a(a.shape().begin(), a.shape().end() - 2);
  Shape batch_b(b.shape().begin(), b.shape().end() - 2);
  Shape batch = broadcast_shapes(batch_a, batch_b);
  const std::size_t nb = shape_numel(batch);
  Shape out = batch;
  out.push_back(m);
  out.push_back(n);

  // Flatten into a single product when B is shared across A's batch.
  const bool fused = shape_numel(batch_b) == 1 && shape_numel(batch_a) == nb;
  std::vector<std::size_t> ia(nb, 0), ib(nb, 0);
  if (!fused && !batch.empty()) {
    auto sa = broadcast_strides(batch_a, batch);
    auto sb = broadcast_strides(batch_b, batch);
    for_each_strided(batch, sa, sb, [&](std::size_t o, std::size_t i, std::size_t j) {
      ia[o] = i;
      ib[o] = j;
    });
  }

  const auto& av = a.impl()->data;
  const auto& bv = b.impl()->data;
  Buffer data(nb * m * n);
  if (fused) {
    kernels::gemm_nn(nb * m, k, n, av.data(), bv.data(), data.data(), false);
  } else {
    for (std::size_t o = 0; o < nb; ++o) {
      kernels::gemm_nn(m, k, n, av.data() + ia[o] * m * k, bv.data() + ib[o] * k * n,
                       data.data() + o * m * n, false);
    }
  }

  return make_result(out, std::move(data), "matmul", {a, b},
                     [a, b, m, k, n, nb, fused, ia, ib](const Buffer& g, const Buffer&) {
                       const auto& av = a.impl()->data;
                       const auto& bv = b.impl()->data;
                       Buffer* ga = grad_sink(a);
                       Buffer* gb = grad_sink(b);
                       if (fused) {
                         if (ga) kernels::gemm_nt_acc(nb * m, n, k, g.data(), bv.data(), ga->data());
                         if (gb) kernels::gemm_tn_acc(k, nb * m, n, av.data(), g.data(), gb->data());
                         return;
                       }
                       for (std::size_t o = 0; o < nb; ++o) {
                         const double* go = g.data() + o * m * n;
                         if (ga) {
                           kernels::gemm_nt_acc(m, n, k, go, bv.data() + ib[o] * k * n,
                                                ga->data() + ia[o] * m * k);
                         }
                         if (gb) {
                           kernels::gemm_tn_acc(k, m, n, av.data() + ia[o] * m * k, go,
                                                gb->data() + ib[o] * k * n);
                         }
                       }
                     });
}

Tensor permute(const Tensor& x, std::vector<std::size_t> order) {
  check_inputs("permute", {&x});
  const auto& xs = x.shape();
  const std::size_t r = xs.size();
  if (order.size() != r) throw ShapeError("permute: order rank mismatch");
  std::vector<bool> used(r, false);
  for (auto o : order) {
    if (o >= r || used[o]) throw ShapeError("permute: invalid axis order");
    used[o] = true;
  }
  Shape out(r);
  auto xst = contiguous_strides(xs);
  std::vector<std::size_t> src(r);
  for (std::size_t i = 0; i < r; ++i) {
    out[i] = xs[order[i]];
    src[i] = xst[order[i]];
  }
  const auto& xv = x.impl()->data;
  Buffer data(xv.size());
  for_each_strided(out, src, src,
                   [&](std::size_t o, std::size_t i, std::size_t) { data[o] = xv[i]; });
  return make_result(out, std::move(data), "permute", {x}, [x, out, src](const Buffer& g, const Buffer&) {
    Buffer* gx = grad_sink(x);
    if (!gx) return;
    for_each_strided(out, src, src,
                     [&](std::size_t o, std::size_t i, std::size_t) { (*gx)[i] += g[o]; });
  });
}

Tensor transpose(const Tensor& x, int axis0, int axis1) {
  const std::size_t r = x.rank();
  auto a0 = normalize_axis(axis0, r, "transpose");
  auto a1 = normalize_axis(axis1, r, "transpose");
  std::vector<std::size_t> order(r);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::swap(order[a0], order[a1]);
  return permute(x, std::move(order));
}

Tensor reshape(const Tensor& x, Shape shape) {
  check_inputs("reshape", {&x});
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Buffer data = x.impl()->data;
  return make_result(std::move(shape), std::move(data), "reshape", {x},
                     [x](Buffer& g, const Buffer&) {
                       if (adopt_grad(x, g)) return;
                       Buffer* gx = grad_sink(x);
                       if (!gx) return;
                       for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
                     });
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  const std::size_t ax = normalize_axis(axis, first.size(), "concat");
  std::vector<std::size_t> lens;
  Shape out = first;
  out[ax] = 0;
  for (const auto& p : parts) {
    check_inputs("concat", {&p});
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != ax && s[i] != first[i]) {
        throw ShapeError("concat: " + shape_str(s) + " vs " + shape_str(first));
      }
    }
    lens.push_back(s[ax]);
    out[ax] += s[ax];
  }
  auto split = split_at(out, ax);
  Buffer data(shape_numel(out));
  for (std::size_t o = 0; o < split.outer; ++o) {
    std::size_t dst = o * split.len * split.inner;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const auto& pv = parts[p].impl()->data;
      std::size_t chunk = lens[p] * split.inner;
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                  data.begin() + static_cast<std::ptrdiff_t>(dst));
      dst += chunk;
    }
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return make_result(out, std::move(data), "concat", inputs,
                     [inputs, lens, split](const Buffer& g, const Buffer&) {
                       std::vector<Buffer*> sinks(inputs.size());
                       for (std::size_t p = 0; p < inputs.size(); ++p) sinks[p] = grad_sink(inputs[p]);
                       for (std::size_t o = 0; o < split.outer; ++o) {
                         std::size_t src = o * split.len * split.inner;
                         for (std::size_t p = 0; p < inputs.size(); ++p) {
                           std::size_t chunk = lens[p] * split.inner;
                           if (Buffer* gp = sinks[p]) {
                             double* dst = gp->data() + o * chunk;
                             for (std::size_t i = 0; i < chunk; ++i) dst[i] += g[src + i];
                           }
                           src += chunk;
                         }
                       }
                     });
}

Tensor concat(std::initializer_list<Tensor> parts, int axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  check_inputs("slice", {&x});
  const std::size_t ax = normalize_axis(axis, x.rank(), "slice");
  auto split = split_at(x.shape(), ax);
  if (start + length > split.len) {
    throw ShapeError("slice: [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") exceeds axis of size " + std::to_string(split.len));
  }
  Shape out = x.shape();
  out[ax] = length;
  const auto& xv = x.impl()->data;
  Buffer data(shape_numel(out));
  const std::size_t chunk = length * split.inner;
  for (std::size_t o = 0; o < split.outer; ++o) {
    auto from = xv.begin() + static_cast<std::ptrdiff_t>((o * split.len + start) * split.inner);
    std::copy_n(from, chunk, data.begin() + static_cast<std::ptrdiff_t>(o * chunk));
  }
  return make_result(out, std::move(data), "slice", {x},
                     [x, split, start, chunk](const Buffer& g, const Buffer&) {
                       Buffer* gx = grad_sink(x);
                       if (!gx) return;
                       for (std::size_t o = 0; o < split.outer; ++o) {
                         std::size_t base = (o * split.len + start) * split.inner;
                         for (std::size_t i = 0; i < chunk; ++i) (*gx)[base + i] += g[o * chunk + i];
                       }
                     });
}

// ---------------------------------------------------------------------------

Tensor sum(const Tensor& x) {
  check_inputs("sum", {&x});
  const auto& xv = x.impl()->data;
  double s = 0.0;
  for (double v : xv) s += v;
  return make_result({}, {s}, "sum", {x}, [x](const Buffer& g, const Buffer&) {
    Buffer* gx = grad_sink(x);
    if (!gx) return;
    for (auto& v : *gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum(const Tensor& x, int axis, bool keepdim) {
  check_inputs("sum_axis", {&x});
  const std::size_t ax = normalize_axis(axis, x.rank(), "sum");
  auto split = split_at(x.shape(), ax);
  Shape out = x.shape();
  if (keepdim) {
    out[ax] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(ax));
  }
  const auto& xv = x.impl()->data;
  Buffer data(split.outer * split.inner, 0.0);
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t j = 0; j < split.len; ++j) {
      const double* row = xv.data() + (o * split.len + j) * split.inner;
      double* dst = data.data() + o * split.inner;
      for (std::size_t i = 0; i < split.inner; ++i) dst[i] += row[i];
    }
  }
  return make_result(out, std::move(data), "sum_axis", {x}, [x, split](const Buffer& g, const Buffer&) {
    Buffer* gx = grad_sink(x);
    if (!gx) return;
    for (std::size_t o = 0; o < split.outer; ++o) {
      for (std::size_t j = 0; j < split.len; ++j) {
        double* row = gx->data() + (o * split.len + j) * split.inner;
        const double* src = g.data() + o * split.inner;
        for (std::size_t i = 0; i < split.inner; ++i) row[i] += src[i];
      }
    }
  });
}

Tensor mean(const Tensor& x, int axis, bool keepdim) {
  const std::size_t len = x.size(axis);
  if (len == 0) throw ShapeError("mean over an empty axis");
  return scale(sum(x, axis, keepdim), 1.0 / static_cast<double>(len));
}

// ---------------------------------------------------------------------------

namespace {

// Sum of terms in [0, 1], each truncated to a multiple of 2^-62 and added
// exactly in 128-bit integers, so the result does not depend on term order.
class OrderFreeSum {
 public:
  void add(double v) {
    if (!(v >= 0.0 && v <= 1.0)) {
      invalid_ = true;
      return;
    }
    acc_ += static_cast<std::uint64_t>(v * kScale);
  }
  double value() const {
    return invalid_ ? std::numeric_limits<double>::quiet_NaN() : static_cast<double>(acc_) / kScale;
  }

 private:
  static constexpr double kScale = 4611686018427387904.0;  // 2^62
  unsigned __int128 acc_ = 0;
  bool invalid_ = false;
};

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
  check_inputs("softmax", {&x});
  const std::size_t ax = normalize_axis(axis, x.rank(), "softmax");
  auto split = split_at(x.shape(), ax);
  if (split.len == 0) throw ShapeError("softmax over an empty axis");
  const auto& xv = x.impl()->data;
  Buffer data(xv.size());
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t i = 0; i < split.inner; ++i) {
      const std::size_t base = o * split.len * split.inner + i;
      double mx = xv[base];
      for (std::size_t j = 1; j < split.len; ++j) mx = std::max(mx, xv[base + j * split.inner]);
      for (std::size_t j = 0; j < split.len; ++j) data[base + j * split.inner] = xv[base + j * split.inner] - mx;
    }
  }
  kernels::exp_inplace(data);
  for (std::size_t o = 0; o < split.outer; ++o) {
    for (std::size_t i = 0; i < split.inner; ++i) {
      const std::size_t base = o * split.len * split.inner + i;
      OrderFreeSum total_sum;
      for (std::size_t j = 0; j < split.len; ++j) total_sum.add(data[base + j * split.inner]);
      const double total = total_sum.value();
      for (std::size_t j = 0; j < split.len; ++j) data[base + j * split.inner] /= total;
    }
  }
  return make_result(x.shape(), std::move(data), "softmax", {x},
                     [x, split](Buffer& g_out, const Buffer& y) {
                       Buffer* own = adopt_grad(x, g_out);
                       Buffer* gx = own ? own : grad_sink(x);
                       if (!gx) return;
                       const Buffer& g = own ? *own : g_out;
                       for (std::size_t o = 0; o < split.outer; ++o) {
                         for (std::size_t i = 0; i < split.inner; ++i) {
                           const std::size_t base = o * split.len * split.inner + i;
                           double dot = 0.0;
                           for (std::size_t j = 0; j < split.len; ++j) {
                             dot += g[base + j * split.inner] * y[base + j * split.inner];
                           }
                           for (std::size_t j = 0; j < split.len; ++j) {
                             const std::size_t p = base + j * split.inner;
                             const double v = y[p] * (g[p] - dot);
                             if (own) {
                               (*gx)[p] = v;
                             } else {
                               (*gx)[p] += v;
                             }
                           }
                         }
                       }
                     });
}

Tensor masked_softmax(const Tensor& x, std::span<const std::uint8_t> mask) {
  check_inputs("masked_softmax", {&x});
  if (x.rank() < 2) throw ShapeError("masked_softmax needs rank >= 2");
  const std::size_t rows = x.size(-2), cols = x.size(-1);
  if (mask.size() != rows * cols) {
    throw ShapeError("masked_softmax: mask has " + std::to_string(mask.size()) + " entries, expected " +
                     std::to_string(rows * cols));
  }
  for (std::size_t r = 0; r < rows; ++r) {
    bool any = false;
    for (std::size_t c = 0; c < cols; ++c) any = any || mask[r * cols + c];
    if (!any) throw std::invalid_argument("masked_softmax: row " + std::to_string(r) + " has no entries");
  }
  const auto& xv = x.impl()->data;
  Buffer data(xv.size());
  const std::size_t slices = xv.size() / (rows * cols);
  for (std::size_t s = 0; s < slices; ++s) {
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = (s * rows + r) * cols;
      const std::uint8_t* m = mask.data() + r * cols;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < cols; ++c) {
        if (m[c]) mx = std::max(mx, xv[base + c]);
      }
      for (std::size_t c = 0; c < cols; ++c) {
        data[base + c] = m[c] ? xv[base + c] - mx : -std::numeric_limits<double>::infinity();
      }
    }
  }
  kernels::exp_inplace(data);
  for (std::size_t base = 0; base < data.size(); base += cols) {
    const std::uint8_t* m = mask.data() + (base / cols % rows) * cols;
    OrderFreeSum total_sum;
    for (std::size_t c = 0; c < cols; ++c) {
      if (m[c]) total_sum.add(data[base + c]);
    }
    const double total = total_sum.value();
    for (std::size_t c = 0; c < cols; ++c) data[base + c] /= total;
  }
  return make_result(x.shape(), std::move(data), "masked_softmax", {x},
                     [x, cols](const Buffer& g, const Buffer& y) {
                       Buffer* gx = grad_sink(x);
                       if (!gx) return;
                       for (std::size_t base = 0; base < y.size(); base += cols) {
                         double dot = 0.0;
                         for (std::size_t c = 0; c < cols; ++c) dot += g[base + c] * y[base + c];
                         for (std::size_t c = 0; c < cols; ++c) {
                           (*gx)[base + c] += y[base + c] * (g[base + c] - dot);
                         }
                       }
                     });
}

Tensor feed_forward(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2) {
  check_inputs("feed_forward", {&x, &w1, &b1, &w2, &b2});
  if (x.rank() < 1 || w1.rank() != 2 || w2.rank() != 2 || w1.size(0) != x.size(-1) || w2.size(0) != w1.size(1) ||
      b1.shape() != Shape{w1.size(1)} || b2.shape() != Shape{w2.size(1)}) {
    throw ShapeError("feed_forward: x " + shape_str(x.shape()) + ", w1 " + shape_str(w1.shape()) + ", b1 " +
                     shape_str(b1.shape()) + ", w2 " + shape_str(w2.shape()) + ", b2 " + shape_str(b2.shape()) +
                     " do not chain");
  }
  const std::size_t c_in = w1.size(0), width = w1.size(1), c_out = w2.size(1);
  const std::size_t rows = c_in == 0 ? 0 : x.numel() / c_in;
  constexpr std::size_t kBlock = 64;
  Shape out_shape = x.shape();
  out_shape.back() = c_out;

  // Hidden pre-activations of rows [r0, r0 + nr), bias included.
  auto hidden = [=](std::size_t r0, std::size_t nr, double* pre) {
    const auto& b1v = b1.impl()->data;
    kernels::gemm_nn(nr, c_in, width, x.impl()->data.data() + r0 * c_in, w1.impl()->data.data(), pre, false);
    for (std::size_t r = 0; r < nr; ++r)
      for (std::size_t f = 0; f < width; ++f) pre[r * width + f] += b1v[f];
  };

  Buffer out(rows * c_out);
  {
    std::vector<double> pre(kBlock * width);
    const auto& b2v = b2.impl()->data;
    for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
      const std::size_t nr = std::min(kBlock, rows - r0);
      hidden(r0, nr, pre.data());
      note_kink_inputs(std::span<const double>(pre.data(), nr * width));
      for (std::size_t i = 0; i < nr * width; ++i) pre[i] = pre[i] > 0 ? pre[i] : 0.0;
      double* dst = out.data() + r0 * c_out;
      for (std::size_t r = 0; r < nr; ++r) std::copy(b2v.begin(), b2v.end(), dst + r * c_out);
      kernels::gemm_nn(nr, width, c_out, pre.data(), w2.impl()->data.data(), dst, true);
    }
  }

  return make_result(
      std::move(out_shape), std::move(out), "feed_forward", {x, w1, b1, w2, b2},
      [=](const Buffer& g, const Buffer&) {
        Buffer* gx = grad_sink(x);
        Buffer* gw1 = grad_sink(w1);
        Buffer* gb1 = grad_sink(b1);
        Buffer* gw2 = grad_sink(w2);
        Buffer* gb2 = grad_sink(b2);
        const bool need_hidden_grad = gx || gw1 || gb1;
        std::vector<double> pre(kBlock * width), act(kBlock * width), dpre(kBlock * width);
        for (std::size_t r0 = 0; r0 < rows; r0 += kBlock) {
          const std::size_t nr = std::min(kBlock, rows - r0);
          const double* gblk = g.data() + r0 * c_out;
          hidden(r0, nr, pre.data());
          for (std::size_t i = 0; i < nr * width; ++i) act[i] = pre[i] > 0 ? pre[i] : 0.0;
          if (gw2) kernels::gemm_tn_acc(width, nr, c_out, act.data(), gblk, gw2->data());
          if (gb2) {
            for (std::size_t r = 0; r < nr; ++r)
              for (std::size_t o = 0; o < c_out; ++o) (*gb2)[o] += gblk[r * c_out + o];
          }
          if (!need_hidden_grad) continue;
          std::fill(dpre.begin(), dpre.begin() + static_cast<std::ptrdiff_t>(nr * width), 0.0);
          kernels::gemm_nt_acc(nr, c_out, width, gblk, w2.impl()->data.data(), dpre.data());
          for (std::size_t i = 0; i < nr * width; ++i) dpre[i] = pre[i] > 0 ? dpre[i] : 0.0;
          if (gw1) kernels::gemm_tn_acc(c_in, nr, width, x.impl()->data.data() + r0 * c_in, dpre.data(), gw1->data());
          if (gb1) {
            for (std::size_t r = 0; r < nr; ++r)
              for (std::size_t f = 0; f < width; ++f) (*gb1)[f] += dpre[r * width + f];
          }
          if (gx) kernels::gemm_nt_acc(nr, width, c_in, dpre.data(), w1.impl()->data.data(), gx->data() + r0 * c_in);
        }
      });
}

namespace {

// Each (group, step) slab of a [G, T, N, D] tensor is an [M, dk] matrix with
// M = N * heads; these swap it with the [dk, M] layout the attention loops use.
void to_columns(const double* src, double* dst, std::size_t slabs, std::size_t m, std::size_t dk) {
  for (std::size_t sl = 0; sl < slabs; ++sl, src += m * dk, dst += m * dk)
    for (std::size_t c = 0; c < m; ++c)
      for (std::size_t j = 0; j < dk; ++j) dst[j * m + c] = src[c * dk + j];
}

void add_from_columns(const double* src, double* dst, std::size_t slabs, std::size_t m, std::size_t dk) {
  for (std::size_t sl = 0; sl < slabs; ++sl, src += m * dk, dst += m * dk)
    for (std::size_t c = 0; c < m; ++c)
      for (std::size_t j = 0; j < dk; ++j) dst[c * dk + j] += src[j * m + c];
}

}  // namespace

Tensor temporal_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                          Tensor* weights_out) {
  check_inputs("temporal_attention", {&q, &k, &v});
  if (q.rank() < 3) throw ShapeError("temporal_attention: inputs must be [..., T, N, D]");
  if (k.shape() != q.shape() || v.shape() != q.shape()) {
    throw ShapeError("temporal_attention: q, k and v must share a shape, got " + shape_str(q.shape()) + ", " +
                     shape_str(k.shape()) + ", " + shape_str(v.shape()));
  }
  const std::size_t steps = q.size(-3), n = q.size(-2), dim = q.size(-1);
  if (heads < 1 || dim % heads != 0) {
    throw std::invalid_argument("temporal_attention: width " + std::to_string(dim) + " is not divisible by " +
                                std::to_string(heads) + " heads");
  }
  const std::size_t dk = dim / heads;
  const std::size_t m = n * heads;
  const std::size_t groups = steps * n * dim == 0 ? 0 : q.numel() / (steps * n * dim);
  const std::size_t slabs = groups * steps;
  const double factor = 1.0 / std::sqrt(static_cast<double>(dk));

  // Column layouts: slab (g, t) is [dk, M].
  Buffer qc(q.numel()), kc(q.numel()), vc(q.numel());
  to_columns(q.impl()->data.data(), qc.data(), slabs, m, dk);
  to_columns(k.impl()->data.data(), kc.data(), slabs, m, dk);
  to_columns(v.impl()->data.data(), vc.data(), slabs, m, dk);
  auto slab = [=](const Buffer& b, std::size_t g, std::size_t t) { return b.data() + (g * steps + t) * m * dk; };

  // Weights as [G, T, T, M]: row (g, t, s) holds every node and head.
  Buffer w(slabs * steps * m, 0.0);
  std::vector<double> peak(m);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t t = 0; t < steps; ++t) {
      double* rows = w.data() + (g * steps + t) * steps * m;
      const double* qt = slab(qc, g, t);
      for (std::size_t s = 0; s < steps; ++s) {
        double* row = rows + s * m;
        const double* ks = slab(kc, g, s);
        for (std::size_t j = 0; j < dk; ++j)
          for (std::size_t c = 0; c < m; ++c) row[c] += qt[j * m + c] * ks[j * m + c];
        for (std::size_t c = 0; c < m; ++c) row[c] *= factor;
      }
      std::copy(rows, rows + m, peak.begin());
      for (std::size_t s = 1; s < steps; ++s)
        for (std::size_t c = 0; c < m; ++c) peak[c] = std::max(peak[c], rows[s * m + c]);
      for (std::size_t s = 0; s < steps; ++s)
        for (std::size_t c = 0; c < m; ++c) rows[s * m + c] -= peak[c];
    }
  }
  kernels::exp_inplace(w);
  Buffer out_c(q.numel(), 0.0);
  std::vector<double> total(m);
  for (std::size_t g = 0; g < groups; ++g) {
    for (std::size_t t = 0; t < steps; ++t) {
      double* rows = w.data() + (g * steps + t) * steps * m;
      std::copy(rows, rows + m, total.begin());
      for (std::size_t s = 1; s < steps; ++s)
        for (std::size_t c = 0; c < m; ++c) total[c] += rows[s * m + c];
      double* ot = out_c.data() + (g * steps + t) * m * dk;
      for (std::size_t s = 0; s < steps; ++s) {
        double* row = rows + s * m;
        for (std::size_t c = 0; c < m; ++c) row[c] /= total[c];
        const double* vs = slab(vc, g, s);
        for (std::size_t j = 0; j < dk; ++j)
          for (std::size_t c = 0; c < m; ++c) ot[j * m + c] += row[c] * vs[j * m + c];
      }
    }
  }
  Buffer out(q.numel(), 0.0);
  add_from_columns(out_c.data(), out.data(), slabs, m, dk);

  if (weights_out) {
    Shape ws(q.shape().begin(), q.shape().end() - 3);
    for (std::size_t d : {n, heads, steps, steps}) ws.push_back(d);
    Buffer export_w(w.size());
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t s = 0; s < steps; ++s)
          for (std::size_t c = 0; c < m; ++c)
            export_w[((g * m + c) * steps + t) * steps + s] = w[((g * steps + t) * steps + s) * m + c];
    *weights_out = Tensor(std::move(ws), std::move(export_w));
  }

  return make_result(
      q.shape(), std::move(out), "temporal_attention", {q, k, v},
      [q, k, v, qc = std::move(qc), kc = std::move(kc), vc = std::move(vc), w = std::move(w), groups, steps, m, dk,
       factor, slab](const Buffer& go, const Buffer&) {
        Buffer* gq = grad_sink(q);
        Buffer* gk = grad_sink(k);
        Buffer* gv = grad_sink(v);
        const std::size_t slabs = groups * steps;
        Buffer go_c(go.size());
        to_columns(go.data(), go_c.data(), slabs, m, dk);
        Buffer gq_c(gq ? go.size() : 0, 0.0), gk_c(gk ? go.size() : 0, 0.0), gv_c(gv ? go.size() : 0, 0.0);
        std::vector<double> dw(steps * m), dot(m);
        for (std::size_t g = 0; g < groups; ++g) {
          for (std::size_t t = 0; t < steps; ++t) {
            const double* rows = w.data() + (g * steps + t) * steps * m;
            const double* gt = slab(go_c, g, t);
            std::fill(dw.begin(), dw.end(), 0.0);
            for (std::size_t s = 0; s < steps; ++s) {
              const double* row = rows + s * m;
              const double* vs = slab(vc, g, s);
              double* d = dw.data() + s * m;
              for (std::size_t j = 0; j < dk; ++j)
                for (std::size_t c = 0; c < m; ++c) d[c] += gt[j * m + c] * vs[j * m + c];
              if (gv) {
                double* dvs = gv_c.data() + (g * steps + s) * m * dk;
                for (std::size_t j = 0; j < dk; ++j)
                  for (std::size_t c = 0; c < m; ++c) dvs[j * m + c] += row[c] * gt[j * m + c];
              }
            }
            // Softmax backward, folded with the score scale.
            std::fill(dot.begin(), dot.end(), 0.0);
            for (std::size_t s = 0; s < steps; ++s)
              for (std::size_t c = 0; c < m; ++c) dot[c] += rows[s * m + c] * dw[s * m + c];
            for (std::size_t s = 0; s < steps; ++s)
              for (std::size_t c = 0; c < m; ++c)
                dw[s * m + c] = rows[s * m + c] * (dw[s * m + c] - dot[c]) * factor;
            const double* qt = slab(qc, g, t);
            for (std::size_t s = 0; s < steps; ++s) {
              const double* d = dw.data() + s * m;
              if (gq) {
                double* dqt = gq_c.data() + (g * steps + t) * m * dk;
                const double* ks = slab(kc, g, s);
                for (std::size_t j = 0; j < dk; ++j)
                  for (std::size_t c = 0; c < m; ++c) dqt[j * m + c] += d[c] * ks[j * m + c];
              }
              if (gk) {
                double* dks = gk_c.data() + (g * steps + s) * m * dk;
                for (std::size_t j = 0; j < dk; ++j)
                  for (std::size_t c = 0; c < m; ++c) dks[j * m + c] += d[c] * qt[j * m + c];
              }
            }
          }
        }
        if (gq) add_from_columns(gq_c.data(), gq->data(), slabs, m, dk);
        if (gk) add_from_columns(gk_c.data(), gk->data(), slabs, m, dk);
        if (gv) add_from_columns(gv_c.data(), gv->data(), slabs, m, dk);
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double epsilon) {
  check_inputs("layer_norm", {&x, &gamma, &beta});
  if (x.rank() < 1 || x.size(-1) < 1) throw ShapeError("layer_norm: last axis must be non-empty");
  const std::size_t f = x.size(-1);
  if (gamma.shape() != Shape{f} || beta.shape() != Shape{f}) {
    throw ShapeError("layer_norm: gamma/beta must have shape [" + std::to_string(f) + "]");
  }
  const auto& xv = x.impl()->data;
  const auto& gv = gamma.impl()->data;
  const auto& bv = beta.impl()->data;
  const std::size_t rows = xv.size() / f;
  Buffer data(xv.size());
  Buffer xhat(xv.size());
  Buffer inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * f;
    double mu = 0.0;
    for (std::size_t i = 0; i < f; ++i) mu += row[i];
    mu /= static_cast<double>(f);
    double var = 0.0;
    for (std::size_t i = 0; i < f; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<double>(f);
    const double is = 1.0 / std::sqrt(var + epsilon);
    inv_std[r] = is;
    for (std::size_t i = 0; i < f; ++i) {
      const double h = (row[i] - mu) * is;
      xhat[r * f + i] = h;
      data[r * f + i] = gv[i] * h + bv[i];
    }
  }
  return make_result(
      x.shape(), std::move(data), "layer_norm", {x, gamma, beta},
      [x, gamma, beta, f, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Buffer& g_out, const Buffer&) {
        const auto& gv = gamma.impl()->data;
        Buffer* own = adopt_grad(x, g_out);
        Buffer* gx = own ? own : grad_sink(x);
        const Buffer& g = own ? *own : g_out;
        Buffer* gg = grad_sink(gamma);
        Buffer* gb = grad_sink(beta);
        const double inv_f = 1.0 / static_cast<double>(f);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* gr = g.data() + r * f;
          const double* hr = xhat.data() + r * f;
          if (gg || gb) {
            for (std::size_t i = 0; i < f; ++i) {
              if (gg) (*gg)[i] += gr[i] * hr[i];
              if (gb) (*gb)[i] += gr[i];
            }
          }
          if (!gx) continue;
          double mean_d = 0.0, mean_dh = 0.0;
          for (std::size_t i = 0; i < f; ++i) {
            const double d = gr[i] * gv[i];
            mean_d += d;
            mean_dh += d * hr[i];
          }
          mean_d *= inv_f;
          mean_dh *= inv_f;
          for (std::size_t i = 0; i < f; ++i) {
            const double d = gr[i] * gv[i];
            const double v = inv_std[r] * (d - mean_d - hr[i] * mean_dh);
            if (own) {
              (*gx)[r * f + i] = v;
            } else {
              (*gx)[r * f + i] += v;
            }
          }
        }
      });
}

Tensor conv_temporal(const Tensor& x, const Tensor& kernel) {
  check_inputs("conv_temporal", {&x, &kernel});
  if (x.rank() < 3) throw ShapeError("conv_temporal: input must be [..., T, N, C]");
  if (kernel.rank() != 3) throw ShapeError("conv_temporal: kernel must be [k, C, C_out]");
  const std::size_t k = kernel.size(0);
  if (k % 2 == 0) throw std::invalid_argument("conv_temporal: kernel width must be odd");
  const std::size_t t_len = x.size(-3), nodes = x.size(-2), c_in = x.size(-1);
  if (kernel.size(1) != c_in) {
    throw ShapeError("conv_temporal: kernel " + shape_str(kernel.shape()) + " vs input " +
                     shape_str(x.shape()));
  }
  const std::size_t c_out = kernel.size(2);
  const std::size_t lead = x.numel() / (t_len * nodes * c_in);
  const std::size_t pad = k / 2;
  Shape out = x.shape();
  out.back() = c_out;
  const auto& xv = x.impl()->data;
  const auto& kv = kernel.impl()->data;
  Buffer data(lead * t_len * nodes * c_out, 0.0);
  const std::size_t in_step = nodes * c_in, out_step = nodes * c_out, k_step = c_in * c_out;
  for (std::size_t l = 0; l < lead; ++l) {
    for (std::size_t t = 0; t < t_len; ++t) {
      double* dst = data.data() + (l * t_len + t) * out_step;
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(pad);
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
        kernels::gemm_nn(nodes, c_in, c_out,
                         xv.data() + (l * t_len + static_cast<std::size_t>(src)) * in_step,
                         kv.data() + j * k_step, dst, true);
      }
    }
  }
  return make_result(
      out, std::move(data), "conv_temporal", {x, kernel},
      [=](const Buffer& g, const Buffer&) {
        const auto& xv = x.impl()->data;
        const auto& kv = kernel.impl()->data;
        Buffer* gx = grad_sink(x);
        Buffer* gk = grad_sink(kernel);
        for (std::size_t l = 0; l < lead; ++l) {
          for (std::size_t t = 0; t < t_len; ++t) {
            const double* go = g.data() + (l * t_len + t) * out_step;
            for (std::size_t j = 0; j < k; ++j) {
              const std::ptrdiff_t src =
                  static_cast<std::ptrdiff_t>(t + j) - static_cast<std::ptrdiff_t>(pad);
              if (src < 0 || src >= static_cast<std::ptrdiff_t>(t_len)) continue;
              const std::size_t off = (l * t_len + static_cast<std::size_t>(src)) * in_step;
              if (gx) kernels::gemm_nt_acc(nodes, c_out, c_in, go, kv.data() + j * k_step, gx->data() + off);
              if (gk) kernels::gemm_tn_acc(c_in, nodes, c_out, xv.data() + off, go, gk->data() + j * k_step);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must lie in [0, 1)");
  if (p == 0.0) return x;
  check_inputs("dropout", {&x});
  const double keep_scale = 1.0 / (1.0 - p);
  std::bernoulli_distribution keep(1.0 - p);
  Buffer mask(x.numel());
  for (auto& m : mask) m = keep(rng) ? keep_scale : 0.0;
  const auto& xv = x.impl()->data;
  Buffer data(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) data[i] = xv[i] * mask[i];
  return make_result(x.shape(), std::move(data), "dropout", {x},
                     [x, mask = std::move(mask)](const Buffer& g, const Buffer&) {
                       Buffer* gx = grad_sink(x);
                       if (!gx) return;
                       for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * mask[i];
                     });
}

Tensor smooth_l1_loss(const Tensor& pred, const Tensor& target) {
  check_inputs("smooth_l1_loss", {&pred, &target});
  if (pred.shape() != target.shape()) {
    throw ShapeError("smooth_l1_loss: " + shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  if (pred.numel() == 0) throw ShapeError("smooth_l1_loss on empty tensors");
  const auto& pv = pred.impl()->data;
  const auto& tv = target.impl()->data;
  double total = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double d = pv[i] - tv[i];
    const double a = std::abs(d);
    total += a < 1.0 ? 0.5 * d * d : a - 0.5;
  }
  const double inv_n = 1.0 / static_cast<double>(pv.size());
  return make_result({}, {total * inv_n}, "smooth_l1_loss", {pred, target},
                     [pred, target, inv_n](const Buffer& g, const Buffer&) {
                       const auto& pv = pred.impl()->data;
                       const auto& tv = target.impl()->data;
                       Buffer* gp = grad_sink(pred);
                       Buffer* gt = grad_sink(target);
                       for (std::size_t i = 0; i < pv.size(); ++i) {
                         const double d = pv[i] - tv[i];
                         const double s = std::abs(d) < 1.0 ? d : (d > 0 ? 1.0 : -1.0);
                         if (gp) (*gp)[i] += g[0] * s * inv_n;
                         if (gt) (*gt)[i] -= g[0] * s * inv_n;
                       }
                     });
}

}  // namespace afdgcn
