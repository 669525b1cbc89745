#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "afdgcn/gradcheck.hpp"
#include "afdgcn/ops.hpp"
#include "afdgcn/optim.hpp"
#include "support/oracles.hpp"

using namespace afdgcn;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), oracle::random_vec(n, rng, lo, hi));
}

std::vector<double> vec(const Tensor& t) { return t.to_vector(); }

}  // namespace

TEST_CASE("elementwise examples") {
  Tensor a({3}, {1, 2, 3});
  Tensor b({3}, {2, 2, 2});
  CHECK(vec(mul(a, b)) == std::vector<double>{2, 4, 6});
  CHECK(sigmoid(Tensor({1}, {0.0})).item() == 0.5);
  CHECK(vec(relu(Tensor({3}, {-1, 0, 2}))) == std::vector<double>{0, 0, 2});
  CHECK(vec(elementwise(ElementwiseOp::mul, a, b)) == std::vector<double>{2, 4, 6});
  CHECK(vec(elementwise(ElementwiseOp::leaky_relu, Tensor({2}, {-2, 3}), {}, 0.2)) ==
        std::vector<double>{-0.4, 3});
  CHECK_THROWS_AS(elementwise(ElementwiseOp::add, a), ShapeError);
}

TEST_CASE("trailing-dimension broadcasting") {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(vec(add(a, Tensor({3}, {10, 20, 30}))) == std::vector<double>{11, 22, 33, 14, 25, 36});
  CHECK(vec(mul(Tensor({2, 1}, {2, 3}), Tensor({1, 3}, {1, 2, 3}))) ==
        std::vector<double>{2, 4, 6, 3, 6, 9});
  CHECK(vec(add(a, Tensor::scalar(1))) == std::vector<double>{2, 3, 4, 5, 6, 7});
  CHECK_THROWS_AS(add(a, Tensor({2}, {1, 2})), ShapeError);

  // Gradient of a broadcast operand sums over the expanded axes.
  Tensor bias({3}, {0, 0, 0}, true);
  backward(sum(add(a, bias)));
  CHECK(std::vector<double>(bias.grad().begin(), bias.grad().end()) == std::vector<double>{2, 2, 2});
}

TEST_CASE("matmul") {
  std::mt19937_64 rng(1);
  Tensor m = random_tensor({3, 4}, rng);
  CHECK(oracle::max_abs_diff(vec(matmul(Tensor::eye(3), m)), vec(m)) == 0.0);
  CHECK(matmul(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {3, 4})).item() == 11.0);

  Tensor a = random_tensor({4, 5}, rng), b = random_tensor({5, 3}, rng);
  CHECK(oracle::max_abs_diff(vec(matmul(a, b)), oracle::matmul(vec(a), vec(b), 4, 5, 3)) < 1e-12);

  // batched with broadcast of a shared right operand and of a shared left operand
  Tensor ba = random_tensor({2, 3, 4, 5}, rng);
  Tensor out = matmul(ba, b);
  CHECK(out.shape() == Shape{2, 3, 4, 3});
  Tensor left = random_tensor({4, 4}, rng);
  Tensor bb = random_tensor({2, 4, 3}, rng);
  Tensor out2 = matmul(left, bb);
  for (std::size_t i = 0; i < 2; ++i) {
    auto bv = vec(bb);
    std::vector<double> slice(bv.begin() + i * 12, bv.begin() + (i + 1) * 12);
    auto ref = oracle::matmul(vec(left), slice, 4, 4, 3);
    auto ov = vec(out2);
    std::vector<double> got(ov.begin() + i * 12, ov.begin() + (i + 1) * 12);
    CHECK(oracle::max_abs_diff(got, ref) < 1e-12);
  }
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("softmax") {
  CHECK(vec(softmax(Tensor({2}, {0, 0}), 0)) == std::vector<double>{0.5, 0.5});
  CHECK(softmax(Tensor({1}, {3.7}), 0).item() == 1.0);
  auto s = vec(softmax(Tensor({3}, {1, 2, 3}), -1));
  CHECK(oracle::max_abs_diff(s, oracle::softmax_rows({1, 2, 3}, 1, 3)) < 1e-12);

  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = random_tensor({3, 4, 5}, rng, -20, 20);
    for (int axis : {0, 1, 2}) {
      Tensor y = softmax(x, axis);
      Tensor totals = sum(y, axis);
      for (double t : totals.values()) CHECK(std::abs(t - 1.0) <= 1e-9);
      for (double v : y.values()) CHECK(v > 0.0);
    }
  }
  CHECK_THROWS_AS(softmax(Tensor({2, 0}, {}), 1), ShapeError);
}

TEST_CASE("masked softmax is zero outside the mask") {
  std::vector<std::uint8_t> mask{1, 0, 1, 0, 1, 0, 1, 1, 1};
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({2, 3, 3}, rng, -3, 3);
  Tensor y = masked_softmax(x, mask);
  auto v = vec(y);
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        double a = v[(s * 3 + r) * 3 + c];
        if (!mask[r * 3 + c]) CHECK(a == 0.0);
        total += a;
      }
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  std::vector<std::uint8_t> empty_row{1, 1, 1, 0, 0, 0, 1, 1, 1};
  CHECK_THROWS(masked_softmax(x, empty_row));
}

TEST_CASE("layer_norm") {
  Tensor gamma({2}, {1, 1}), beta({2}, {0, 0});
  auto flat = vec(layer_norm(Tensor({2}, {4, 4}), gamma, beta));
  CHECK(flat == std::vector<double>{0, 0});
  auto two = vec(layer_norm(Tensor({2}, {1, 3}), gamma, beta));
  // (x - mu) / sqrt(1 + eps)
  CHECK(two[0] == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(two[1] == doctest::Approx(1.0).epsilon(1e-5));

  std::mt19937_64 rng(4);
  for (int seed = 0; seed < 10; ++seed) {
    Tensor x = random_tensor({3, 4, 6}, rng, -5, 5);
    Tensor g = random_tensor({6}, rng), b = random_tensor({6}, rng);
    CHECK(oracle::max_abs_diff(vec(layer_norm(x, g, b)), oracle::layer_norm(vec(x), vec(g), vec(b), 6)) <
          1e-12);
  }
  CHECK_THROWS_AS(layer_norm(Tensor({2, 0}, {}), Tensor({0}, {}), Tensor({0}, {})), ShapeError);
}

TEST_CASE("conv_temporal") {
  Tensor x({3, 1, 1}, {0, 3, 0});
  CHECK(vec(conv_temporal(x, Tensor({1, 1, 1}, {1.0}))) == vec(x));
  Tensor avg({3, 1, 1}, {1.0 / 3, 1.0 / 3, 1.0 / 3});
  auto y = vec(conv_temporal(x, avg));
  CHECK(y[0] == doctest::Approx(1.0));
  CHECK(y[1] == doctest::Approx(1.0));
  CHECK(y[2] == doctest::Approx(1.0));

  std::mt19937_64 rng(5);
  for (int seed = 0; seed < 10; ++seed) {
    Tensor in = random_tensor({5, 3, 2}, rng);
    Tensor kern = random_tensor({3, 2, 4}, rng);
    CHECK(oracle::max_abs_diff(vec(conv_temporal(in, kern)),
                               oracle::conv_temporal(vec(in), vec(kern), 5, 3, 2, 3, 4)) < 1e-12);
  }
  CHECK_THROWS_AS(conv_temporal(x, Tensor({2, 1, 1}, {1, 1})), std::invalid_argument);
}

TEST_CASE("temporal_attention") {
  // Direct loops: per group, node and head, softmax(q k^T / sqrt(dk)) v over T.
  auto reference = [](const std::vector<double>& q, const std::vector<double>& k, const std::vector<double>& v,
                      std::size_t groups, std::size_t steps, std::size_t n, std::size_t dim, std::size_t heads,
                      std::vector<double>* weights) {
    const std::size_t dk = dim / heads;
    std::vector<double> out(q.size(), 0.0);
    if (weights) weights->assign(groups * n * heads * steps * steps, 0.0);
    auto at = [&](std::size_t g, std::size_t t, std::size_t i, std::size_t h, std::size_t j) {
      return ((g * steps + t) * n + i) * dim + h * dk + j;
    };
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t t = 0; t < steps; ++t) {
            std::vector<double> score(steps);
            for (std::size_t s = 0; s < steps; ++s) {
              for (std::size_t j = 0; j < dk; ++j) score[s] += q[at(g, t, i, h, j)] * k[at(g, s, i, h, j)];
              score[s] /= std::sqrt(static_cast<double>(dk));
            }
            auto p = oracle::softmax_rows(score, 1, steps);
            for (std::size_t s = 0; s < steps; ++s) {
              if (weights) (*weights)[(((g * n + i) * heads + h) * steps + t) * steps + s] = p[s];
              for (std::size_t j = 0; j < dk; ++j) out[at(g, t, i, h, j)] += p[s] * v[at(g, s, i, h, j)];
            }
          }
    return out;
  };
  std::mt19937_64 rng(17);
  for (int seed = 0; seed < 10; ++seed) {
    Tensor q = random_tensor({2, 5, 3, 4}, rng, -2, 2), k = random_tensor({2, 5, 3, 4}, rng, -2, 2);
    Tensor v = random_tensor({2, 5, 3, 4}, rng);
    Tensor w;
    auto y = vec(temporal_attention(q, k, v, 2, &w));
    std::vector<double> expect_w;
    CHECK(oracle::max_abs_diff(y, reference(vec(q), vec(k), vec(v), 2, 5, 3, 4, 2, &expect_w)) < 1e-12);
    CHECK(w.shape() == Shape{2, 3, 2, 5, 5});
    CHECK(oracle::max_abs_diff(vec(w), expect_w) < 1e-12);
  }
  Tensor other = random_tensor({2, 4, 3, 4}, rng);
  Tensor q = random_tensor({2, 4, 3, 4}, rng), k = random_tensor({2, 4, 3, 4}, rng);
  Tensor v = random_tensor({2, 4, 3, 4}, rng);
  CHECK(grad_check([&](const Tensor& t) { return sum(mul(temporal_attention(t, k, v, 2), other)); }, q) < 1e-6);
  CHECK(grad_check([&](const Tensor& t) { return sum(mul(temporal_attention(q, t, v, 2), other)); }, k) < 1e-6);
  CHECK(grad_check([&](const Tensor& t) { return sum(mul(temporal_attention(q, k, t, 2), other)); }, v) < 1e-6);
  CHECK(grad_check([&](const Tensor& t) { return sum(mul(temporal_attention(t, t, t, 4), other)); }, q) < 1e-6);
  CHECK_THROWS_AS(temporal_attention(q, k, v, 3), std::invalid_argument);
  CHECK_THROWS_AS(temporal_attention(q, reshape(k, {2, 4, 4, 3}), v, 2), ShapeError);
}

TEST_CASE("feed_forward matches the composite ops") {
  std::mt19937_64 rng(23);
  // 3 * 5 * 6 = 90 rows spans a full row block and a ragged one.
  Tensor x = random_tensor({3, 5, 6, 3}, rng), w1 = random_tensor({3, 7}, rng), b1 = random_tensor({7}, rng);
  Tensor w2 = random_tensor({7, 2}, rng), b2 = random_tensor({2}, rng);
  auto composite = [](const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2, const Tensor& b2) {
    return add(matmul(relu(add(matmul(x, w1), b1)), w2), b2);
  };
  Tensor y = feed_forward(x, w1, b1, w2, b2);
  CHECK(y.shape() == Shape{3, 5, 6, 2});
  CHECK(oracle::max_abs_diff(vec(y), vec(composite(x, w1, b1, w2, b2))) < 1e-12);

  Tensor other = random_tensor({3, 5, 6, 2}, rng);
  auto loss = [&](const Tensor& a, const Tensor& b, const Tensor& c, const Tensor& d, const Tensor& e) {
    return sum(mul(feed_forward(a, b, c, d, e), other));
  };
  CHECK(grad_check([&](const Tensor& t) { return loss(t, w1, b1, w2, b2); }, x) < 1e-6);
  CHECK(grad_check([&](const Tensor& t) { return loss(x, t, b1, w2, b2); }, w1) < 1e-6);
  CHECK(grad_check([&](const Tensor& t) { return loss(x, w1, t, w2, b2); }, b1) < 1e-6);
  CHECK(grad_check([&](const Tensor& t) { return loss(x, w1, b1, t, b2); }, w2) < 1e-6);
  CHECK(grad_check([&](const Tensor& t) { return loss(x, w1, b1, w2, t); }, b2) < 1e-6);
  CHECK_THROWS_AS(feed_forward(x, w2, b1, w2, b2), ShapeError);
  CHECK_THROWS_AS(feed_forward(x, w1, b2, w2, b2), ShapeError);
}

TEST_CASE("backward basics") {
  Tensor x({3}, {1, 2, 3}, true);
  backward(sum(x));
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{1, 1, 1});

  Tensor y({2}, {1, 2}, true);
  backward(sum(mul(y, y)));
  CHECK(std::vector<double>(y.grad().begin(), y.grad().end()) == std::vector<double>{2, 4});

  Tensor z({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(mul(z, z)), ShapeError);
  CHECK_THROWS(backward(sum(Tensor({2}, {1, 2}))));
}

TEST_CASE("tape is consumed and leaf gradients accumulate") {
  Tensor x({2}, {0.3, -0.7}, true);
  Tensor mid = tanh(x);
  backward(sum(mid));
  CHECK(mid.is_leaf());
  CHECK_FALSE(mid.requires_grad());
  auto first = std::vector<double>(x.grad().begin(), x.grad().end());
  backward(sum(tanh(x)));
  for (std::size_t i = 0; i < 2; ++i) CHECK(x.grad()[i] == doctest::Approx(2 * first[i]));
}

TEST_CASE("backward of a sum of losses equals the sum of backwards") {
  std::mt19937_64 rng(6);
  Tensor w = random_tensor({4, 3}, rng).set_requires_grad(true);
  Tensor in = random_tensor({5, 4}, rng);
  auto loss_a = [&] { return sum(tanh(matmul(in, w))); };
  auto loss_b = [&] { return mean(mul(sigmoid(matmul(in, w)), matmul(in, w))); };
  backward(add(loss_a(), loss_b()));
  std::vector<double> joint(w.grad().begin(), w.grad().end());
  w.zero_grad();
  backward(loss_a());
  backward(loss_b());
  for (std::size_t i = 0; i < joint.size(); ++i) CHECK(joint[i] == doctest::Approx(w.grad()[i]).epsilon(1e-12));
}

TEST_CASE("three-layer composite matches finite differences") {
  std::mt19937_64 rng(7);
  Tensor x = random_tensor({6, 4}, rng);
  Tensor w1 = random_tensor({4, 5}, rng).set_requires_grad(true);
  Tensor w2 = random_tensor({5, 5}, rng).set_requires_grad(true);
  Tensor w3 = random_tensor({5, 2}, rng).set_requires_grad(true);
  auto f = [&] { return sum(sigmoid(matmul(tanh(matmul(elu(matmul(x, w1)), w2)), w3))); };
  std::vector<Tensor> params{w1, w2, w3};
  CHECK(grad_check(f, params, 1e-5).max_rel_error < 1e-6);
}

TEST_CASE("grad_check harness") {
  std::mt19937_64 rng(8);
  Tensor x = random_tensor({3, 4}, rng);
  CHECK(grad_check([](const Tensor& t) { return sum(t); }, x) < 1e-9);
  CHECK(grad_check([](const Tensor& t) { return sum(sigmoid(t)); }, x) < 1e-6);
  // relu is locally constant on negative inputs: gradient zero on both sides
  Tensor neg({3}, {-1.0, -2.0, -0.5});
  CHECK(grad_check([](const Tensor& t) { return sum(relu(t)); }, neg) == 0.0);
  CHECK_THROWS_AS(grad_check([](const Tensor& t) { return t; }, x), ShapeError);
  CHECK_THROWS_AS(grad_check([](const Tensor& t) { return sum(t); }, x, 1e-2), std::invalid_argument);
}

TEST_CASE("every differentiable op passes grad_check on random inputs") {
  using Fn = std::function<Tensor(const Tensor&)>;
  std::vector<std::pair<const char*, Fn>> cases;
  std::mt19937_64 other_rng(99);
  Tensor other = random_tensor({3, 4}, other_rng);
  Tensor row = random_tensor({4}, other_rng);
  Tensor right = random_tensor({4, 2}, other_rng);
  Tensor kern = random_tensor({3, 4, 2}, other_rng);
  Tensor gamma = random_tensor({4}, other_rng), beta = random_tensor({4}, other_rng);
  std::vector<std::uint8_t> mask{1, 1, 0, 1, 0, 1, 1, 1, 1, 1, 1, 0};
  cases.push_back({"add", [&](const Tensor& t) { return sum(mul(add(t, row), other)); }});
  cases.push_back({"sub", [&](const Tensor& t) { return sum(mul(sub(row, t), other)); }});
  cases.push_back({"mul", [&](const Tensor& t) { return sum(mul(t, t)); }});
  cases.push_back({"div", [&](const Tensor& t) { return sum(div(other, add_scalar(mul(t, t), 1.0))); }});
  cases.push_back({"sigmoid", [&](const Tensor& t) { return sum(mul(sigmoid(t), other)); }});
  cases.push_back({"tanh", [&](const Tensor& t) { return sum(mul(tanh(t), other)); }});
  cases.push_back({"elu", [&](const Tensor& t) { return sum(mul(elu(t), other)); }});
  cases.push_back({"leaky_relu", [&](const Tensor& t) { return sum(mul(leaky_relu(t, 0.2), other)); }});
  cases.push_back({"relu", [&](const Tensor& t) { return sum(mul(relu(t), other)); }});
  cases.push_back({"exp", [&](const Tensor& t) { return sum(mul(exp(t), other)); }});
  cases.push_back({"scale", [&](const Tensor& t) { return sum(mul(scale(one_minus(t), 3.0), other)); }});
  cases.push_back({"matmul", [&](const Tensor& t) { return sum(tanh(matmul(t, right))); }});
  cases.push_back({"permute", [&](const Tensor& t) { return sum(mul(transpose(t, 0, 1), transpose(other, 0, 1))); }});
  cases.push_back({"concat/slice", [&](const Tensor& t) {
                     Tensor c = concat({t, other}, 1);
                     return sum(mul(slice(c, 1, 2, 4), other));
                   }});
  cases.push_back({"sum_axis/mean", [&](const Tensor& t) { return mean(mul(sum(mul(t, t), 0), row)); }});
  cases.push_back({"softmax", [&](const Tensor& t) { return sum(mul(softmax(t, 0), other)); }});
  cases.push_back({"masked_softmax", [&](const Tensor& t) { return sum(mul(masked_softmax(t, mask), other)); }});
  cases.push_back({"layer_norm", [&](const Tensor& t) { return sum(mul(layer_norm(t, gamma, beta), other)); }});
  cases.push_back({"conv_temporal", [&](const Tensor& t) {
                     return sum(tanh(conv_temporal(reshape(t, {3, 1, 4}), kern)));
                   }});
  cases.push_back({"smooth_l1", [&](const Tensor& t) { return smooth_l1_loss(scale(t, 3.0), other); }});

  for (const auto& [name, f] : cases) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      std::mt19937_64 rng(1000 + seed);
      Tensor x = random_tensor({3, 4}, rng);
      CAPTURE(name);
      CAPTURE(seed);
      CHECK(grad_check(f, x, 1e-5) < 1e-6);
    }
  }
}

TEST_CASE("smooth_l1_loss") {
  CHECK(smooth_l1_loss(Tensor({1}, {0.5}), Tensor({1}, {0.0})).item() == 0.125);
  CHECK(smooth_l1_loss(Tensor({1}, {2.0}), Tensor({1}, {0.0})).item() == 1.5);
  CHECK(smooth_l1_loss(Tensor({2}, {3, 4}), Tensor({2}, {3, 4})).item() == 0.0);
  CHECK_THROWS_AS(smooth_l1_loss(Tensor({2}, {3, 4}), Tensor({1}, {3})), ShapeError);
}

TEST_CASE("adam") {
  SUBCASE("first step moves by lr * sign(g)") {
    std::vector<double> p{1.0, 1.0};
    std::vector<double> g{0.3, -2.0};
    AdamState s;
    adam_step(p, g, s);
    CHECK(p[0] == doctest::Approx(1.0 - 0.003).epsilon(1e-7));
    CHECK(p[1] == doctest::Approx(1.0 + 0.003).epsilon(1e-7));
    CHECK(s.t == 1);
  }
  SUBCASE("zero gradient is a fixed point") {
    std::vector<double> p{0.7, -0.2};
    std::vector<double> g{0.0, 0.0};
    AdamState s;
    for (int i = 0; i < 3; ++i) adam_step(p, g, s);
    CHECK(p == std::vector<double>{0.7, -0.2});
    CHECK(s.t == 3);
  }
  SUBCASE("two constant-gradient steps follow the scalar recurrence") {
    AdamState s;
    s.options.lr = 0.1;
    std::vector<double> p{1.0};
    std::vector<double> g{0.5};
    adam_step(p, g, s);
    adam_step(p, g, s);
    // hand evaluation of the recurrence
    double m1 = 0.1 * 0.5, v1 = 0.001 * 0.25;
    double p1 = 1.0 - 0.1 * (m1 / 0.1) / (std::sqrt(v1 / 0.001) + 1e-8);
    double m2 = 0.9 * m1 + 0.1 * 0.5, v2 = 0.999 * v1 + 0.001 * 0.25;
    double p2 = p1 - 0.1 * (m2 / (1 - 0.81)) / (std::sqrt(v2 / (1 - 0.999 * 0.999)) + 1e-8);
    CHECK(std::abs(p[0] - p2) < 1e-12);
  }
  SUBCASE("shape mismatch") {
    std::vector<double> p{1.0, 2.0};
    std::vector<double> g{1.0};
    AdamState s;
    CHECK_THROWS_AS(adam_step(p, g, s), ShapeError);
  }
  SUBCASE("optimizer over tensors") {
    Tensor w({2}, {1.0, -1.0}, true);
    Adam opt({w});
    backward(sum(mul(w, w)));
    opt.step();
    CHECK(w.values()[0] == doctest::Approx(1.0 - 0.003));
    CHECK(w.values()[1] == doctest::Approx(-1.0 + 0.003));
  }
}

TEST_CASE("checked mode rejects non-finite values") {
  CheckedModeGuard on(true);
  Tensor bad({2}, {1.0, 0.0});
  CHECK_THROWS_AS(div(Tensor({2}, {1, 1}), bad), NumericError);
  CHECK_THROWS_AS(Tensor({1}, {NAN}), NumericError);
}
