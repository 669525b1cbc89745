#include <doctest.h>

#include <cmath>
#include <random>

#include "afdgcn/gradcheck.hpp"
#include "afdgcn/layers.hpp"
#include "afdgcn/ops.hpp"
#include "support/oracles.hpp"

using namespace afdgcn;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  auto n = shape_numel(shape);
  return Tensor(std::move(shape), oracle::random_vec(n, rng, lo, hi));
}

std::vector<double> vec(const Tensor& t) { return t.to_vector(); }

std::vector<double> concat_rows(const std::vector<double>& a, std::size_t ca, const std::vector<double>& b,
                                std::size_t cb, std::size_t rows) {
  std::vector<double> out;
  for (std::size_t r = 0; r < rows; ++r) {
    out.insert(out.end(), a.begin() + r * ca, a.begin() + (r + 1) * ca);
    out.insert(out.end(), b.begin() + r * cb, b.begin() + (r + 1) * cb);
  }
  return out;
}

/// Step oracle composed from the dense dynamic graph convolution oracle.
std::vector<double> dgcgru_oracle(const std::vector<double>& x, const std::vector<double>& h, const Tensor& e,
                                  const GruPools& p, std::size_t n, std::size_t c) {
  const std::size_t d = p.hidden_dim(), de = e.size(1), k = p.gate.order();
  auto gates = oracle::dynamic_graph_conv(concat_rows(x, c, h, d, n), vec(e), vec(p.gate.weight_pool),
                                          vec(p.gate.bias_pool), n, de, k, c + d, 2 * d);
  for (auto& g : gates) g = oracle::sigmoid(g);
  std::vector<double> rh(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) rh[i * d + j] = gates[i * 2 * d + d + j] * h[i * d + j];
  auto cand = oracle::dynamic_graph_conv(concat_rows(x, c, rh, d, n), vec(e), vec(p.update.weight_pool),
                                         vec(p.update.bias_pool), n, de, k, c + d, d);
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double z = gates[i * 2 * d + j];
      out[i * d + j] = z * h[i * d + j] + (1.0 - z) * std::tanh(cand[i * d + j]);
    }
  return out;
}

GruPools zero_pools(std::size_t d_embed, std::size_t k, std::size_t c, std::size_t hidden) {
  GruPools p;
  p.gate = {Tensor::zeros({d_embed, k, c + hidden, 2 * hidden}), Tensor::zeros({d_embed, 2 * hidden})};
  p.update = {Tensor::zeros({d_embed, k, c + hidden, hidden}), Tensor::zeros({d_embed, hidden})};
  return p;
}

}  // namespace

TEST_CASE("channel_calibration") {
  std::mt19937_64 rng(21);
  Tensor x = random_tensor({4, 3, 2}, rng);
  ChannelCalibration zero{Tensor::zeros({2, 1}), Tensor::zeros({1}), Tensor::zeros({1, 2}), Tensor::zeros({2})};
  auto half = vec(channel_calibration(x, zero));
  for (std::size_t i = 0; i < half.size(); ++i) CHECK(half[i] == x.values()[i] * 0.5);

  ChannelCalibration saturated = zero;
  saturated.b2 = Tensor::full({2}, 50.0);
  CHECK(oracle::max_abs_diff(vec(channel_calibration(x, saturated)), vec(x)) < 1e-20);

  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 r(400 + seed);
    auto p = ChannelCalibration::init(4, 2, r);
    p.b1 = random_tensor({2}, r);
    p.b2 = random_tensor({4}, r);
    Tensor in = random_tensor({5, 3, 4}, r, -3, 3);
    auto want = oracle::channel_calibration(vec(in), 5, 3, 4, vec(p.w1), vec(p.b1), vec(p.w2), vec(p.b2), 2);
    CHECK(oracle::max_abs_diff(vec(channel_calibration(in, p)), want) <= 1e-12);
  }
  // bottleneck never drops below one unit
  auto narrow = ChannelCalibration::init(1, 2, rng);
  CHECK(narrow.w1.shape() == Shape{1, 1});
}

TEST_CASE("temporal_calibration") {
  std::mt19937_64 rng(22);
  Tensor x = random_tensor({5, 3, 2}, rng);
  TemporalCalibration zero{Tensor::zeros({3, 2, 2}), Tensor::zeros({3, 2, 2})};
  auto half = vec(temporal_calibration(x, zero));
  for (std::size_t i = 0; i < half.size(); ++i) CHECK(half[i] == x.values()[i] * 0.5);

  // width-1 identity kernels: a pointwise gate x * sigmoid(relu(x))
  TemporalCalibration pointwise{reshape(Tensor::eye(2), {1, 2, 2}), reshape(Tensor::eye(2), {1, 2, 2})};
  auto got = vec(temporal_calibration(x, pointwise));
  for (std::size_t i = 0; i < got.size(); ++i) {
    const double v = x.values()[i];
    CHECK(got[i] == doctest::Approx(v * oracle::sigmoid(oracle::relu(v))).epsilon(1e-14));
  }

  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 r(500 + seed);
    auto p = TemporalCalibration::init(3, 3, r);
    Tensor in = random_tensor({6, 2, 3}, r, -2, 2);
    auto inner = oracle::conv_temporal(vec(in), vec(p.inner), 6, 2, 3, 3, 3);
    for (auto& v : inner) v = oracle::relu(v);
    auto gate = oracle::conv_temporal(inner, vec(p.outer), 6, 2, 3, 3, 3);
    std::vector<double> want(gate.size());
    for (std::size_t i = 0; i < want.size(); ++i) want[i] = in.values()[i] * oracle::sigmoid(gate[i]);
    CHECK(oracle::max_abs_diff(vec(temporal_calibration(in, p)), want) <= 1e-12);
  }
  TemporalCalibration even{Tensor::zeros({2, 2, 2}), Tensor::zeros({2, 2, 2})};
  CHECK_THROWS_AS(temporal_calibration(x, even), std::invalid_argument);
}

TEST_CASE("dgcgru_step") {
  SUBCASE("saturated update gate carries the state") {
    std::mt19937_64 rng(23);
    const std::size_t n = 4, c = 2, d = 3, de = 2;
    auto p = GruPools::init(de, 2, c, d, rng);
    // E b_G drives every z logit to +60 when each node's embedding sums to a positive value.
    std::vector<double> ev(n * de, 0.5);
    Tensor pos(Shape{n, de}, ev);
    std::vector<double> bias(de * 2 * d, 0.0);
    for (std::size_t k = 0; k < de; ++k)
      for (std::size_t j = 0; j < d; ++j) bias[k * 2 * d + j] = 60.0;
    p.gate.bias_pool = Tensor({de, 2 * d}, bias);
    Tensor h = random_tensor({n, d}, rng);
    Tensor out = dgcgru_step(random_tensor({n, c}, rng), h, pos, adaptive_adjacency(pos), p);
    CHECK(oracle::max_abs_diff(vec(out), vec(h)) < 1e-12);
  }
  SUBCASE("zero pools halve the state") {
    std::mt19937_64 rng(24);
    auto p = zero_pools(2, 2, 1, 3);
    Tensor e = random_tensor({4, 2}, rng);
    Tensor h = random_tensor({4, 3}, rng);
    auto out = vec(dgcgru_step(random_tensor({4, 1}, rng), h, e, adaptive_adjacency(e), p));
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == h.values()[i] / 2);
  }
  SUBCASE("single node reduces to a textbook GRU") {
    for (int seed = 0; seed < 10; ++seed) {
      std::mt19937_64 rng(600 + seed);
      const std::size_t c = 2, d = 3;
      auto p = GruPools::init(1, 1, c, d, rng);
      p.gate.bias_pool = random_tensor({1, 2 * d}, rng);
      p.update.bias_pool = random_tensor({1, d}, rng);
      Tensor e({1, 1}, {1.0});
      Tensor x = random_tensor({1, c}, rng), h = random_tensor({1, d}, rng);
      auto want = oracle::gru_step(vec(x), vec(h), 1, c, d, vec(p.gate.weight_pool), vec(p.gate.bias_pool),
                                   vec(p.update.weight_pool), vec(p.update.bias_pool));
      CHECK(oracle::max_abs_diff(vec(dgcgru_step(x, h, e, adaptive_adjacency(e), p)), want) <= 1e-9);
    }
  }
  SUBCASE("matches the composed graph-convolution oracle") {
    for (int seed = 0; seed < 10; ++seed) {
      std::mt19937_64 rng(700 + seed);
      const std::size_t n = 5, c = 2, d = 4, de = 3, k = 1 + seed % 3;
      auto p = GruPools::init(de, k, c, d, rng);
      p.gate.bias_pool = random_tensor({de, 2 * d}, rng);
      p.update.bias_pool = random_tensor({de, d}, rng);
      Tensor e = random_tensor({n, de}, rng);
      Tensor x = random_tensor({n, c}, rng), h = random_tensor({n, d}, rng);
      auto want = dgcgru_oracle(vec(x), vec(h), e, p, n, c);
      CHECK(oracle::max_abs_diff(vec(dgcgru_step(x, h, e, adaptive_adjacency(e), p)), want) <= 1e-9);
    }
  }
  SUBCASE("gradients") {
    std::mt19937_64 rng(25);
    auto p = GruPools::init(2, 2, 1, 3, rng);
    p.gate.bias_pool = random_tensor({2, 6}, rng).set_requires_grad(true);
    p.update.bias_pool = random_tensor({2, 3}, rng).set_requires_grad(true);
    Tensor e = random_tensor({4, 2}, rng).set_requires_grad(true);
    Tensor x = random_tensor({2, 4, 1}, rng), h = random_tensor({2, 4, 3}, rng).set_requires_grad(true);
    Tensor probe = random_tensor({2, 4, 3}, rng);
    std::vector<Tensor> params{e, p.gate.weight_pool, p.gate.bias_pool, p.update.weight_pool, p.update.bias_pool, h};
    auto loss = [&] { return sum(mul(dgcgru_step(x, h, e, adaptive_adjacency(e), p), probe)); };
    CHECK(grad_check(loss, params).max_rel_error < 1e-6);
  }
}

TEST_CASE("dgcgru_unroll") {
  std::mt19937_64 rng(26);
  const std::size_t n = 4, c = 2, d = 3;
  auto p = GruPools::init(2, 2, c, d, rng);
  p.gate.bias_pool = random_tensor({2, 2 * d}, rng);
  Tensor e = random_tensor({n, 2}, rng);
  Tensor a = adaptive_adjacency(e);

  Tensor one = random_tensor({1, n, c}, rng);
  Tensor h0 = random_tensor({n, d}, rng);
  CHECK(vec(dgcgru_unroll(one, h0, e, a, p)) == vec(dgcgru_step(reshape(one, {n, c}), h0, e, a, p)));

  Tensor x = random_tensor({2, 3, n, c}, rng);
  Tensor states = dgcgru_unroll(x, Tensor(), e, a, p);
  CHECK(states.shape() == Shape{2, 3, n, d});
  Tensor h = Tensor::zeros({2, n, d});
  for (std::size_t t = 0; t < 3; ++t) {
    h = dgcgru_step(reshape(slice(x, 1, t, 1), {2, n, c}), h, e, a, p);
    CHECK(vec(h) == vec(reshape(slice(states, 1, t, 1), {2, n, d})));
  }

  auto zero = zero_pools(2, 2, c, d);
  for (double v : vec(dgcgru_unroll(Tensor::zeros({3, n, c}), Tensor(), e, a, zero))) CHECK(v == 0.0);

  // z forced to one carries H_0 through every step
  auto carry = zero_pools(2, 2, c, d);
  std::vector<double> bias(2 * 2 * d, 0.0);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t j = 0; j < d; ++j) bias[k * 2 * d + j] = 60.0;
  carry.gate.bias_pool = Tensor({2, 2 * d}, bias);
  Tensor ones = Tensor::full({n, 2}, 0.5);
  Tensor carried = dgcgru_unroll(random_tensor({5, n, c}, rng), h0, ones, adaptive_adjacency(ones), carry);
  for (std::size_t t = 0; t < 5; ++t) {
    CHECK(oracle::max_abs_diff(vec(reshape(slice(carried, 0, t, 1), {n, d})), vec(h0)) < 1e-12);
  }
}

TEST_CASE("positional_encoding") {
  Tensor paper = positional_encoding(3, 6, PositionalEncoding::paper);
  for (std::size_t i = 0; i < 6; ++i) CHECK(paper.at({0, i}) == 0.0);
  CHECK(paper.at({1, 0}) == doctest::Approx(0.540302).epsilon(1e-6));
  CHECK(paper.at({1, 0}) == std::cos(1.0));
  CHECK(paper.at({2, 1}) == std::sin(2.0 / std::pow(10000.0, 2.0 / 6.0)));
  Tensor alt = positional_encoding(2, 6, PositionalEncoding::dimension_parity);
  CHECK(vec(slice(alt, 0, 0, 1)) == std::vector<double>{0, 1, 0, 1, 0, 1});
  CHECK(alt.at({1, 3}) == std::cos(1.0 / std::pow(10000.0, 2.0 / 6.0)));
}

TEST_CASE("multi_head_temporal_attention") {
  auto unpack = [](const TemporalAttention& p, std::size_t width) {
    return oracle::AttentionWeights{vec(p.wq),       vec(p.wk),     vec(p.wv),     vec(p.wo),
                                    vec(p.ln1_gamma), vec(p.ln1_beta), vec(p.ffn_w1), vec(p.ffn_b1),
                                    vec(p.ffn_w2),   vec(p.ffn_b2), vec(p.ln2_gamma), vec(p.ln2_beta),
                                    width};
  };
  auto randomize_affine = [](TemporalAttention& p, std::mt19937_64& r, std::size_t d, std::size_t width) {
    p.ln1_gamma = random_tensor({d}, r, 0.5, 1.5);
    p.ln1_beta = random_tensor({d}, r);
    p.ln2_gamma = random_tensor({d}, r, 0.5, 1.5);
    p.ln2_beta = random_tensor({d}, r);
    p.ffn_b1 = random_tensor({width}, r);
    p.ffn_b2 = random_tensor({d}, r);
  };

  SUBCASE("single head matches the loop oracle") {
    for (int seed = 0; seed < 10; ++seed) {
      std::mt19937_64 rng(800 + seed);
      const std::size_t t_len = 2 + seed % 3, n = 1 + seed % 3, d = 4;
      auto p = TemporalAttention::init(d, 2, rng);
      randomize_affine(p, rng, d, 8);
      Tensor h = random_tensor({t_len, n, d}, rng);
      auto with_pe = vec(h);
      for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) {
            const double angle = static_cast<double>(t) / std::pow(10000.0, 2.0 * static_cast<double>(j) / d);
            with_pe[(t * n + i) * d + j] += t % 2 == 0 ? std::sin(angle) : std::cos(angle);
          }
      auto want = oracle::attention_block(with_pe, t_len, n, d, unpack(p, 8));
      CHECK(oracle::max_abs_diff(vec(multi_head_temporal_attention(h, p, 1, PositionalEncoding::paper)), want) <=
            1e-9);
    }
  }
  SUBCASE("length-one sequences attend to themselves") {
    std::mt19937_64 rng(27);
    auto p = TemporalAttention::init(4, 2, rng);
    Tensor weights;
    Tensor h = random_tensor({2, 1, 3, 4}, rng);
    Tensor out = multi_head_temporal_attention(h, p, 2, PositionalEncoding::paper, &weights);
    for (double w : vec(weights)) CHECK(w == 1.0);
    auto want = oracle::attention_block(vec(reshape(slice(h, 0, 0, 1), {1, 3, 4})), 1, 3, 4, unpack(p, 8));
    CHECK(oracle::max_abs_diff(vec(reshape(slice(out, 0, 0, 1), {1, 3, 4})), want) <= 1e-9);
  }
  SUBCASE("attention rows are distributions") {
    std::mt19937_64 rng(28);
    auto p = TemporalAttention::init(8, 2, rng);
    Tensor weights;
    multi_head_temporal_attention(random_tensor({2, 5, 3, 8}, rng, -3, 3), p, 4, PositionalEncoding::paper, &weights);
    CHECK(weights.shape() == Shape{2, 3, 4, 5, 5});
    auto w = vec(weights);
    for (std::size_t row = 0; row < w.size() / 5; ++row) {
      double total = 0.0;
      for (std::size_t j = 0; j < 5; ++j) total += w[row * 5 + j];
      CHECK(std::abs(total - 1.0) <= 1e-9);
    }
  }
  SUBCASE("head count must divide the width") {
    std::mt19937_64 rng(29);
    auto p = TemporalAttention::init(6, 1, rng);
    CHECK_THROWS_AS(multi_head_temporal_attention(random_tensor({2, 1, 6}, rng), p, 4, PositionalEncoding::paper),
                    std::invalid_argument);
  }
}

TEST_CASE("graph_attention") {
  SUBCASE("isolated node attends only to itself") {
    std::mt19937_64 rng(30);
    auto p = GraphAttention::init(3, rng);
    Tensor adj({3, 3}, {0, 1, 0, 1, 0, 0, 0, 0, 0});
    Tensor h = random_tensor({3, 3}, rng);
    Tensor alpha;
    Tensor out = graph_attention(h, p, attention_mask(adj), 0.0, nullptr, &alpha);
    CHECK(alpha.at({2, 2}) == 1.0);
    Tensor expect = elu(matmul(slice(h, 0, 2, 1), p.w));
    CHECK(vec(slice(out, 0, 2, 1)) == vec(expect));
  }
  SUBCASE("path graph matches the edge-loop oracle") {
    Tensor adj({3, 3}, {0, 1, 0, 1, 0, 1, 0, 1, 0});
    for (int seed = 0; seed < 10; ++seed) {
      std::mt19937_64 rng(900 + seed);
      auto p = GraphAttention::init(4, rng);
      Tensor h = random_tensor({3, 4}, rng, -2, 2);
      auto want = oracle::graph_attention(vec(h), vec(adj), 3, 4, vec(p.w), vec(p.a));
      CHECK(oracle::max_abs_diff(vec(graph_attention(h, p, attention_mask(adj))), want) <= 1e-9);
    }
  }
  SUBCASE("attention is a distribution over the masked neighbourhood") {
    std::mt19937_64 rng(31);
    const std::size_t n = 6;
    std::vector<double> a(n * n, 0.0);
    for (std::size_t i = 0; i + 1 < n; ++i) a[i * n + i + 1] = a[(i + 1) * n + i] = 1.0;
    a[0 * n + 5] = a[5 * n + 0] = 0.3;
    Tensor adj({n, n}, a);
    auto mask = attention_mask(adj);
    auto p = GraphAttention::init(5, rng);
    Tensor alpha;
    graph_attention(random_tensor({2, n, 5}, rng, -4, 4), p, mask, 0.0, nullptr, &alpha);
    auto w = vec(alpha);
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t i = 0; i < n; ++i) {
        double total = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          const double v = w[(s * n + i) * n + j];
          if (!mask[i * n + j]) CHECK(v == 0.0);
          total += v;
        }
        CHECK(std::abs(total - 1.0) <= 1e-9);
      }
  }
  SUBCASE("dropout only with an rng") {
    std::mt19937_64 rng(32);
    auto p = GraphAttention::init(4, rng);
    Tensor adj({3, 3}, {0, 1, 1, 1, 0, 1, 1, 1, 0});
    Tensor h = random_tensor({3, 4}, rng);
    auto mask = attention_mask(adj);
    auto eval_a = vec(graph_attention(h, p, mask, 0.5));
    auto eval_b = vec(graph_attention(h, p, mask, 0.5));
    CHECK(eval_a == eval_b);
    std::mt19937_64 drop(7);
    CHECK(vec(graph_attention(h, p, mask, 0.5, &drop)) != eval_a);
  }
}

TEST_CASE("prediction_head") {
  std::mt19937_64 rng(33);
  auto p = PredictionHead::init(64, 1, 12, 12, rng);
  Tensor h_t = random_tensor({12, 5, 64}, rng);
  Tensor out = prediction_head(h_t, random_tensor({5, 64}, rng), p);
  CHECK(out.shape() == Shape{12, 5, 1});
  CHECK(vec(prediction_head(h_t, Tensor::zeros({5, 64}), p)) == vec(prediction_head(h_t, Tensor(), p)));

  // channel 0 picked, identity over time
  std::vector<double> pick(4 * 1, 0.0);
  pick[0] = 1.0;
  PredictionHead id{Tensor({4, 1}, pick), Tensor::zeros({1}), Tensor::eye(3), Tensor::zeros({3})};
  Tensor small = random_tensor({3, 2, 4}, rng);
  Tensor y = prediction_head(small, Tensor(), id);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t n = 0; n < 2; ++n) CHECK(y.at({t, n, 0}) == small.at({t, n, 0}));

  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 r(1000 + seed);
    auto q = PredictionHead::init(3, 2, 4, 5, r);
    q.b1 = random_tensor({2}, r);
    q.b2 = random_tensor({5}, r);
    Tensor ht = random_tensor({2, 4, 3, 3}, r), hs = random_tensor({2, 3, 3}, r);
    Tensor got = prediction_head(ht, hs, q);
    CHECK(got.shape() == Shape{2, 5, 3, 2});
    for (std::size_t b = 0; b < 2; ++b) {
      auto f = vec(reshape(slice(ht, 0, b, 1), {4, 3, 3}));
      auto s = vec(reshape(slice(hs, 0, b, 1), {3, 3}));
      for (std::size_t i = 0; i < f.size(); ++i) f[i] += s[i % 9];
      auto want = oracle::prediction_head(f, 4, 3, 3, 2, 5, vec(q.w1), vec(q.b1), vec(q.w2), vec(q.b2));
      CHECK(oracle::max_abs_diff(vec(reshape(slice(got, 0, b, 1), {5, 3, 2})), want) <= 1e-12);
    }
  }
  CHECK_THROWS_AS(prediction_head(h_t, random_tensor({4, 64}, rng), p), ShapeError);
}
