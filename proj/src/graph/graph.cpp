#include "afdgcn/graph.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "afdgcn/ops.hpp"

namespace afdgcn {

namespace {

std::size_t require_square(const Tensor& m, const char* what) {
  if (m.rank() != 2 || m.size(0) != m.size(1)) {
    throw ShapeError(std::string(what) + ": expected a square matrix, got " + shape_str(m.shape()));
  }
  return m.size(0);
}

}  // namespace

Tensor normalized_laplacian(const Tensor& adjacency) {
  const std::size_t n = require_square(adjacency, "normalized_laplacian");
  auto a = adjacency.values();
  std::vector<double> inv_sqrt(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double deg = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (a[i * n + j] < 0.0) throw std::invalid_argument("normalized_laplacian: negative adjacency entry");
      deg += a[i * n + j];
    }
    if (deg > 0.0) inv_sqrt[i] = 1.0 / std::sqrt(deg);
  }
  std::vector<double> l(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      l[i * n + j] = (i == j ? 1.0 : 0.0) - inv_sqrt[i] * a[i * n + j] * inv_sqrt[j];
  return Tensor({n, n}, std::move(l));
}

std::vector<Tensor> chebyshev_supports(const Tensor& laplacian, std::size_t order, double lambda_max) {
  if (order < 1) throw std::invalid_argument("chebyshev_supports: order must be >= 1");
  if (!(lambda_max > 0.0)) throw std::invalid_argument("chebyshev_supports: lambda_max must be > 0");
  const std::size_t n = require_square(laplacian, "chebyshev_supports");
  NoGradGuard guard;
  Tensor eye = Tensor::eye(n);
  Tensor scaled = sub(scale(laplacian.detach(), 2.0 / lambda_max), eye);
  std::vector<Tensor> out{eye};
  if (order > 1) out.push_back(scaled);
  for (std::size_t k = 2; k < order; ++k) {
    out.push_back(sub(scale(matmul(scaled, out[k - 1]), 2.0), out[k - 2]));
  }
  return out;
}

Tensor gaussian_kernel_adjacency(std::span<const Edge> edges, std::size_t n_nodes, double sigma,
                                 double threshold) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel_adjacency: sigma must be > 0");
  std::vector<double> a(n_nodes * n_nodes, 0.0);
  for (const auto& e : edges) {
    if (e.from >= n_nodes || e.to >= n_nodes) {
      throw std::out_of_range("gaussian_kernel_adjacency: node index out of range in edge " +
                              std::to_string(e.from) + "," + std::to_string(e.to));
    }
    if (e.cost < 0.0) throw std::invalid_argument("gaussian_kernel_adjacency: negative distance");
    if (e.from == e.to) continue;
    const double w = std::exp(-(e.cost * e.cost) / (sigma * sigma));
    a[e.from * n_nodes + e.to] = w >= threshold ? w : 0.0;
  }
  return Tensor({n_nodes, n_nodes}, std::move(a));
}

double distance_std(std::span<const Edge> edges) {
  if (edges.empty()) return 0.0;
  double mean = 0.0;
  for (const auto& e : edges) mean += e.cost;
  mean /= static_cast<double>(edges.size());
  double var = 0.0;
  for (const auto& e : edges) var += (e.cost - mean) * (e.cost - mean);
  return std::sqrt(var / static_cast<double>(edges.size()));
}

Tensor adaptive_adjacency(const Tensor& embeddings) {
  if (embeddings.rank() != 2) throw ShapeError("adaptive_adjacency: embeddings must be [N, d]");
  if (embeddings.size(0) < 1) throw std::invalid_argument("adaptive_adjacency: N must be >= 1");
  if (embeddings.size(1) < 1) throw std::invalid_argument("adaptive_adjacency: d must be >= 1");
  return softmax(relu(matmul(embeddings, transpose(embeddings, 0, 1))), 1);
}

void validate_adjacency(const Tensor& adjacency, std::size_t n_nodes) {
  if (require_square(adjacency, "adjacency") != n_nodes) {
    throw ShapeError("adjacency is " + shape_str(adjacency.shape()) + " for " + std::to_string(n_nodes) + " nodes");
  }
  auto a = adjacency.values();
  for (std::size_t i = 0; i < n_nodes; ++i) {
    for (std::size_t j = 0; j < n_nodes; ++j) {
      if (a[i * n_nodes + j] < 0.0) throw std::invalid_argument("adjacency: negative entry");
    }
    if (a[i * n_nodes + i] != 0.0) throw std::invalid_argument("adjacency: diagonal must be zero");
  }
}

void GraphSpec::validate() const {
  if (n_nodes < 1) throw std::invalid_argument("GraphSpec: n_nodes must be >= 1");
  if (predefined.defined()) validate_adjacency(predefined, n_nodes);
  if (embeddings.rank() != 2 || embeddings.size(0) != n_nodes) {
    throw ShapeError("GraphSpec: embeddings must be [" + std::to_string(n_nodes) + ", d], got " +
                     shape_str(embeddings.shape()));
  }
  if (embeddings.size(1) >= n_nodes && n_nodes > 1) {
    throw std::invalid_argument("GraphSpec: embedding dimension must be smaller than N");
  }
}

Tensor dynamic_graph_conv(const Tensor& x, const Tensor& embeddings, const Tensor& adaptive,
                          const NodeAdaptiveWeights& pools) {
  const Tensor& pool = pools.weight_pool;
  const Tensor& bias_pool = pools.bias_pool;
  if (x.rank() < 2) throw ShapeError("dynamic_graph_conv: x must be [..., N, C_in]");
  if (embeddings.rank() != 2) throw ShapeError("dynamic_graph_conv: embeddings must be [N, d]");
  const std::size_t n = embeddings.size(0);
  const std::size_t d = embeddings.size(1);
  if (pool.rank() != 4 || pool.size(0) != d || pool.size(1) < 1) {
    throw ShapeError("dynamic_graph_conv: weight pool must be [d, K, C_in, C_out] with d = " +
                     std::to_string(d) + ", got " + shape_str(pool.shape()));
  }
  const std::size_t c_in = pool.size(2);
  const std::size_t c_out = pool.size(3);
  if (x.size(-2) != n || x.size(-1) != c_in) {
    throw ShapeError("dynamic_graph_conv: x " + shape_str(x.shape()) + " does not match N = " +
                     std::to_string(n) + ", C_in = " + std::to_string(c_in));
  }
  if (bias_pool.rank() != 2 || bias_pool.size(0) != d || bias_pool.size(1) != c_out) {
    throw ShapeError("dynamic_graph_conv: bias pool must be [d, C_out], got " + shape_str(bias_pool.shape()));
  }
  if (adaptive.rank() != 2 || adaptive.size(0) != n || adaptive.size(1) != n) {
    throw ShapeError("dynamic_graph_conv: adjacency must be [N, N]");
  }

  Shape lead(x.shape().begin(), x.shape().end() - 2);
  const std::size_t batch = shape_numel(lead);
  Tensor xs = permute(reshape(x, {batch, n, c_in}), {1, 0, 2});
  Tensor z = permute(node_major_graph_conv(xs, adaptive, resolve_graph_conv(embeddings, pools)), {1, 0, 2});

  Shape out_shape = lead;
  out_shape.push_back(n);
  out_shape.push_back(c_out);
  return reshape(z, out_shape);
}

ResolvedGraphConv resolve_graph_conv(const Tensor& embeddings, const NodeAdaptiveWeights& pools) {
  const std::size_t n = embeddings.size(0), d = embeddings.size(1);
  const std::size_t order = pools.order(), c_in = pools.in_channels(), c_out = pools.out_channels();
  ResolvedGraphConv r;
  r.weights = reshape(matmul(embeddings, reshape(pools.weight_pool, {d, order * c_in * c_out})),
                      {n, order * c_in, c_out});
  r.bias = reshape(matmul(embeddings, pools.bias_pool), {n, 1, c_out});
  r.order = order;
  r.in_channels = c_in;
  return r;
}

Tensor node_major_graph_conv(const Tensor& x, const Tensor& adaptive, const ResolvedGraphConv& conv) {
  if (x.rank() != 3 || x.size(0) != conv.weights.size(0) || x.size(2) != conv.in_channels) {
    throw ShapeError("node_major_graph_conv: x must be [N, B, C_in], got " + shape_str(x.shape()));
  }
  const std::size_t n = x.size(0), batch = x.size(1), c_in = x.size(2);
  std::vector<Tensor> parts{x};
  Tensor flat = reshape(x, {n, batch * c_in});
  for (std::size_t k = 1; k < conv.order; ++k) {
    flat = matmul(adaptive, flat);
    parts.push_back(reshape(flat, {n, batch, c_in}));
  }
  Tensor gathered = conv.order == 1 ? x : concat(std::span<const Tensor>(parts), 2);  // [N, B, K*C_in]
  return add(matmul(gathered, conv.weights), conv.bias);
}

Tensor dynamic_graph_conv(const Tensor& x, const GraphSpec& graph, const NodeAdaptiveWeights& pools) {
  return dynamic_graph_conv(x, graph.embeddings, adaptive_adjacency(graph.embeddings), pools);
}

}  // namespace afdgcn
