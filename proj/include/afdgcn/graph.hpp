#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "afdgcn/tensor.hpp"

namespace afdgcn {

/// Undirected road segment between two sensors; `cost` is a distance.
struct Edge {
  std::size_t from = 0;
  std::size_t to = 0;
  double cost = 0.0;
};

// Reference spectral utilities ---------------------------------------------
//
// These operate on plain (non-tape) N x N matrices and back the test oracles.

/// L = I - D^{-1/2} A D^{-1/2}; isolated nodes get D^{-1/2} = 0, so L_ii = 1.
Tensor normalized_laplacian(const Tensor& adjacency);

/// T_0(L~) .. T_{K-1}(L~) with L~ = (2 / lambda_max) L - I.
std::vector<Tensor> chebyshev_supports(const Tensor& laplacian, std::size_t order,
                                       double lambda_max = 2.0);

/// A_ij = exp(-dist^2 / sigma^2) when that is >= threshold, else 0.
/// The diagonal is always zero.
Tensor gaussian_kernel_adjacency(std::span<const Edge> edges, std::size_t n_nodes, double sigma,
                                 double threshold);

/// Population standard deviation of the edge costs (the usual kernel width).
double distance_std(std::span<const Edge> edges);

// Learned structure ----------------------------------------------------------

/// Row-softmax of ReLU(E E^T) for node embeddings E: [N, d]. Differentiable.
Tensor adaptive_adjacency(const Tensor& embeddings);

/// Square n x n, nonnegative, zero diagonal; throws otherwise.
void validate_adjacency(const Tensor& adjacency, std::size_t n_nodes);

struct GraphSpec {
  std::size_t n_nodes = 0;
  /// Pre-defined N x N adjacency, zero diagonal.
  Tensor predefined;
  /// Learnable N x d node embeddings.
  Tensor embeddings;

  /// Throws ShapeError / std::invalid_argument when the invariants fail.
  void validate() const;
};

/// Shared low-rank parameter pools. Per-node weights are E * weight_pool.
struct NodeAdaptiveWeights {
  /// [d, K, C_in, C_out]
  Tensor weight_pool;
  /// [d, C_out]
  Tensor bias_pool;

  std::size_t order() const { return weight_pool.size(1); }
  std::size_t in_channels() const { return weight_pool.size(2); }
  std::size_t out_channels() const { return weight_pool.size(3); }
};

/// Z = sum_k S_k X W^(k) + E b_G, with S_0 = I, S_k = A S_{k-1} and per-node
/// W^(k) = E W_G^(k). `x` is [..., N, C_in]; `adaptive` is the precomputed A.
Tensor dynamic_graph_conv(const Tensor& x, const Tensor& embeddings, const Tensor& adaptive,
                          const NodeAdaptiveWeights& pools);

/// Per-node parameters of one convolution, materialised once and reused
/// across the steps of a recurrence.
struct ResolvedGraphConv {
  /// [N, K * C_in, C_out]
  Tensor weights;
  /// [N, 1, C_out]
  Tensor bias;
  std::size_t order = 1;
  std::size_t in_channels = 0;
};

ResolvedGraphConv resolve_graph_conv(const Tensor& embeddings, const NodeAdaptiveWeights& pools);

/// Same convolution on node-major input: x [N, B, C_in] -> [N, B, C_out].
Tensor node_major_graph_conv(const Tensor& x, const Tensor& adaptive, const ResolvedGraphConv& conv);

/// Convenience form that builds A from the embeddings.
Tensor dynamic_graph_conv(const Tensor& x, const GraphSpec& graph, const NodeAdaptiveWeights& pools);

// Files ----------------------------------------------------------------------

/// Reads `from,to,cost` rows (zero-based ids). Each row is returned in both
/// directions. Throws DataError on malformed rows.
std::vector<Edge> load_edges_csv(const std::filesystem::path& path);
void save_edges_csv(const std::filesystem::path& path, std::span<const Edge> undirected);

/// Largest node id + 1.
std::size_t edge_node_count(std::span<const Edge> edges);

/// N rows of comma-separated values.
void save_matrix_csv(const std::filesystem::path& path, const Tensor& matrix);
Tensor load_matrix_csv(const std::filesystem::path& path);

}  // namespace afdgcn
