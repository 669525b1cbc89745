#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "afdgcn/config.hpp"
#include "afdgcn/layers.hpp"
#include "afdgcn/tensor.hpp"

namespace afdgcn {

/// Intermediate values captured during a forward pass (for tests and inspection).
struct ForwardTrace {
  Tensor adaptive;            // [N, N]
  Tensor hidden;              // [B, T, N, D]
  Tensor temporal_weights;    // [B, N, heads, T, T]
  Tensor temporal_out;        // [B, T, N, D]
  Tensor graph_weights;       // [B, N, N]
  Tensor spatial_out;         // [B, N, D]
};

struct ForwardContext {
  bool training = false;
  /// Source of dropout masks; required when training with dropout.
  std::mt19937_64* rng = nullptr;
  ForwardTrace* trace = nullptr;
};

struct NamedParameter {
  std::string name;
  /// Gradient-check group.
  std::string group;
  /// Architectural module, used by the parameter report.
  std::string module;
  Tensor value;
};

struct ParameterCount {
  std::string module;
  std::size_t count = 0;
};

class Model {
 public:
  /// `predefined` is the N x N distance-kernel adjacency. It is required when
  /// use_gat is set and kept as a buffer (not trained) otherwise.
  Model(ModelConfig config, Tensor predefined, std::uint64_t seed);

  /// x: [B, P, N, C] or [P, N, C] -> [B, Q, N, C_out] or [Q, N, C_out].
  Tensor forward(const Tensor& x, const ForwardContext& ctx = {}) const;

  const ModelConfig& config() const { return config_; }
  const std::vector<NamedParameter>& parameters() const { return params_; }
  std::vector<Tensor> parameter_tensors() const;
  const NamedParameter& parameter(const std::string& name) const;

  /// Learned adjacency from the current embeddings (no tape).
  Tensor adaptive_adjacency() const;
  const Tensor& predefined_adjacency() const { return predefined_; }

  std::size_t count_parameters() const;
  /// Per-module element counts in forward order.
  std::vector<ParameterCount> parameter_breakdown() const;

 private:
  void register_parameter(std::string name, std::string group, std::string module, const Tensor& t);

  ModelConfig config_;
  Tensor predefined_;
  std::vector<std::uint8_t> mask_;

  ChannelCalibration channel_;
  TemporalCalibration temporal_;
  Tensor embeddings_;
  GruPools gru_;
  TemporalAttention attention_;
  GraphAttention gat_;
  PredictionHead head_;

  std::vector<NamedParameter> params_;
};

}  // namespace afdgcn
