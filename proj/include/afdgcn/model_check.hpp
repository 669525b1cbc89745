#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "afdgcn/config.hpp"
#include "afdgcn/tensor.hpp"

namespace afdgcn {

struct GroupCheck {
  std::string group;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  /// Parameter holding the worst coordinate.
  std::string worst_parameter;
};

/// Ring graph on n nodes with unit weights (used by the small presets).
Tensor ring_adjacency(std::size_t n);

inline constexpr int kMaxKinkRedraws = 64;

/// End-to-end finite-difference check of smooth_l1(model(x), y) against every
/// parameter group, on random inputs, in evaluation mode. The parameters and
/// inputs are redrawn until no relu / leaky_relu input lies within 100 h of
/// zero; throws NumericError if that fails kMaxKinkRedraws times.
std::vector<GroupCheck> check_model_gradients(const ModelConfig& config, std::size_t batch, std::uint64_t seed,
                                              double h = 1e-5);

}  // namespace afdgcn
