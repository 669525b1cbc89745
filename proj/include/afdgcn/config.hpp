#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

namespace afdgcn {

/// Invalid or inconsistent configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class PositionalEncoding {
  /// Sine on even time steps, cosine on odd ones.
  paper,
  /// Sine on even feature indices, cosine on odd ones.
  dimension_parity,
};

struct ModelConfig {
  std::size_t n_nodes = 0;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t hidden_dim = 64;
  std::size_t embed_dim = 8;
  /// Number of graph supports {I, A, A^2, ...}.
  std::size_t k_order = 2;
  std::size_t n_heads = 4;
  std::size_t horizon = 12;
  std::size_t history = 12;
  std::size_t fal_kernel = 3;
  std::size_t fal_reduction = 2;
  std::size_t ffn_expansion = 4;
  /// Dropout on the graph-attention coefficients while training.
  double attention_dropout = 0.1;
  PositionalEncoding pe_variant = PositionalEncoding::paper;
  bool use_fal = true;
  bool use_temporal_attention = true;
  bool use_gat = true;

  void validate() const;
};

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t max_epochs = 300;
  double lr = 0.003;
  std::size_t patience = 15;
  std::uint64_t seed = 0;
  /// Max global gradient norm; 0 disables clipping.
  double grad_clip = 0.0;
  /// MAPE ignores targets with |truth| <= this value.
  double mape_threshold = 0.0;

  void validate() const;
};

struct DataConfig {
  /// Chronological split ratios.
  std::size_t split_train = 6;
  std::size_t split_val = 2;
  std::size_t split_test = 2;
  /// Gaussian kernel width; 0 means the standard deviation of the distances.
  double adj_sigma = 0.0;
  double adj_threshold = 0.1;

  void validate() const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;

  void validate() const;
};

/// Sets one `key = value` pair. Throws ConfigError for unknown keys or bad values.
void apply_config_value(RunConfig& config, std::string_view key, std::string_view value);

/// Parses flat `key = value` text; `#` starts a comment.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Every key with its resolved value, one per line, in a fixed order.
std::string format_config(const RunConfig& config);

std::string to_string(PositionalEncoding variant);

}  // namespace afdgcn
