#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "afdgcn/graph.hpp"
#include "afdgcn/tensor.hpp"

namespace afdgcn {

/// L x N x C readings, row-major (time, node, channel).
struct RawSeries {
  std::size_t length = 0;
  std::size_t nodes = 0;
  std::size_t channels = 0;
  std::vector<double> values;
  std::vector<std::string> channel_names;

  double at(std::size_t t, std::size_t n, std::size_t c) const {
    return values[(t * nodes + n) * channels + c];
  }
  /// Steps [start, start + count).
  RawSeries segment(std::size_t start, std::size_t count) const;
  /// Throws DataError on size mismatch or non-finite values.
  void validate() const;
};

enum class SeriesLayout { csv, flat_binary };

/// flat_binary when the file starts with the "STDS" magic, csv otherwise.
SeriesLayout detect_layout(const std::filesystem::path& path);

RawSeries load_series(const std::filesystem::path& path, SeriesLayout layout);
RawSeries load_series(const std::filesystem::path& path);
/// csv holds a single channel: header node_0..node_{N-1}, one row per step.
void save_series(const std::filesystem::path& path, const RawSeries& series, SeriesLayout layout);

/// One mean and standard deviation per channel, shared across nodes.
struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;
};

inline constexpr double kStdFloor = 1e-8;

/// Population statistics; a std below kStdFloor is replaced by 1.
NormStats zscore_fit(const RawSeries& series);
RawSeries zscore_apply(const RawSeries& series, const NormStats& stats);
RawSeries zscore_invert(const RawSeries& series, const NormStats& stats);
/// In-place inverse on a flat buffer whose innermost axis has `channels` entries.
void zscore_invert(std::span<double> values, std::size_t channels, const NormStats& stats);

struct SplitRatios {
  std::size_t train = 6;
  std::size_t val = 2;
  std::size_t test = 2;
};

/// Floor lengths for train and val; test takes the remainder.
std::array<std::size_t, 3> split_lengths(std::size_t length, SplitRatios ratios);

/// Chronological train / val / test. Throws DataError when a part is shorter
/// than `min_length`.
std::array<RawSeries, 3> split_dataset(const RawSeries& series, SplitRatios ratios, std::size_t min_length);

enum class SplitTag { train, val, test };
const char* to_string(SplitTag tag);

/// Stride-1 windows over a normalized series. Window m reads input steps
/// [m, m + P) and target steps [m + P, m + P + Q); the target holds the first
/// `out_channels` channels.
class WindowedDataset {
 public:
  WindowedDataset() = default;
  WindowedDataset(RawSeries normalized, std::size_t history, std::size_t horizon, std::size_t out_channels,
                  NormStats stats, SplitTag tag);

  std::size_t size() const { return count_; }
  std::size_t history() const { return history_; }
  std::size_t horizon() const { return horizon_; }
  std::size_t nodes() const { return series_.nodes; }
  std::size_t in_channels() const { return series_.channels; }
  std::size_t out_channels() const { return out_channels_; }
  const NormStats& stats() const { return stats_; }
  SplitTag tag() const { return tag_; }
  const RawSeries& series() const { return series_; }

  /// [B, P, N, C] and [B, Q, N, C_out] for the given window indices.
  Tensor inputs(std::span<const std::size_t> windows) const;
  Tensor targets(std::span<const std::size_t> windows) const;
  /// Targets in original units, same layout as targets().
  std::vector<double> raw_targets(std::span<const std::size_t> windows) const;

 private:
  RawSeries series_;
  std::size_t history_ = 0;
  std::size_t horizon_ = 0;
  std::size_t out_channels_ = 0;
  std::size_t count_ = 0;
  NormStats stats_;
  SplitTag tag_ = SplitTag::train;
};

/// Windows one split with the given statistics. Throws DataError when the
/// split is shorter than P + Q.
WindowedDataset make_windows(const RawSeries& split, std::size_t history, std::size_t horizon,
                             std::size_t out_channels, const NormStats& stats, SplitTag tag);

struct DatasetSplits {
  WindowedDataset train;
  WindowedDataset val;
  WindowedDataset test;
  NormStats stats;
};

/// Splits first, fits statistics on the train part, then windows each part.
DatasetSplits prepare_datasets(const RawSeries& series, std::size_t history, std::size_t horizon,
                               std::size_t out_channels, SplitRatios ratios);

// Synthetic corpus -------------------------------------------------------------

inline constexpr std::size_t kSynthPeriod = 288;

struct SynthOptions {
  double noise = 1.0;
  double base_level = 50.0;
  double amplitude = 10.0;
  /// Own-state and neighbour-mean coefficients of the diffusion term.
  double persistence = 0.5;
  double coupling = 0.4;
  std::size_t cluster_size = 4;
};

struct SynthCorpus {
  RawSeries series;
  /// Undirected road segments, one entry per pair.
  std::vector<Edge> edges;
};

/// Ring of fully connected clusters. Each node carries a daily sinusoid
/// (period 288, phase set by its cluster) plus a diffusion state
/// e_i(t) = a e_i(t-1) + b mean_{j ~ i} e_j(t-1) + noise * N(0, 1).
SynthCorpus synth_generate(std::size_t n_nodes, std::size_t n_steps, std::uint64_t seed,
                           const SynthOptions& options = {});

}  // namespace afdgcn
