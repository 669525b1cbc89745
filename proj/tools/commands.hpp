#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "afdgcn/config.hpp"
#include "afdgcn/dataset.hpp"
#include "afdgcn/metrics.hpp"
#include "afdgcn/model_check.hpp"
#include "afdgcn/trainer.hpp"

namespace afdgcn::cli {

inline constexpr const char* kToolVersion = "0.1.0";

/// Exit codes of the command-line tool.
enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

struct TrainRequest {
  std::filesystem::path data;
  std::optional<std::filesystem::path> adjacency;
  std::optional<std::filesystem::path> config;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  /// Applied after the config file, e.g. "use_gat=false".
  std::vector<std::string> overrides;
  bool record_timing = false;
};

struct TrainOutcome {
  RunConfig config;
  TrainLog log;
  MetricsReport test;
  MetricsReport baseline;
  double seconds = 0.0;
};

/// Runs the full pipeline and fills the run directory with manifest.json,
/// train_log.csv, checkpoint.bin, metrics.txt and metrics.json. An INCOMPLETE
/// marker exists while the run is in progress and stays behind on failure.
TrainOutcome run_train(const TrainRequest& request, std::ostream* progress);

struct EvaluateOutcome {
  MetricsReport model;
  MetricsReport baseline;
};

EvaluateOutcome run_evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& data,
                             std::size_t batch_size);

/// Writes learned_adjacency.csv, predefined_adjacency.csv (when stored) and,
/// for a node pair, node_series.csv. Returns the learned matrix.
Tensor run_inspect_graph(const std::filesystem::path& checkpoint, const std::filesystem::path& out,
                         const std::optional<std::pair<std::size_t, std::size_t>>& nodes,
                         const std::optional<std::filesystem::path>& data);

/// Model configuration for the gradient check: the file when given, else the
/// built-in N=4, T=4, D=8 preset.
ModelConfig gradcheck_preset(const std::optional<std::filesystem::path>& config);
std::string format_gradcheck(const std::vector<GroupCheck>& rows, double threshold);

inline constexpr double kGradcheckThreshold = 1e-5;

/// Entry point of the `afdgcn` executable.
int run(int argc, char** argv);

}  // namespace afdgcn::cli
