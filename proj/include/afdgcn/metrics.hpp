#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "afdgcn/tensor.hpp"

namespace afdgcn {

struct ErrorSummary {
  double mae = 0.0;
  double rmse = 0.0;
  /// Percent; empty when every truth value was masked.
  std::optional<double> mape;
  std::size_t count = 0;
  /// Entries left out of MAPE because |truth| <= threshold.
  std::size_t masked = 0;
};

struct MetricsReport {
  std::vector<ErrorSummary> steps;
  ErrorSummary average;
  /// Number of forecast windows.
  std::size_t samples = 0;
};

/// `pred` and `truth` are [M, Q, ...] in original units. Per-step rows cover
/// horizon step q across all windows; the average row covers every entry.
MetricsReport evaluate_metrics(std::span<const double> pred, std::span<const double> truth, const Shape& shape,
                               double mape_threshold = 0.0);

/// Table with one row per horizon step plus an "avg" row.
std::string format_report(const MetricsReport& report, const std::string& title);
/// JSON object with "steps", "average" and "samples"; an undefined MAPE is null.
std::string report_json(const MetricsReport& report, int indent = 2);

}  // namespace afdgcn
