#include "afdgcn/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

#include <json.hpp>

namespace afdgcn {

namespace {

struct Accumulator {
  double abs_sum = 0.0;
  double sq_sum = 0.0;
  double pct_sum = 0.0;
  std::size_t count = 0;
  std::size_t pct_count = 0;
  std::size_t masked = 0;

  void add(double p, double t, double threshold) {
    const double d = p - t;
    abs_sum += std::abs(d);
    sq_sum += d * d;
    ++count;
    if (std::abs(t) > threshold) {
      pct_sum += std::abs(d / t);
      ++pct_count;
    } else {
      ++masked;
    }
  }

  ErrorSummary summary() const {
    ErrorSummary s;
    s.count = count;
    s.masked = masked;
    if (count) {
      s.mae = abs_sum / static_cast<double>(count);
      s.rmse = std::sqrt(sq_sum / static_cast<double>(count));
    }
    if (pct_count) s.mape = 100.0 * pct_sum / static_cast<double>(pct_count);
    return s;
  }
};

nlohmann::ordered_json summary_json(const ErrorSummary& s) {
  nlohmann::ordered_json j;
  j["mae"] = s.mae;
  j["rmse"] = s.rmse;
  j["mape"] = s.mape ? nlohmann::ordered_json(*s.mape) : nlohmann::ordered_json(nullptr);
  j["count"] = s.count;
  j["masked"] = s.masked;
  return j;
}

}  // namespace

MetricsReport evaluate_metrics(std::span<const double> pred, std::span<const double> truth, const Shape& shape,
                               double mape_threshold) {
  if (shape.size() < 2) throw ShapeError("metrics: shape must be [M, Q, ...], got " + shape_str(shape));
  if (pred.size() != truth.size() || pred.size() != shape_numel(shape)) {
    throw ShapeError("metrics: prediction has " + std::to_string(pred.size()) + " values, truth " +
                     std::to_string(truth.size()) + ", shape " + shape_str(shape));
  }
  const std::size_t windows = shape[0], horizon = shape[1];
  const std::size_t inner = horizon ? shape_numel(shape) / (windows * horizon) : 0;
  std::vector<Accumulator> per_step(horizon);
  Accumulator all;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::size_t q = (i / inner) % horizon;
    per_step[q].add(pred[i], truth[i], mape_threshold);
    all.add(pred[i], truth[i], mape_threshold);
  }
  MetricsReport report;
  for (const auto& acc : per_step) report.steps.push_back(acc.summary());
  report.average = all.summary();
  report.samples = windows;
  return report;
}

std::string format_report(const MetricsReport& report, const std::string& title) {
  std::string out = title + " (" + std::to_string(report.samples) + " windows)\n";
  char line[128];
  std::snprintf(line, sizeof(line), "%-6s %12s %12s %12s\n", "step", "MAE", "RMSE", "MAPE(%)");
  out += line;
  auto row = [&](const std::string& label, const ErrorSummary& s) {
    char mape[32];
    if (s.mape) {
      std::snprintf(mape, sizeof(mape), "%12.4f", *s.mape);
    } else {
      std::snprintf(mape, sizeof(mape), "%12s", "undefined");
    }
    std::snprintf(line, sizeof(line), "%-6s %12.4f %12.4f %s\n", label.c_str(), s.mae, s.rmse, mape);
    out += line;
  };
  for (std::size_t q = 0; q < report.steps.size(); ++q) row(std::to_string(q + 1), report.steps[q]);
  row("avg", report.average);
  return out;
}

std::string report_json(const MetricsReport& report, int indent) {
  nlohmann::ordered_json j;
  j["samples"] = report.samples;
  j["steps"] = nlohmann::ordered_json::array();
  for (const auto& s : report.steps) j["steps"].push_back(summary_json(s));
  j["average"] = summary_json(report.average);
  return j.dump(indent);
}

}  // namespace afdgcn
