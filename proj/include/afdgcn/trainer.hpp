#pragma once

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "afdgcn/config.hpp"
#include "afdgcn/dataset.hpp"
#include "afdgcn/metrics.hpp"
#include "afdgcn/model.hpp"

namespace afdgcn {

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_mae = 0.0;
  double seconds = 0.0;
  bool best = false;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_mae = std::numeric_limits<double>::infinity();
  bool stopped_early = false;

  /// `epoch,train_loss,val_mae,seconds`, LF line endings.
  std::string to_csv() const;
};

/// Tracks the best validation score. An epoch improves only when strictly
/// below the best so far; training stops once `patience` epochs in a row
/// fail to improve.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {}

  /// Returns true when `score` is a new best.
  bool update(std::size_t epoch, double score);
  bool should_stop() const { return stale_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t stale_ = 0;
  std::size_t best_epoch_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

struct TrainOptions {
  /// Fill EpochRecord::seconds with wall-clock time (0 otherwise, which keeps
  /// logs byte-identical across runs).
  bool record_timing = false;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// Adam on smooth-L1 in normalized space with a seeded per-epoch shuffle,
/// validation MAE in original units after every epoch, early stopping, and
/// restoration of the best parameters. Throws NumericError when the loss
/// becomes non-finite.
TrainLog train(Model& model, const WindowedDataset& train_set, const WindowedDataset& val_set,
               const TrainConfig& config, const TrainOptions& options = {});

/// Forecasts for every window, inverted to original units: [M, Q, N, C_out].
std::vector<double> predict(const Model& model, const WindowedDataset& data, std::size_t batch_size);

/// Truth for every window in original units, same layout as predict().
std::vector<double> truth(const WindowedDataset& data);

/// Shape of predict() output for `data`.
Shape forecast_shape(const WindowedDataset& data);

MetricsReport evaluate_model(const Model& model, const WindowedDataset& data, std::size_t batch_size,
                             double mape_threshold);

/// Baseline that repeats, for every horizon step, each node's mean over the
/// input window. Original units, same layout as predict().
std::vector<double> historical_average(const WindowedDataset& data);

}  // namespace afdgcn
