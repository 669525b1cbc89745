#include "afdgcn/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "afdgcn/csv.hpp"
#include "afdgcn/ops.hpp"
#include "afdgcn/optim.hpp"

namespace afdgcn {

namespace {

// Fisher-Yates on raw engine output, so the order does not depend on the
// standard library's shuffle.
void shuffle(std::vector<std::size_t>& order, std::mt19937_64& rng) {
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
}

std::vector<std::vector<double>> copy_values(const std::vector<Tensor>& params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.to_vector());
  return out;
}

void restore_values(std::vector<Tensor>& params, const std::vector<std::vector<double>>& saved) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto dst = params[i].mutable_values();
    std::copy(saved[i].begin(), saved[i].end(), dst.begin());
  }
}

double mean_absolute_error(std::span<const double> a, std::span<const double> b) {
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) total += std::abs(a[i] - b[i]);
  return a.empty() ? 0.0 : total / static_cast<double>(a.size());
}

}  // namespace

std::string TrainLog::to_csv() const {
  std::string out = "epoch,train_loss,val_mae,seconds\n";
  for (const auto& e : epochs) {
    out += std::to_string(e.epoch) + "," + format_double(e.train_loss) + "," + format_double(e.val_mae) + "," +
           format_double(e.seconds) + "\n";
  }
  return out;
}

bool EarlyStopping::update(std::size_t epoch, double score) {
  if (score < best_) {
    best_ = score;
    best_epoch_ = epoch;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

TrainLog train(Model& model, const WindowedDataset& train_set, const WindowedDataset& val_set,
               const TrainConfig& config, const TrainOptions& options) {
  config.validate();
  if (train_set.size() == 0) throw DataError("training split has no windows");
  std::vector<Tensor> params = model.parameter_tensors();
  Adam optimizer(params, AdamOptions{config.lr});
  std::mt19937_64 rng(config.seed + 1);
  EarlyStopping stopper(config.patience);
  std::vector<std::vector<double>> best_values = copy_values(params);
  const std::vector<double> val_truth = truth(val_set);

  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  TrainLog log;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    shuffle(order, rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t first = 0; first < order.size(); first += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - first);
      std::span<const std::size_t> idx(order.data() + first, count);
      optimizer.zero_grad();
      Tensor pred = model.forward(train_set.inputs(idx), ForwardContext{true, &rng, nullptr});
      Tensor loss = smooth_l1_loss(pred, train_set.targets(idx));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("training diverged: loss " + format_double(value) + " at epoch " +
                           std::to_string(epoch) + ", batch " + std::to_string(batches + 1));
      }
      backward(loss);
      if (config.grad_clip > 0.0) clip_grad_norm(params, config.grad_clip);
      optimizer.step();
      loss_sum += value;
      ++batches;
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(batches);
    record.val_mae = mean_absolute_error(predict(model, val_set, config.batch_size), val_truth);
    if (!std::isfinite(record.val_mae)) {
      throw NumericError("training diverged: validation MAE " + format_double(record.val_mae) + " at epoch " +
                         std::to_string(epoch));
    }
    record.best = stopper.update(epoch, record.val_mae);
    if (record.best) best_values = copy_values(params);
    if (options.record_timing) {
      record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    log.epochs.push_back(record);
    if (options.on_epoch) options.on_epoch(record);
    if (stopper.should_stop()) {
      log.stopped_early = true;
      break;
    }
  }
  restore_values(params, best_values);
  log.best_epoch = stopper.best_epoch();
  log.best_val_mae = stopper.best();
  return log;
}

Shape forecast_shape(const WindowedDataset& data) {
  return {data.size(), data.horizon(), data.nodes(), data.out_channels()};
}

std::vector<double> predict(const Model& model, const WindowedDataset& data, std::size_t batch_size) {
  NoGradGuard guard;
  std::vector<double> out;
  out.reserve(shape_numel(forecast_shape(data)));
  std::vector<std::size_t> idx;
  for (std::size_t first = 0; first < data.size(); first += batch_size) {
    idx.resize(std::min(batch_size, data.size() - first));
    std::iota(idx.begin(), idx.end(), first);
    const Tensor pred = model.forward(data.inputs(idx));
    out.insert(out.end(), pred.values().begin(), pred.values().end());
  }
  zscore_invert(out, data.out_channels(), data.stats());
  return out;
}

std::vector<double> truth(const WindowedDataset& data) {
  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  return data.raw_targets(all);
}

MetricsReport evaluate_model(const Model& model, const WindowedDataset& data, std::size_t batch_size,
                             double mape_threshold) {
  return evaluate_metrics(predict(model, data, batch_size), truth(data), forecast_shape(data), mape_threshold);
}

std::vector<double> historical_average(const WindowedDataset& data) {
  const std::size_t p = data.history(), q = data.horizon(), n = data.nodes(), co = data.out_channels();
  const RawSeries& s = data.series();
  std::vector<double> out;
  out.reserve(data.size() * q * n * co);
  std::vector<double> means(n * co);
  for (std::size_t m = 0; m < data.size(); ++m) {
    for (std::size_t node = 0; node < n; ++node)
      for (std::size_t c = 0; c < co; ++c) {
        double total = 0.0;
        for (std::size_t t = m; t < m + p; ++t) total += s.at(t, node, c);
        means[node * co + c] = total / static_cast<double>(p);
      }
    for (std::size_t step = 0; step < q; ++step) out.insert(out.end(), means.begin(), means.end());
  }
  zscore_invert(out, co, data.stats());
  return out;
}

}  // namespace afdgcn
