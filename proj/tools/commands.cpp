#include "commands.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <memory>
#include <sstream>

#include <json.hpp>

#include "afdgcn/checkpoint.hpp"
#include "afdgcn/csv.hpp"
#include "afdgcn/graph.hpp"
#include "afdgcn/tensor.hpp"

namespace afdgcn::cli {

namespace {

const char* kMarker = "INCOMPLETE";

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

Tensor load_adjacency(const std::filesystem::path& path, std::size_t n_nodes, const DataConfig& data) {
  const auto edges = load_edges_csv(path);
  if (edge_node_count(edges) > n_nodes) {
    throw DataError(path.string() + ": edge list names node " + std::to_string(edge_node_count(edges) - 1) +
                    " but the series has " + std::to_string(n_nodes) + " nodes");
  }
  const double sigma = data.adj_sigma > 0.0 ? data.adj_sigma : distance_std(edges);
  if (!(sigma > 0.0)) throw DataError(path.string() + ": cannot derive a kernel width from constant distances");
  return gaussian_kernel_adjacency(edges, n_nodes, sigma, data.adj_threshold);
}

void match_series(ModelConfig& model, const RawSeries& series) {
  if (model.n_nodes == 0) model.n_nodes = series.nodes;
  if (model.n_nodes != series.nodes) {
    throw DataError("config declares n_nodes = " + std::to_string(model.n_nodes) + " but the series has " +
                    std::to_string(series.nodes) + " nodes");
  }
  if (model.in_channels != series.channels) {
    throw DataError("config declares in_channels = " + std::to_string(model.in_channels) +
                    " but the series has " + std::to_string(series.channels) + " channels");
  }
}

SplitRatios ratios_of(const DataConfig& data) { return {data.split_train, data.split_val, data.split_test}; }

nlohmann::ordered_json config_json(const RunConfig& config) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  std::istringstream lines(format_config(config));
  for (std::string line; std::getline(lines, line);) {
    auto eq = line.find(" = ");
    if (eq != std::string::npos) j[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return j;
}

std::map<std::string, std::string> stats_meta(const NormStats& stats) {
  std::map<std::string, std::string> meta;
  for (std::size_t c = 0; c < stats.mean.size(); ++c) {
    meta["norm_mean_" + std::to_string(c)] = format_double(stats.mean[c]);
    meta["norm_std_" + std::to_string(c)] = format_double(stats.std[c]);
  }
  return meta;
}

NormStats stats_from_meta(const std::map<std::string, std::string>& meta, std::size_t channels) {
  NormStats stats;
  for (std::size_t c = 0; c < channels; ++c) {
    auto mean = meta.find("norm_mean_" + std::to_string(c));
    auto std = meta.find("norm_std_" + std::to_string(c));
    if (mean == meta.end() || std == meta.end()) {
      throw DataError("checkpoint has no normalization statistics for channel " + std::to_string(c));
    }
    stats.mean.push_back(parse_double(mean->second, "checkpoint norm_mean"));
    stats.std.push_back(parse_double(std->second, "checkpoint norm_std"));
  }
  return stats;
}

std::string format_epoch(const EpochRecord& e) {
  char line[160];
  std::snprintf(line, sizeof(line), "epoch %4zu  train_loss %.6f  val_mae %.4f%s\n", e.epoch, e.train_loss,
                e.val_mae, e.best ? "  *" : "");
  return line;
}

std::string format_breakdown(const Model& model) {
  std::string out = "parameters: " + std::to_string(model.count_parameters()) + "\n";
  for (const auto& part : model.parameter_breakdown()) {
    out += "  " + part.module + ": " + std::to_string(part.count) + "\n";
  }
  return out;
}

}  // namespace

std::string sha256_file(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &length) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

TrainOutcome run_train(const TrainRequest& request, std::ostream* progress) {
  const auto started = std::chrono::steady_clock::now();
  TrainOutcome outcome;
  RunConfig& config = outcome.config;
  if (request.config) config = load_config(*request.config);
  for (const auto& item : request.overrides) {
    auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + item + "' is not key=value");
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t") + 1);
      return s;
    };
    apply_config_value(config, trim(item.substr(0, eq)), trim(item.substr(eq + 1)));
  }
  if (request.seed) config.train.seed = *request.seed;
  if (config.model.use_gat && !request.adjacency) {
    throw ConfigError("use_gat = true needs a pre-defined graph: pass --adj or set use_gat = false");
  }

  const RawSeries series = load_series(request.data);
  match_series(config.model, series);
  config.validate();
  Tensor adjacency;
  if (request.adjacency) adjacency = load_adjacency(*request.adjacency, config.model.n_nodes, config.data);

  std::filesystem::create_directories(request.out);
  const auto marker = request.out / kMarker;
  write_text(marker, "run started; removed when every artifact is written\n");

  nlohmann::ordered_json manifest;
  manifest["tool"] = "afdgcn";
  manifest["tool_version"] = kToolVersion;
  manifest["seed"] = config.train.seed;
  manifest["config"] = config_json(config);
  nlohmann::ordered_json inputs;
  inputs["data"] = {{"path", request.data.string()}, {"sha256", sha256_file(request.data)}};
  if (request.adjacency) {
    inputs["adjacency"] = {{"path", request.adjacency->string()}, {"sha256", sha256_file(*request.adjacency)}};
  }
  if (request.config) inputs["config"] = {{"path", request.config->string()}, {"sha256", sha256_file(*request.config)}};
  manifest["inputs"] = inputs;

  const DatasetSplits data = prepare_datasets(series, config.model.history, config.model.horizon,
                                              config.model.out_channels, ratios_of(config.data));
  Model model(config.model, adjacency, config.train.seed);
  nlohmann::ordered_json params;
  params["total"] = model.count_parameters();
  for (const auto& part : model.parameter_breakdown()) params[part.module] = part.count;
  manifest["parameters"] = params;
  manifest["windows"] = {{"train", data.train.size()}, {"val", data.val.size()}, {"test", data.test.size()}};
  write_text(request.out / "manifest.json", manifest.dump(2) + "\n");
  if (progress) *progress << format_breakdown(model);

  TrainOptions options;
  options.record_timing = request.record_timing;
  if (progress) options.on_epoch = [progress](const EpochRecord& e) { *progress << format_epoch(e) << std::flush; };
  outcome.log = train(model, data.train, data.val, config.train, options);
  write_text(request.out / "train_log.csv", outcome.log.to_csv());

  auto meta = stats_meta(data.stats);
  meta["best_epoch"] = std::to_string(outcome.log.best_epoch);
  meta["best_val_mae"] = format_double(outcome.log.best_val_mae);
  write_checkpoint(request.out / "checkpoint.bin", snapshot(model, config, meta));

  outcome.test = evaluate_model(model, data.test, config.train.batch_size, config.train.mape_threshold);
  outcome.baseline = evaluate_metrics(historical_average(data.test), truth(data.test), forecast_shape(data.test),
                                      config.train.mape_threshold);
  write_text(request.out / "metrics.txt", format_report(outcome.test, "test split") + "\n" +
                                              format_report(outcome.baseline, "historical average (test split)"));
  nlohmann::ordered_json metrics;
  metrics["best_epoch"] = outcome.log.best_epoch;
  metrics["test"] = nlohmann::ordered_json::parse(report_json(outcome.test));
  metrics["historical_average"] = nlohmann::ordered_json::parse(report_json(outcome.baseline));
  write_text(request.out / "metrics.json", metrics.dump(2) + "\n");
  std::filesystem::remove(marker);
  outcome.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return outcome;
}

EvaluateOutcome run_evaluate(const std::filesystem::path& checkpoint, const std::filesystem::path& data_path,
                             std::size_t batch_size) {
  const CheckpointData stored = read_checkpoint(checkpoint);
  const RunConfig& config = stored.config;
  const RawSeries series = load_series(data_path);
  if (series.nodes != config.model.n_nodes || series.channels != config.model.in_channels) {
    throw DataError("checkpoint expects " + std::to_string(config.model.n_nodes) + " nodes x " +
                    std::to_string(config.model.in_channels) + " channels, " + data_path.string() + " has " +
                    std::to_string(series.nodes) + " x " + std::to_string(series.channels));
  }
  Model model = restore_model(stored);
  const NormStats stats = stats_from_meta(stored.meta, series.channels);
  auto parts = split_dataset(series, ratios_of(config.data), config.model.history + config.model.horizon);
  const WindowedDataset test = make_windows(parts[2], config.model.history, config.model.horizon,
                                            config.model.out_channels, stats, SplitTag::test);
  EvaluateOutcome out;
  out.model = evaluate_model(model, test, batch_size, config.train.mape_threshold);
  out.baseline = evaluate_metrics(historical_average(test), truth(test), forecast_shape(test),
                                  config.train.mape_threshold);
  return out;
}

Tensor run_inspect_graph(const std::filesystem::path& checkpoint, const std::filesystem::path& out,
                         const std::optional<std::pair<std::size_t, std::size_t>>& nodes,
                         const std::optional<std::filesystem::path>& data) {
  const CheckpointData stored = read_checkpoint(checkpoint);
  const std::size_t n = stored.config.model.n_nodes;
  if (nodes && (nodes->first >= n || nodes->second >= n)) {
    throw std::out_of_range("node index out of range: the checkpoint has " + std::to_string(n) + " nodes");
  }
  if (nodes && !data) throw std::invalid_argument("--nodes needs --data to export the node series");
  Model model = restore_model(stored);
  std::filesystem::create_directories(out);
  Tensor learned = model.adaptive_adjacency();
  save_matrix_csv(out / "learned_adjacency.csv", learned);
  if (model.predefined_adjacency().defined()) {
    save_matrix_csv(out / "predefined_adjacency.csv", model.predefined_adjacency());
  }
  if (nodes) {
    const RawSeries series = load_series(*data);
    if (series.nodes != n) {
      throw DataError(data->string() + " has " + std::to_string(series.nodes) + " nodes, the checkpoint " +
                      std::to_string(n));
    }
    const auto [a, b] = *nodes;
    std::string text = "step,node_" + std::to_string(a) + ",node_" + std::to_string(b) + "\n";
    for (std::size_t t = 0; t < series.length; ++t) {
      text += std::to_string(t) + "," + format_double(series.at(t, a, 0)) + "," + format_double(series.at(t, b, 0)) +
              "\n";
    }
    write_text(out / "node_series.csv", text);
  }
  return learned;
}

ModelConfig gradcheck_preset(const std::optional<std::filesystem::path>& config) {
  if (config) {
    RunConfig run = load_config(*config);
    run.model.validate();
    return run.model;
  }
  ModelConfig preset;
  preset.n_nodes = 4;
  preset.history = 4;
  preset.horizon = 4;
  preset.hidden_dim = 8;
  preset.n_heads = 2;
  preset.embed_dim = 2;
  return preset;
}

std::string format_gradcheck(const std::vector<GroupCheck>& rows, double threshold) {
  std::string out;
  char line[200];
  std::snprintf(line, sizeof(line), "%-22s %8s %14s  %-6s %s\n", "group", "coords", "max_rel_error", "result",
                "worst_parameter");
  out += line;
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%-22s %8zu %14.3e  %-6s %s\n", r.group.c_str(), r.coordinates, r.max_rel_error,
                  r.max_rel_error < threshold ? "PASS" : "FAIL", r.worst_parameter.c_str());
    out += line;
  }
  return out;
}

namespace {

std::pair<std::size_t, std::size_t> parse_node_pair(const std::string& text) {
  const auto fields = split_fields(text);
  if (fields.size() != 2) throw CLI::ValidationError("--nodes", "expected two indices as i,j");
  auto index = [&](std::string_view f) {
    const long long v = parse_integer(f, "--nodes");
    if (v < 0) throw std::out_of_range("node index out of range: " + std::string(f));
    return static_cast<std::size_t>(v);
  };
  return {index(fields[0]), index(fields[1])};
}

}  // namespace

int run(int argc, char** argv) {
  retain_freed_memory();
  CLI::App app{"Adaptive-graph spatio-temporal traffic forecaster"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("afdgcn ") + kToolVersion);

  TrainRequest train_req;
  std::string adj, config_path;
  std::uint64_t seed = 0;
  bool quiet = false;
  auto* train_cmd = app.add_subcommand("train", "Train on a series and write a run directory");
  train_cmd->add_option("--data", train_req.data, "Series file (csv or STDS binary)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--adj", adj, "Edge list CSV with header from,to,cost")->check(CLI::ExistingFile);
  train_cmd->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train_req.out, "Run directory")->required();
  auto* seed_opt = train_cmd->add_option("--seed", seed, "Seed for initialization, shuffling and dropout");
  train_cmd->add_option("--set", train_req.overrides, "Config override key=value (repeatable)");
  train_cmd->add_flag("--record-timing", train_req.record_timing, "Write wall-clock seconds to the train log");
  train_cmd->add_flag("--quiet", quiet, "No per-epoch progress");

  std::string ckpt, data_path;
  std::size_t batch = 64;
  std::string json_out;
  auto* eval_cmd = app.add_subcommand("evaluate", "Metrics of a checkpoint on the test split");
  eval_cmd->add_option("--checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", data_path)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--batch-size", batch)->check(CLI::PositiveNumber);
  eval_cmd->add_option("--json", json_out, "Also write the reports as JSON");

  std::string inspect_out, node_pair, inspect_data;
  auto* inspect_cmd = app.add_subcommand("inspect-graph", "Export learned and pre-defined adjacency as CSV");
  inspect_cmd->add_option("--checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  inspect_cmd->add_option("--out", inspect_out)->required();
  inspect_cmd->add_option("--nodes", node_pair, "Export the series of two nodes, as i,j");
  inspect_cmd->add_option("--data", inspect_data, "Series file for --nodes")->check(CLI::ExistingFile);

  std::string gc_config, fault_op;
  double fault_scale = 2.0;
  std::uint64_t gc_seed = 0;
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every parameter group");
  gc_cmd->add_option("--config", gc_config, "Model preset (default N=4, T=4, D=8)")->check(CLI::ExistingFile);
  gc_cmd->add_option("--seed", gc_seed);
  gc_cmd->add_option("--fault-op", fault_op)->group("");
  gc_cmd->add_option("--fault-scale", fault_scale)->group("");

  std::size_t synth_nodes = 20, synth_steps = 2880;
  std::uint64_t synth_seed = 0;
  double synth_noise = 1.0;
  std::string synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic ring-of-clusters corpus");
  synth_cmd->add_option("--nodes", synth_nodes)->check(CLI::Range(2, 100000));
  synth_cmd->add_option("--steps", synth_steps)->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", synth_seed);
  synth_cmd->add_option("--noise", synth_noise);
  synth_cmd->add_option("--out", synth_out)->required();

  std::string params_config;
  std::size_t params_nodes = 0;
  auto* params_cmd = app.add_subcommand("params", "Parameter count by module");
  params_cmd->add_option("--config", params_config)->check(CLI::ExistingFile);
  params_cmd->add_option("--nodes", params_nodes, "Overrides n_nodes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (train_cmd->parsed()) {
      if (!adj.empty()) train_req.adjacency = adj;
      if (!config_path.empty()) train_req.config = config_path;
      if (*seed_opt) train_req.seed = seed;
      auto outcome = run_train(train_req, quiet ? nullptr : &std::cerr);
      std::cout << format_report(outcome.test, "test split") << "\n"
                << format_report(outcome.baseline, "historical average (test split)")
                << "best epoch " << outcome.log.best_epoch << ", run directory " << train_req.out.string() << "\n";
    } else if (eval_cmd->parsed()) {
      auto outcome = run_evaluate(ckpt, data_path, batch);
      std::cout << format_report(outcome.model, "model (test split)") << "\n"
                << format_report(outcome.baseline, "historical average (test split)");
      if (!json_out.empty()) {
        nlohmann::ordered_json j;
        j["model"] = nlohmann::ordered_json::parse(report_json(outcome.model));
        j["historical_average"] = nlohmann::ordered_json::parse(report_json(outcome.baseline));
        write_text(json_out, j.dump(2) + "\n");
      }
    } else if (inspect_cmd->parsed()) {
      std::optional<std::pair<std::size_t, std::size_t>> nodes;
      if (!node_pair.empty()) nodes = parse_node_pair(node_pair);
      std::optional<std::filesystem::path> series;
      if (!inspect_data.empty()) series = inspect_data;
      run_inspect_graph(ckpt, inspect_out, nodes, series);
      std::cout << "wrote " << inspect_out << "\n";
    } else if (gc_cmd->parsed()) {
      std::optional<std::filesystem::path> preset;
      if (!gc_config.empty()) preset = gc_config;
      const ModelConfig model = gradcheck_preset(preset);
      if (!fault_op.empty()) set_gradient_fault(fault_op, fault_scale);
      const auto rows = check_model_gradients(model, 2, gc_seed);
      std::cout << format_gradcheck(rows, kGradcheckThreshold);
      for (const auto& r : rows) {
        if (!(r.max_rel_error < kGradcheckThreshold)) return kNumeric;
      }
    } else if (synth_cmd->parsed()) {
      SynthOptions options;
      options.noise = synth_noise;
      auto corpus = synth_generate(synth_nodes, synth_steps, synth_seed, options);
      std::filesystem::create_directories(synth_out);
      save_series(std::filesystem::path(synth_out) / "series.csv", corpus.series, SeriesLayout::csv);
      save_edges_csv(std::filesystem::path(synth_out) / "edges.csv", corpus.edges);
      std::cout << "wrote " << synth_nodes << " nodes x " << synth_steps << " steps to " << synth_out << "\n";
    } else if (params_cmd->parsed()) {
      RunConfig config = params_config.empty() ? RunConfig{} : load_config(params_config);
      if (params_nodes) config.model.n_nodes = params_nodes;
      if (config.model.n_nodes == 0) throw ConfigError("n_nodes is 0: pass --nodes or set it in the config");
      Tensor graph = config.model.use_gat ? ring_adjacency(config.model.n_nodes) : Tensor();
      std::cout << format_breakdown(Model(config.model, graph, 0));
    }
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  return kOk;
}

}  // namespace afdgcn::cli
