#include "afdgcn/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <vector>

#include "afdgcn/csv.hpp"

namespace afdgcn {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_unsigned(std::string_view key, std::string_view value) {
  T v{};
  auto res = std::from_chars(value.data(), value.data() + value.size(), v);
  if (value.empty() || res.ec != std::errc() || res.ptr != value.data() + value.size()) {
    throw ConfigError("config: " + std::string(key) + " expects a non-negative integer, got '" +
                      std::string(value) + "'");
  }
  return v;
}

double parse_real(std::string_view key, std::string_view value) {
  double v = 0.0;
  auto res = std::from_chars(value.data(), value.data() + value.size(), v);
  if (value.empty() || res.ec != std::errc() || res.ptr != value.data() + value.size() || !std::isfinite(v)) {
    throw ConfigError("config: " + std::string(key) + " expects a number, got '" + std::string(value) + "'");
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config: " + std::string(key) + " expects true or false, got '" + std::string(value) + "'");
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(name, member)                                                                     \
  Field {                                                                                           \
    name, [](RunConfig& c, std::string_view v) { c.member = parse_unsigned<std::size_t>(name, v); }, \
        [](const RunConfig& c) { return std::to_string(c.member); }                                 \
  }
#define REAL_FIELD(name, member)                                                   \
  Field {                                                                         \
    name, [](RunConfig& c, std::string_view v) { c.member = parse_real(name, v); }, \
        [](const RunConfig& c) { return format_double(c.member); }                \
  }
#define BOOL_FIELD(name, member)                                                   \
  Field {                                                                         \
    name, [](RunConfig& c, std::string_view v) { c.member = parse_bool(name, v); }, \
        [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      SIZE_FIELD("n_nodes", model.n_nodes),
      SIZE_FIELD("in_channels", model.in_channels),
      SIZE_FIELD("out_channels", model.out_channels),
      SIZE_FIELD("hidden_dim", model.hidden_dim),
      SIZE_FIELD("embed_dim", model.embed_dim),
      SIZE_FIELD("k_order", model.k_order),
      SIZE_FIELD("n_heads", model.n_heads),
      SIZE_FIELD("horizon", model.horizon),
      SIZE_FIELD("history", model.history),
      SIZE_FIELD("fal_kernel", model.fal_kernel),
      SIZE_FIELD("fal_reduction", model.fal_reduction),
      SIZE_FIELD("ffn_expansion", model.ffn_expansion),
      REAL_FIELD("attention_dropout", model.attention_dropout),
      Field{"pe_variant",
            [](RunConfig& c, std::string_view v) {
              if (v == "paper") {
                c.model.pe_variant = PositionalEncoding::paper;
              } else if (v == "dimension-parity") {
                c.model.pe_variant = PositionalEncoding::dimension_parity;
              } else {
                throw ConfigError("config: pe_variant must be 'paper' or 'dimension-parity'");
              }
            },
            [](const RunConfig& c) { return to_string(c.model.pe_variant); }},
      BOOL_FIELD("use_fal", model.use_fal),
      BOOL_FIELD("use_temporal_attention", model.use_temporal_attention),
      BOOL_FIELD("use_gat", model.use_gat),
      SIZE_FIELD("batch_size", train.batch_size),
      SIZE_FIELD("max_epochs", train.max_epochs),
      REAL_FIELD("lr", train.lr),
      SIZE_FIELD("patience", train.patience),
      Field{"seed", [](RunConfig& c, std::string_view v) { c.train.seed = parse_unsigned<std::uint64_t>("seed", v); },
            [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      REAL_FIELD("grad_clip", train.grad_clip),
      REAL_FIELD("mape_threshold", train.mape_threshold),
      Field{"split",
            [](RunConfig& c, std::string_view v) {
              auto parts = split_fields(v, ':');
              if (parts.size() != 3) throw ConfigError("config: split expects train:val:test, e.g. 6:2:2");
              c.data.split_train = parse_unsigned<std::size_t>("split", parts[0]);
              c.data.split_val = parse_unsigned<std::size_t>("split", parts[1]);
              c.data.split_test = parse_unsigned<std::size_t>("split", parts[2]);
            },
            [](const RunConfig& c) {
              return std::to_string(c.data.split_train) + ":" + std::to_string(c.data.split_val) + ":" +
                     std::to_string(c.data.split_test);
            }},
      REAL_FIELD("adj_sigma", data.adj_sigma),
      REAL_FIELD("adj_threshold", data.adj_threshold),
  };
  return table;
}

#undef SIZE_FIELD
#undef REAL_FIELD
#undef BOOL_FIELD

}  // namespace

std::string to_string(PositionalEncoding variant) {
  return variant == PositionalEncoding::paper ? "paper" : "dimension-parity";
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v < 1) throw ConfigError(std::string("config: ") + name + " must be >= 1");
  };
  positive(n_nodes, "n_nodes");
  positive(in_channels, "in_channels");
  positive(out_channels, "out_channels");
  positive(hidden_dim, "hidden_dim");
  positive(embed_dim, "embed_dim");
  positive(k_order, "k_order");
  positive(n_heads, "n_heads");
  positive(horizon, "horizon");
  positive(history, "history");
  positive(fal_kernel, "fal_kernel");
  positive(fal_reduction, "fal_reduction");
  positive(ffn_expansion, "ffn_expansion");
  if (hidden_dim % n_heads != 0) throw ConfigError("config: hidden_dim must be divisible by n_heads");
  if (fal_kernel % 2 == 0) throw ConfigError("config: fal_kernel must be odd");
  if (n_nodes > 1 && embed_dim >= n_nodes) throw ConfigError("config: embed_dim must be smaller than n_nodes");
  if (!(attention_dropout >= 0.0 && attention_dropout < 1.0)) {
    throw ConfigError("config: attention_dropout must lie in [0, 1)");
  }
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("config: batch_size must be >= 1");
  if (max_epochs < 1) throw ConfigError("config: max_epochs must be >= 1");
  if (patience >= max_epochs) throw ConfigError("config: patience must be smaller than max_epochs");
  if (!(lr >= 0.0)) throw ConfigError("config: lr must be >= 0");
  if (!(grad_clip >= 0.0)) throw ConfigError("config: grad_clip must be >= 0");
  if (!(mape_threshold >= 0.0)) throw ConfigError("config: mape_threshold must be >= 0");
}

void DataConfig::validate() const {
  if (split_train < 1 || split_val < 1 || split_test < 1) throw ConfigError("config: split ratios must be positive");
  if (!(adj_sigma >= 0.0)) throw ConfigError("config: adj_sigma must be >= 0");
  if (!(adj_threshold >= 0.0)) throw ConfigError("config: adj_threshold must be >= 0");
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  data.validate();
}

void apply_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  key = trim(key);
  value = trim(value);
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(config, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + std::string(key) + "'");
}

RunConfig parse_config(std::string_view text) {
  RunConfig config;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    auto end = text.find('\n');
    std::string_view line = text.substr(0, end);
    text = end == std::string_view::npos ? std::string_view{} : text.substr(end + 1);
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    apply_config_value(config, line.substr(0, eq), line.substr(eq + 1));
  }
  return config;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    for (const auto& line : read_lines(path)) text += line + "\n";
  } catch (const DataError&) {
    throw ConfigError("cannot read config file " + path.string());
  }
  return parse_config(text);
}

std::string format_config(const RunConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(config) + "\n";
  return out;
}

}  // namespace afdgcn
