#include "afdgcn/dataset.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>

#include "afdgcn/csv.hpp"

namespace afdgcn {

namespace {

constexpr char kMagic[4] = {'S', 'T', 'D', 'S'};

std::vector<std::string> default_channel_names(std::size_t channels) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < channels; ++c) names.push_back("channel_" + std::to_string(c));
  return names;
}

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename U>
U get_le(const std::string& bytes, std::size_t& pos, const std::string& source) {
  if (bytes.size() - pos < sizeof(U)) throw DataError(source + ": truncated series file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    v |= static_cast<U>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  }
  pos += sizeof(U);
  return v;
}

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

RawSeries load_csv(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  if (lines.empty()) throw DataError(path.string() + ": empty file");
  const auto header = split_fields(lines[0]);
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] != "node_" + std::to_string(i)) {
      throw DataError(path.string() + ": header field " + std::to_string(i + 1) + " is '" + std::string(header[i]) +
                      "', expected node_" + std::to_string(i));
    }
  }
  RawSeries s;
  s.nodes = header.size();
  s.channels = 1;
  s.channel_names = default_channel_names(1);
  for (std::size_t row = 1; row < lines.size(); ++row) {
    if (lines[row].empty() && row + 1 == lines.size()) break;
    const auto fields = split_fields(lines[row]);
    if (fields.size() != s.nodes) {
      throw DataError(path.string() + ": line " + std::to_string(row + 1) + " has " + std::to_string(fields.size()) +
                      " fields, header declares " + std::to_string(s.nodes) + " nodes");
    }
    for (auto f : fields) s.values.push_back(parse_double(f, path.string() + " line " + std::to_string(row + 1)));
  }
  s.length = s.values.size() / std::max<std::size_t>(s.nodes, 1);
  s.validate();
  return s;
}

RawSeries load_binary(const std::filesystem::path& path) {
  const std::string bytes = read_bytes(path);
  const std::string source = path.string();
  if (bytes.size() < sizeof(kMagic) || bytes.compare(0, sizeof(kMagic), kMagic, sizeof(kMagic)) != 0) {
    throw DataError(source + ": missing STDS magic");
  }
  std::size_t pos = sizeof(kMagic);
  RawSeries s;
  s.length = get_le<std::uint32_t>(bytes, pos, source);
  s.nodes = get_le<std::uint32_t>(bytes, pos, source);
  s.channels = get_le<std::uint32_t>(bytes, pos, source);
  s.channel_names = default_channel_names(s.channels);
  const std::size_t n = s.length * s.nodes * s.channels;
  if ((bytes.size() - pos) / 8 < n) throw DataError(source + ": truncated series file");
  s.values.resize(n);
  for (auto& v : s.values) v = std::bit_cast<double>(get_le<std::uint64_t>(bytes, pos, source));
  if (pos != bytes.size()) throw DataError(source + ": trailing bytes after the declared data");
  s.validate();
  return s;
}

}  // namespace

RawSeries RawSeries::segment(std::size_t start, std::size_t count) const {
  if (start + count > length) throw std::out_of_range("series segment past the end");
  RawSeries out;
  out.length = count;
  out.nodes = nodes;
  out.channels = channels;
  out.channel_names = channel_names;
  const std::size_t step = nodes * channels;
  out.values.assign(values.begin() + static_cast<std::ptrdiff_t>(start * step),
                    values.begin() + static_cast<std::ptrdiff_t>((start + count) * step));
  return out;
}

void RawSeries::validate() const {
  if (values.size() != length * nodes * channels) {
    throw DataError("series holds " + std::to_string(values.size()) + " values, expected " +
                    std::to_string(length) + " x " + std::to_string(nodes) + " x " + std::to_string(channels));
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      const std::size_t step = nodes * channels;
      throw DataError("non-finite value at step " + std::to_string(i / step) + ", node " +
                      std::to_string((i % step) / channels));
    }
  }
}

SeriesLayout detect_layout(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char head[sizeof(kMagic)] = {};
  in.read(head, sizeof(head));
  return in.gcount() == sizeof(head) && std::equal(head, head + sizeof(head), kMagic) ? SeriesLayout::flat_binary
                                                                                       : SeriesLayout::csv;
}

RawSeries load_series(const std::filesystem::path& path, SeriesLayout layout) {
  return layout == SeriesLayout::csv ? load_csv(path) : load_binary(path);
}

RawSeries load_series(const std::filesystem::path& path) { return load_series(path, detect_layout(path)); }

void save_series(const std::filesystem::path& path, const RawSeries& series, SeriesLayout layout) {
  series.validate();
  std::string out;
  if (layout == SeriesLayout::csv) {
    if (series.channels != 1) throw DataError("csv layout holds one channel, series has " +
                                              std::to_string(series.channels));
    for (std::size_t n = 0; n < series.nodes; ++n) out += (n ? ",node_" : "node_") + std::to_string(n);
    out += '\n';
    for (std::size_t t = 0; t < series.length; ++t) {
      for (std::size_t n = 0; n < series.nodes; ++n) {
        if (n) out += ',';
        out += format_double(series.at(t, n, 0));
      }
      out += '\n';
    }
  } else {
    out.assign(kMagic, sizeof(kMagic));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(series.length));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(series.nodes));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(series.channels));
    for (double v : series.values) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  write_text(path, out);
}

NormStats zscore_fit(const RawSeries& series) {
  NormStats stats;
  stats.mean.assign(series.channels, 0.0);
  stats.std.assign(series.channels, 0.0);
  const std::size_t count = series.length * series.nodes;
  if (count == 0) throw DataError("cannot fit statistics on an empty series");
  for (std::size_t i = 0; i < series.values.size(); ++i) stats.mean[i % series.channels] += series.values[i];
  for (auto& m : stats.mean) m /= static_cast<double>(count);
  for (std::size_t i = 0; i < series.values.size(); ++i) {
    const double d = series.values[i] - stats.mean[i % series.channels];
    stats.std[i % series.channels] += d * d;
  }
  for (auto& s : stats.std) {
    s = std::sqrt(s / static_cast<double>(count));
    if (s < kStdFloor) s = 1.0;
  }
  return stats;
}

namespace {

void check_stats(const NormStats& stats, std::size_t channels) {
  if (stats.mean.size() < channels || stats.std.size() < channels) {
    throw std::invalid_argument("normalization statistics cover " + std::to_string(stats.mean.size()) +
                                " channels, data has " + std::to_string(channels));
  }
}

}  // namespace

RawSeries zscore_apply(const RawSeries& series, const NormStats& stats) {
  check_stats(stats, series.channels);
  RawSeries out = series;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const std::size_t c = i % series.channels;
    out.values[i] = (out.values[i] - stats.mean[c]) / stats.std[c];
  }
  return out;
}

RawSeries zscore_invert(const RawSeries& series, const NormStats& stats) {
  RawSeries out = series;
  zscore_invert(out.values, out.channels, stats);
  return out;
}

void zscore_invert(std::span<double> values, std::size_t channels, const NormStats& stats) {
  check_stats(stats, channels);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::size_t c = i % channels;
    values[i] = values[i] * stats.std[c] + stats.mean[c];
  }
}

std::array<std::size_t, 3> split_lengths(std::size_t length, SplitRatios ratios) {
  const std::size_t total = ratios.train + ratios.val + ratios.test;
  if (ratios.train == 0 || ratios.val == 0 || ratios.test == 0) {
    throw std::invalid_argument("split ratios must be positive");
  }
  const std::size_t train = length * ratios.train / total;
  const std::size_t val = length * ratios.val / total;
  return {train, val, length - train - val};
}

std::array<RawSeries, 3> split_dataset(const RawSeries& series, SplitRatios ratios, std::size_t min_length) {
  const auto lengths = split_lengths(series.length, ratios);
  const char* names[] = {"train", "val", "test"};
  for (std::size_t i = 0; i < 3; ++i) {
    if (lengths[i] < min_length) {
      throw DataError(std::string(names[i]) + " split has " + std::to_string(lengths[i]) +
                      " steps, windows need at least " + std::to_string(min_length));
    }
  }
  return {series.segment(0, lengths[0]), series.segment(lengths[0], lengths[1]),
          series.segment(lengths[0] + lengths[1], lengths[2])};
}

const char* to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::train:
      return "train";
    case SplitTag::val:
      return "val";
    case SplitTag::test:
      return "test";
  }
  return "?";
}

WindowedDataset::WindowedDataset(RawSeries normalized, std::size_t history, std::size_t horizon,
                                 std::size_t out_channels, NormStats stats, SplitTag tag)
    : series_(std::move(normalized)),
      history_(history),
      horizon_(horizon),
      out_channels_(out_channels),
      stats_(std::move(stats)),
      tag_(tag) {
  if (history == 0 || horizon == 0) throw std::invalid_argument("history and horizon must be positive");
  if (out_channels == 0 || out_channels > series_.channels) {
    throw std::invalid_argument("out_channels must be in [1, " + std::to_string(series_.channels) + "]");
  }
  if (series_.length < history + horizon) {
    throw DataError(std::string(to_string(tag)) + " split has " + std::to_string(series_.length) +
                    " steps, windows need at least " + std::to_string(history + horizon));
  }
  count_ = series_.length - history - horizon + 1;
}

Tensor WindowedDataset::inputs(std::span<const std::size_t> windows) const {
  const std::size_t block = history_ * series_.nodes * series_.channels;
  const std::size_t step = series_.nodes * series_.channels;
  std::vector<double> out;
  out.reserve(windows.size() * block);
  for (auto m : windows) {
    if (m >= count_) throw std::out_of_range("window index " + std::to_string(m) + " out of range");
    auto first = series_.values.begin() + static_cast<std::ptrdiff_t>(m * step);
    out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(block));
  }
  return Tensor({windows.size(), history_, series_.nodes, series_.channels}, std::move(out));
}

Tensor WindowedDataset::targets(std::span<const std::size_t> windows) const {
  std::vector<double> out;
  out.reserve(windows.size() * horizon_ * series_.nodes * out_channels_);
  for (auto m : windows) {
    if (m >= count_) throw std::out_of_range("window index " + std::to_string(m) + " out of range");
    for (std::size_t q = 0; q < horizon_; ++q)
      for (std::size_t n = 0; n < series_.nodes; ++n)
        for (std::size_t c = 0; c < out_channels_; ++c) out.push_back(series_.at(m + history_ + q, n, c));
  }
  return Tensor({windows.size(), horizon_, series_.nodes, out_channels_}, std::move(out));
}

std::vector<double> WindowedDataset::raw_targets(std::span<const std::size_t> windows) const {
  std::vector<double> out = targets(windows).to_vector();
  zscore_invert(out, out_channels_, stats_);
  return out;
}

WindowedDataset make_windows(const RawSeries& split, std::size_t history, std::size_t horizon,
                             std::size_t out_channels, const NormStats& stats, SplitTag tag) {
  return WindowedDataset(zscore_apply(split, stats), history, horizon, out_channels, stats, tag);
}

DatasetSplits prepare_datasets(const RawSeries& series, std::size_t history, std::size_t horizon,
                               std::size_t out_channels, SplitRatios ratios) {
  auto parts = split_dataset(series, ratios, history + horizon);
  DatasetSplits out;
  out.stats = zscore_fit(parts[0]);
  out.train = make_windows(parts[0], history, horizon, out_channels, out.stats, SplitTag::train);
  out.val = make_windows(parts[1], history, horizon, out_channels, out.stats, SplitTag::val);
  out.test = make_windows(parts[2], history, horizon, out_channels, out.stats, SplitTag::test);
  return out;
}

}  // namespace afdgcn
