#include "afdgcn/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string_view>

#include "afdgcn/csv.hpp"

namespace afdgcn {

namespace {

constexpr char kMagic[8] = {'A', 'F', 'D', 'G', 'C', 'K', 'P', 'T'};
constexpr std::string_view kMetaPrefix = "meta.";

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  Reader(std::string bytes, std::string source) : bytes_(std::move(bytes)), source_(std::move(source)) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw DataError(source_ + ": truncated checkpoint");
  }

  std::string bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

}  // namespace

const Blob* CheckpointData::find(const std::string& name) const {
  for (const auto& b : blobs) {
    if (b.name == name) return &b;
  }
  return nullptr;
}

CheckpointData snapshot(const Model& model, const RunConfig& config, std::map<std::string, std::string> meta) {
  CheckpointData data;
  data.config = config;
  data.config.model = model.config();
  data.meta = std::move(meta);
  for (const auto& p : model.parameters()) data.blobs.push_back({p.name, p.value.shape(), p.value.to_vector()});
  if (model.predefined_adjacency().defined()) {
    const Tensor& a = model.predefined_adjacency();
    data.blobs.push_back({kAdjacencyBlob, a.shape(), a.to_vector()});
  }
  return data;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data) {
  std::string manifest = format_config(data.config);
  for (const auto& [key, value] : data.meta) manifest += std::string(kMetaPrefix) + key + " = " + value + "\n";

  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, manifest.size());
  out += manifest;
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.blobs.size()));
  for (const auto& b : data.blobs) {
    if (shape_numel(b.shape) != b.values.size()) throw ShapeError("checkpoint blob " + b.name + ": size mismatch");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(b.name.size()));
    out += b.name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(b.shape.size()));
    for (auto dim : b.shape) put_le<std::uint64_t>(out, dim);
    for (double v : b.values) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  write_text(path, out);
}

CheckpointData read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(bytes), path.string());

  if (r.take(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw DataError(path.string() + ": not a checkpoint file");
  }
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw DataError(path.string() + ": checkpoint version " + std::to_string(version) + ", this build reads " +
                    std::to_string(kCheckpointVersion));
  }
  const auto manifest_len = r.get<std::uint64_t>();
  std::string manifest = r.take(manifest_len);

  CheckpointData data;
  std::string config_text;
  std::string_view rest = manifest;
  while (!rest.empty()) {
    auto end = rest.find('\n');
    std::string_view line = rest.substr(0, end);
    rest = end == std::string_view::npos ? std::string_view{} : rest.substr(end + 1);
    if (line.starts_with(kMetaPrefix)) {
      auto eq = line.find(" = ");
      if (eq == std::string_view::npos) throw DataError(path.string() + ": malformed manifest line");
      data.meta[std::string(line.substr(kMetaPrefix.size(), eq - kMetaPrefix.size()))] =
          std::string(line.substr(eq + 3));
    } else {
      config_text += std::string(line) + "\n";
    }
  }
  try {
    data.config = parse_config(config_text);
  } catch (const ConfigError& e) {
    throw DataError(path.string() + ": bad manifest: " + e.what());
  }

  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    Blob b;
    b.name = r.take(r.get<std::uint32_t>());
    const auto rank = r.get<std::uint32_t>();
    for (std::uint32_t k = 0; k < rank; ++k) b.shape.push_back(static_cast<std::size_t>(r.get<std::uint64_t>()));
    const std::size_t n = shape_numel(b.shape);
    b.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) b.values[k] = std::bit_cast<double>(r.get<std::uint64_t>());
    data.blobs.push_back(std::move(b));
  }
  if (!r.done()) throw DataError(path.string() + ": trailing bytes after the last blob");
  return data;
}

void apply_checkpoint(const CheckpointData& data, Model& model) {
  // Validate everything before touching the model.
  for (const auto& p : model.parameters()) {
    const Blob* b = data.find(p.name);
    if (!b) throw DataError("checkpoint has no parameter '" + p.name + "'");
    if (b->shape != p.value.shape()) {
      throw ShapeError("checkpoint parameter '" + p.name + "' has shape " + shape_str(b->shape) +
                       " but the model expects " + shape_str(p.value.shape()));
    }
  }
  for (const auto& p : model.parameters()) {
    const Blob* b = data.find(p.name);
    Tensor t = p.value;
    auto dst = t.mutable_values();
    std::copy(b->values.begin(), b->values.end(), dst.begin());
  }
}

Model restore_model(const CheckpointData& data) {
  Tensor adjacency;
  if (const Blob* b = data.find(kAdjacencyBlob)) adjacency = Tensor(b->shape, b->values);
  Model model(data.config.model, adjacency, 0);
  apply_checkpoint(data, model);
  return model;
}

}  // namespace afdgcn
