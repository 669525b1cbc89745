#include <algorithm>
#include <cmath>
#include <string>

#include "afdgcn/csv.hpp"
#include "afdgcn/graph.hpp"

namespace afdgcn {

std::vector<Edge> load_edges_csv(const std::filesystem::path& path) {
  auto lines = read_lines(path);
  if (lines.empty()) throw DataError(path.string() + ": empty adjacency file");
  auto header = split_fields(lines[0]);
  if (header.size() != 3 || header[0] != "from" || header[1] != "to" || header[2] != "cost") {
    throw DataError(path.string() + ": expected header 'from,to,cost'");
  }
  std::vector<Edge> edges;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    auto f = split_fields(lines[i]);
    if (f.size() != 3) throw DataError(where + ": expected 3 fields");
    const long long from = parse_integer(f[0], where);
    const long long to = parse_integer(f[1], where);
    const double cost = parse_double(f[2], where);
    if (from < 0 || to < 0) throw DataError(where + ": negative node id");
    if (!(cost >= 0.0) || !std::isfinite(cost)) throw DataError(where + ": cost must be finite and >= 0");
    Edge e{static_cast<std::size_t>(from), static_cast<std::size_t>(to), cost};
    edges.push_back(e);
    if (e.from != e.to) edges.push_back({e.to, e.from, cost});
  }
  return edges;
}

void save_edges_csv(const std::filesystem::path& path, std::span<const Edge> undirected) {
  std::string text = "from,to,cost\n";
  for (const auto& e : undirected) {
    text += std::to_string(e.from) + "," + std::to_string(e.to) + "," + format_double(e.cost) + "\n";
  }
  write_text(path, text);
}

std::size_t edge_node_count(std::span<const Edge> edges) {
  std::size_t n = 0;
  for (const auto& e : edges) n = std::max({n, e.from + 1, e.to + 1});
  return n;
}

void save_matrix_csv(const std::filesystem::path& path, const Tensor& matrix) {
  if (matrix.rank() != 2) throw ShapeError("save_matrix_csv: expected a matrix");
  const std::size_t rows = matrix.size(0), cols = matrix.size(1);
  auto v = matrix.values();
  std::string text;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      if (j) text += ',';
      text += format_double(v[i * cols + j]);
    }
    text += '\n';
  }
  write_text(path, text);
}

Tensor load_matrix_csv(const std::filesystem::path& path) {
  auto lines = read_lines(path);
  std::vector<double> values;
  std::size_t rows = 0, cols = 0;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    auto f = split_fields(lines[i]);
    if (rows == 0) cols = f.size();
    if (f.size() != cols) throw DataError(path.string() + ":" + std::to_string(i + 1) + ": ragged row");
    for (auto field : f) values.push_back(parse_double(field, path.string()));
    ++rows;
  }
  return Tensor({rows, cols}, std::move(values));
}

}  // namespace afdgcn
