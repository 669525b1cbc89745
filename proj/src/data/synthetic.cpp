#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>

#include "afdgcn/dataset.hpp"

namespace afdgcn {

namespace {

// Draws are built from raw mt19937_64 output so the corpus does not depend on
// the standard library's distribution implementations.
class Draws {
 public:
  explicit Draws(std::uint64_t seed) : rng_(seed) {}

  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 rng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace

SynthCorpus synth_generate(std::size_t n_nodes, std::size_t n_steps, std::uint64_t seed, const SynthOptions& options) {
  if (n_nodes < 2) throw std::invalid_argument("synthetic corpus needs at least 2 nodes");
  if (options.cluster_size == 0) throw std::invalid_argument("cluster_size must be positive");
  Draws draws(seed);
  const std::size_t size = options.cluster_size;
  const std::size_t n_clusters = (n_nodes + size - 1) / size;
  auto cluster_of = [&](std::size_t i) { return i / size; };
  auto first_of = [&](std::size_t c) { return c * size; };
  auto last_of = [&](std::size_t c) { return std::min(n_nodes, (c + 1) * size) - 1; };

  SynthCorpus corpus;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  auto connect = [&](std::size_t a, std::size_t b, double cost) {
    if (a == b) return;
    auto key = std::minmax(a, b);
    if (seen.insert({key.first, key.second}).second) corpus.edges.push_back({key.first, key.second, cost});
  };
  for (std::size_t c = 0; c < n_clusters; ++c) {
    for (std::size_t i = first_of(c); i <= last_of(c); ++i)
      for (std::size_t j = i + 1; j <= last_of(c); ++j) connect(i, j, draws.uniform(0.5, 1.2));
  }
  if (n_clusters > 1) {
    for (std::size_t c = 0; c < n_clusters; ++c) {
      connect(last_of(c), first_of((c + 1) % n_clusters), draws.uniform(0.8, 1.4));
    }
  }

  std::vector<std::vector<std::size_t>> neighbours(n_nodes);
  for (const auto& e : corpus.edges) {
    neighbours[e.from].push_back(e.to);
    neighbours[e.to].push_back(e.from);
  }

  std::vector<double> level(n_nodes), amplitude(n_nodes), phase(n_nodes);
  for (std::size_t i = 0; i < n_nodes; ++i) {
    level[i] = options.base_level * draws.uniform(0.8, 1.2);
    amplitude[i] = options.amplitude * draws.uniform(0.8, 1.2);
    phase[i] = 2.0 * std::numbers::pi * static_cast<double>(cluster_of(i)) / static_cast<double>(n_clusters);
  }

  RawSeries& s = corpus.series;
  s.length = n_steps;
  s.nodes = n_nodes;
  s.channels = 1;
  s.channel_names = {"flow"};
  s.values.resize(n_steps * n_nodes);
  std::vector<double> state(n_nodes, 0.0), next(n_nodes, 0.0);
  for (std::size_t t = 0; t < n_steps; ++t) {
    // t mod period keeps the noiseless series exactly periodic.
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(t % kSynthPeriod) / kSynthPeriod;
    for (std::size_t i = 0; i < n_nodes; ++i) {
      double spread = 0.0;
      for (auto j : neighbours[i]) spread += state[j];
      if (!neighbours[i].empty()) spread /= static_cast<double>(neighbours[i].size());
      next[i] = options.persistence * state[i] + options.coupling * spread;
      if (options.noise != 0.0) next[i] += options.noise * draws.normal();
    }
    state.swap(next);
    for (std::size_t i = 0; i < n_nodes; ++i) {
      s.values[t * n_nodes + i] = level[i] + amplitude[i] * std::sin(angle + phase[i]) + state[i];
    }
  }
  return corpus;
}

}  // namespace afdgcn
