#include "afdgcn/model_check.hpp"

#include <map>
#include <random>

#include "afdgcn/gradcheck.hpp"
#include "afdgcn/model.hpp"
#include "afdgcn/ops.hpp"
#include "afdgcn/tensor.hpp"

namespace afdgcn {

Tensor ring_adjacency(std::size_t n) {
  std::vector<double> a(n * n, 0.0);
  for (std::size_t i = 0; i < n && n > 1; ++i) {
    const std::size_t j = (i + 1) % n;
    if (i != j) a[i * n + j] = a[j * n + i] = 1.0;
  }
  return Tensor({n, n}, std::move(a));
}

std::vector<GroupCheck> check_model_gradients(const ModelConfig& config, std::size_t batch, std::uint64_t seed,
                                              double h) {
  Model model(config, ring_adjacency(config.n_nodes), seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto random = [&](Shape shape) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = normal(rng);
    return Tensor(std::move(shape), std::move(v));
  };
  std::vector<std::vector<double>> initial;
  for (const auto& p : model.parameters()) initial.push_back(p.value.to_vector());

  // Central differences are meaningless across a ReLU kink, so redraw the
  // evaluation point until every kink input is far from zero relative to h.
  const double margin = 100.0 * h;
  Tensor x, y;
  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxKinkRedraws) {
      throw NumericError("gradient check: no evaluation point clear of activation kinks after " +
                         std::to_string(kMaxKinkRedraws) + " draws");
    }
    // Nonzero biases so their gradients are exercised away from the init point.
    for (std::size_t k = 0; k < model.parameters().size(); ++k) {
      Tensor t = model.parameters()[k].value;
      auto values = t.mutable_values();
      for (std::size_t i = 0; i < values.size(); ++i) values[i] = initial[k][i] + 0.1 * normal(rng);
    }
    x = random({batch, config.history, config.n_nodes, config.in_channels});
    y = random({batch, config.horizon, config.n_nodes, config.out_channels});
    KinkProbe probe;
    NoGradGuard no_grad;
    model.forward(x);
    if (probe.nearest() > margin) break;
  }
  auto loss = [&] { return smooth_l1_loss(model.forward(x), y); };

  std::vector<std::string> order;
  std::map<std::string, std::vector<const NamedParameter*>> groups;
  for (const auto& p : model.parameters()) {
    if (!groups.count(p.group)) order.push_back(p.group);
    groups[p.group].push_back(&p);
  }
  std::vector<GroupCheck> out;
  for (const auto& name : order) {
    std::vector<Tensor> params;
    for (const auto* p : groups[name]) params.push_back(p->value);
    GradCheckResult r = grad_check(loss, params, h);
    out.push_back({name, r.coordinates, r.max_rel_error, groups[name][r.worst_param]->name});
  }
  return out;
}

}  // namespace afdgcn
