#include "afdgcn/model.hpp"

#include <cmath>
#include <stdexcept>

#include "afdgcn/graph.hpp"
#include "afdgcn/ops.hpp"

namespace afdgcn {

Model::Model(ModelConfig config, Tensor predefined, std::uint64_t seed)
    : config_(std::move(config)), predefined_(std::move(predefined)) {
  config_.validate();
  const std::size_t n = config_.n_nodes;
  if (predefined_.defined()) {
    validate_adjacency(predefined_, n);
    mask_ = attention_mask(predefined_);
  } else if (config_.use_gat) {
    throw ConfigError("graph attention needs a pre-defined adjacency (use_gat = true)");
  }

  std::mt19937_64 rng(seed);
  const std::size_t c = config_.in_channels, d = config_.embed_dim, hidden = config_.hidden_dim;
  if (config_.use_fal) {
    channel_ = ChannelCalibration::init(c, config_.fal_reduction, rng);
    temporal_ = TemporalCalibration::init(c, config_.fal_kernel, rng);
    register_parameter("fal.channel.w1", "fal", "fal", channel_.w1);
    register_parameter("fal.channel.b1", "fal", "fal", channel_.b1);
    register_parameter("fal.channel.w2", "fal", "fal", channel_.w2);
    register_parameter("fal.channel.b2", "fal", "fal", channel_.b2);
    register_parameter("fal.temporal.inner", "fal", "fal", temporal_.inner);
    register_parameter("fal.temporal.outer", "fal", "fal", temporal_.outer);
  }

  embeddings_ = uniform_parameter({n, d}, 1.0 / std::sqrt(static_cast<double>(d)), rng);
  register_parameter("graph.node_embeddings", "node_embeddings", "graph", embeddings_);

  gru_ = GruPools::init(d, config_.k_order, c, hidden, rng);
  register_parameter("gru.gate.weight_pool", "gate_weight_pool", "dgcgru", gru_.gate.weight_pool);
  register_parameter("gru.gate.bias_pool", "gate_bias_pool", "dgcgru", gru_.gate.bias_pool);
  register_parameter("gru.update.weight_pool", "update_weight_pool", "dgcgru", gru_.update.weight_pool);
  register_parameter("gru.update.bias_pool", "update_bias_pool", "dgcgru", gru_.update.bias_pool);

  if (config_.use_temporal_attention) {
    attention_ = TemporalAttention::init(hidden, config_.ffn_expansion, rng);
    register_parameter("attention.wq", "attention_projections", "temporal_attention", attention_.wq);
    register_parameter("attention.wk", "attention_projections", "temporal_attention", attention_.wk);
    register_parameter("attention.wv", "attention_projections", "temporal_attention", attention_.wv);
    register_parameter("attention.wo", "attention_projections", "temporal_attention", attention_.wo);
    register_parameter("attention.ln1.gamma", "layer_norm", "temporal_attention", attention_.ln1_gamma);
    register_parameter("attention.ln1.beta", "layer_norm", "temporal_attention", attention_.ln1_beta);
    register_parameter("attention.ffn.w1", "ffn", "temporal_attention", attention_.ffn_w1);
    register_parameter("attention.ffn.b1", "ffn", "temporal_attention", attention_.ffn_b1);
    register_parameter("attention.ffn.w2", "ffn", "temporal_attention", attention_.ffn_w2);
    register_parameter("attention.ffn.b2", "ffn", "temporal_attention", attention_.ffn_b2);
    register_parameter("attention.ln2.gamma", "layer_norm", "temporal_attention", attention_.ln2_gamma);
    register_parameter("attention.ln2.beta", "layer_norm", "temporal_attention", attention_.ln2_beta);
  }

  if (config_.use_gat) {
    gat_ = GraphAttention::init(hidden, rng);
    register_parameter("gat.w", "gat", "gat", gat_.w);
    register_parameter("gat.a", "gat", "gat", gat_.a);
  }

  head_ = PredictionHead::init(hidden, config_.out_channels, config_.history, config_.horizon, rng);
  register_parameter("head.w1", "head", "head", head_.w1);
  register_parameter("head.b1", "head", "head", head_.b1);
  register_parameter("head.w2", "head", "head", head_.w2);
  register_parameter("head.b2", "head", "head", head_.b2);
}

void Model::register_parameter(std::string name, std::string group, std::string module, const Tensor& t) {
  params_.push_back({std::move(name), std::move(group), std::move(module), t});
}

std::vector<Tensor> Model::parameter_tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.value);
  return out;
}

const NamedParameter& Model::parameter(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p;
  }
  throw std::out_of_range("no parameter named " + name);
}

Tensor Model::adaptive_adjacency() const {
  NoGradGuard guard;
  return afdgcn::adaptive_adjacency(embeddings_);
}

std::size_t Model::count_parameters() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.value.numel();
  return total;
}

std::vector<ParameterCount> Model::parameter_breakdown() const {
  std::vector<ParameterCount> out;
  for (const auto& p : params_) {
    if (out.empty() || out.back().module != p.module) out.push_back({p.module, 0});
    out.back().count += p.value.numel();
  }
  return out;
}

Tensor Model::forward(const Tensor& x, const ForwardContext& ctx) const {
  const bool unbatched = x.rank() == 3;
  if (!unbatched && x.rank() != 4) throw ShapeError("model: input must be [B, P, N, C], got " + shape_str(x.shape()));
  Tensor input = unbatched ? reshape(x, {1, x.size(0), x.size(1), x.size(2)}) : x;
  const std::size_t batch = input.size(0);
  if (input.size(1) != config_.history || input.size(2) != config_.n_nodes || input.size(3) != config_.in_channels) {
    throw ShapeError("model: input " + shape_str(x.shape()) + " does not match history " +
                     std::to_string(config_.history) + ", " + std::to_string(config_.n_nodes) + " nodes, " +
                     std::to_string(config_.in_channels) + " channels");
  }
  const bool dropout_active = ctx.training && config_.use_gat && config_.attention_dropout > 0.0;
  if (dropout_active && !ctx.rng) throw std::invalid_argument("model: training with dropout needs an rng");

  Tensor h = input;
  if (config_.use_fal) h = temporal_calibration(channel_calibration(h, channel_), temporal_);

  Tensor adaptive = afdgcn::adaptive_adjacency(embeddings_);
  Tensor hidden = dgcgru_unroll(h, Tensor(), embeddings_, adaptive, gru_);

  Tensor temporal_weights;
  Tensor temporal_out = hidden;
  if (config_.use_temporal_attention) {
    temporal_out = multi_head_temporal_attention(hidden, attention_, config_.n_heads, config_.pe_variant,
                                                 ctx.trace ? &temporal_weights : nullptr);
  }

  Tensor spatial_out;
  Tensor graph_weights;
  if (config_.use_gat) {
    Tensor last = reshape(slice(hidden, 1, config_.history - 1, 1), {batch, config_.n_nodes, config_.hidden_dim});
    spatial_out = graph_attention(last, gat_, mask_, config_.attention_dropout, dropout_active ? ctx.rng : nullptr,
                                  ctx.trace ? &graph_weights : nullptr);
  }

  Tensor out = prediction_head(temporal_out, spatial_out, head_);
  if (ctx.trace) {
    *ctx.trace = ForwardTrace{adaptive, hidden, temporal_weights, temporal_out, graph_weights, spatial_out};
  }
  if (unbatched) out = reshape(out, {config_.horizon, config_.n_nodes, config_.out_channels});
  return out;
}

}  // namespace afdgcn
