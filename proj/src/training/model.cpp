#include <cmath>

#include "seqhgnn/errors.hpp"
#include "seqhgnn/tensor/ops.hpp"
#include "seqhgnn/training/training.hpp"

namespace seqhgnn {

void TrainConfig::validate() const {
  if (d == 0) throw ConfigError("model.d must be positive");
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("model.d = " + std::to_string(d) + " is not divisible by model.heads = " + std::to_string(heads));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("train.dropout must lie in [0, 1)");
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr must be a finite non-negative number");
  if (!(start_fraction >= 0.0 && start_fraction <= 1.0)) throw ConfigError("train.start_fraction must lie in [0, 1]");
  if (!(div_factor > 0.0) || !(final_div_factor > 0.0)) throw ConfigError("schedule divisors must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train.eps must be positive");
  if (batch_mode == BatchMode::Sampled) {
    if (sample_depth < 1) throw ConfigError("sampler.depth must be at least 1");
    if (sample_budget < 1) throw ConfigError("sampler.budget must be at least 1");
    if (batch_size < 1) throw ConfigError("sampler.batch_size must be at least 1");
    if (batches_per_epoch < 1) throw ConfigError("sampler.batches_per_epoch must be at least 1");
  }
  if (early_stopping && patience < 1) throw ConfigError("train.patience must be at least 1");
}

LayerOptions TrainConfig::layer_options() const {
  LayerOptions o;
  o.heads = heads;
  o.norm = attention_norm;
  o.scale_outside = scale_outside;
  o.relation_encoding = rel;
  o.sequential = seq;
  return o;
}

SeedStreams set_seed(std::uint64_t seed) {
  return {stream_seed(seed, "init"), stream_seed(seed, "dropout"), stream_seed(seed, "sampler")};
}

template <typename Real>
Model<Real>::Model(const Schema& schema, const TrainConfig& config) : schema_(schema), config_(config) {
  config_.validate();
  if (schema_.num_classes < 1) throw ConfigError("schema has no classes");
  const auto seeds = set_seed(config_.seed);
  dropout_stream_ = seeds.dropout;
  Rng rng(seeds.init);
  input_ = InputProjection<Real>::create(store_, schema_, config_.d, rng);
  for (std::size_t l = 1; l <= config_.layers; ++l) {
    layers_.push_back(LayerParams<Real>::create(store_, schema_, config_.d, config_.heads, l, rng, config_.rel));
  }
  head_ = FusionParams<Real>::create(store_, config_.d, config_.heads, schema_.num_classes, rng);
}

template <typename Real>
ModelOutput<Real> Model<Real>::forward(Tape<Real>& tape, const HeteroGraph& g, std::span<const std::size_t> rows,
                                       bool training, std::uint64_t step) const {
  if (!(g.schema == schema_)) throw Error("graph schema differs from the model's schema");
  const std::size_t target = schema_.target_index();
  const std::size_t d = config_.d;
  const auto x = feature_blocks<Real>(g);
  auto st0 = project_features(tape, schema_, x, g.num_nodes, input_);
  if (!config_.seq) {
    for (auto& h : st0.h) {
      if (h.dim(1) > 1) h = reshape(reduce_mean(h, 1), {h.dim(0), 1, d});
    }
  }
  const auto opt = config_.layer_options();
  const bool drop = training && config_.dropout > 0.0;
  std::vector<Var<Real>> per_layer{st0.h[target]};
  SeqState<Real> st = st0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    SeqState<Real> in = st;
    if (drop) {
      for (std::size_t t = 0; t < in.h.size(); ++t) {
        std::size_t keep = 0;
        if (config_.dropout_keep_base) keep = config_.seq ? schema_.node_types[t].base_slots() : (l == 0 ? 1 : 0);
        in.h[t] = slot_dropout(st.h[t], config_.dropout, true, DropoutKey{dropout_stream_, step, l, t},
                               g.original_ids[t], keep);
      }
    }
    st = layer_forward(in, g, layers_[l], opt);
    if (!config_.seq) per_layer.push_back(st.h[target]);
  }
  auto hl = config_.seq ? st.h[target] : concat(per_layer, 1);
  auto h0 = gather_rows(st0.h[target], rows);
  hl = gather_rows(hl, rows);
  ModelOutput<Real> out;
  out.fusion = config_.fus ? fuse(h0, hl, head_) : mean_fusion(hl, config_.heads);
  out.logits = classify(out.fusion.h, head_);
  return out;
}

template <typename Real>
std::vector<SlotLabel> Model<Real>::head_labels() const {
  const std::size_t target = schema_.target_index();
  if (config_.seq) return slot_labels(schema_, config_.layers)[target][config_.layers];
  std::vector<SlotLabel> out;
  for (std::size_t l = 0; l <= config_.layers; ++l) out.push_back(SlotLabel::layer_mean(l));
  return out;
}

template <typename Real>
void Model<Real>::load_values(const std::map<std::string, Tensor<double>>& values) {
  for (auto& p : store_.all()) {
    auto it = values.find(p.name);
    if (it == values.end()) throw Error("missing parameter " + p.name);
    if (it->second.shape() != p.value.shape()) {
      throw ShapeError("parameter " + p.name + ": expected " + shape_str(p.value.shape()) + ", got " +
                       shape_str(it->second.shape()));
    }
    p.value = it->second.template cast<Real>();
  }
  for (const auto& [name, v] : values) {
    if (!store_.find(name)) throw Error("unknown parameter " + name);
  }
}

template <typename Real>
std::map<std::string, Tensor<double>> Model<Real>::values() const {
  std::map<std::string, Tensor<double>> out;
  for (const auto& p : store_.all()) out.emplace(p.name, p.value.template cast<double>());
  return out;
}

template class Model<float>;
template class Model<double>;
template class Model<long double>;

}  // namespace seqhgnn
