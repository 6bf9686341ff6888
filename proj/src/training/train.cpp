#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "seqhgnn/errors.hpp"
#include "seqhgnn/tensor/gradcheck.hpp"
#include "seqhgnn/tensor/ops.hpp"
#include "seqhgnn/training/training.hpp"

namespace seqhgnn {

namespace {

// Draws min(size, |pool|) distinct nodes, returned ascending. The whole
// pool is returned unchanged when it fits.
std::vector<std::size_t> draw_batch(const std::vector<std::size_t>& pool, std::size_t size, Rng& rng) {
  if (size >= pool.size()) return pool;
  std::vector<std::size_t> v = pool;
  for (std::size_t i = 0; i < size; ++i) std::swap(v[i], v[i + rng.below(v.size() - i)]);
  v.resize(size);
  std::sort(v.begin(), v.end());
  return v;
}

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

nlohmann::json number_or_null(const std::optional<Metrics>& m, double Metrics::*field) {
  return m ? nlohmann::json((*m).*field) : nlohmann::json(nullptr);
}

}  // namespace

template <typename Real>
TrainResult train(Model<Real>& model, const HeteroGraph& g, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const auto& train_nodes = g.splits.train;
  if (train_nodes.empty()) throw Error("training split is empty");
  const auto seeds = set_seed(config.seed);
  Rng sampler(seeds.sampler);
  AdamW<Real> opt(config.beta1, config.beta2, config.eps, config.weight_decay);
  const bool full = config.batch_mode == BatchMode::Full;
  const std::size_t batches = full ? 1 : config.batches_per_epoch;
  const std::size_t total = config.epochs * batches;
  const auto full_targets = gather_targets(g, train_nodes);

  TrainResult result;
  double best = -1.0;
  std::map<std::string, Tensor<double>> best_values;
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    double loss_sum = 0.0, lr = 0.0;
    for (std::size_t b = 0; b < batches; ++b, ++step) {
      lr = onecycle_lr(step, total, config.lr, config.start_fraction, config.div_factor, config.final_div_factor);
      try {
        HeteroGraph sg;  // backward rules reference its adjacency
        Tape<Real> tape;
        Var<Real> loss;
        if (full) {
          auto out = model.forward(tape, g, train_nodes, true, step);
          loss = classification_loss(out.logits, full_targets);
        } else {
          const auto batch = draw_batch(train_nodes, config.batch_size, sampler);
          const auto sub = sample_subgraph(g, g.schema.target_type, batch, config.sample_depth, config.sample_budget,
                                           sampler.next());
          sg = induced_graph(g, sub);
          auto out = model.forward(tape, sg, sub.batch_local, true, step);
          loss = classification_loss(out.logits, gather_targets(g, batch));
        }
        if (!std::isfinite(static_cast<double>(loss.value().item()))) throw NonFiniteError("non-finite training loss");
        model.params().zero_grad();
        tape.backward(loss);
        opt.step(model.params(), lr);
        loss_sum += static_cast<double>(loss.value().item());
      } catch (const NonFiniteError& e) {
        result.diverged = true;
        result.divergence = "epoch " + std::to_string(epoch) + ": " + e.what();
        result.steps = step;
        return result;
      }
    }
    EpochLog entry;
    entry.epoch = epoch;
    entry.loss = loss_sum / static_cast<double>(batches);
    entry.lr = lr;
    if (!g.splits.valid.empty()) {
      try {
        entry.valid = evaluate(model, g, std::span<const std::size_t>(g.splits.valid)).metrics;
      } catch (const NonFiniteError& e) {
        result.diverged = true;
        result.divergence = "epoch " + std::to_string(epoch) + " validation: " + e.what();
        result.steps = step;
        return result;
      }
    }
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (config.early_stopping && entry.valid) {
      if (entry.valid->micro_f1 > best) {
        best = entry.valid->micro_f1;
        result.best_epoch = epoch;
        best_values = model.values();
      } else if (epoch - result.best_epoch >= config.patience) {
        model.load_values(best_values);
        break;
      }
    }
  }
  result.steps = step;
  return result;
}

template <typename Real>
EvalResult evaluate(const Model<Real>& model, const HeteroGraph& g, std::span<const std::size_t> nodes) {
  if (nodes.empty()) throw Error("cannot evaluate an empty split");
  Tape<Real> tape;
  auto out = model.forward(tape, g, nodes, false);
  EvalResult r;
  r.nodes.assign(nodes.begin(), nodes.end());
  r.truth = gather_targets(g, nodes);
  r.predicted = predict(out.logits.value(), g.multi_label);
  r.metrics = f1_metrics(r.predicted, r.truth);
  r.metrics.loss = static_cast<double>(classification_loss(out.logits, r.truth).value().item());
  return r;
}

template <typename Real>
EvalResult evaluate(const Model<Real>& model, const HeteroGraph& g, std::string_view split) {
  return evaluate(model, g, std::span<const std::size_t>(g.splits.get(split)));
}

// ---- gradient check -------------------------------------------------------

namespace {

template <typename Real>
Real training_loss(const Model<Real>& model, const HeteroGraph& g, const Targets& targets) {
  Tape<Real> tape;
  auto out = model.forward(tape, g, g.splits.train, false);
  return classification_loss(out.logits, targets).value().item();
}

template <typename Real>
std::vector<GroupError> central_differences(Model<Real>& oracle, const HeteroGraph& g, const Targets& targets,
                                            const std::vector<Tensor<double>>& analytic, double h) {
  std::vector<GroupError> out;
  auto& params = oracle.params().all();
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    if (!p.trainable) continue;
    GroupError e;
    e.name = p.name;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const Real saved = p.value[i];
      p.value[i] = saved + static_cast<Real>(h);
      const Real up = training_loss(oracle, g, targets);
      p.value[i] = saved - static_cast<Real>(h);
      const Real down = training_loss(oracle, g, targets);
      p.value[i] = saved;
      const double numeric = static_cast<double>((up - down) / (Real(2) * static_cast<Real>(h)));
      const double err = relative_error(analytic[k][i], numeric);
      if (err > e.max_rel_error || i == 0) {
        e.max_rel_error = err;
        e.worst_index = i;
        e.analytic = analytic[k][i];
        e.numeric = numeric;
      }
    }
    out.push_back(e);
  }
  return out;
}

}  // namespace

std::vector<GroupError> grad_check_model(Model<double>& model, const HeteroGraph& g, const GradCheckOptions& options) {
  if (g.splits.train.empty()) throw Error("gradcheck needs a non-empty training split");
  const auto targets = gather_targets(g, g.splits.train);
  {
    Tape<double> tape;
    if (!options.fault_op.empty()) tape.inject_grad_fault(options.fault_op, options.fault_factor);
    auto out = model.forward(tape, g, g.splits.train, false);
    auto loss = classification_loss(out.logits, targets);
    model.params().zero_grad();
    tape.backward(loss);
  }
  std::vector<Tensor<double>> analytic;
  for (const auto& p : model.params().all()) analytic.push_back(p.grad);
  if (options.extended_oracle) {
    Model<long double> oracle(model.schema(), model.config());
    oracle.load_values(model.values());
    return central_differences(oracle, g, targets, analytic, options.h);
  }
  return central_differences(model, g, targets, analytic, options.h);
}

HeteroGraph gradcheck_fixture() {
  HeteroGraph g;
  g.schema.node_types = {{"T", 1, 3}, {"S", 1, 2}};
  g.schema.relations = {{"S", "cites", "T"}, {"T", "cited_by", "S"}};
  g.schema.target_type = "T";
  g.schema.num_classes = 2;
  g.num_nodes = {3, 3};
  Rng rng(7);
  for (std::size_t t = 0; t < 2; ++t) {
    Tensor<double> x({3, 1, g.schema.node_types[t].feature_dim});
    for (auto& v : x.data()) v = rng.uniform(-1.0, 1.0);
    g.features.push_back(x);
  }
  g.edges = {{{0, 1, 1, 2, 0}, {0, 0, 1, 2, 2}}, {{0, 0, 1, 2, 2}, {0, 1, 1, 2, 0}}};
  g.labels = {0, 1, 1};
  g.labeled = {true, true, true};
  g.splits.train = {0, 1, 2};
  g.finalize();
  return g;
}

TrainConfig gradcheck_config() {
  TrainConfig c;
  c.d = 8;
  c.heads = 2;
  c.layers = 2;
  c.dropout = 0.0;
  c.precision = Precision::Float64;
  return c;
}

// ---- serialization ----------------------------------------------------------

nlohmann::json config_json(const TrainConfig& c) {
  nlohmann::json j;
  j["model.d"] = c.d;
  j["model.heads"] = c.heads;
  j["model.layers"] = c.layers;
  j["model.seq"] = c.seq;
  j["model.fus"] = c.fus;
  j["model.rel"] = c.rel;
  j["model.attention_norm"] = c.attention_norm == AttentionNorm::Joint ? "joint" : "literal";
  j["model.scale_outside"] = c.scale_outside;
  j["train.dropout"] = c.dropout;
  j["train.dropout_keep_base"] = c.dropout_keep_base;
  j["train.epochs"] = c.epochs;
  j["train.lr"] = c.lr;
  j["train.start_fraction"] = c.start_fraction;
  j["train.div_factor"] = c.div_factor;
  j["train.final_div_factor"] = c.final_div_factor;
  j["train.weight_decay"] = c.weight_decay;
  j["train.beta1"] = c.beta1;
  j["train.beta2"] = c.beta2;
  j["train.eps"] = c.eps;
  j["train.batch_mode"] = c.batch_mode == BatchMode::Full ? "full" : "sampled";
  j["train.seed"] = c.seed;
  j["train.precision"] = c.precision == Precision::Float32 ? "float32" : "float64";
  j["train.early_stopping"] = c.early_stopping;
  j["train.patience"] = c.patience;
  j["sampler.depth"] = c.sample_depth;
  j["sampler.budget"] = c.sample_budget;
  j["sampler.batch_size"] = c.batch_size;
  j["sampler.batches_per_epoch"] = c.batches_per_epoch;
  return j;
}

nlohmann::json log_json(const TrainResult& result, const TrainConfig& config) {
  nlohmann::json j;
  j["seed"] = config.seed;
  j["config"] = config_json(config);
  j["epochs"] = nlohmann::json::array();
  for (const auto& e : result.log) {
    j["epochs"].push_back({{"epoch", e.epoch},
                           {"loss", e.loss},
                           {"lr", e.lr},
                           {"val_micro_f1", number_or_null(e.valid, &Metrics::micro_f1)},
                           {"val_macro_f1", number_or_null(e.valid, &Metrics::macro_f1)}});
  }
  j["steps"] = result.steps;
  j["diverged"] = result.diverged;
  if (result.diverged) j["divergence"] = result.divergence;
  if (config.early_stopping) j["best_epoch"] = result.best_epoch;
  return j;
}

std::string log_text(const TrainResult& result) {
  std::ostringstream os;
  for (const auto& e : result.log) {
    os << e.epoch << '\t' << format_number(e.loss) << '\t' << format_number(e.lr) << '\t'
       << (e.valid ? format_number(e.valid->micro_f1) : "nan") << '\t'
       << (e.valid ? format_number(e.valid->macro_f1) : "nan") << '\n';
  }
  return os.str();
}

nlohmann::json metrics_json(const Metrics& m) {
  return {{"micro_f1", m.micro_f1}, {"macro_f1", m.macro_f1}, {"accuracy", m.accuracy}, {"loss", m.loss}};
}

#define SEQHGNN_INSTANTIATE_TRAIN(R)                                                                         \
  template TrainResult train(Model<R>&, const HeteroGraph&, const TrainConfig&, const EpochCallback&);       \
  template EvalResult evaluate(const Model<R>&, const HeteroGraph&, std::span<const std::size_t>);           \
  template EvalResult evaluate(const Model<R>&, const HeteroGraph&, std::string_view);

SEQHGNN_INSTANTIATE_TRAIN(float)
SEQHGNN_INSTANTIATE_TRAIN(double)

}  // namespace seqhgnn
