#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqhgnn/fusion/fusion_head.hpp"
#include "seqhgnn/graph/hetero_graph.hpp"
#include "seqhgnn/layer/layer.hpp"
#include "seqhgnn/seq/seq_repr.hpp"
#include "seqhgnn/tensor/params.hpp"

namespace seqhgnn {

enum class BatchMode { Full, Sampled };
enum class Precision { Float32, Float64 };

struct TrainConfig {
  std::size_t d = 64;
  std::size_t heads = 8;
  std::size_t layers = 2;
  double dropout = 0.5;
  bool dropout_keep_base = false;  // never drop layer-0 slots
  std::size_t epochs = 150;
  double lr = 5e-4;  // peak of the one-cycle schedule
  double start_fraction = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  BatchMode batch_mode = BatchMode::Full;
  std::size_t sample_depth = 3;
  std::size_t sample_budget = 1800;
  std::size_t batch_size = 256;
  std::size_t batches_per_epoch = 250;
  std::uint64_t seed = 0;
  Precision precision = Precision::Float32;
  bool seq = true;  // false: mean over relation blocks per layer
  bool fus = true;  // false: mean over the final slots
  bool rel = true;  // false: no relation encodings
  AttentionNorm attention_norm = AttentionNorm::Joint;
  bool scale_outside = false;
  bool early_stopping = false;
  std::size_t patience = 30;

  /// Throws ConfigError on the first violated constraint.
  void validate() const;
  LayerOptions layer_options() const;
};

/// Seeds of the named random streams derived from one run seed.
struct SeedStreams {
  std::uint64_t init = 0;
  std::uint64_t dropout = 0;
  std::uint64_t sampler = 0;
};
SeedStreams set_seed(std::uint64_t seed);

template <typename Real>
struct ModelOutput {
  Var<Real> logits;  // rows × C
  FusionOutput<Real> fusion;
};

/// Input projection, L layers, fusion and classifier over one schema.
template <typename Real>
class Model {
 public:
  Model(const Schema& schema, const TrainConfig& config);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  /// Logits for target-type nodes `rows` of `g`. Dropout is applied to every
  /// layer input when `training`; `step` selects the dropout draw.
  ModelOutput<Real> forward(Tape<Real>& tape, const HeteroGraph& g, std::span<const std::size_t> rows, bool training,
                            std::uint64_t step = 0) const;

  /// Provenance of the slots seen by the fusion head.
  std::vector<SlotLabel> head_labels() const;

  ParamStore<Real>& params() { return store_; }
  const ParamStore<Real>& params() const { return store_; }
  const Schema& schema() const { return schema_; }
  const TrainConfig& config() const { return config_; }

  /// Copies values by name; throws on a missing name or a shape mismatch.
  void load_values(const std::map<std::string, Tensor<double>>& values);
  std::map<std::string, Tensor<double>> values() const;

 private:
  Schema schema_;
  TrainConfig config_;
  std::uint64_t dropout_stream_ = 0;
  ParamStore<Real> store_;
  InputProjection<Real> input_;
  std::vector<LayerParams<Real>> layers_;
  FusionParams<Real> head_;
};

// ---- optimization ---------------------------------------------------------

/// Decoupled weight decay then a bias-corrected Adam update, per parameter.
template <typename Real>
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.01)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  /// Updates every trainable parameter from its accumulated gradient. Throws
  /// NonFiniteError naming the parameter before touching any value when a
  /// gradient is not finite.
  void step(ParamStore<Real>& store, double lr);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
  std::vector<Tensor<Real>> m_, v_;
};

/// Cosine warmup from max_lr/div to max_lr over the first start_fraction of
/// the steps, then cosine annealing to max_lr/final_div.
double onecycle_lr(std::size_t step, std::size_t total_steps, double max_lr, double start_fraction = 0.3,
                   double div = 25.0, double final_div = 1e4);

// ---- loops ----------------------------------------------------------------

struct EpochLog {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean training loss over the epoch's batches
  double lr = 0.0;        // rate of the epoch's last step
  std::optional<Metrics> valid;
};

struct TrainResult {
  std::vector<EpochLog> log;
  bool diverged = false;
  std::string divergence;  // message when diverged
  std::size_t steps = 0;
  std::size_t best_epoch = 0;  // with early stopping
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Trains in place. On a non-finite loss or gradient the parameters are left
/// at the last finite state and the result is marked diverged.
template <typename Real>
TrainResult train(Model<Real>& model, const HeteroGraph& g, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

struct EvalResult {
  Metrics metrics;
  std::vector<std::size_t> nodes;
  Targets predicted;
  Targets truth;
};

/// Dropout off. Throws on an empty split.
template <typename Real>
EvalResult evaluate(const Model<Real>& model, const HeteroGraph& g, std::span<const std::size_t> nodes);

template <typename Real>
EvalResult evaluate(const Model<Real>& model, const HeteroGraph& g, std::string_view split);

struct GroupError {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckOptions {
  double h = 1e-5;
  /// Evaluate the central differences in extended precision so rounding in
  /// the loss does not swamp gradients that are zero by symmetry.
  bool extended_oracle = true;
  std::string fault_op;  // corrupt this backward rule in the analytic pass
  double fault_factor = 1.0;
};

/// Central differences on every parameter of a double model against its
/// autodiff gradient of the training loss, dropout off.
std::vector<GroupError> grad_check_model(Model<double>& model, const HeteroGraph& g,
                                         const GradCheckOptions& options = {});

/// The 6-node, 2-relation graph used for gradient checks.
HeteroGraph gradcheck_fixture();
TrainConfig gradcheck_config();

nlohmann::json config_json(const TrainConfig& config);
nlohmann::json log_json(const TrainResult& result, const TrainConfig& config);
/// One line per epoch: epoch, loss, lr, val micro-F1, val macro-F1.
std::string log_text(const TrainResult& result);
nlohmann::json metrics_json(const Metrics& m);

extern template class Model<float>;
extern template class Model<double>;
extern template class Model<long double>;
extern template class AdamW<float>;
extern template class AdamW<double>;
extern template class AdamW<long double>;

}  // namespace seqhgnn
