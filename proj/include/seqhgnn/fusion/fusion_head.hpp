#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqhgnn/seq/seq_repr.hpp"
#include "seqhgnn/tensor/params.hpp"

namespace seqhgnn {

template <typename Real>
struct FusionParams {
  Parameter<Real>* query = nullptr;  // d × d, applied as W·x
  Parameter<Real>* key = nullptr;
  Parameter<Real>* value = nullptr;
  Parameter<Real>* classifier_w = nullptr;  // d × C, applied as x·W
  Parameter<Real>* classifier_b = nullptr;  // C
  std::size_t d = 0;
  std::size_t heads = 1;

  static FusionParams create(ParamStore<Real>& store, std::size_t d, std::size_t heads, std::size_t num_classes,
                             Rng& rng);
};

template <typename Real>
struct FusionOutput {
  Var<Real> h;          // N × d
  Var<Real> attention;  // N × heads × F
};

/// Attention of each node's layer-0 summary over its layer-L slots.
/// h0: N × F0 × d, hl: N × FL × d, rows aligned.
template <typename Real>
FusionOutput<Real> fuse(const Var<Real>& h0, const Var<Real>& hl, const FusionParams<Real>& p);

/// Plain mean over the slots; attention is reported as uniform.
template <typename Real>
FusionOutput<Real> mean_fusion(const Var<Real>& hl, std::size_t heads);

template <typename Real>
Var<Real> classify(const Var<Real>& h, const FusionParams<Real>& p);

/// Targets of one batch: class ids, or N × C flags for multi-label data.
struct Targets {
  bool multi_label = false;
  std::size_t num_classes = 0;
  std::vector<std::int32_t> classes;
  std::vector<std::uint8_t> flags;

  std::size_t size() const { return multi_label ? (num_classes ? flags.size() / num_classes : 0) : classes.size(); }
};

/// Targets of `nodes` (target-type ids) in `g`.
Targets gather_targets(const HeteroGraph& g, std::span<const std::size_t> nodes);

/// Cross-entropy for single-label, mean logistic loss for multi-label.
template <typename Real>
Var<Real> classification_loss(const Var<Real>& logits, const Targets& targets);

/// Argmax (ties to the lowest class) or, for multi-label, logit >= 0.
template <typename Real>
Targets predict(const Tensor<Real>& logits, bool multi_label);

struct Metrics {
  double micro_f1 = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;  // subset accuracy for multi-label
  double loss = 0.0;
};

/// Throws on empty or mismatched input. Macro-F1 averages all classes;
/// classes never predicted nor present score 0.
Metrics f1_metrics(const Targets& predicted, const Targets& truth);

// ---- meta-path report -----------------------------------------------------

struct PathWeight {
  std::string path;
  double weight = 0.0;
  friend bool operator==(const PathWeight&, const PathWeight&) = default;
};

struct MetaPathReport {
  std::map<std::string, std::vector<PathWeight>> per_type;
  std::vector<std::pair<std::size_t, std::vector<PathWeight>>> per_node;  // (node id, paths)
};

/// Sorts by weight descending, then path ascending.
void sort_paths(std::vector<PathWeight>& paths);

/// Head-averaged fusion weights of one node grouped by rendered path,
/// sorted, before any cut.
std::vector<PathWeight> node_paths(std::span<const double> attention, std::size_t heads, const Schema& schema,
                                   std::size_t type, const std::vector<SlotLabel>& table);

/// attention: N × heads × F of `type`. Per-type weights are the mean over
/// nodes. `node_ids` labels per_node entries; per_node is filled only when
/// `with_nodes` is set. Throws when k < 1 or the table length is not F.
MetaPathReport metapath_report(const Tensor<double>& attention, const Schema& schema, std::size_t type,
                               const std::vector<SlotLabel>& table, std::size_t k,
                               std::span<const std::size_t> node_ids, bool with_nodes = false);

nlohmann::json report_json(const MetaPathReport& report);
std::string report_text(const MetaPathReport& report);

}  // namespace seqhgnn
