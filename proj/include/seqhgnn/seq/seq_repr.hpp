#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "seqhgnn/graph/hetero_graph.hpp"
#include "seqhgnn/tensor/params.hpp"

namespace seqhgnn {

/// Provenance of one slot of a sequential representation.
struct SlotLabel {
  enum class Kind : std::uint8_t { Base, Msg, LayerMean };

  Kind kind = Kind::Base;
  std::size_t feature = 0;   // Base
  std::size_t relation = 0;  // Msg: schema relation index
  std::size_t parent = 0;    // Msg: slot of the target's previous-layer sequence
  std::size_t layer = 0;     // Msg, LayerMean

  static SlotLabel base(std::size_t f) { return {Kind::Base, f, 0, 0, 0}; }
  static SlotLabel msg(std::size_t r, std::size_t j, std::size_t l) { return {Kind::Msg, 0, r, j, l}; }
  static SlotLabel layer_mean(std::size_t l) { return {Kind::LayerMean, 0, 0, 0, l}; }

  friend bool operator==(const SlotLabel&, const SlotLabel&) = default;
};

/// tables[type][layer], layers 0..L.
using LabelTables = std::vector<std::vector<std::vector<SlotLabel>>>;

/// F(l) = F(l-1) * (len(R(type)) + 1), F(0) = base slots.
std::size_t slot_count(const Schema& schema, std::size_t type, std::size_t layer);

LabelTables slot_labels(const Schema& schema, std::size_t layers);

/// Label of slot `index` at `layer`, by index arithmetic alone.
SlotLabel decode_slot(const Schema& schema, std::size_t type, std::size_t layer, std::size_t index);
std::size_t encode_slot(const Schema& schema, std::size_t type, const SlotLabel& label);

/// Meta-path string of a slot, e.g. "author→(paper→author)". `table` is the
/// label table of `type` at any layer that contains `index`.
std::string render_label(const Schema& schema, std::size_t type, const std::vector<SlotLabel>& table, std::size_t index);

// ---- sequences ----------------------------------------------------------

/// Per node type, H of shape N × F × d.
template <typename Real>
struct SeqState {
  std::size_t layer = 0;
  std::vector<Var<Real>> h;

  std::size_t slots(std::size_t type) const { return h[type].dim(1); }
};

/// Input features per type and feature index, each N × input_dim.
template <typename Real>
using FeatureBlocks = std::vector<std::vector<Tensor<Real>>>;

template <typename Real>
FeatureBlocks<Real> feature_blocks(const HeteroGraph& g);

template <typename Real>
struct InputProjection {
  struct PerType {
    std::vector<Parameter<Real>*> weight;  // d × input_dim, applied as W·x
    std::vector<Parameter<Real>*> bias;    // d
    Parameter<Real>* embedding = nullptr;  // d, featureless types only
  };
  std::size_t d = 0;
  std::vector<PerType> types;

  static InputProjection create(ParamStore<Real>& store, const Schema& schema, std::size_t d, Rng& rng);
};

/// Slot f of node i is W_f · x_f + b_f; featureless types repeat their
/// shared embedding.
template <typename Real>
SeqState<Real> project_features(Tape<Real>& tape, const Schema& schema, const FeatureBlocks<Real>& x,
                                std::span<const std::size_t> num_nodes, const InputProjection<Real>& p);

// ---- dropout ------------------------------------------------------------

/// Identifies one dropout draw. Decisions are a hash of (stream, step,
/// layer, type, original node id, slot), so they do not depend on which
/// subgraph a node appears in or on evaluation order.
struct DropoutKey {
  std::uint64_t stream = 0;
  std::uint64_t step = 0;
  std::size_t layer = 0;
  std::size_t type = 0;
};

/// True when slot `slot` of node `node` is dropped.
bool slot_dropped(const DropoutKey& key, std::size_t node, std::size_t slot, double p);

/// Zeroes whole slots with probability p and scales survivors by 1/(1-p).
/// Identity when not training or p = 0. Slots below `keep_prefix` are never
/// dropped.
template <typename Real>
Var<Real> slot_dropout(const Var<Real>& h, double p, bool training, const DropoutKey& key,
                       std::span<const std::size_t> original_ids, std::size_t keep_prefix = 0);

}  // namespace seqhgnn
