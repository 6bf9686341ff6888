#include "seqhgnn/seq/seq_repr.hpp"

#include <algorithm>

#include "seqhgnn/errors.hpp"
#include "seqhgnn/tensor/ops.hpp"

namespace seqhgnn {

std::size_t slot_count(const Schema& schema, std::size_t type, std::size_t layer) {
  std::size_t f = schema.node_types.at(type).base_slots();
  const std::size_t grow = schema.incoming(type).size() + 1;
  for (std::size_t l = 0; l < layer; ++l) f *= grow;
  return f;
}

LabelTables slot_labels(const Schema& schema, std::size_t layers) {
  LabelTables tables(schema.node_types.size());
  for (std::size_t t = 0; t < schema.node_types.size(); ++t) {
    const auto rels = schema.incoming(t);
    std::vector<SlotLabel> table;
    for (std::size_t f = 0; f < schema.node_types[t].base_slots(); ++f) table.push_back(SlotLabel::base(f));
    tables[t].push_back(table);
    for (std::size_t l = 1; l <= layers; ++l) {
      const std::size_t prev = table.size();
      for (std::size_t r : rels) {
        for (std::size_t j = 0; j < prev; ++j) table.push_back(SlotLabel::msg(r, j, l));
      }
      tables[t].push_back(table);
    }
  }
  return tables;
}

SlotLabel decode_slot(const Schema& schema, std::size_t type, std::size_t layer, std::size_t index) {
  if (index >= slot_count(schema, type, layer)) {
    throw Error("slot " + std::to_string(index) + " out of range at layer " + std::to_string(layer));
  }
  const auto rels = schema.incoming(type);
  std::size_t l = 0;
  while (index >= slot_count(schema, type, l)) ++l;
  if (l == 0) return SlotLabel::base(index);
  const std::size_t prev = slot_count(schema, type, l - 1);
  const std::size_t off = index - prev;
  return SlotLabel::msg(rels[off / prev], off % prev, l);
}

std::size_t encode_slot(const Schema& schema, std::size_t type, const SlotLabel& label) {
  switch (label.kind) {
    case SlotLabel::Kind::Base:
      if (label.feature >= schema.node_types.at(type).base_slots()) throw Error("encode_slot: feature out of range");
      return label.feature;
    case SlotLabel::Kind::Msg: {
      if (label.layer == 0) throw Error("encode_slot: message slot at layer 0");
      const auto rels = schema.incoming(type);
      auto it = std::find(rels.begin(), rels.end(), label.relation);
      if (it == rels.end()) throw Error("encode_slot: relation does not target this type");
      const std::size_t prev = slot_count(schema, type, label.layer - 1);
      if (label.parent >= prev) throw Error("encode_slot: parent slot out of range");
      return prev + static_cast<std::size_t>(it - rels.begin()) * prev + label.parent;
    }
    case SlotLabel::Kind::LayerMean:
      return label.layer;
  }
  throw Error("encode_slot: bad label");
}

std::string render_label(const Schema& schema, std::size_t type, const std::vector<SlotLabel>& table, std::size_t index) {
  const SlotLabel& s = table.at(index);
  const NodeType& nt = schema.node_types[type];
  switch (s.kind) {
    case SlotLabel::Kind::Base:
      return nt.base_slots() > 1 ? nt.name + "#" + std::to_string(s.feature) : nt.name;
    case SlotLabel::Kind::LayerMean:
      return nt.name + " layer " + std::to_string(s.layer);
    case SlotLabel::Kind::Msg:
      break;
  }
  const Relation& rel = schema.relations[s.relation];
  std::string head = rel.src;
  for (std::size_t r : schema.incoming(type)) {
    if (r != s.relation && schema.relations[r].src == rel.src) {
      head += "[" + rel.name + "]";
      break;
    }
  }
  const SlotLabel& parent = table.at(s.parent);
  const std::size_t parent_depth = parent.kind == SlotLabel::Kind::Msg ? parent.layer : 0;
  if (s.layer != parent_depth + 1) head += "@" + std::to_string(s.layer);
  const std::string inner = render_label(schema, type, table, s.parent);
  return head + "→" + (parent.kind == SlotLabel::Kind::Base ? inner : "(" + inner + ")");
}

template <typename Real>
FeatureBlocks<Real> feature_blocks(const HeteroGraph& g) {
  FeatureBlocks<Real> out(g.schema.node_types.size());
  for (std::size_t t = 0; t < out.size(); ++t) {
    const NodeType& nt = g.schema.node_types[t];
    if (nt.featureless()) continue;
    const auto& x = g.features[t];
    const std::size_t n = g.num_nodes[t], dim = nt.feature_dim;
    if (x.shape() != Shape{n, nt.num_features, dim}) {
      throw ShapeError("features of '" + nt.name + "' have shape " + shape_str(x.shape()));
    }
    for (std::size_t f = 0; f < nt.num_features; ++f) {
      Tensor<Real> block({n, dim});
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < dim; ++k) block.at(i, k) = static_cast<Real>(x.at(i, f, k));
      }
      out[t].push_back(std::move(block));
    }
  }
  return out;
}

template <typename Real>
InputProjection<Real> InputProjection<Real>::create(ParamStore<Real>& store, const Schema& schema, std::size_t d,
                                                    Rng& rng) {
  InputProjection p;
  p.d = d;
  for (const auto& nt : schema.node_types) {
    PerType pt;
    const std::string prefix = "input." + nt.name;
    if (nt.featureless()) {
      pt.embedding = &store.add(prefix + ".embedding", xavier_uniform<Real>({d}, 1, d, rng));
    } else {
      for (std::size_t f = 0; f < nt.num_features; ++f) {
        pt.weight.push_back(
            &store.add(prefix + ".W" + std::to_string(f), xavier_uniform<Real>({d, nt.feature_dim}, nt.feature_dim, d, rng)));
        pt.bias.push_back(&store.add(prefix + ".b" + std::to_string(f), Tensor<Real>({d})));
      }
    }
    p.types.push_back(std::move(pt));
  }
  return p;
}

template <typename Real>
SeqState<Real> project_features(Tape<Real>& tape, const Schema& schema, const FeatureBlocks<Real>& x,
                                std::span<const std::size_t> num_nodes, const InputProjection<Real>& p) {
  SeqState<Real> s;
  const std::size_t d = p.d;
  for (std::size_t t = 0; t < schema.node_types.size(); ++t) {
    const auto& pt = p.types.at(t);
    const std::size_t n = num_nodes[t];
    if (pt.embedding) {
      s.h.push_back(reshape(broadcast_rows(tape.param(*pt.embedding), n), {n, 1, d}));
      continue;
    }
    if (x.at(t).size() != pt.weight.size()) {
      throw ShapeError("type '" + schema.node_types[t].name + "' has " + std::to_string(x[t].size()) +
                       " features, projection expects " + std::to_string(pt.weight.size()));
    }
    std::vector<Var<Real>> slots;
    for (std::size_t f = 0; f < pt.weight.size(); ++f) {
      const auto& w = pt.weight[f]->value;
      if (x[t][f].rank() != 2 || x[t][f].dim(0) != n || x[t][f].dim(1) != w.dim(1)) {
        throw ShapeError("feature " + std::to_string(f) + " of '" + schema.node_types[t].name + "' has shape " +
                         shape_str(x[t][f].shape()) + ", expected [" + std::to_string(n) + "x" +
                         std::to_string(w.dim(1)) + "]");
      }
      auto y = add_bias(matmul_nt(tape.constant(x[t][f]), tape.param(*pt.weight[f])), tape.param(*pt.bias[f]));
      slots.push_back(reshape(y, {n, 1, d}));
    }
    s.h.push_back(slots.size() == 1 ? slots[0] : concat(slots, 1));
  }
  return s;
}

bool slot_dropped(const DropoutKey& key, std::size_t node, std::size_t slot, double p) {
  std::uint64_t h = key.stream;
  h = hash_combine(h, key.step);
  h = hash_combine(h, key.layer);
  h = hash_combine(h, key.type);
  h = hash_combine(h, node);
  h = hash_combine(h, slot);
  return to_unit(h) < p;
}

template <typename Real>
Var<Real> slot_dropout(const Var<Real>& h, double p, bool training, const DropoutKey& key,
                       std::span<const std::size_t> original_ids, std::size_t keep_prefix) {
  if (p < 0.0 || p >= 1.0) throw Error("dropout probability must be in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return h;
  if (h.shape().size() != 3) throw ShapeError("slot_dropout expects N × F × d, got " + shape_str(h.shape()));
  const std::size_t n = h.dim(0), f = h.dim(1), d = h.dim(2);
  if (original_ids.size() != n) throw ShapeError("slot_dropout: one original id per node required");
  const Real keep = static_cast<Real>(1.0 / (1.0 - p));
  Tensor<Real> mask(h.shape());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < f; ++k) {
      const Real m = (k >= keep_prefix && slot_dropped(key, original_ids[i], k, p)) ? Real(0) : keep;
      std::fill_n(mask.data().begin() + static_cast<std::ptrdiff_t>((i * f + k) * d), d, m);
    }
  }
  return mul_const(h, mask);
}

#define SEQHGNN_INSTANTIATE_SEQ(R)                                                                        \
  template FeatureBlocks<R> feature_blocks<R>(const HeteroGraph&);                                        \
  template struct InputProjection<R>;                                                                     \
  template SeqState<R> project_features(Tape<R>&, const Schema&, const FeatureBlocks<R>&,                 \
                                        std::span<const std::size_t>, const InputProjection<R>&);         \
  template Var<R> slot_dropout(const Var<R>&, double, bool, const DropoutKey&, std::span<const std::size_t>, \
                               std::size_t);

SEQHGNN_INSTANTIATE_SEQ(float)
SEQHGNN_INSTANTIATE_SEQ(double)
SEQHGNN_INSTANTIATE_SEQ(long double)

}  // namespace seqhgnn
