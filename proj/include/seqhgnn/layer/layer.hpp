#pragma once

#include <cstddef>
#include <vector>

#include "seqhgnn/graph/hetero_graph.hpp"
#include "seqhgnn/seq/seq_repr.hpp"
#include "seqhgnn/tensor/params.hpp"

namespace seqhgnn {

enum class AttentionNorm {
  Joint,    // softmax over (source node, source slot) per target slot
  Literal,  // softmax over source nodes per (source slot, target slot)
};

struct LayerOptions {
  std::size_t heads = 1;
  AttentionNorm norm = AttentionNorm::Joint;
  bool scale_outside = false;  // multiply normalized weights by 1/sqrt(d) instead of scaling logits by 1/sqrt(d_h)
  bool relation_encoding = true;
  bool sequential = true;  // false: mean over the previous slot and relation blocks, one slot per layer
};

template <typename Real>
struct LayerParams {
  struct PerType {
    Parameter<Real>* query_w = nullptr;
    Parameter<Real>* query_b = nullptr;
    Parameter<Real>* key_w = nullptr;
    Parameter<Real>* key_b = nullptr;
    Parameter<Real>* value_w = nullptr;
    Parameter<Real>* value_b = nullptr;
    Parameter<Real>* adopt = nullptr;
  };
  struct PerRelation {
    Parameter<Real>* att = nullptr;  // heads × d_h × d_h
    Parameter<Real>* ext = nullptr;  // d × d
    Parameter<Real>* enc = nullptr;  // d
  };

  std::size_t d = 0;
  std::size_t heads = 1;
  std::vector<PerType> types;
  std::vector<PerRelation> relations;

  /// Xavier-uniform weights, zero biases and zero relation encodings.
  /// Encodings are frozen when `trainable_encoding` is false.
  static LayerParams create(ParamStore<Real>& store, const Schema& schema, std::size_t d, std::size_t heads,
                            std::size_t layer, Rng& rng, bool trainable_encoding = true);
};

// ---- edge-level kernels -------------------------------------------------
// Edges are enumerated in CSR order (grouped by target, sources ascending).

/// logits[e, h, i, j] = scale · <kw[s_e, i, head h], q[t_e, j, head h]>
template <typename Real>
Var<Real> edge_logits(const Var<Real>& kw, const Var<Real>& q, const Csr& csr, std::size_t heads, Real scale);

/// Normalizes logits[E × h × F_s × F_t] per target node.
template <typename Real>
Var<Real> edge_softmax(const Var<Real>& logits, const Csr& csr, AttentionNorm norm);

/// out[t, j, c] = Σ_{e into t} Σ_i attn[e, head(c), i, j] · ext[s_e, i, c]
template <typename Real>
Var<Real> edge_aggregate(const Var<Real>& attn, const Var<Real>& ext, const Csr& csr, std::size_t num_targets);

// ---- layer steps --------------------------------------------------------

template <typename Real>
struct QKV {
  Var<Real> query, key, value;  // N × F × d each
};

/// The type's shared W and b applied to every slot.
template <typename Real>
Var<Real> project_slots(const Var<Real>& h, const Var<Real>& w, const Var<Real>& b);

template <typename Real>
std::vector<QKV<Real>> project_qkv(const SeqState<Real>& state, const LayerParams<Real>& p);

/// Attention block of one relation, shape E × h × F_s × F_t.
template <typename Real>
Var<Real> relation_attention(const Var<Real>& src_keys, const Var<Real>& dst_queries, const Var<Real>& att,
                             const Csr& csr, const LayerOptions& opt);

/// Ext[s] = W_ext · V[s] per slot, where V already holds W_value · H + b_value.
template <typename Real>
Var<Real> extract_messages(const Var<Real>& src_values, const Var<Real>& ext);

template <typename Real>
Var<Real> aggregate_messages(const Var<Real>& attn, const Var<Real>& ext, const Csr& csr, std::size_t num_targets);

/// Adds each relation's encoding to every slot of its block and concatenates
/// the blocks along the slot axis. `encodings` may be empty (no encoding).
template <typename Real>
Var<Real> encode_relations(const std::vector<Var<Real>>& messages, const std::vector<Var<Real>>& encodings);

/// prev ∥ W_adopt · encoded
template <typename Real>
Var<Real> update_sequences(const Var<Real>& prev, const Var<Real>& encoded, const Var<Real>& adopt);

/// Intermediate values of one layer, kept for inspection.
template <typename Real>
struct LayerTrace {
  std::vector<Var<Real>> attention;  // per relation, E × h × F_s × F_t
  std::vector<Var<Real>> messages;   // per relation, N_t × F_t × d
};

template <typename Real>
SeqState<Real> layer_forward(const SeqState<Real>& state, const HeteroGraph& g, const LayerParams<Real>& p,
                             const LayerOptions& opt, LayerTrace<Real>* trace = nullptr);

}  // namespace seqhgnn
