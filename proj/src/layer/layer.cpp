#include "seqhgnn/layer/layer.hpp"

#include <algorithm>
#include <cmath>

#include "seqhgnn/errors.hpp"
#include "seqhgnn/tensor/ops.hpp"

namespace seqhgnn {
namespace {

template <typename Real>
Tape<Real>& tape_of(const Var<Real>& v) {
  if (!v.valid()) throw Error("operation on an unbound Var");
  return *v.tape();
}

void require_shape3(const Shape& s, const char* what) {
  if (s.size() != 3) throw ShapeError(std::string(what) + ": expected N × F × d, got " + shape_str(s));
}

std::vector<std::size_t> edge_targets(const Csr& csr) {
  std::vector<std::size_t> t(csr.num_edges());
  for (std::size_t n = 0; n < csr.num_targets(); ++n) {
    for (std::size_t e = csr.offsets[n]; e < csr.offsets[n + 1]; ++e) t[e] = n;
  }
  return t;
}

}  // namespace

template <typename Real>
LayerParams<Real> LayerParams<Real>::create(ParamStore<Real>& store, const Schema& schema, std::size_t d,
                                            std::size_t heads, std::size_t layer, Rng& rng, bool trainable_encoding) {
  if (heads == 0 || d % heads != 0) throw ConfigError("d = " + std::to_string(d) + " is not divisible by heads = " + std::to_string(heads));
  LayerParams p;
  p.d = d;
  p.heads = heads;
  const std::size_t dh = d / heads;
  const std::string prefix = "layer" + std::to_string(layer) + ".";
  auto square = [&](const std::string& name) { return &store.add(name, xavier_uniform<Real>({d, d}, d, d, rng)); };
  auto zeros = [&](const std::string& name) { return &store.add(name, Tensor<Real>({d})); };
  for (const auto& nt : schema.node_types) {
    const std::string n = prefix + nt.name + ".";
    PerType t;
    t.query_w = square(n + "query.W");
    t.query_b = zeros(n + "query.b");
    t.key_w = square(n + "key.W");
    t.key_b = zeros(n + "key.b");
    t.value_w = square(n + "value.W");
    t.value_b = zeros(n + "value.b");
    t.adopt = square(n + "adopt.W");
    p.types.push_back(t);
  }
  for (const auto& rel : schema.relations) {
    const std::string n = prefix + rel.key() + ".";
    PerRelation r;
    r.att = &store.add(n + "att.W", xavier_uniform<Real>({heads, dh, dh}, dh, dh, rng));
    r.ext = square(n + "ext.W");
    r.enc = &store.add(n + "enc", Tensor<Real>({d}), trainable_encoding);
    p.relations.push_back(r);
  }
  return p;
}

template <typename Real>
Var<Real> edge_logits(const Var<Real>& kw, const Var<Real>& q, const Csr& csr, std::size_t heads, Real scale) {
  auto& tape = tape_of(kw);
  require_shape3(kw.shape(), "edge_logits keys");
  require_shape3(q.shape(), "edge_logits queries");
  const std::size_t fs = kw.dim(1), ft = q.dim(1), d = kw.dim(2);
  if (q.dim(2) != d || heads == 0 || d % heads != 0) throw ShapeError("edge_logits: width mismatch");
  if (q.dim(0) != csr.num_targets()) throw ShapeError("edge_logits: query rows do not match the relation's targets");
  const std::size_t E = csr.num_edges(), dh = d / heads;
  for (std::size_t s : csr.sources) {
    if (s >= kw.dim(0)) throw ShapeError("edge_logits: source id out of range");
  }
  const auto tgt = edge_targets(csr);
  Tensor<Real> out({E, heads, fs, ft});
  auto o = out.data();
  auto kv = kw.value().data();
  auto qv = q.value().data();
  for (std::size_t e = 0; e < E; ++e) {
    const Real* ks = kv.data() + csr.sources[e] * fs * d;
    const Real* qt = qv.data() + tgt[e] * ft * d;
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < fs; ++i) {
        const Real* ki = ks + i * d + h * dh;
        for (std::size_t j = 0; j < ft; ++j) {
          const Real* qj = qt + j * d + h * dh;
          Real acc = 0;
          for (std::size_t c = 0; c < dh; ++c) acc += ki[c] * qj[c];
          o[((e * heads + h) * fs + i) * ft + j] = scale * acc;
        }
      }
    }
  }
  return tape.record("edge_logits", std::move(out), {kw, q},
                     [kw, q, &csr, tgt, heads, fs, ft, d, dh, E, scale](Tape<Real>& t, const Tensor<Real>& g) {
                       auto gv = g.data();
                       Tensor<Real>* dk = t.grad_sink(kw);
                       Tensor<Real>* dq = t.grad_sink(q);
                       auto kv = kw.value().data();
                       auto qv = q.value().data();
                       for (std::size_t e = 0; e < E; ++e) {
                         const std::size_t s = csr.sources[e];
                         for (std::size_t h = 0; h < heads; ++h) {
                           for (std::size_t i = 0; i < fs; ++i) {
                             for (std::size_t j = 0; j < ft; ++j) {
                               const Real gij = scale * gv[((e * heads + h) * fs + i) * ft + j];
                               if (gij == Real(0)) continue;
                               const std::size_t ko = (s * fs + i) * d + h * dh, qo = (tgt[e] * ft + j) * d + h * dh;
                               if (dk) {
                                 auto dkv = dk->data();
                                 for (std::size_t c = 0; c < dh; ++c) dkv[ko + c] += gij * qv[qo + c];
                               }
                               if (dq) {
                                 auto dqv = dq->data();
                                 for (std::size_t c = 0; c < dh; ++c) dqv[qo + c] += gij * kv[ko + c];
                               }
                             }
                           }
                         }
                       }
                     });
}

template <typename Real>
Var<Real> edge_softmax(const Var<Real>& logits, const Csr& csr, AttentionNorm norm) {
  auto& tape = tape_of(logits);
  const Shape& s = logits.shape();
  if (s.size() != 4 || s[0] != csr.num_edges()) throw ShapeError("edge_softmax: expected E × h × F_s × F_t, got " + shape_str(s));
  const std::size_t H = s[1], fs = s[2], ft = s[3];
  auto idx = [=](std::size_t e, std::size_t h, std::size_t i, std::size_t j) { return ((e * H + h) * fs + i) * ft + j; };
  // Visits every normalization group as a list of flat indices.
  auto for_each_group = [&csr, H, fs, ft, norm, idx](auto&& fn) {
    std::vector<std::size_t> group;
    for (std::size_t t = 0; t < csr.num_targets(); ++t) {
      const std::size_t b = csr.offsets[t], e_end = csr.offsets[t + 1];
      if (b == e_end) continue;
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t j = 0; j < ft; ++j) {
          if (norm == AttentionNorm::Joint) {
            group.clear();
            for (std::size_t e = b; e < e_end; ++e) {
              for (std::size_t i = 0; i < fs; ++i) group.push_back(idx(e, h, i, j));
            }
            fn(group);
          } else {
            for (std::size_t i = 0; i < fs; ++i) {
              group.clear();
              for (std::size_t e = b; e < e_end; ++e) group.push_back(idx(e, h, i, j));
              fn(group);
            }
          }
        }
      }
    }
  };
  Tensor<Real> out(s);
  auto x = logits.value().data();
  auto o = out.data();
  for_each_group([&](const std::vector<std::size_t>& g) {
    Real mx = x[g[0]];
    for (std::size_t k : g) mx = std::max(mx, x[k]);
    Real sum = 0;
    for (std::size_t k : g) {
      o[k] = std::exp(x[k] - mx);
      sum += o[k];
    }
    for (std::size_t k : g) o[k] /= sum;
  });
  const std::size_t out_id = tape.size();
  return tape.record("edge_softmax", std::move(out), {logits},
                     [logits, out_id, for_each_group](Tape<Real>& t, const Tensor<Real>& g) {
                       auto* dx = t.grad_sink(logits);
                       if (!dx) return;
                       auto y = t.value(out_id).data();
                       auto gv = g.data();
                       auto dv = dx->data();
                       for_each_group([&](const std::vector<std::size_t>& grp) {
                         Real dot = 0;
                         for (std::size_t k : grp) dot += gv[k] * y[k];
                         for (std::size_t k : grp) dv[k] += y[k] * (gv[k] - dot);
                       });
                     });
}

template <typename Real>
Var<Real> edge_aggregate(const Var<Real>& attn, const Var<Real>& ext, const Csr& csr, std::size_t num_targets) {
  auto& tape = tape_of(attn);
  const Shape& as = attn.shape();
  require_shape3(ext.shape(), "edge_aggregate");
  if (as.size() != 4 || as[0] != csr.num_edges() || as[2] != ext.dim(1)) {
    throw ShapeError("edge_aggregate: attention " + shape_str(as) + " does not match messages " + shape_str(ext.shape()));
  }
  if (csr.num_targets() != num_targets) throw ShapeError("edge_aggregate: target count mismatch");
  const std::size_t H = as[1], fs = as[2], ft = as[3], d = ext.dim(2);
  if (H == 0 || d % H != 0) throw ShapeError("edge_aggregate: width not divisible by heads");
  const std::size_t dh = d / H;
  Tensor<Real> out({num_targets, ft, d});
  auto o = out.data();
  auto av = attn.value().data();
  auto xv = ext.value().data();
  for (std::size_t t = 0; t < num_targets; ++t) {
    for (std::size_t e = csr.offsets[t]; e < csr.offsets[t + 1]; ++e) {
      const std::size_t s = csr.sources[e];
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t i = 0; i < fs; ++i) {
          const Real* xi = xv.data() + (s * fs + i) * d + h * dh;
          for (std::size_t j = 0; j < ft; ++j) {
            const Real a = av[((e * H + h) * fs + i) * ft + j];
            Real* oj = o.data() + (t * ft + j) * d + h * dh;
            for (std::size_t c = 0; c < dh; ++c) oj[c] += a * xi[c];
          }
        }
      }
    }
  }
  return tape.record("edge_aggregate", std::move(out), {attn, ext},
                     [attn, ext, &csr, num_targets, H, fs, ft, d, dh](Tape<Real>& t, const Tensor<Real>& g) {
                       auto gv = g.data();
                       Tensor<Real>* da = t.grad_sink(attn);
                       Tensor<Real>* dx = t.grad_sink(ext);
                       auto av = attn.value().data();
                       auto xv = ext.value().data();
                       for (std::size_t tt = 0; tt < num_targets; ++tt) {
                         for (std::size_t e = csr.offsets[tt]; e < csr.offsets[tt + 1]; ++e) {
                           const std::size_t s = csr.sources[e];
                           for (std::size_t h = 0; h < H; ++h) {
                             for (std::size_t i = 0; i < fs; ++i) {
                               const std::size_t xo = (s * fs + i) * d + h * dh;
                               for (std::size_t j = 0; j < ft; ++j) {
                                 const std::size_t ai = ((e * H + h) * fs + i) * ft + j;
                                 const std::size_t go = (tt * ft + j) * d + h * dh;
                                 if (da) {
                                   Real acc = 0;
                                   for (std::size_t c = 0; c < dh; ++c) acc += gv[go + c] * xv[xo + c];
                                   da->data()[ai] += acc;
                                 }
                                 if (dx) {
                                   const Real a = av[ai];
                                   auto dxv = dx->data();
                                   for (std::size_t c = 0; c < dh; ++c) dxv[xo + c] += a * gv[go + c];
                                 }
                               }
                             }
                           }
                         }
                       }
                     });
}

template <typename Real>
Var<Real> project_slots(const Var<Real>& h, const Var<Real>& w, const Var<Real>& b) {
  require_shape3(h.shape(), "project_slots");
  const std::size_t n = h.dim(0), f = h.dim(1), d = h.dim(2);
  if (w.shape() != Shape{d, d}) throw ShapeError("project_slots: weight " + shape_str(w.shape()) + " for width " + std::to_string(d));
  auto flat = reshape(h, {n * f, d});
  auto y = matmul_nt(flat, w);
  if (b.valid()) y = add_bias(y, b);
  return reshape(y, {n, f, d});
}

template <typename Real>
std::vector<QKV<Real>> project_qkv(const SeqState<Real>& state, const LayerParams<Real>& p) {
  std::vector<QKV<Real>> out;
  for (std::size_t t = 0; t < state.h.size(); ++t) {
    const auto& h = state.h[t];
    if (h.dim(2) != p.d) throw ShapeError("project_qkv: state width " + std::to_string(h.dim(2)) + " != " + std::to_string(p.d));
    auto& tape = tape_of(h);
    const auto& pt = p.types.at(t);
    out.push_back({project_slots(h, tape.param(*pt.query_w), tape.param(*pt.query_b)),
                   project_slots(h, tape.param(*pt.key_w), tape.param(*pt.key_b)),
                   project_slots(h, tape.param(*pt.value_w), tape.param(*pt.value_b))});
  }
  return out;
}

template <typename Real>
Var<Real> relation_attention(const Var<Real>& src_keys, const Var<Real>& dst_queries, const Var<Real>& att,
                             const Csr& csr, const LayerOptions& opt) {
  require_shape3(src_keys.shape(), "relation_attention");
  const std::size_t n = src_keys.dim(0), f = src_keys.dim(1), d = src_keys.dim(2);
  const std::size_t heads = opt.heads;
  auto kw = reshape(head_matmul(reshape(src_keys, {n * f, d}), att), {n, f, d});
  const Real inner = opt.scale_outside ? Real(1) : Real(1) / std::sqrt(static_cast<Real>(d / heads));
  auto a = edge_softmax(edge_logits(kw, dst_queries, csr, heads, inner), csr, opt.norm);
  if (opt.scale_outside) a = scale(a, Real(1) / std::sqrt(static_cast<Real>(d)));
  return a;
}

template <typename Real>
Var<Real> extract_messages(const Var<Real>& src_values, const Var<Real>& ext) {
  return project_slots(src_values, ext, Var<Real>());
}

template <typename Real>
Var<Real> aggregate_messages(const Var<Real>& attn, const Var<Real>& ext, const Csr& csr, std::size_t num_targets) {
  return edge_aggregate(attn, ext, csr, num_targets);
}

template <typename Real>
Var<Real> encode_relations(const std::vector<Var<Real>>& messages, const std::vector<Var<Real>>& encodings) {
  if (messages.empty()) throw Error("encode_relations: no relation blocks");
  if (!encodings.empty() && encodings.size() != messages.size()) throw Error("encode_relations: missing relation block");
  std::vector<Var<Real>> blocks;
  for (std::size_t r = 0; r < messages.size(); ++r) {
    if (messages[r].shape() != messages[0].shape()) throw ShapeError("encode_relations: block shapes differ");
    blocks.push_back(encodings.empty() ? messages[r] : add_bias(messages[r], encodings[r]));
  }
  return blocks.size() == 1 ? blocks[0] : concat(blocks, 1);
}

template <typename Real>
Var<Real> update_sequences(const Var<Real>& prev, const Var<Real>& encoded, const Var<Real>& adopt) {
  require_shape3(prev.shape(), "update_sequences");
  require_shape3(encoded.shape(), "update_sequences");
  if (prev.dim(0) != encoded.dim(0) || prev.dim(2) != encoded.dim(2)) {
    throw ShapeError("update_sequences: " + shape_str(prev.shape()) + " vs " + shape_str(encoded.shape()));
  }
  if (encoded.dim(1) % prev.dim(1) != 0) throw ShapeError("update_sequences: encoded length is not a multiple of F");
  return concat(std::vector<Var<Real>>{prev, project_slots(encoded, adopt, Var<Real>())}, 1);
}

template <typename Real>
SeqState<Real> layer_forward(const SeqState<Real>& state, const HeteroGraph& g, const LayerParams<Real>& p,
                             const LayerOptions& opt, LayerTrace<Real>* trace) {
  const Schema& schema = g.schema;
  if (state.h.size() != schema.node_types.size()) throw ShapeError("layer_forward: state does not cover every type");
  if (opt.heads != p.heads) throw ConfigError("layer_forward: head count differs from parameters");
  auto& tape = tape_of(state.h.at(0));
  const auto qkv = project_qkv(state, p);
  if (trace) {
    trace->attention.assign(schema.relations.size(), Var<Real>());
    trace->messages.assign(schema.relations.size(), Var<Real>());
  }

  SeqState<Real> next;
  next.layer = state.layer + 1;
  for (std::size_t t = 0; t < schema.node_types.size(); ++t) {
    const auto rels = schema.incoming(t);
    const auto& prev = state.h[t];
    if (rels.empty()) {
      next.h.push_back(prev);
      continue;
    }
    if (!opt.sequential && prev.dim(1) != 1) throw ShapeError("layer_forward: mean mode expects one slot per node");
    std::vector<Var<Real>> msgs, encs;
    for (std::size_t r : rels) {
      const std::size_t s = schema.relation_src(r);
      const Csr& csr = g.csr.at(r);
      const auto& pr = p.relations.at(r);
      auto attn = relation_attention(qkv[s].key, qkv[t].query, tape.param(*pr.att), csr, opt);
      auto ext = extract_messages(qkv[s].value, tape.param(*pr.ext));
      auto msg = aggregate_messages(attn, ext, csr, g.num_nodes[t]);
      if (trace) {
        trace->attention[r] = attn;
        trace->messages[r] = msg;
      }
      msgs.push_back(msg);
      if (opt.relation_encoding) encs.push_back(tape.param(*pr.enc));
    }
    auto encoded = encode_relations(msgs, encs);
    auto grown = update_sequences(prev, encoded, tape.param(*p.types[t].adopt));
    if (opt.sequential) {
      next.h.push_back(grown);
    } else {
      const std::size_t n = prev.dim(0), d = prev.dim(2);
      next.h.push_back(reshape(reduce_mean(grown, 1), {n, 1, d}));
    }
  }
  return next;
}

#define SEQHGNN_INSTANTIATE_LAYER(R)                                                                            \
  template struct LayerParams<R>;                                                                               \
  template Var<R> edge_logits(const Var<R>&, const Var<R>&, const Csr&, std::size_t, R);                        \
  template Var<R> edge_softmax(const Var<R>&, const Csr&, AttentionNorm);                                       \
  template Var<R> edge_aggregate(const Var<R>&, const Var<R>&, const Csr&, std::size_t);                        \
  template Var<R> project_slots(const Var<R>&, const Var<R>&, const Var<R>&);                                   \
  template std::vector<QKV<R>> project_qkv(const SeqState<R>&, const LayerParams<R>&);                          \
  template Var<R> relation_attention(const Var<R>&, const Var<R>&, const Var<R>&, const Csr&, const LayerOptions&); \
  template Var<R> extract_messages(const Var<R>&, const Var<R>&);                                               \
  template Var<R> aggregate_messages(const Var<R>&, const Var<R>&, const Csr&, std::size_t);                    \
  template Var<R> encode_relations(const std::vector<Var<R>>&, const std::vector<Var<R>>&);                     \
  template Var<R> update_sequences(const Var<R>&, const Var<R>&, const Var<R>&);                                \
  template SeqState<R> layer_forward(const SeqState<R>&, const HeteroGraph&, const LayerParams<R>&,             \
                                     const LayerOptions&, LayerTrace<R>*);

SEQHGNN_INSTANTIATE_LAYER(float)
SEQHGNN_INSTANTIATE_LAYER(double)
SEQHGNN_INSTANTIATE_LAYER(long double)

}  // namespace seqhgnn
