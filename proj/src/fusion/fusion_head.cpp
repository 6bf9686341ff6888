#include "seqhgnn/fusion/fusion_head.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "seqhgnn/errors.hpp"
#include "seqhgnn/layer/layer.hpp"
#include "seqhgnn/tensor/ops.hpp"

namespace seqhgnn {

template <typename Real>
FusionParams<Real> FusionParams<Real>::create(ParamStore<Real>& store, std::size_t d, std::size_t heads,
                                              std::size_t num_classes, Rng& rng) {
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("d = " + std::to_string(d) + " is not divisible by heads = " + std::to_string(heads));
  }
  if (num_classes == 0) throw ConfigError("classifier needs at least one class");
  FusionParams p;
  p.d = d;
  p.heads = heads;
  p.query = &store.add("fusion.query.W", xavier_uniform<Real>({d, d}, d, d, rng));
  p.key = &store.add("fusion.key.W", xavier_uniform<Real>({d, d}, d, d, rng));
  p.value = &store.add("fusion.value.W", xavier_uniform<Real>({d, d}, d, d, rng));
  p.classifier_w = &store.add("classifier.W", xavier_uniform<Real>({d, num_classes}, d, num_classes, rng));
  p.classifier_b = &store.add("classifier.b", Tensor<Real>({num_classes}));
  return p;
}

template <typename Real>
FusionOutput<Real> fuse(const Var<Real>& h0, const Var<Real>& hl, const FusionParams<Real>& p) {
  if (h0.shape().size() != 3 || hl.shape().size() != 3 || h0.dim(0) != hl.dim(0) || h0.dim(2) != p.d ||
      hl.dim(2) != p.d) {
    throw ShapeError("fuse: " + shape_str(h0.shape()) + " and " + shape_str(hl.shape()) + " for width " +
                     std::to_string(p.d));
  }
  auto& tape = *h0.tape();
  const Var<Real> none;
  auto q = reduce_mean(project_slots(h0, tape.param(*p.query), none), 1);
  auto k = project_slots(hl, tape.param(*p.key), none);
  auto v = project_slots(hl, tape.param(*p.value), none);
  const Real inv = Real(1) / std::sqrt(static_cast<Real>(p.d / p.heads));
  auto a = softmax(scale(head_dot(q, k, p.heads), inv), 2);
  return {head_mix(a, v), a};
}

template <typename Real>
FusionOutput<Real> mean_fusion(const Var<Real>& hl, std::size_t heads) {
  if (hl.shape().size() != 3) throw ShapeError("mean_fusion: expected N × F × d, got " + shape_str(hl.shape()));
  const std::size_t n = hl.dim(0), f = hl.dim(1);
  auto a = hl.tape()->constant(Tensor<Real>::filled({n, heads, f}, Real(1) / static_cast<Real>(f)));
  return {reduce_mean(hl, 1), a};
}

template <typename Real>
Var<Real> classify(const Var<Real>& h, const FusionParams<Real>& p) {
  auto& tape = *h.tape();
  return add_bias(matmul(h, tape.param(*p.classifier_w)), tape.param(*p.classifier_b));
}

Targets gather_targets(const HeteroGraph& g, std::span<const std::size_t> nodes) {
  Targets t;
  t.multi_label = g.multi_label;
  t.num_classes = g.schema.num_classes;
  for (std::size_t i : nodes) {
    if (i >= g.labeled.size() || !g.labeled[i]) throw Error("node " + std::to_string(i) + " has no label");
    if (g.multi_label) {
      for (std::size_t c = 0; c < t.num_classes; ++c) t.flags.push_back(g.label_flags.at(i, c) != 0.0);
    } else {
      t.classes.push_back(g.labels[i]);
    }
  }
  return t;
}

template <typename Real>
Var<Real> classification_loss(const Var<Real>& logits, const Targets& targets) {
  if (!targets.multi_label) return cross_entropy(logits, std::span<const std::int32_t>(targets.classes));
  Tensor<Real> y({targets.size(), targets.num_classes});
  for (std::size_t k = 0; k < targets.flags.size(); ++k) y[k] = targets.flags[k] ? Real(1) : Real(0);
  return bce_with_logits(logits, y);
}

template <typename Real>
Targets predict(const Tensor<Real>& logits, bool multi_label) {
  if (logits.rank() != 2) throw ShapeError("predict: expected N × C logits");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  Targets t;
  t.multi_label = multi_label;
  t.num_classes = c;
  for (std::size_t i = 0; i < n; ++i) {
    if (multi_label) {
      for (std::size_t j = 0; j < c; ++j) t.flags.push_back(logits.at(i, j) >= Real(0));
    } else {
      std::size_t best = 0;
      for (std::size_t j = 1; j < c; ++j) {
        if (logits.at(i, j) > logits.at(i, best)) best = j;
      }
      t.classes.push_back(static_cast<std::int32_t>(best));
    }
  }
  return t;
}

Metrics f1_metrics(const Targets& predicted, const Targets& truth) {
  if (predicted.multi_label != truth.multi_label || predicted.num_classes != truth.num_classes ||
      predicted.size() != truth.size()) {
    throw Error("f1_metrics: predictions and labels differ in shape");
  }
  const std::size_t n = truth.size(), c = truth.num_classes;
  if (n == 0) throw Error("f1_metrics: empty input");
  std::vector<std::size_t> tp(c, 0), fp(c, 0), fn(c, 0);
  std::size_t exact = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bool all = true;
    for (std::size_t j = 0; j < c; ++j) {
      bool p, y;
      if (truth.multi_label) {
        p = predicted.flags[i * c + j] != 0;
        y = truth.flags[i * c + j] != 0;
      } else {
        p = predicted.classes[i] == static_cast<std::int32_t>(j);
        y = truth.classes[i] == static_cast<std::int32_t>(j);
      }
      tp[j] += p && y;
      fp[j] += p && !y;
      fn[j] += !p && y;
      all = all && p == y;
    }
    exact += all;
  }
  auto f1 = [](std::size_t a, std::size_t b, std::size_t e) {
    const std::size_t den = 2 * a + b + e;
    return den == 0 ? 0.0 : 2.0 * static_cast<double>(a) / static_cast<double>(den);
  };
  std::size_t TP = 0, FP = 0, FN = 0;
  double macro = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    TP += tp[j];
    FP += fp[j];
    FN += fn[j];
    macro += f1(tp[j], fp[j], fn[j]);
  }
  Metrics m;
  m.micro_f1 = f1(TP, FP, FN);
  m.macro_f1 = macro / static_cast<double>(c);
  m.accuracy = static_cast<double>(exact) / static_cast<double>(n);
  return m;
}

void sort_paths(std::vector<PathWeight>& paths) {
  std::sort(paths.begin(), paths.end(), [](const PathWeight& a, const PathWeight& b) {
    if (a.weight != b.weight) return a.weight > b.weight;
    return a.path < b.path;
  });
}

std::vector<PathWeight> node_paths(std::span<const double> attention, std::size_t heads, const Schema& schema,
                                   std::size_t type, const std::vector<SlotLabel>& table) {
  const std::size_t f = table.size();
  if (heads == 0 || attention.size() != heads * f) throw Error("node_paths: attention does not match the label table");
  std::map<std::string, double> grouped;
  for (std::size_t i = 0; i < f; ++i) {
    double w = 0.0;
    for (std::size_t h = 0; h < heads; ++h) w += attention[h * f + i];
    grouped[render_label(schema, type, table, i)] += w / static_cast<double>(heads);
  }
  std::vector<PathWeight> out;
  for (auto& [path, w] : grouped) out.push_back({path, w});
  sort_paths(out);
  return out;
}

MetaPathReport metapath_report(const Tensor<double>& attention, const Schema& schema, std::size_t type,
                               const std::vector<SlotLabel>& table, std::size_t k,
                               std::span<const std::size_t> node_ids, bool with_nodes) {
  if (k < 1) throw Error("top-k must be at least 1");
  if (attention.rank() != 3 || attention.dim(2) != table.size()) {
    throw Error("metapath_report: label table has " + std::to_string(table.size()) + " slots, attention " +
                shape_str(attention.shape()));
  }
  const std::size_t n = attention.dim(0), heads = attention.dim(1), f = attention.dim(2);
  if (node_ids.size() != n) throw Error("metapath_report: node id count differs from attention rows");
  MetaPathReport report;
  std::map<std::string, double> total;
  for (std::size_t i = 0; i < n; ++i) {
    auto paths = node_paths(attention.data().subspan(i * heads * f, heads * f), heads, schema, type, table);
    for (const auto& p : paths) total[p.path] += p.weight;
    if (with_nodes) {
      if (paths.size() > k) paths.resize(k);
      report.per_node.emplace_back(node_ids[i], std::move(paths));
    }
  }
  std::vector<PathWeight> agg;
  for (auto& [path, w] : total) agg.push_back({path, n ? w / static_cast<double>(n) : 0.0});
  sort_paths(agg);
  if (agg.size() > k) agg.resize(k);
  report.per_type[schema.node_types[type].name] = std::move(agg);
  return report;
}

namespace {

nlohmann::json paths_json(const std::vector<PathWeight>& paths) {
  auto arr = nlohmann::json::array();
  for (const auto& p : paths) arr.push_back({{"path", p.path}, {"weight", p.weight}});
  return arr;
}

}  // namespace

nlohmann::json report_json(const MetaPathReport& report) {
  nlohmann::json j;
  j["per_type"] = nlohmann::json::object();
  for (const auto& [type, paths] : report.per_type) j["per_type"][type] = paths_json(paths);
  if (!report.per_node.empty()) {
    j["per_node"] = nlohmann::json::object();
    for (const auto& [id, paths] : report.per_node) j["per_node"][std::to_string(id)] = paths_json(paths);
  }
  return j;
}

std::string report_text(const MetaPathReport& report) {
  std::ostringstream os;
  os << "type\trank\tweight\tpath\n";
  for (const auto& [type, paths] : report.per_type) {
    for (std::size_t r = 0; r < paths.size(); ++r) {
      os << type << '\t' << r + 1 << '\t' << std::fixed << std::setprecision(6) << paths[r].weight << '\t'
         << paths[r].path << '\n';
    }
  }
  return os.str();
}

#define SEQHGNN_INSTANTIATE_FUSION(R)                                                     \
  template struct FusionParams<R>;                                                        \
  template FusionOutput<R> fuse(const Var<R>&, const Var<R>&, const FusionParams<R>&);    \
  template FusionOutput<R> mean_fusion(const Var<R>&, std::size_t);                       \
  template Var<R> classify(const Var<R>&, const FusionParams<R>&);                        \
  template Var<R> classification_loss(const Var<R>&, const Targets&);                     \
  template Targets predict(const Tensor<R>&, bool);

SEQHGNN_INSTANTIATE_FUSION(float)
SEQHGNN_INSTANTIATE_FUSION(double)
SEQHGNN_INSTANTIATE_FUSION(long double)

}  // namespace seqhgnn
