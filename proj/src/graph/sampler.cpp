#include <algorithm>
#include <cmath>

#include "seqhgnn/errors.hpp"
#include "seqhgnn/graph/hetero_graph.hpp"
#include "seqhgnn/random.hpp"

namespace seqhgnn {

Subgraph sample_subgraph(const HeteroGraph& g, std::string_view batch_type, std::span<const std::size_t> batch,
                         std::size_t depth, std::size_t budget, std::uint64_t seed) {
  const Schema& s = g.schema;
  if (batch_type != s.target_type) {
    throw Error("batch type '" + std::string(batch_type) + "' is not the target type '" + s.target_type + "'");
  }
  if (depth < 1) throw Error("sample_subgraph: depth must be at least 1");
  if (budget < 1) throw Error("sample_subgraph: budget must be at least 1");

  const std::size_t T = s.node_types.size();
  const std::size_t target = s.target_index();
  std::vector<std::vector<char>> chosen(T);
  for (std::size_t t = 0; t < T; ++t) chosen[t].assign(g.num_nodes[t], 0);
  std::vector<std::vector<std::size_t>> frontier(T);
  for (std::size_t id : batch) {
    if (id >= g.num_nodes[target]) throw Error("batch id " + std::to_string(id) + " out of range");
    if (chosen[target][id]) throw Error("duplicate batch id " + std::to_string(id));
    chosen[target][id] = 1;
    frontier[target].push_back(id);
  }

  Rng rng(seed, "sampler");
  std::vector<std::vector<double>> weight(T);
  for (std::size_t t = 0; t < T; ++t) weight[t].assign(g.num_nodes[t], 0.0);

  for (std::size_t round = 0; round < depth; ++round) {
    std::vector<std::vector<std::size_t>> touched(T);
    for (std::size_t r = 0; r < s.relations.size(); ++r) {
      const std::size_t src = s.relation_src(r), dst = s.relation_dst(r);
      const Csr& csr = g.csr[r];
      for (std::size_t t : frontier[dst]) {
        for (std::size_t u : csr.neighbors(t)) {
          if (chosen[src][u]) continue;
          if (weight[src][u] == 0.0) touched[src].push_back(u);
          weight[src][u] += 1.0;
        }
      }
    }
    bool grew = false;
    for (std::size_t t = 0; t < T; ++t) {
      auto& cand = touched[t];
      std::sort(cand.begin(), cand.end());
      std::vector<std::size_t> keep;
      if (cand.size() <= budget) {
        keep = cand;
      } else {
        // Weighted sampling without replacement: keep the largest log(u)/w.
        std::vector<std::pair<double, std::size_t>> keys;
        keys.reserve(cand.size());
        for (std::size_t u : cand) {
          double x = 0.0;
          while (x <= 0.0) x = rng.uniform();
          keys.emplace_back(std::log(x) / weight[t][u], u);
        }
        std::partial_sort(keys.begin(), keys.begin() + static_cast<std::ptrdiff_t>(budget), keys.end(),
                          [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
        for (std::size_t k = 0; k < budget; ++k) keep.push_back(keys[k].second);
        std::sort(keep.begin(), keep.end());
      }
      for (std::size_t u : cand) weight[t][u] = 0.0;
      for (std::size_t u : keep) chosen[t][u] = 1;
      grew = grew || !keep.empty();
      frontier[t] = std::move(keep);
    }
    if (!grew) break;
  }

  Subgraph sub;
  sub.selected.resize(T);
  std::vector<std::vector<std::size_t>> local(T);
  for (std::size_t t = 0; t < T; ++t) {
    local[t].assign(g.num_nodes[t], SIZE_MAX);
    for (std::size_t i = 0; i < g.num_nodes[t]; ++i) {
      if (!chosen[t][i]) continue;
      local[t][i] = sub.selected[t].size();
      sub.selected[t].push_back(i);
    }
  }
  for (std::size_t r = 0; r < s.relations.size(); ++r) {
    const std::size_t src = s.relation_src(r), dst = s.relation_dst(r);
    EdgeList e;
    for (std::size_t k = 0; k < g.edges[r].size(); ++k) {
      const std::size_t a = local[src][g.edges[r].src[k]], b = local[dst][g.edges[r].dst[k]];
      if (a == SIZE_MAX || b == SIZE_MAX) continue;
      e.src.push_back(a);
      e.dst.push_back(b);
    }
    sub.edges.push_back(std::move(e));
  }
  sub.batch.assign(batch.begin(), batch.end());
  for (std::size_t id : batch) sub.batch_local.push_back(local[target][id]);
  return sub;
}

HeteroGraph induced_graph(const HeteroGraph& g, const Subgraph& sub) {
  const Schema& s = g.schema;
  HeteroGraph out;
  out.schema = s;
  out.multi_label = g.multi_label;
  const std::size_t T = s.node_types.size();
  const std::size_t target = s.target_index();
  for (std::size_t t = 0; t < T; ++t) {
    const auto& ids = sub.selected[t];
    out.num_nodes.push_back(ids.size());
    const auto& x = g.features[t];
    Shape shape = x.shape();
    const std::size_t width = shape[1] * shape[2];
    shape[0] = ids.size();
    Tensor<double> y(shape);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      std::copy_n(x.data().begin() + static_cast<std::ptrdiff_t>(ids[i] * width), width,
                  y.data().begin() + static_cast<std::ptrdiff_t>(i * width));
    }
    out.features.push_back(std::move(y));
    std::vector<std::size_t> orig;
    for (std::size_t id : ids) orig.push_back(g.original_ids.empty() ? id : g.original_ids[t][id]);
    out.original_ids.push_back(std::move(orig));
  }
  out.edges = sub.edges;

  const auto& tids = sub.selected[target];
  std::vector<std::size_t> local(g.num_nodes[target], SIZE_MAX);
  for (std::size_t i = 0; i < tids.size(); ++i) local[tids[i]] = i;
  for (std::size_t id : tids) {
    out.labels.push_back(g.labels[id]);
    out.labeled.push_back(g.labeled[id]);
  }
  if (g.multi_label) {
    const std::size_t C = s.num_classes;
    out.label_flags = Tensor<double>({tids.size(), C});
    for (std::size_t i = 0; i < tids.size(); ++i) {
      for (std::size_t c = 0; c < C; ++c) out.label_flags.at(i, c) = g.label_flags.at(tids[i], c);
    }
  }
  auto map_split = [&](const std::vector<std::size_t>& v) {
    std::vector<std::size_t> m;
    for (std::size_t id : v) {
      if (local[id] != SIZE_MAX) m.push_back(local[id]);
    }
    return m;
  };
  out.splits = {map_split(g.splits.train), map_split(g.splits.valid), map_split(g.splits.test)};
  out.finalize();
  return out;
}

}  // namespace seqhgnn
