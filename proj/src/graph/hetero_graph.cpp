#include "seqhgnn/graph/hetero_graph.hpp"

#include <algorithm>
#include <numeric>

#include "seqhgnn/errors.hpp"

namespace seqhgnn {

std::optional<std::size_t> Schema::find_type(std::string_view name) const {
  for (std::size_t i = 0; i < node_types.size(); ++i) {
    if (node_types[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t Schema::type_index(std::string_view name) const {
  if (auto i = find_type(name)) return *i;
  throw Error("unknown type '" + std::string(name) + "'");
}

std::optional<std::size_t> Schema::find_relation(std::string_view key) const {
  for (std::size_t r = 0; r < relations.size(); ++r) {
    if (relations[r].key() == key) return r;
  }
  return std::nullopt;
}

std::vector<std::size_t> Schema::incoming(std::size_t type) const {
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < relations.size(); ++r) {
    if (relations[r].dst == node_types[type].name) out.push_back(r);
  }
  return out;
}

const std::vector<std::size_t>& Splits::get(std::string_view name) const {
  if (name == "train") return train;
  if (name == "valid") return valid;
  if (name == "test") return test;
  throw Error("unknown split '" + std::string(name) + "'");
}

Csr build_csr(std::span<const std::size_t> src, std::span<const std::size_t> dst, std::size_t num_targets) {
  Csr c;
  c.offsets.assign(num_targets + 1, 0);
  for (std::size_t t : dst) {
    if (t >= num_targets) throw Error("edge target " + std::to_string(t) + " out of range");
    ++c.offsets[t + 1];
  }
  for (std::size_t t = 0; t < num_targets; ++t) c.offsets[t + 1] += c.offsets[t];

  std::vector<std::size_t> order(src.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dst[a] != dst[b] ? dst[a] < dst[b] : src[a] < src[b];
  });
  c.sources.resize(src.size());
  c.edge_ids = order;
  for (std::size_t k = 0; k < order.size(); ++k) c.sources[k] = src[order[k]];
  return c;
}

void HeteroGraph::finalize() {
  const auto& types = schema.node_types;
  if (num_nodes.size() != types.size()) throw Error("graph: node counts do not match schema");
  if (edges.size() != schema.relations.size()) throw Error("graph: edge lists do not match schema");
  if (original_ids.size() != types.size()) {
    original_ids.assign(types.size(), {});
    for (std::size_t t = 0; t < types.size(); ++t) {
      original_ids[t].resize(num_nodes[t]);
      std::iota(original_ids[t].begin(), original_ids[t].end(), std::size_t{0});
    }
  }
  csr.clear();
  for (std::size_t r = 0; r < schema.relations.size(); ++r) {
    const auto& e = edges[r];
    const std::size_t s = schema.relation_src(r);
    for (std::size_t id : e.src) {
      if (id >= num_nodes[s]) throw Error("relation " + schema.relations[r].key() + ": source id out of range");
    }
    csr.push_back(build_csr(e.src, e.dst, num_nodes[schema.relation_dst(r)]));
  }
}

const Csr& HeteroGraph::bipartite_view(std::size_t relation) const {
  if (relation >= csr.size()) throw Error("unknown relation index " + std::to_string(relation));
  return csr[relation];
}

const Csr& HeteroGraph::bipartite_view(std::string_view relation_key) const {
  auto r = schema.find_relation(relation_key);
  if (!r) throw Error("unknown relation '" + std::string(relation_key) + "'");
  return bipartite_view(*r);
}

std::size_t HeteroGraph::total_nodes() const { return std::accumulate(num_nodes.begin(), num_nodes.end(), std::size_t{0}); }

bool same_content(const HeteroGraph& a, const HeteroGraph& b) {
  return a.schema == b.schema && a.num_nodes == b.num_nodes && a.features == b.features && a.edges == b.edges &&
         a.multi_label == b.multi_label && a.labels == b.labels && a.labeled == b.labeled &&
         (!a.multi_label || a.label_flags == b.label_flags) && a.splits == b.splits;
}

}  // namespace seqhgnn
