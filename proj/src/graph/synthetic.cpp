#include <algorithm>
#include <numeric>

#include "seqhgnn/errors.hpp"
#include "seqhgnn/graph/hetero_graph.hpp"
#include "seqhgnn/random.hpp"

namespace seqhgnn {

namespace {

enum Type : std::size_t { kTarget, kBridge, kOrigin, kNoise };

// k distinct values from [0, n), in draw order.
std::vector<std::size_t> choose(Rng& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  k = std::min(k, n);
  for (std::size_t i = 0; i < k; ++i) std::swap(pool[i], pool[i + rng.below(n - i)]);
  pool.resize(k);
  return pool;
}

}  // namespace

HeteroGraph synthetic_generate(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.num_targets == 0) throw Error("synthetic spec has zero target nodes");
  if (spec.num_classes < 2) throw Error("synthetic spec needs at least 2 classes");
  if (spec.planted && spec.feature_dim < spec.num_classes) throw Error("feature_dim must be at least num_classes");
  if (spec.planted && (spec.num_bridges == 0 || spec.num_origins == 0)) throw Error("planted path needs bridges and origins");

  Rng rng(seed, "synthetic");
  HeteroGraph g;
  auto& s = g.schema;
  for (const char* name : {"target", "bridge", "origin", "noise"}) s.node_types.push_back({name, 1, spec.feature_dim});
  s.relations = {{"origin", "links", "bridge"}, {"bridge", "in", "target"}, {"noise", "near", "target"}};
  if (spec.reverse_relations) {
    s.relations.push_back({"bridge", "rev_links", "origin"});
    s.relations.push_back({"target", "rev_in", "bridge"});
    s.relations.push_back({"target", "rev_near", "noise"});
  }
  s.target_type = "target";
  s.num_classes = spec.num_classes;
  g.num_nodes = {spec.num_targets, spec.num_bridges, spec.num_origins, spec.num_noise};

  std::vector<std::size_t> origin_class(spec.num_origins);
  for (auto& c : origin_class) c = rng.below(spec.num_classes);

  for (std::size_t t = 0; t < 4; ++t) {
    Tensor<double> x({g.num_nodes[t], 1, spec.feature_dim});
    for (std::size_t i = 0; i < g.num_nodes[t]; ++i) {
      for (std::size_t k = 0; k < spec.feature_dim; ++k) {
        const double z = rng.normal();
        double v = spec.distractor_scale * z;
        if (t == kOrigin) v = k < spec.num_classes ? (k == origin_class[i] ? 1.0 : 0.0) : spec.feature_noise * z;
        x.at(i, 0, k) = v;
      }
    }
    g.features.push_back(std::move(x));
  }

  EdgeList links, in, near;
  std::vector<std::vector<std::size_t>> bridge_origins(spec.num_bridges);
  for (std::size_t b = 0; b < spec.num_bridges; ++b) {
    bridge_origins[b] = choose(rng, spec.num_origins, spec.origins_per_bridge);
    std::sort(bridge_origins[b].begin(), bridge_origins[b].end());
    for (std::size_t o : bridge_origins[b]) {
      links.src.push_back(o);
      links.dst.push_back(b);
    }
  }

  g.labels.assign(spec.num_targets, -1);
  g.labeled.assign(spec.num_targets, true);
  for (std::size_t t = 0; t < spec.num_targets; ++t) {
    std::vector<std::size_t> bridges;
    for (int attempt = 0;; ++attempt) {
      if (attempt == 10000) throw Error("synthetic: could not draw an untied majority");
      bridges = choose(rng, spec.num_bridges, spec.bridges_per_target);
      if (!spec.planted) break;
      std::vector<std::size_t> votes(spec.num_classes, 0);
      for (std::size_t b : bridges) {
        for (std::size_t o : bridge_origins[b]) ++votes[origin_class[o]];
      }
      auto best = std::max_element(votes.begin(), votes.end());
      if (std::count(votes.begin(), votes.end(), *best) == 1) {
        g.labels[t] = static_cast<std::int32_t>(best - votes.begin());
        break;
      }
    }
    if (!spec.planted) g.labels[t] = static_cast<std::int32_t>(rng.below(spec.num_classes));
    std::sort(bridges.begin(), bridges.end());
    for (std::size_t b : bridges) {
      in.src.push_back(b);
      in.dst.push_back(t);
    }
    auto noise = choose(rng, spec.num_noise, spec.noise_per_target);
    std::sort(noise.begin(), noise.end());
    for (std::size_t n : noise) {
      near.src.push_back(n);
      near.dst.push_back(t);
    }
  }

  g.edges = {links, in, near};
  if (spec.reverse_relations) {
    for (std::size_t r = 0; r < 3; ++r) g.edges.push_back({g.edges[r].dst, g.edges[r].src});
  }

  std::vector<std::size_t> order(spec.num_targets);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const auto n_train = static_cast<std::size_t>(spec.train_fraction * static_cast<double>(spec.num_targets));
  const auto n_valid = static_cast<std::size_t>(spec.valid_fraction * static_cast<double>(spec.num_targets));
  if (n_train + n_valid > spec.num_targets) throw Error("synthetic: split fractions exceed 1");
  auto cut = [&](std::size_t b, std::size_t e) {
    std::vector<std::size_t> v(order.begin() + static_cast<std::ptrdiff_t>(b), order.begin() + static_cast<std::ptrdiff_t>(e));
    std::sort(v.begin(), v.end());
    return v;
  };
  g.splits = {cut(0, n_train), cut(n_train, n_train + n_valid), cut(n_train + n_valid, spec.num_targets)};
  g.finalize();
  return g;
}

}  // namespace seqhgnn
