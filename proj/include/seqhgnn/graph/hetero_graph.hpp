#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqhgnn/tensor/tensor.hpp"

namespace seqhgnn {

struct NodeType {
  std::string name;
  std::size_t num_features = 1;
  std::size_t feature_dim = 0;  // 0 marks a featureless type

  bool featureless() const { return num_features == 0 || feature_dim == 0; }
  /// Slot count at layer 0. Featureless types get one learned slot.
  std::size_t base_slots() const { return featureless() ? 1 : num_features; }

  friend bool operator==(const NodeType&, const NodeType&) = default;
};

struct Relation {
  std::string src;
  std::string name;
  std::string dst;

  /// "src__name__dst", the stem of the edge file.
  std::string key() const { return src + "__" + name + "__" + dst; }

  friend bool operator==(const Relation&, const Relation&) = default;
};

struct Schema {
  std::vector<NodeType> node_types;
  std::vector<Relation> relations;
  std::string target_type;
  std::size_t num_classes = 0;

  std::optional<std::size_t> find_type(std::string_view name) const;
  std::size_t type_index(std::string_view name) const;  // throws Error
  std::optional<std::size_t> find_relation(std::string_view key) const;
  std::size_t target_index() const { return type_index(target_type); }
  std::size_t relation_src(std::size_t r) const { return type_index(relations[r].src); }
  std::size_t relation_dst(std::size_t r) const { return type_index(relations[r].dst); }
  /// Relations whose target type is `type`, in declaration order.
  std::vector<std::size_t> incoming(std::size_t type) const;

  friend bool operator==(const Schema&, const Schema&) = default;
};

/// Bipartite view of one relation indexed by target node. Sources of each
/// target are sorted ascending; duplicate edges are kept.
struct Csr {
  std::vector<std::size_t> offsets;  // num_targets + 1
  std::vector<std::size_t> sources;
  std::vector<std::size_t> edge_ids;  // position of each entry in the edge list

  std::size_t num_targets() const { return offsets.empty() ? 0 : offsets.size() - 1; }
  std::size_t num_edges() const { return sources.size(); }
  std::span<const std::size_t> neighbors(std::size_t t) const {
    return {sources.data() + offsets[t], offsets[t + 1] - offsets[t]};
  }
};

Csr build_csr(std::span<const std::size_t> src, std::span<const std::size_t> dst, std::size_t num_targets);

struct EdgeList {
  std::vector<std::size_t> src;
  std::vector<std::size_t> dst;

  std::size_t size() const { return src.size(); }
  friend bool operator==(const EdgeList&, const EdgeList&) = default;
};

struct Splits {
  std::vector<std::size_t> train;
  std::vector<std::size_t> valid;
  std::vector<std::size_t> test;

  const std::vector<std::size_t>& get(std::string_view name) const;
  friend bool operator==(const Splits&, const Splits&) = default;
};

struct HeteroGraph {
  Schema schema;
  std::vector<std::size_t> num_nodes;          // per type
  std::vector<Tensor<double>> features;        // per type, N × F × dim (N × 0 × 0 if featureless)
  std::vector<EdgeList> edges;                 // per relation
  std::vector<Csr> csr;                        // per relation, built by finalize()
  bool multi_label = false;
  std::vector<std::int32_t> labels;            // per target node, -1 when unlabeled
  Tensor<double> label_flags;                  // multi-label: N_target × C of 0/1
  std::vector<bool> labeled;                   // per target node
  Splits splits;
  std::vector<std::vector<std::size_t>> original_ids;  // per type; identity for a loaded graph

  /// Builds CSR views and identity original ids where missing.
  void finalize();
  const Csr& bipartite_view(std::size_t relation) const;
  const Csr& bipartite_view(std::string_view relation_key) const;  // throws on unknown relation
  std::size_t total_nodes() const;
};

/// Structural equality on schema, edges, features, labels and splits.
bool same_content(const HeteroGraph& a, const HeteroGraph& b);

// ---- dataset files ----------------------------------------------------

struct RawTable {
  std::string file;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// Everything read from a dataset directory before any checks.
struct RawTables {
  std::map<std::string, RawTable> nodes;  // by type name from the file name
  std::map<std::string, RawTable> edges;  // by "src__name__dst" from the file name
  std::optional<RawTable> labels;
  std::optional<std::map<std::string, std::vector<long long>>> splits;
  std::vector<std::string> read_errors;
};

struct ValidationReport {
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  bool ok() const { return errors.empty(); }
};

/// Checks every referential and arity constraint and reports all failures.
ValidationReport validate_schema(const Schema& schema, const RawTables& raw);

Schema parse_schema(const std::filesystem::path& file, std::vector<std::string>& errors);
RawTables read_raw_tables(const std::filesystem::path& dir);

/// Loads and validates a dataset directory. Throws ValidationError listing
/// every problem; warnings are appended to `warnings` when given.
HeteroGraph load_dataset(const std::filesystem::path& dir, std::vector<std::string>* warnings = nullptr);
void save_dataset(const HeteroGraph& g, const std::filesystem::path& dir);

// ---- synthetic graphs ---------------------------------------------------

/// Target nodes are labelled by the majority class of the origin nodes they
/// reach along origin -> bridge -> target. Noise nodes attach to targets at
/// random and carry no label information.
struct SyntheticSpec {
  std::size_t num_targets = 600;
  std::size_t num_bridges = 600;
  std::size_t num_origins = 300;
  std::size_t num_noise = 300;
  std::size_t num_classes = 3;
  std::size_t bridges_per_target = 3;
  std::size_t origins_per_bridge = 3;
  std::size_t noise_per_target = 3;
  std::size_t feature_dim = 8;
  double feature_noise = 0.3;  // std of gaussian noise on origin class one-hots
  double distractor_scale = 0.2;  // std of the features of non-origin nodes
  bool planted = true;         // false: labels drawn independently of structure
  bool reverse_relations = true;
  double train_fraction = 0.6;
  double valid_fraction = 0.2;
};

/// The relation carrying the label signal into target nodes.
inline constexpr const char* kPlantedRelation = "bridge__in__target";

/// Origin nodes hold their class as a clean one-hot in the first
/// num_classes feature columns; the remaining columns are noise. Labels are
/// redrawn until the majority is unique.
HeteroGraph synthetic_generate(const SyntheticSpec& spec, std::uint64_t seed);

// ---- sampling -----------------------------------------------------------

struct Subgraph {
  std::vector<std::vector<std::size_t>> selected;  // per type, ascending original ids
  std::vector<EdgeList> edges;                     // per relation, local ids, original order
  std::vector<std::size_t> batch;                  // original target ids
  std::vector<std::size_t> batch_local;            // local target ids, same order as batch
};

/// Grows a subgraph from `batch` for `depth` rounds. Each round keeps at most
/// `budget` new nodes per type, drawn without replacement with probability
/// proportional to their edge count into the current frontier. Expansion
/// follows edges against their direction, so every node that can send a
/// message into the batch within `depth` hops is a candidate.
Subgraph sample_subgraph(const HeteroGraph& g, std::string_view batch_type, std::span<const std::size_t> batch,
                         std::size_t depth, std::size_t budget, std::uint64_t seed);

/// Materializes a subgraph as a graph with local ids. Splits keep only
/// selected nodes; original_ids map back to the parent graph.
HeteroGraph induced_graph(const HeteroGraph& g, const Subgraph& sub);

}  // namespace seqhgnn
