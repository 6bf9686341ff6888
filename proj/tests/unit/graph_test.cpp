#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "seqhgnn/errors.hpp"
#include "seqhgnn/graph/hetero_graph.hpp"
#include "test_util.hpp"

using namespace seqhgnn;
using seqhgnn::testing::fixture;
using seqhgnn::testing::TempDir;
namespace fs = std::filesystem;

namespace {

TempDir copy_fixture() {
  TempDir dir;
  fs::copy(fixture("dblp_mini"), dir.path(), fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::vector<std::string> load_errors(const fs::path& dir) {
  try {
    load_dataset(dir);
  } catch (const ValidationError& e) {
    return e.problems();
  }
  return {};
}

bool any_contains(const std::vector<std::string>& v, const std::string& needle) {
  return std::any_of(v.begin(), v.end(), [&](const std::string& s) { return s.find(needle) != std::string::npos; });
}

// Small random multigraph with two types and three relations.
HeteroGraph random_graph(std::uint64_t seed, std::size_t na, std::size_t nb, std::size_t edges) {
  std::mt19937_64 rng(seed);
  HeteroGraph g;
  g.schema.node_types = {{"a", 1, 2}, {"b", 1, 2}};
  g.schema.relations = {{"a", "ab", "b"}, {"b", "ba", "a"}, {"a", "aa", "a"}};
  g.schema.target_type = "a";
  g.schema.num_classes = 2;
  g.num_nodes = {na, nb};
  g.features = {Tensor<double>({na, 1, 2}), Tensor<double>({nb, 1, 2})};
  for (std::size_t r = 0; r < 3; ++r) {
    const std::size_t ns = g.num_nodes[g.schema.relation_src(r)], nd = g.num_nodes[g.schema.relation_dst(r)];
    EdgeList e;
    for (std::size_t k = 0; k < edges; ++k) {
      e.src.push_back(rng() % ns);
      e.dst.push_back(rng() % nd);
    }
    g.edges.push_back(e);
  }
  g.labels.assign(na, 0);
  g.labeled.assign(na, true);
  g.finalize();
  return g;
}

}  // namespace

TEST(Dataset, DblpFixtureHasFourTypesAndSixRelations) {
  auto g = load_dataset(fixture("dblp_mini"));
  EXPECT_EQ(g.schema.node_types.size(), 4u);
  EXPECT_EQ(g.schema.relations.size(), 6u);
  EXPECT_EQ(g.schema.target_type, "author");
  EXPECT_EQ(g.num_nodes[g.schema.type_index("author")], 12u);
  EXPECT_TRUE(g.schema.node_types[g.schema.type_index("venue")].featureless());
}

TEST(Dataset, NodeIdIsRowIndex) {
  auto g = load_dataset(fixture("dblp_mini"));
  std::ifstream in(fixture("dblp_mini") / "nodes_author.csv");
  std::string line;
  std::getline(in, line);
  std::getline(in, line);
  std::getline(in, line);  // id 1
  EXPECT_EQ(line, "1,0,0,1,0");
  const auto& x = g.features[g.schema.type_index("author")];
  EXPECT_EQ(x.at(1, 0, 2), 1.0);
  EXPECT_EQ(x.at(1, 0, 0), 0.0);
}

TEST(Dataset, EmptyEdgeFileGivesZeroEdges) {
  auto dir = copy_fixture();
  write_file(dir / "edges_paper__has__term.csv", "src_id,dst_id\n");
  auto g = load_dataset(dir.path());
  EXPECT_EQ(g.bipartite_view("paper__has__term").num_edges(), 0u);
}

TEST(Dataset, SyntheticRoundTripIsIdentity) {
  SyntheticSpec spec;
  spec.num_targets = 50;
  spec.num_bridges = 40;
  spec.num_origins = 30;
  spec.num_noise = 20;
  auto g = synthetic_generate(spec, 3);
  TempDir dir;
  save_dataset(g, dir.path());
  auto back = load_dataset(dir.path());
  EXPECT_TRUE(same_content(g, back));
  EXPECT_EQ(back.splits, g.splits);
}

TEST(Dataset, MultiLabelRoundTrip) {
  auto g = load_dataset(fixture("dblp_mini"));
  g.multi_label = true;
  g.label_flags = Tensor<double>({12, 4});
  for (std::size_t i = 0; i < 12; ++i) {
    g.label_flags.at(i, i % 4) = 1;
    g.label_flags.at(i, (i + 1) % 4) = 1;
  }
  std::fill(g.labels.begin(), g.labels.end(), -1);
  TempDir dir;
  save_dataset(g, dir.path());
  auto back = load_dataset(dir.path());
  EXPECT_TRUE(back.multi_label);
  EXPECT_TRUE(same_content(g, back));
}

TEST(Dataset, MissingFileIsReported) {
  auto dir = copy_fixture();
  fs::remove(dir / "edges_term__in__paper.csv");
  EXPECT_TRUE(any_contains(load_errors(dir.path()), "missing file edges_term__in__paper.csv"));
}

TEST(Dataset, MissingDirectoryIsReported) {
  EXPECT_THROW(load_dataset("/nonexistent/seqhgnn/data"), ValidationError);
}

TEST(Dataset, IdOutOfRangeIsReported) {
  auto dir = copy_fixture();
  write_file(dir / "edges_paper__published_in__venue.csv", "src_id,dst_id\n0,0\n1,3\n");
  EXPECT_TRUE(any_contains(load_errors(dir.path()), "dst_id 3 out of range"));
}

TEST(Dataset, FeatureArityMismatchIsReported) {
  auto dir = copy_fixture();
  write_file(dir / "nodes_term.csv", "id,f0_0,f0_1\n0,1,1\n");
  EXPECT_TRUE(any_contains(load_errors(dir.path()), "nodes_term.csv: feature arity mismatch"));
}

TEST(Dataset, DuplicateEdgeWarnsAndIsKept) {
  auto dir = copy_fixture();
  write_file(dir / "edges_paper__published_in__venue.csv", "src_id,dst_id\n0,1\n0,1\n");
  std::vector<std::string> warnings;
  auto g = load_dataset(dir.path(), &warnings);
  EXPECT_TRUE(any_contains(warnings, "duplicate"));
  const auto& csr = g.bipartite_view("paper__published_in__venue");
  ASSERT_EQ(csr.neighbors(1).size(), 2u);
  EXPECT_EQ(csr.neighbors(1)[0], 0u);
  EXPECT_EQ(csr.neighbors(1)[1], 0u);
}

TEST(Validate, ValidFixtureHasNoErrors) {
  std::vector<std::string> errors;
  auto schema = parse_schema(fixture("dblp_mini") / "schema.json", errors);
  ASSERT_TRUE(errors.empty());
  auto rep = validate_schema(schema, read_raw_tables(fixture("dblp_mini")));
  EXPECT_TRUE(rep.errors.empty());
  EXPECT_TRUE(rep.warnings.empty());
}

TEST(Validate, EdgeFileWithUnknownTypeIsReported) {
  auto dir = copy_fixture();
  write_file(dir / "edges_paper__cites__journal.csv", "src_id,dst_id\n");
  EXPECT_TRUE(any_contains(load_errors(dir.path()), "unknown type 'journal'"));
}

TEST(Validate, DuplicateRelationIsReported) {
  std::vector<std::string> errors;
  auto schema = parse_schema(fixture("dblp_mini") / "schema.json", errors);
  schema.relations.push_back(schema.relations[0]);
  auto rep = validate_schema(schema, read_raw_tables(fixture("dblp_mini")));
  EXPECT_TRUE(any_contains(rep.errors, "duplicate relation author__writes__paper"));
}

TEST(Validate, ReportsEveryProblemNotJustTheFirst) {
  auto dir = copy_fixture();
  write_file(dir / "nodes_term.csv", "id,f0_0\n0,1\n");
  write_file(dir / "edges_author__writes__paper.csv", "src_id,dst_id\n99,0\n0,x\n");
  write_file(dir / "splits.json", R"({"train":[0,1],"valid":[1],"test":[40]})");
  auto errors = load_errors(dir.path());
  EXPECT_TRUE(any_contains(errors, "feature arity mismatch"));
  EXPECT_TRUE(any_contains(errors, "src_id 99 out of range"));
  EXPECT_TRUE(any_contains(errors, "expected two integer ids"));
  EXPECT_TRUE(any_contains(errors, "in both train and valid"));
  EXPECT_TRUE(any_contains(errors, "test id 40 out of range"));
}

TEST(Validate, HomogeneousGraphIsRejected) {
  Schema s;
  s.node_types = {{"a", 1, 1}};
  s.relations = {{"a", "r", "a"}};
  s.target_type = "a";
  s.num_classes = 2;
  EXPECT_TRUE(any_contains(validate_schema(s, RawTables{}).errors, "not a heterogeneous graph"));
}

TEST(Csr, RelationWithoutEdgesHasEmptySlices) {
  auto c = build_csr({}, {}, 5);
  for (std::size_t t = 0; t < 5; ++t) EXPECT_TRUE(c.neighbors(t).empty());
}

TEST(Csr, SingleEdge) {
  std::vector<std::size_t> src{3}, dst{7};
  auto c = build_csr(src, dst, 10);
  for (std::size_t t = 0; t < 10; ++t) {
    if (t == 7) {
      ASSERT_EQ(c.neighbors(t).size(), 1u);
      EXPECT_EQ(c.neighbors(t)[0], 3u);
    } else {
      EXPECT_TRUE(c.neighbors(t).empty());
    }
  }
}

TEST(Csr, SlicesMatchLinearScanOfEdgeList) {
  auto g = random_graph(11, 9, 13, 60);
  for (std::size_t r = 0; r < 3; ++r) {
    const auto& e = g.edges[r];
    const auto& c = g.bipartite_view(r);
    std::size_t total = 0;
    for (std::size_t t = 0; t < c.num_targets(); ++t) {
      std::vector<std::size_t> expect;
      for (std::size_t k = 0; k < e.size(); ++k) {
        if (e.dst[k] == t) expect.push_back(e.src[k]);
      }
      std::sort(expect.begin(), expect.end());
      auto got = c.neighbors(t);
      EXPECT_EQ(std::vector<std::size_t>(got.begin(), got.end()), expect);
      total += got.size();
    }
    EXPECT_EQ(total, e.size());
  }
}

TEST(Csr, ReconstructedEdgeMultisetEqualsInput) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto g = random_graph(seed, 5 + seed, 4 + seed, 30);
    for (std::size_t r = 0; r < 3; ++r) {
      std::multiset<std::pair<std::size_t, std::size_t>> in, out;
      for (std::size_t k = 0; k < g.edges[r].size(); ++k) in.insert({g.edges[r].src[k], g.edges[r].dst[k]});
      const auto& c = g.bipartite_view(r);
      for (std::size_t t = 0; t < c.num_targets(); ++t) {
        for (auto s : c.neighbors(t)) out.insert({s, t});
      }
      EXPECT_EQ(in, out);
    }
  }
}

TEST(Csr, UnknownRelationThrows) {
  auto g = random_graph(1, 3, 3, 3);
  EXPECT_THROW(g.bipartite_view("a__nope__b"), Error);
  EXPECT_THROW(g.bipartite_view(std::size_t{3}), Error);
}

TEST(Synthetic, SameSeedGivesIdenticalGraphs) {
  SyntheticSpec spec;
  auto a = synthetic_generate(spec, 42), b = synthetic_generate(spec, 42);
  EXPECT_TRUE(same_content(a, b));
  EXPECT_FALSE(same_content(a, synthetic_generate(spec, 43)));
}

TEST(Synthetic, ZeroTargetsIsAnError) {
  SyntheticSpec spec;
  spec.num_targets = 0;
  EXPECT_THROW(synthetic_generate(spec, 1), Error);
}

namespace {

// Brute force over the raw edge lists: count origin classes along every
// origin -> bridge -> target path.
std::vector<int> brute_force_majority(const HeteroGraph& g) {
  const auto& s = g.schema;
  const std::size_t C = s.num_classes;
  const std::size_t origin = s.type_index("origin");
  const auto ob = *s.find_relation("origin__links__bridge");
  const auto bt = *s.find_relation("bridge__in__target");
  std::vector<int> out;
  for (std::size_t t = 0; t < g.num_nodes[s.target_index()]; ++t) {
    std::vector<int> votes(C, 0);
    for (std::size_t k = 0; k < g.edges[bt].size(); ++k) {
      if (g.edges[bt].dst[k] != t) continue;
      const std::size_t b = g.edges[bt].src[k];
      for (std::size_t m = 0; m < g.edges[ob].size(); ++m) {
        if (g.edges[ob].dst[m] != b) continue;
        const auto& x = g.features[origin];
        std::size_t cls = 0;
        for (std::size_t c = 1; c < C; ++c) {
          if (x.at(g.edges[ob].src[m], 0, c) > x.at(g.edges[ob].src[m], 0, cls)) cls = c;
        }
        ++votes[cls];
      }
    }
    auto best = std::max_element(votes.begin(), votes.end());
    out.push_back(std::count(votes.begin(), votes.end(), *best) == 1 ? static_cast<int>(best - votes.begin()) : -1);
  }
  return out;
}

double mutual_information_bits(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<int, double> pa, pb;
  std::map<std::pair<int, int>, double> pab;
  const double n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    pa[a[i]] += 1 / n;
    pb[b[i]] += 1 / n;
    pab[{a[i], b[i]}] += 1 / n;
  }
  double mi = 0;
  for (const auto& [k, p] : pab) mi += p * std::log2(p / (pa[k.first] * pb[k.second]));
  return mi;
}

}  // namespace

TEST(Synthetic, PlantedLabelsEqualTwoHopMajority) {
  SyntheticSpec spec;
  auto g = synthetic_generate(spec, 5);
  auto oracle = brute_force_majority(g);
  ASSERT_EQ(oracle.size(), g.labels.size());
  for (std::size_t t = 0; t < oracle.size(); ++t) EXPECT_EQ(oracle[t], g.labels[t]) << "target " << t;
}

TEST(Synthetic, DistractorOnlyLabelsCarryNoStructuralInformation) {
  SyntheticSpec spec;
  spec.planted = false;
  spec.num_targets = 3000;
  auto g = synthetic_generate(spec, 9);
  auto structure = brute_force_majority(g);
  std::vector<int> labels(g.labels.begin(), g.labels.end());
  EXPECT_LT(mutual_information_bits(labels, structure), 0.05);
  // Sanity: the same estimator sees the planted signal.
  spec.planted = true;
  auto p = synthetic_generate(spec, 9);
  std::vector<int> planted(p.labels.begin(), p.labels.end());
  EXPECT_GT(mutual_information_bits(planted, brute_force_majority(p)), 1.0);
}

TEST(Synthetic, SplitsAreDisjointAndCoverTargets) {
  auto g = synthetic_generate(SyntheticSpec{}, 2);
  std::set<std::size_t> all;
  for (const auto* v : {&g.splits.train, &g.splits.valid, &g.splits.test}) {
    EXPECT_TRUE(std::is_sorted(v->begin(), v->end()));
    all.insert(v->begin(), v->end());
  }
  EXPECT_EQ(all.size(), g.splits.train.size() + g.splits.valid.size() + g.splits.test.size());
  EXPECT_EQ(all.size(), 600u);
}

namespace {

// Nodes with a directed path of at most `depth` edges into the batch.
std::vector<std::set<std::size_t>> reachable(const HeteroGraph& g, const std::vector<std::size_t>& batch, std::size_t depth) {
  const auto& s = g.schema;
  std::vector<std::set<std::size_t>> seen(s.node_types.size());
  seen[s.target_index()].insert(batch.begin(), batch.end());
  for (std::size_t round = 0; round < depth; ++round) {
    auto next = seen;
    for (std::size_t r = 0; r < s.relations.size(); ++r) {
      for (std::size_t k = 0; k < g.edges[r].size(); ++k) {
        if (seen[s.relation_dst(r)].count(g.edges[r].dst[k])) next[s.relation_src(r)].insert(g.edges[r].src[k]);
      }
    }
    seen = next;
  }
  return seen;
}

}  // namespace

TEST(Sampler, FullBudgetEqualsReachableGraph) {
  auto g = random_graph(4, 30, 25, 25);
  std::vector<std::size_t> batch{0, 3, 7};
  for (std::size_t depth : {1, 2, 3, 8}) {
    auto sub = sample_subgraph(g, "a", batch, depth, 1000, 1);
    auto want = reachable(g, batch, depth);
    for (std::size_t t = 0; t < 2; ++t) {
      EXPECT_EQ(std::set<std::size_t>(sub.selected[t].begin(), sub.selected[t].end()), want[t]) << depth;
    }
  }
}

TEST(Sampler, LargeGraphDefaultsAreAccepted) {
  auto g = synthetic_generate(SyntheticSpec{}, 1);
  std::vector<std::size_t> batch(g.splits.train.begin(), g.splits.train.begin() + 256);
  auto sub = sample_subgraph(g, "target", batch, 3, 1800, 1);
  EXPECT_EQ(sub.batch_local.size(), 256u);
}

TEST(Sampler, SameSeedSameSubgraphDifferentSeedsMayDiffer) {
  auto g = synthetic_generate(SyntheticSpec{}, 1);
  std::vector<std::size_t> batch{1, 2, 3, 4, 5, 6, 7, 8};
  auto a = sample_subgraph(g, "target", batch, 2, 5, 10);
  auto b = sample_subgraph(g, "target", batch, 2, 5, 10);
  EXPECT_EQ(a.selected, b.selected);
  EXPECT_EQ(a.edges, b.edges);
  bool differs = false;
  for (std::uint64_t seed = 11; seed < 20 && !differs; ++seed) {
    differs = sample_subgraph(g, "target", batch, 2, 5, seed).selected != a.selected;
  }
  EXPECT_TRUE(differs);
}

TEST(Sampler, InducedEdgesOnlyConnectSelectedNodes) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto g = random_graph(seed, 40, 30, 80);
    std::vector<std::size_t> batch{seed % 40, (seed * 7 + 1) % 40};
    if (batch[0] == batch[1]) batch.pop_back();
    auto sub = sample_subgraph(g, "a", batch, 2, 4, seed);
    for (std::size_t r = 0; r < 3; ++r) {
      const std::size_t ns = sub.selected[g.schema.relation_src(r)].size();
      const std::size_t nd = sub.selected[g.schema.relation_dst(r)].size();
      for (std::size_t k = 0; k < sub.edges[r].size(); ++k) {
        EXPECT_LT(sub.edges[r].src[k], ns);
        EXPECT_LT(sub.edges[r].dst[k], nd);
      }
    }
    for (std::size_t i = 0; i < batch.size(); ++i) EXPECT_EQ(sub.selected[0][sub.batch_local[i]], batch[i]);
    // At most `budget` new nodes per type per round.
    EXPECT_LE(sub.selected[1].size(), 2u * 4u);
    EXPECT_LE(sub.selected[0].size(), batch.size() + 2u * 4u);
  }
}

TEST(Sampler, InducedEdgesEqualFilteredOriginalEdges) {
  auto g = random_graph(8, 20, 20, 50);
  auto sub = sample_subgraph(g, "a", std::vector<std::size_t>{2, 5}, 2, 3, 4);
  auto h = induced_graph(g, sub);
  for (std::size_t r = 0; r < 3; ++r) {
    const std::size_t s = g.schema.relation_src(r), d = g.schema.relation_dst(r);
    std::set<std::size_t> ss(sub.selected[s].begin(), sub.selected[s].end());
    std::set<std::size_t> ds(sub.selected[d].begin(), sub.selected[d].end());
    std::vector<std::pair<std::size_t, std::size_t>> want, got;
    for (std::size_t k = 0; k < g.edges[r].size(); ++k) {
      if (ss.count(g.edges[r].src[k]) && ds.count(g.edges[r].dst[k])) want.push_back({g.edges[r].src[k], g.edges[r].dst[k]});
    }
    for (std::size_t k = 0; k < h.edges[r].size(); ++k) {
      got.push_back({h.original_ids[s][h.edges[r].src[k]], h.original_ids[d][h.edges[r].dst[k]]});
    }
    EXPECT_EQ(got, want);
  }
}

TEST(Sampler, RejectsBatchOfNonTargetType) {
  auto g = random_graph(1, 5, 5, 5);
  std::vector<std::size_t> batch{0};
  EXPECT_THROW(sample_subgraph(g, "b", batch, 2, 3, 1), Error);
  EXPECT_THROW(sample_subgraph(g, "a", batch, 0, 3, 1), Error);
  EXPECT_THROW(sample_subgraph(g, "a", batch, 1, 0, 1), Error);
  std::vector<std::size_t> bad{9};
  EXPECT_THROW(sample_subgraph(g, "a", bad, 1, 1, 1), Error);
}
