#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "random_graph.hpp"
#include "seqhgnn/errors.hpp"
#include "seqhgnn/seq/seq_repr.hpp"
#include "seqhgnn/tensor/ops.hpp"
#include "test_util.hpp"

using namespace seqhgnn;
using seqhgnn::testing::random_hetero_graph;

namespace {

Schema one_type_schema(std::size_t features, std::size_t dim) {
  Schema s;
  s.node_types = {{"paper", features, dim}, {"author", 1, 1}};
  s.relations = {{"author", "writes", "paper"}};
  s.target_type = "paper";
  s.num_classes = 2;
  return s;
}

struct Projection {
  ParamStore<double> store;
  InputProjection<double> proj;
};

void make_projection(Projection& p, const Schema& s, std::size_t d) {
  Rng rng(1);
  p.proj = InputProjection<double>::create(p.store, s, d, rng);
}

// Independent recurrence: every layer multiplies by (#incoming + 1).
std::size_t expected_slots(const Schema& s, std::size_t t, std::size_t l) {
  std::size_t incoming = 0;
  for (const auto& r : s.relations) incoming += r.dst == s.node_types[t].name;
  std::size_t f = s.node_types[t].featureless() ? 1 : s.node_types[t].num_features;
  for (std::size_t k = 0; k < l; ++k) f *= incoming + 1;
  return f;
}

}  // namespace

TEST(ProjectFeatures, IdentityWeightsPassInputThrough) {
  auto s = one_type_schema(1, 2);
  Projection p;
  make_projection(p, s, 2);
  p.proj.types[0].weight[0]->value = Tensor<double>({2, 2}, {1, 0, 0, 1});
  FeatureBlocks<double> x{{Tensor<double>({1, 2}, {1, 0})}, {Tensor<double>({1, 1}, {0})}};
  std::vector<std::size_t> n{1, 1};
  Tape<double> tape;
  auto st = project_features(tape, s, x, n, p.proj);
  EXPECT_EQ(st.h[0].value(), Tensor<double>({1, 1, 2}, {1, 0}));
}

TEST(ProjectFeatures, HandComputedAffineMap) {
  auto s = one_type_schema(1, 2);
  Projection p;
  make_projection(p, s, 2);
  p.proj.types[0].weight[0]->value = Tensor<double>({2, 2}, {1, 2, 3, 4});
  p.proj.types[0].bias[0]->value = Tensor<double>({2}, {0.5, 0.5});
  FeatureBlocks<double> x{{Tensor<double>({1, 2}, {1, 1})}, {Tensor<double>({1, 1}, {0})}};
  std::vector<std::size_t> n{1, 1};
  Tape<double> tape;
  auto st = project_features(tape, s, x, n, p.proj);
  EXPECT_EQ(st.h[0].value(), Tensor<double>({1, 1, 2}, {3.5, 7.5}));
}

TEST(ProjectFeatures, SingleFeatureGivesOneSlot) {
  auto g = seqhgnn::testing::two_relation_graph();
  Projection p;
  make_projection(p, g.schema, 4);
  Tape<double> tape;
  auto st = project_features(tape, g.schema, feature_blocks<double>(g), g.num_nodes, p.proj);
  for (std::size_t t = 0; t < 3; ++t) EXPECT_EQ(st.slots(t), 1u);
}

TEST(ProjectFeatures, FeaturesConcatenateInOrder) {
  auto s = one_type_schema(3, 2);
  Projection p;
  make_projection(p, s, 2);
  for (std::size_t f = 0; f < 3; ++f) {
    p.proj.types[0].weight[f]->value = Tensor<double>({2, 2}, {1, 0, 0, 1});
    p.proj.types[0].bias[f]->value = Tensor<double>({2}, {double(f), 0});
  }
  FeatureBlocks<double> x{{Tensor<double>({1, 2}, {1, 1}), Tensor<double>({1, 2}, {2, 2}), Tensor<double>({1, 2}, {3, 3})},
                          {Tensor<double>({1, 1}, {0})}};
  std::vector<std::size_t> n{1, 1};
  Tape<double> tape;
  auto st = project_features(tape, s, x, n, p.proj);
  EXPECT_EQ(st.h[0].value(), Tensor<double>({1, 3, 2}, {1, 1, 3, 2, 5, 3}));
}

TEST(ProjectFeatures, FeaturelessTypeSharesOneEmbedding) {
  auto g = load_dataset(seqhgnn::testing::fixture("dblp_mini"));
  const std::size_t venue = g.schema.type_index("venue");
  Projection p;
  make_projection(p, g.schema, 4);
  ASSERT_NE(p.proj.types[venue].embedding, nullptr);
  p.proj.types[venue].embedding->value = Tensor<double>({4}, {1, 2, 3, 4});
  Tape<double> tape;
  auto st = project_features(tape, g.schema, feature_blocks<double>(g), g.num_nodes, p.proj);
  const auto& h = st.h[venue].value();
  ASSERT_EQ(h.shape(), (Shape{3, 1, 4}));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(h.at(i, 0, c), double(c + 1));
  }
}

TEST(ProjectFeatures, ArityMismatchIsShapeError) {
  auto s = one_type_schema(1, 2);
  Projection p;
  make_projection(p, s, 2);
  FeatureBlocks<double> x{{Tensor<double>({1, 3})}, {Tensor<double>({1, 1})}};
  std::vector<std::size_t> n{1, 1};
  Tape<double> tape;
  EXPECT_THROW(project_features(tape, s, x, n, p.proj), ShapeError);
}

TEST(SlotLabels, TwoRelationsGrowOneThreeNine) {
  auto g = seqhgnn::testing::two_relation_graph();
  auto tables = slot_labels(g.schema, 2);
  EXPECT_EQ(tables[0][0].size(), 1u);
  EXPECT_EQ(tables[0][1].size(), 3u);
  EXPECT_EQ(tables[0][2].size(), 9u);
}

TEST(SlotLabels, TypeWithoutIncomingRelationsKeepsItsLength) {
  auto g = seqhgnn::testing::two_relation_graph();
  auto tables = slot_labels(g.schema, 3);
  for (std::size_t l = 0; l <= 3; ++l) EXPECT_EQ(tables[1][l].size(), 1u);
}

TEST(SlotLabels, LengthsFollowRecurrenceOnRandomSchemas) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto g = random_hetero_graph(seed);
    const std::size_t L = seed % 4;
    auto tables = slot_labels(g.schema, L);
    for (std::size_t t = 0; t < g.schema.node_types.size(); ++t) {
      for (std::size_t l = 0; l <= L; ++l) {
        EXPECT_EQ(tables[t][l].size(), expected_slots(g.schema, t, l));
        EXPECT_EQ(slot_count(g.schema, t, l), expected_slots(g.schema, t, l));
      }
    }
  }
}

TEST(SlotLabels, EachLayerExtendsThePreviousTable) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto g = random_hetero_graph(seed);
    auto tables = slot_labels(g.schema, 3);
    for (std::size_t t = 0; t < tables.size(); ++t) {
      for (std::size_t l = 1; l <= 3; ++l) {
        const auto& prev = tables[t][l - 1];
        const auto& cur = tables[t][l];
        ASSERT_GE(cur.size(), prev.size());
        EXPECT_TRUE(std::equal(prev.begin(), prev.end(), cur.begin()));
        // Rebuild the appended part from the schema directly.
        std::size_t k = prev.size();
        for (std::size_t r = 0; r < g.schema.relations.size(); ++r) {
          if (g.schema.relations[r].dst != g.schema.node_types[t].name) continue;
          for (std::size_t j = 0; j < prev.size(); ++j) EXPECT_EQ(cur[k++], SlotLabel::msg(r, j, l));
        }
        EXPECT_EQ(k, cur.size());
      }
    }
  }
}

TEST(SlotLabels, DecodeEncodeIsABijection) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    auto g = random_hetero_graph(seed);
    auto tables = slot_labels(g.schema, 3);
    for (std::size_t t = 0; t < tables.size(); ++t) {
      const auto& table = tables[t][3];
      std::set<std::size_t> seen;
      for (std::size_t i = 0; i < table.size(); ++i) {
        auto label = decode_slot(g.schema, t, 3, i);
        EXPECT_EQ(label, table[i]);
        EXPECT_EQ(encode_slot(g.schema, t, label), i);
        seen.insert(encode_slot(g.schema, t, label));
      }
      EXPECT_EQ(seen.size(), table.size());
    }
  }
}

TEST(SlotLabels, ExpansionEndsAtABaseLabel) {
  auto g = random_hetero_graph(17);
  auto tables = slot_labels(g.schema, 3);
  for (std::size_t t = 0; t < tables.size(); ++t) {
    const auto& table = tables[t][3];
    for (std::size_t i = 0; i < table.size(); ++i) {
      std::size_t k = i, steps = 0;
      while (table[k].kind == SlotLabel::Kind::Msg) {
        ASSERT_LT(table[k].parent, k);
        k = table[k].parent;
        ASSERT_LT(++steps, 4u);
      }
      EXPECT_EQ(table[k].kind, SlotLabel::Kind::Base);
    }
  }
}

TEST(SlotLabels, RenderedPathsAreUniqueAndReadable) {
  auto g = seqhgnn::testing::two_relation_graph();
  auto tables = slot_labels(g.schema, 2);
  const auto& table = tables[0][2];
  std::vector<std::string> names;
  for (std::size_t i = 0; i < table.size(); ++i) names.push_back(render_label(g.schema, 0, table, i));
  EXPECT_EQ(names, (std::vector<std::string>{"T", "A→T", "B→T", "A@2→T", "A→(A→T)", "A→(B→T)", "B@2→T", "B→(A→T)",
                                             "B→(B→T)"}));
}

TEST(SlotLabels, RelationNameDisambiguatesSharedSourceType) {
  Schema s;
  s.node_types = {{"paper", 1, 1}, {"author", 1, 1}};
  s.relations = {{"author", "writes", "paper"}, {"author", "reviews", "paper"}};
  s.target_type = "paper";
  auto tables = slot_labels(s, 1);
  EXPECT_EQ(render_label(s, 0, tables[0][1], 1), "author[writes]→paper");
  EXPECT_EQ(render_label(s, 0, tables[0][1], 2), "author[reviews]→paper");
}

namespace {

Tensor<double> ones(std::size_t n, std::size_t f, std::size_t d) { return Tensor<double>::filled({n, f, d}, 1.0); }

std::vector<std::size_t> iota_ids(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

TEST(SlotDropout, ZeroProbabilityIsIdentity) {
  Tape<double> tape;
  auto h = tape.constant(ones(4, 3, 2));
  auto ids = iota_ids(4);
  EXPECT_EQ(slot_dropout(h, 0.0, true, DropoutKey{}, ids).value(), h.value());
}

TEST(SlotDropout, EvaluationIsIdentity) {
  Tape<double> tape;
  auto h = tape.constant(ones(4, 3, 2));
  auto ids = iota_ids(4);
  EXPECT_EQ(slot_dropout(h, 0.7, false, DropoutKey{}, ids).value(), h.value());
}

TEST(SlotDropout, ProbabilityOneIsRejected) {
  Tape<double> tape;
  auto h = tape.constant(ones(1, 1, 1));
  auto ids = iota_ids(1);
  EXPECT_THROW(slot_dropout(h, 1.0, true, DropoutKey{}, ids), Error);
  EXPECT_THROW(slot_dropout(h, -0.1, true, DropoutKey{}, ids), Error);
}

TEST(SlotDropout, HalfDropsHalfAndDoublesSurvivors) {
  const std::size_t n = 2500, f = 4, d = 3;  // 10^4 slots
  Tape<double> tape;
  std::mt19937_64 rng(3);
  auto x = seqhgnn::testing::random_tensor<double>({n, f, d}, rng, 0.5, 1.5);
  auto ids = iota_ids(n);
  auto y = slot_dropout(tape.constant(x), 0.5, true, DropoutKey{7, 1, 0, 0}, ids).value();
  std::size_t dropped = 0;
  for (std::size_t s = 0; s < n * f; ++s) {
    const bool zero = y[s * d] == 0.0;
    dropped += zero;
    for (std::size_t c = 0; c < d; ++c) {
      if (zero) {
        EXPECT_EQ(y[s * d + c], 0.0);
      } else {
        EXPECT_EQ(y[s * d + c], 2.0 * x[s * d + c]);
      }
    }
  }
  EXPECT_NEAR(static_cast<double>(dropped) / static_cast<double>(n * f), 0.5, 0.02);
}

TEST(SlotDropout, MeanOverDrawsApproachesInput) {
  const std::size_t draws = 4000;
  const double p = 0.3;
  Tensor<double> x({2, 3, 2}, {0.5, -1, 2, 1, -0.25, 3, 1.5, 1, -2, 0.75, 1, 1});
  Tensor<double> sum(x.shape());
  auto ids = iota_ids(2);
  for (std::size_t k = 0; k < draws; ++k) {
    Tape<double> tape;
    auto y = slot_dropout(tape.constant(x), p, true, DropoutKey{11, k, 0, 0}, ids).value();
    for (std::size_t i = 0; i < x.size(); ++i) sum[i] += y[i];
  }
  // Per element: mean of Bernoulli(1-p)·x/(1-p), σ = |x|·sqrt(p/(1-p)/draws).
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double sigma = std::abs(x[i]) * std::sqrt(p / (1 - p) / static_cast<double>(draws));
    EXPECT_NEAR(sum[i] / static_cast<double>(draws), x[i], 3 * sigma) << i;
  }
}

TEST(SlotDropout, KeptPrefixIsNeverDropped) {
  Tape<double> tape;
  auto x = ones(200, 3, 1);
  auto ids = iota_ids(200);
  auto y = slot_dropout(tape.constant(x), 0.9, true, DropoutKey{1, 2, 3, 4}, ids, 1).value();
  for (std::size_t i = 0; i < 200; ++i) EXPECT_NE(y.at(i, 0, 0), 0.0);
}

TEST(SlotDropout, DecisionsDependOnOriginalIdsOnly) {
  DropoutKey key{5, 9, 1, 2};
  Tape<double> tape;
  auto x = ones(3, 4, 2);
  std::vector<std::size_t> ids{10, 20, 30};
  auto a = slot_dropout(tape.constant(x), 0.5, true, key, ids).value();
  // Same nodes in a different subgraph position.
  std::vector<std::size_t> ids2{30, 10};
  auto b = slot_dropout(tape.constant(ones(2, 4, 2)), 0.5, true, key, ids2).value();
  for (std::size_t k = 0; k < 4; ++k) {
    EXPECT_EQ(b.at(0, k, 0), a.at(2, k, 0));
    EXPECT_EQ(b.at(1, k, 0), a.at(0, k, 0));
  }
  key.step = 10;
  auto c = slot_dropout(tape.constant(x), 0.5, true, key, ids).value();
  EXPECT_NE(c, a);
}

TEST(SlotDropout, GradientFollowsTheMask) {
  Tape<double> tape;
  auto x = tape.variable(ones(50, 2, 2));
  auto ids = iota_ids(50);
  auto y = slot_dropout(x, 0.5, true, DropoutKey{3, 3, 3, 3}, ids);
  tape.backward(sum_all(y));
  for (std::size_t k = 0; k < x.value().size(); ++k) EXPECT_EQ(x.grad()[k], y.value()[k]);
}
