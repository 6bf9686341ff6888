#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "seqhgnn/cli/cli.hpp"
#include "seqhgnn/errors.hpp"
#include "test_util.hpp"

namespace seqhgnn::cli {
namespace {

namespace fs = std::filesystem;
using seqhgnn::testing::TempDir;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void put(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

struct Result {
  int code;
  std::string out, err;
};

Result invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

// A small planted dataset shared by the command tests.
class CliRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir();
    SyntheticSpec spec;
    spec.num_targets = 120;
    spec.num_bridges = 120;
    spec.num_origins = 60;
    spec.num_noise = 60;
    save_dataset(synthetic_generate(spec, 3), data());
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static fs::path data() { return *dir_ / "data"; }
  static fs::path path(const std::string& name) { return *dir_ / name; }
  static std::vector<std::string> train_args(const std::string& out) {
    return {"train", "--dataset", data().string(), "--out", path(out).string(), "--dim", "8", "--heads", "2", "--epochs", "4"};
  }

  static TempDir* dir_;
};

TempDir* CliRun::dir_ = nullptr;

// ---- config ---------------------------------------------------------------------

TEST(ParseConfig, EmptyFileGivesDefaults) {
  RunConfig rc;
  apply_config_text(rc, "");
  EXPECT_EQ(rc.train.heads, 8u);
  EXPECT_EQ(rc.train.d, 64u);
  EXPECT_EQ(rc.train.layers, 2u);
  EXPECT_EQ(rc.train.epochs, 150u);
  EXPECT_EQ(rc.train.lr, 5e-4);
}

TEST(ParseConfig, ReadsSectionKeysCommentsAndQuotes) {
  RunConfig rc;
  apply_config_text(rc,
                    "# desk run\n"
                    "model.layers = 3\n"
                    "  train.lr=0.001   # peak\n"
                    "\n"
                    "train.batch_mode = sampled\n"
                    "run.dataset = \"some dir\"\n"
                    "model.rel = false\r\n");
  EXPECT_EQ(rc.train.layers, 3u);
  EXPECT_EQ(rc.train.lr, 0.001);
  EXPECT_EQ(rc.train.batch_mode, BatchMode::Sampled);
  EXPECT_EQ(rc.dataset, fs::path("some dir"));
  EXPECT_FALSE(rc.train.rel);
}

TEST(ParseConfig, UnknownKeySuggestsNearest) {
  RunConfig rc;
  try {
    apply_config_text(rc, "model.d = 16\nlaers = 3\n", "run.conf");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("model.layers"), std::string::npos) << msg;
    EXPECT_NE(msg.find("run.conf:2"), std::string::npos) << msg;
  }
  EXPECT_EQ(suggest_key("train.lrr"), "train.lr");
  EXPECT_EQ(suggest_key("heads"), "model.heads");
  EXPECT_EQ(suggest_key("sampler.budjet"), "sampler.budget");
}

TEST(ParseConfig, TypeErrorsAreConfigErrors) {
  RunConfig rc;
  EXPECT_THROW(apply_config_text(rc, "train.lr = fast\n"), ConfigError);
  EXPECT_THROW(apply_config_text(rc, "model.d = -4\n"), ConfigError);
  EXPECT_THROW(apply_config_text(rc, "model.d = 4.5\n"), ConfigError);
  EXPECT_THROW(apply_config_text(rc, "model.seq = yes\n"), ConfigError);
  EXPECT_THROW(apply_config_text(rc, "train.precision = half\n"), ConfigError);
  EXPECT_THROW(apply_config_text(rc, "eval.split = holdout\n"), ConfigError);
  EXPECT_THROW(apply_config_text(rc, "model.layers 3\n"), ConfigError);
}

TEST(ParseConfig, RenderRoundTrips) {
  RunConfig a;
  apply_config_text(a, "model.d = 24\nmodel.heads = 3\ntrain.lr = 0.00123\ntrain.seed = 18446744073709551615\n"
                       "model.attention_norm = literal\ntrain.precision = float64\nexplain.top_k = 7\n");
  RunConfig b;
  apply_config_text(b, render_config(a));
  EXPECT_EQ(render_config(a), render_config(b));
  EXPECT_EQ(config_json(a.train).dump(), config_json(b.train).dump());
  EXPECT_EQ(b.top_k, 7u);
  EXPECT_EQ(render_config(a).find("run."), std::string::npos);
}

TEST(ParseConfig, EveryKeyIsRendered) {
  const auto text = render_config(RunConfig{});
  for (const auto& k : config_keys()) {
    if (k.starts_with("run.")) continue;
    EXPECT_NE(text.find(k + " = "), std::string::npos) << k;
  }
}

TEST(Profiles, PaperProfile) {
  const auto c = profile_config("paper");
  EXPECT_EQ(c.d, 512u);
  EXPECT_EQ(c.heads, 8u);
  EXPECT_EQ(c.dropout, 0.5);
  EXPECT_EQ(c.lr, 5e-4);
  EXPECT_EQ(profile_config("desk").d, 64u);
  EXPECT_THROW(profile_config("laptop"), ConfigError);
}

// ---- hashes and checkpoints ------------------------------------------------------------

TEST(Hash, MatchesGitBlobIds) {
  EXPECT_EQ(git_blob_sha1(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  EXPECT_EQ(git_blob_sha1("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(Hash, DatasetHashTracksContent) {
  TempDir dir;
  const auto g = synthetic_generate(SyntheticSpec{}, 1);
  save_dataset(g, dir.path());
  const auto h = dataset_hash(dir.path());
  put(dir / "notes.txt", "not part of the dataset");
  EXPECT_EQ(dataset_hash(dir.path()), h);
  put(dir / "labels.csv", slurp(dir / "labels.csv") + "\n");
  EXPECT_NE(dataset_hash(dir.path()), h);
}

TEST(Checkpoint, RoundTripsBothPrecisions) {
  std::map<std::string, Tensor<double>> v;
  v.emplace("a.W", Tensor<double>({2, 3}, {0.1, -2.5, 3.0, 1e-7, 0.0, 7.25}));
  v.emplace("b", Tensor<double>({1}, {1.0 / 3.0}));
  v.emplace("s", Tensor<double>::scalar(-4.0));
  const auto c64 = encode_checkpoint(v, Precision::Float64);
  const auto back64 = decode_checkpoint(c64.bin, c64.index);
  ASSERT_EQ(back64.size(), 3u);
  for (const auto& [name, t] : v) {
    ASSERT_EQ(back64.at(name).shape(), t.shape()) << name;
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(back64.at(name)[i], t[i]);
  }
  const auto c32 = encode_checkpoint(v, Precision::Float32);
  EXPECT_EQ(c32.bin.size() * 2, c64.bin.size());
  const auto back32 = decode_checkpoint(c32.bin, c32.index);
  EXPECT_EQ(back32.at("b")[0], static_cast<double>(static_cast<float>(1.0 / 3.0)));
}

TEST(Checkpoint, IndexLayout) {
  std::map<std::string, Tensor<double>> v;
  v.emplace("x", Tensor<double>({2, 2}));
  v.emplace("y", Tensor<double>({3}));
  const auto c = encode_checkpoint(v, Precision::Float32);
  EXPECT_EQ(c.index, "name\tshape\toffset\tprecision\nx\t2x2\t0\tfloat32\ny\t3\t16\tfloat32\n");
  const auto entries = parse_checkpoint_index(c.index);
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[1].offset, 16u);
  EXPECT_EQ(entries[0].shape, (std::vector<std::size_t>{2, 2}));
}

TEST(Checkpoint, MalformedInputIsValidationError) {
  EXPECT_THROW(parse_checkpoint_index(""), ValidationError);
  EXPECT_THROW(parse_checkpoint_index("name\tshape\toffset\tprecision\nx\t2x2\t0\n"), ValidationError);
  EXPECT_THROW(parse_checkpoint_index("name\tshape\toffset\tprecision\nx\t2xq\t0\tfloat32\n"), ValidationError);
  EXPECT_THROW(parse_checkpoint_index("name\tshape\toffset\tprecision\nx\t2\t0\tfloat16\n"), ValidationError);
  EXPECT_THROW(decode_checkpoint(std::string(12, '\0'), "name\tshape\toffset\tprecision\nx\t4\t0\tfloat32\n"),
               ValidationError);
}

// ---- commands ---------------------------------------------------------------------------

TEST_F(CliRun, TrainWritesListedArtifacts) {
  const auto r = invoke(train_args("train_a"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto out = path("train_a");
  for (const char* f : {"checkpoint.bin", "checkpoint.idx", "config.conf", "train_log.tsv", "log.json", "metrics.json",
                        "manifest.json"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
  EXPECT_EQ(manifest["command"], "train");
  EXPECT_EQ(manifest["seed"].get<std::uint64_t>(), 0u);
  EXPECT_EQ(manifest["dataset"]["hash"], dataset_hash(data()));
  EXPECT_EQ(manifest["config"]["model.d"].get<std::size_t>(), 8u);
  std::size_t listed = 0;
  for (const auto& entry : fs::directory_iterator(out)) {
    const auto name = entry.path().filename().string();
    if (name == "manifest.json") continue;
    ASSERT_TRUE(manifest["outputs"].contains(name)) << name;
    EXPECT_EQ(manifest["outputs"][name], file_blob_sha1(entry.path())) << name;
    ++listed;
  }
  EXPECT_EQ(listed, manifest["outputs"].size());

  const auto metrics = nlohmann::json::parse(slurp(out / "metrics.json"));
  EXPECT_EQ(metrics.size(), 4u);
  for (const char* k : {"micro_f1", "macro_f1", "accuracy", "loss"}) EXPECT_TRUE(metrics.contains(k)) << k;

  const auto log = slurp(out / "train_log.tsv");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 4);
  EXPECT_EQ(std::count(log.begin(), log.end(), '\t'), 16);
  const auto lj = nlohmann::json::parse(slurp(out / "log.json"));
  EXPECT_EQ(lj["epochs"].size(), 4u);
  EXPECT_FALSE(lj["diverged"].get<bool>());
}

TEST_F(CliRun, IdenticalInputsGiveIdenticalMetrics) {
  ASSERT_EQ(invoke(train_args("det_a")).code, 0);
  ASSERT_EQ(invoke(train_args("det_b")).code, 0);
  EXPECT_EQ(slurp(path("det_a") / "metrics.json"), slurp(path("det_b") / "metrics.json"));
  EXPECT_EQ(slurp(path("det_a") / "train_log.tsv"), slurp(path("det_b") / "train_log.tsv"));
  EXPECT_EQ(slurp(path("det_a") / "checkpoint.bin"), slurp(path("det_b") / "checkpoint.bin"));
}

TEST_F(CliRun, SeedFlagChangesRun) {
  auto args = train_args("seed_7");
  args.insert(args.end(), {"--seed", "7"});
  ASSERT_EQ(invoke(args).code, 0);
  ASSERT_EQ(invoke(train_args("seed_0")).code, 0);
  EXPECT_NE(slurp(path("seed_7") / "checkpoint.bin"), slurp(path("seed_0") / "checkpoint.bin"));
  EXPECT_EQ(nlohmann::json::parse(slurp(path("seed_7") / "log.json"))["seed"].get<std::uint64_t>(), 7u);
}

TEST_F(CliRun, FlagOverridesFile) {
  put(path("layers.conf"), "model.layers = 2\nmodel.d = 8\nmodel.heads = 2\ntrain.epochs = 1\n");
  const auto r = invoke({"train", "--config", path("layers.conf").string(), "--layers", "3", "--dataset",
                         data().string(), "--out", path("flag_run").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto m = nlohmann::json::parse(slurp(path("flag_run") / "manifest.json"));
  EXPECT_EQ(m["config"]["model.layers"].get<std::size_t>(), 3u);
  EXPECT_EQ(m["config"]["model.d"].get<std::size_t>(), 8u);
}

TEST_F(CliRun, EvalReproducesTrainMetrics) {
  ASSERT_EQ(invoke(train_args("ev_train")).code, 0);
  const auto r = invoke({"eval", "--dataset", data().string(), "--config", path("ev_train/config.conf").string(),
                         "--checkpoint", path("ev_train/checkpoint.bin").string(), "--out", path("ev_out").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(path("ev_out") / "metrics.json"), slurp(path("ev_train") / "metrics.json"));
  const auto m = nlohmann::json::parse(slurp(path("ev_out") / "manifest.json"));
  EXPECT_EQ(m["checkpoint"]["hash"], file_blob_sha1(path("ev_train/checkpoint.bin")));
  EXPECT_TRUE(m["outputs"].contains("metrics.json"));
}

TEST_F(CliRun, ExplainEmitsTopKPaths) {
  ASSERT_EQ(invoke(train_args("ex_train")).code, 0);
  const auto r = invoke({"explain", "--dataset", data().string(), "--config", path("ex_train/config.conf").string(),
                         "--checkpoint", path("ex_train/checkpoint.bin").string(), "--out", path("ex_out").string(),
                         "--top-k", "5", "--per-node"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rep = nlohmann::json::parse(slurp(path("ex_out") / "report.json"));
  ASSERT_TRUE(rep["per_type"].contains("target"));
  EXPECT_EQ(rep["per_type"]["target"].size(), 5u);
  EXPECT_TRUE(rep.contains("per_node"));
  const auto text = slurp(path("ex_out") / "report.txt");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 6);
  EXPECT_EQ(r.out, text);
}

TEST_F(CliRun, CheckpointMismatchIsValidationFailure) {
  ASSERT_EQ(invoke(train_args("mm_train")).code, 0);
  const auto r = invoke({"eval", "--dataset", data().string(), "--dim", "16", "--heads", "2", "--checkpoint",
                         path("mm_train/checkpoint.bin").string(), "--out", path("mm_out").string()});
  EXPECT_EQ(r.code, kExitValidation) << r.err;
}

TEST_F(CliRun, EvalWithoutCheckpointIsConfigError) {
  const auto r = invoke({"eval", "--dataset", data().string(), "--out", path("nock").string()});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("--checkpoint"), std::string::npos) << r.err;
}

TEST_F(CliRun, DivergenceSavesStateAndExitsOne) {
  auto args = train_args("div");
  args.insert(args.end(), {"--lr", "1e30", "--dropout", "0", "--set", "train.div_factor=1"});
  const auto r = invoke(args);
  EXPECT_EQ(r.code, kExitRuntime);
  EXPECT_NE(r.err.find("diverged"), std::string::npos) << r.err;
  EXPECT_TRUE(fs::exists(path("div") / "checkpoint.bin"));
  EXPECT_TRUE(nlohmann::json::parse(slurp(path("div") / "log.json"))["diverged"].get<bool>());
  EXPECT_FALSE(fs::exists(path("div") / "metrics.json"));
}

TEST(Cli, GradcheckOnBundledFixturePasses) {
  TempDir dir;
  const auto r = invoke({"gradcheck", "--out", (dir / "gc").string()});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("classifier.W"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "gc" / "gradcheck.tsv"));
  EXPECT_TRUE(nlohmann::json::parse(slurp(dir / "gc" / "manifest.json"))["passed"].get<bool>());
}

TEST(Cli, MissingDatasetDirectoryIsConfigError) {
  TempDir dir;
  const auto missing = (dir / "no_such_dataset").string();
  const auto r = invoke({"train", "--dataset", missing, "--out", (dir / "o").string()});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find(missing), std::string::npos) << r.err;
}

TEST(Cli, InvalidDatasetIsValidationFailure) {
  TempDir dir;
  save_dataset(synthetic_generate(SyntheticSpec{}, 0), dir / "bad");
  put(dir / "bad" / "edges_bridge__in__target.csv", "src_id,dst_id\n0,99999\n");
  const auto r = invoke({"train", "--dataset", (dir / "bad").string(), "--out", (dir / "o").string()});
  EXPECT_EQ(r.code, kExitValidation) << r.err;
}

TEST(Cli, UnknownKeyExitsTwoWithSuggestion) {
  TempDir dir;
  put(dir / "bad.conf", "laers = 3\n");
  const auto r = invoke({"gradcheck", "--config", (dir / "bad.conf").string(), "--out", (dir / "o").string()});
  EXPECT_EQ(r.code, kExitConfig);
  EXPECT_NE(r.err.find("model.layers"), std::string::npos) << r.err;
}

TEST(Cli, BadArgumentsExitTwo) {
  EXPECT_EQ(invoke({}).code, kExitConfig);
  EXPECT_EQ(invoke({"fly"}).code, kExitConfig);
  EXPECT_EQ(invoke({"train", "--bogus"}).code, kExitConfig);
  EXPECT_EQ(invoke({"train", "--profile", "laptop"}).code, kExitConfig);
  EXPECT_EQ(invoke({"train", "--heads", "7", "--dataset", "."}).code, kExitConfig);
  EXPECT_EQ(invoke({"train", "--set", "train.lr"}).code, kExitConfig);
  EXPECT_EQ(invoke({"--help"}).code, 0);
}

TEST(Cli, SynthWritesLoadableDataset) {
  TempDir dir;
  const auto r = invoke({"synth", "--out", (dir / "ds").string(), "--seed", "4", "--targets", "50"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto g = load_dataset(dir / "ds");
  EXPECT_EQ(g.num_nodes[g.schema.target_index()], 50u);
  const auto m = nlohmann::json::parse(slurp(dir / "ds" / "manifest.json"));
  EXPECT_EQ(m["dataset_hash"], dataset_hash(dir / "ds"));
  EXPECT_TRUE(m["outputs"].contains("schema.json"));
}

}  // namespace
}  // namespace seqhgnn::cli
