#include <algorithm>
#include <cstdio>
#include <optional>

#include <CLI11.hpp>

#include "seqhgnn/cli/cli.hpp"
#include "seqhgnn/errors.hpp"

namespace seqhgnn::cli {

namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string config_file;
  std::string dataset;
  std::string out;
  std::string profile = "desk";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> layers, dim, heads, epochs;
  std::optional<double> lr, dropout;
  std::vector<std::string> sets;
  std::string checkpoint;
  std::string split;
  std::optional<std::size_t> top_k;
  bool per_node = false;
  std::optional<std::size_t> targets;
  bool unplanted = false;
};

RunConfig resolve(const Flags& f) {
  RunConfig rc;
  rc.train = profile_config(f.profile);
  if (!f.config_file.empty()) apply_config_file(rc, f.config_file);
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    set_config_value(rc, s.substr(0, eq), s.substr(eq + 1));
  }
  if (!f.dataset.empty()) rc.dataset = f.dataset;
  if (!f.out.empty()) rc.out = f.out;
  if (f.seed) rc.train.seed = *f.seed;
  if (f.layers) rc.train.layers = *f.layers;
  if (f.dim) rc.train.d = *f.dim;
  if (f.heads) rc.train.heads = *f.heads;
  if (f.epochs) rc.train.epochs = *f.epochs;
  if (f.lr) rc.train.lr = *f.lr;
  if (f.dropout) rc.train.dropout = *f.dropout;
  if (!f.checkpoint.empty()) rc.checkpoint = f.checkpoint;
  if (!f.split.empty()) set_config_value(rc, "eval.split", f.split);
  if (f.top_k) rc.top_k = *f.top_k;
  if (f.per_node) rc.per_node = true;
  rc.train.validate();
  if (rc.top_k < 1) throw ConfigError("explain.top_k must be at least 1");
  return rc;
}

HeteroGraph load(const RunConfig& rc, std::ostream& err) {
  if (rc.dataset.empty()) throw ConfigError("no dataset given (--dataset)");
  if (!fs::is_directory(rc.dataset)) throw ConfigError("dataset directory not found: " + rc.dataset.string());
  std::vector<std::string> warnings;
  auto g = load_dataset(rc.dataset, &warnings);
  for (const auto& w : warnings) err << "warning: " << w << "\n";
  return g;
}

nlohmann::json manifest_base(const std::string& command, const RunConfig& rc) {
  nlohmann::json m;
  m["command"] = command;
  m["seed"] = rc.train.seed;
  m["config"] = run_config_json(rc);
  if (!rc.dataset.empty()) m["dataset"] = {{"path", rc.dataset.string()}, {"hash", dataset_hash(rc.dataset)}};
  return m;
}

template <typename Real>
void load_checkpoint_into(Model<Real>& model, const RunConfig& rc) {
  if (rc.checkpoint.empty()) throw ConfigError("no checkpoint given (--checkpoint)");
  const auto values = read_checkpoint(rc.checkpoint);
  try {
    model.load_values(values);
  } catch (const Error& e) {
    throw ValidationError({"checkpoint does not match the configured model: " + std::string(e.what())});
  }
}

template <typename Real>
int cmd_train(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  const auto g = load(rc, err);
  OutputDir dir(rc.out);
  Model<Real> model(g.schema, rc.train);
  const auto result = train(model, g, rc.train, [&](const EpochLog& e) {
    TrainResult one;
    one.log.push_back(e);
    out << log_text(one) << std::flush;
  });
  const auto ckpt = encode_checkpoint(model.values(), rc.train.precision);
  dir.write("checkpoint.bin", ckpt.bin);
  dir.write("checkpoint.idx", ckpt.index);
  dir.write("config.conf", render_config(rc));
  dir.write("train_log.tsv", log_text(result));
  dir.write("log.json", log_json(result, rc.train).dump(2) + "\n");
  auto manifest = manifest_base("train", rc);
  if (result.diverged) {
    dir.write_manifest(manifest);
    err << "training diverged (" << result.divergence << "); last finite parameters saved to "
        << (dir.root() / "checkpoint.bin").string() << "\n";
    return kExitRuntime;
  }
  const auto& nodes = g.splits.get(rc.split);
  if (nodes.empty()) {
    err << "warning: split '" << rc.split << "' is empty; metrics.json not written\n";
  } else {
    const auto metrics = evaluate(model, g, std::span<const std::size_t>(nodes)).metrics;
    dir.write("metrics.json", metrics_json(metrics).dump(2) + "\n");
    out << rc.split << " micro_f1 " << metrics.micro_f1 << " macro_f1 " << metrics.macro_f1 << "\n";
  }
  dir.write_manifest(manifest);
  return kExitOk;
}

template <typename Real>
int cmd_eval(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  const auto g = load(rc, err);
  Model<Real> model(g.schema, rc.train);
  load_checkpoint_into(model, rc);
  const auto metrics = evaluate(model, g, rc.split).metrics;
  OutputDir dir(rc.out);
  const auto text = metrics_json(metrics).dump(2) + "\n";
  dir.write("metrics.json", text);
  auto manifest = manifest_base("eval", rc);
  manifest["checkpoint"] = {{"path", rc.checkpoint.string()}, {"hash", file_blob_sha1(rc.checkpoint)}};
  dir.write_manifest(manifest);
  out << text;
  return kExitOk;
}

template <typename Real>
int cmd_explain(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  const auto g = load(rc, err);
  Model<Real> model(g.schema, rc.train);
  load_checkpoint_into(model, rc);
  const auto& nodes = g.splits.get(rc.split);
  if (nodes.empty()) throw ValidationError({"split '" + rc.split + "' is empty"});
  Tape<Real> tape;
  const auto fwd = model.forward(tape, g, nodes, false);
  const auto report = metapath_report(fwd.fusion.attention.value().template cast<double>(), g.schema,
                                      g.schema.target_index(), model.head_labels(), rc.top_k, nodes, rc.per_node);
  OutputDir dir(rc.out);
  dir.write("report.json", report_json(report).dump(2) + "\n");
  const auto text = report_text(report);
  dir.write("report.txt", text);
  auto manifest = manifest_base("explain", rc);
  manifest["checkpoint"] = {{"path", rc.checkpoint.string()}, {"hash", file_blob_sha1(rc.checkpoint)}};
  dir.write_manifest(manifest);
  out << text;
  return kExitOk;
}

int cmd_gradcheck(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  HeteroGraph g;
  TrainConfig c;
  if (rc.dataset.empty()) {
    g = gradcheck_fixture();
    c = gradcheck_config();
    c.seed = rc.train.seed;
  } else {
    g = load(rc, err);
    c = rc.train;
    c.dropout = 0.0;
    c.precision = Precision::Float64;
  }
  Model<double> model(g.schema, c);
  const auto errors = grad_check_model(model, g);
  std::string table = "group\tmax_rel_error\tanalytic\tnumeric\n";
  bool ok = true;
  for (const auto& e : errors) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "\t%.3e\t%.6e\t%.6e\n", e.max_rel_error, e.analytic, e.numeric);
    table += e.name + buf;
    ok = ok && e.max_rel_error < 1e-4;
  }
  OutputDir dir(rc.out);
  dir.write("gradcheck.tsv", table);
  auto manifest = manifest_base("gradcheck", rc);
  manifest["config"] = config_json(c);
  manifest["passed"] = ok;
  dir.write_manifest(manifest);
  out << table << (ok ? "all groups below 1e-4\n" : "some groups exceed 1e-4\n");
  return ok ? kExitOk : kExitValidation;
}

int cmd_synth(const RunConfig& rc, const Flags& f, std::ostream& out) {
  SyntheticSpec spec;
  if (f.targets) spec.num_targets = *f.targets;
  spec.planted = !f.unplanted;
  const auto g = synthetic_generate(spec, rc.train.seed);
  save_dataset(g, rc.out);
  OutputDir dir(rc.out);
  for (const auto& entry : fs::directory_iterator(rc.out)) {
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && name != "manifest.json") dir.record(name);
  }
  nlohmann::json manifest;
  manifest["command"] = "synth";
  manifest["seed"] = rc.train.seed;
  manifest["planted"] = spec.planted;
  manifest["num_targets"] = spec.num_targets;
  manifest["dataset_hash"] = dataset_hash(rc.out);
  dir.write_manifest(manifest);
  out << "wrote " << rc.out.string() << "\n";
  return kExitOk;
}

template <template <typename> class Fn>
int by_precision(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  if (rc.train.precision == Precision::Float64) return Fn<double>::run(rc, out, err);
  return Fn<float>::run(rc, out, err);
}

template <typename R>
struct TrainCmd {
  static int run(const RunConfig& rc, std::ostream& o, std::ostream& e) { return cmd_train<R>(rc, o, e); }
};
template <typename R>
struct EvalCmd {
  static int run(const RunConfig& rc, std::ostream& o, std::ostream& e) { return cmd_eval<R>(rc, o, e); }
};
template <typename R>
struct ExplainCmd {
  static int run(const RunConfig& rc, std::ostream& o, std::ostream& e) { return cmd_explain<R>(rc, o, e); }
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Flags f;
  CLI::App app{"Sequential heterogeneous graph neural network: train, evaluate and explain node classifiers."};
  app.name("seqhgnn");
  app.require_subcommand(1);
  app.add_option("--config", f.config_file, "Flat 'section.key = value' config file");
  app.add_option("--dataset", f.dataset, "Dataset directory");
  app.add_option("--out", f.out, "Output directory (default seqhgnn_out)");
  app.add_option("--seed", f.seed, "Run seed");
  app.add_option("--profile", f.profile, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--layers", f.layers, "Number of layers");
  app.add_option("--dim", f.dim, "Hidden dimension d");
  app.add_option("--heads", f.heads, "Attention heads");
  app.add_option("--epochs", f.epochs, "Training epochs");
  app.add_option("--lr", f.lr, "Peak learning rate");
  app.add_option("--dropout", f.dropout, "Slot dropout rate");
  app.add_option("--set", f.sets, "Override any config key: --set train.patience=10");

  auto* train_cmd = app.add_subcommand("train", "Train a model; writes checkpoint, logs and metrics");
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint; writes metrics.json");
  auto* explain_cmd = app.add_subcommand("explain", "Report the most attended meta-paths");
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every parameter gradient");
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic planted-meta-path dataset to --out");
  for (auto* sub : {train_cmd, eval_cmd, explain_cmd, grad_cmd, synth_cmd}) sub->fallthrough();
  for (auto* sub : {train_cmd, eval_cmd, explain_cmd}) {
    sub->add_option("--split", f.split, "train, valid or test (default test)");
  }
  for (auto* sub : {eval_cmd, explain_cmd}) sub->add_option("--checkpoint", f.checkpoint, "checkpoint.bin from train");
  explain_cmd->add_option("--top-k", f.top_k, "Paths per node type (default 5)");
  explain_cmd->add_flag("--per-node", f.per_node, "Also report paths per node");
  synth_cmd->add_option("--targets", f.targets, "Number of target nodes (default 600)");
  synth_cmd->add_flag("--unplanted", f.unplanted, "Draw labels independently of the graph");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, out, err);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    const RunConfig rc = resolve(f);
    if (*train_cmd) return by_precision<TrainCmd>(rc, out, err);
    if (*eval_cmd) return by_precision<EvalCmd>(rc, out, err);
    if (*explain_cmd) return by_precision<ExplainCmd>(rc, out, err);
    if (*grad_cmd) return cmd_gradcheck(rc, out, err);
    return cmd_synth(rc, f, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ValidationError& e) {
    err << "validation failed:\n";
    for (const auto& p : e.problems()) err << "  " << p << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace seqhgnn::cli
