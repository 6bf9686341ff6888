#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "seqhgnn/cli/cli.hpp"
#include "seqhgnn/errors.hpp"

namespace seqhgnn::cli {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void type_error(std::string_view key, std::string_view expected, std::string_view value) {
  throw ConfigError(std::string(key) + " expects " + std::string(expected) + ", got '" + std::string(value) + "'");
}

template <typename Int>
Int parse_int(std::string_view key, std::string_view v) {
  Int out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) type_error(key, "a non-negative integer", v);
  return out;
}

double parse_double(std::string_view key, std::string_view v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty() || !std::isfinite(out)) type_error(key, "a number", v);
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true") return true;
  if (v == "false") return false;
  type_error(key, "true or false", v);
}

std::string fmt(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::string fmt(bool b) { return b ? "true" : "false"; }
std::string fmt(std::size_t n) { return std::to_string(n); }

struct Key {
  std::string name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_KEY(name, field)                                                                          \
  Key {                                                                                                \
    name, [](RunConfig& c, std::string_view v) { c.field = parse_int<std::size_t>(name, v); },         \
        [](const RunConfig& c) { return fmt(c.field); }                                                \
  }
#define REAL_KEY(name, field)                                                                          \
  Key {                                                                                                \
    name, [](RunConfig& c, std::string_view v) { c.field = parse_double(name, v); },                   \
        [](const RunConfig& c) { return fmt(c.field); }                                                \
  }
#define BOOL_KEY(name, field)                                                                          \
  Key {                                                                                                \
    name, [](RunConfig& c, std::string_view v) { c.field = parse_bool(name, v); },                     \
        [](const RunConfig& c) { return fmt(c.field); }                                                \
  }
#define PATH_KEY(name, field)                                                                          \
  Key {                                                                                                \
    name, [](RunConfig& c, std::string_view v) { c.field = std::string(v); },                          \
        [](const RunConfig& c) { return c.field.string(); }                                            \
  }

const std::vector<Key>& key_table() {
  static const std::vector<Key> table = [] {
    std::vector<Key> t = {
        SIZE_KEY("model.d", train.d),
        SIZE_KEY("model.heads", train.heads),
        SIZE_KEY("model.layers", train.layers),
        BOOL_KEY("model.seq", train.seq),
        BOOL_KEY("model.fus", train.fus),
        BOOL_KEY("model.rel", train.rel),
        Key{"model.attention_norm",
            [](RunConfig& c, std::string_view v) {
              if (v == "joint") c.train.attention_norm = AttentionNorm::Joint;
              else if (v == "literal") c.train.attention_norm = AttentionNorm::Literal;
              else type_error("model.attention_norm", "joint or literal", v);
            },
            [](const RunConfig& c) { return std::string(c.train.attention_norm == AttentionNorm::Joint ? "joint" : "literal"); }},
        BOOL_KEY("model.scale_outside", train.scale_outside),
        REAL_KEY("train.dropout", train.dropout),
        BOOL_KEY("train.dropout_keep_base", train.dropout_keep_base),
        SIZE_KEY("train.epochs", train.epochs),
        REAL_KEY("train.lr", train.lr),
        REAL_KEY("train.start_fraction", train.start_fraction),
        REAL_KEY("train.div_factor", train.div_factor),
        REAL_KEY("train.final_div_factor", train.final_div_factor),
        REAL_KEY("train.weight_decay", train.weight_decay),
        REAL_KEY("train.beta1", train.beta1),
        REAL_KEY("train.beta2", train.beta2),
        REAL_KEY("train.eps", train.eps),
        Key{"train.batch_mode",
            [](RunConfig& c, std::string_view v) {
              if (v == "full") c.train.batch_mode = BatchMode::Full;
              else if (v == "sampled") c.train.batch_mode = BatchMode::Sampled;
              else type_error("train.batch_mode", "full or sampled", v);
            },
            [](const RunConfig& c) { return std::string(c.train.batch_mode == BatchMode::Full ? "full" : "sampled"); }},
        Key{"train.seed", [](RunConfig& c, std::string_view v) { c.train.seed = parse_int<std::uint64_t>("train.seed", v); },
            [](const RunConfig& c) { return std::to_string(c.train.seed); }},
        Key{"train.precision",
            [](RunConfig& c, std::string_view v) {
              if (v == "float32") c.train.precision = Precision::Float32;
              else if (v == "float64") c.train.precision = Precision::Float64;
              else type_error("train.precision", "float32 or float64", v);
            },
            [](const RunConfig& c) { return std::string(c.train.precision == Precision::Float32 ? "float32" : "float64"); }},
        BOOL_KEY("train.early_stopping", train.early_stopping),
        SIZE_KEY("train.patience", train.patience),
        SIZE_KEY("sampler.depth", train.sample_depth),
        SIZE_KEY("sampler.budget", train.sample_budget),
        SIZE_KEY("sampler.batch_size", train.batch_size),
        SIZE_KEY("sampler.batches_per_epoch", train.batches_per_epoch),
        PATH_KEY("run.dataset", dataset),
        PATH_KEY("run.out", out),
        PATH_KEY("run.checkpoint", checkpoint),
        Key{"eval.split",
            [](RunConfig& c, std::string_view v) {
              if (v != "train" && v != "valid" && v != "test") type_error("eval.split", "train, valid or test", v);
              c.split = std::string(v);
            },
            [](const RunConfig& c) { return c.split; }},
        SIZE_KEY("explain.top_k", top_k),
        BOOL_KEY("explain.per_node", per_node),
    };
    std::sort(t.begin(), t.end(), [](const Key& a, const Key& b) { return a.name < b.name; });
    return t;
  }();
  return table;
}

#undef SIZE_KEY
#undef REAL_KEY
#undef BOOL_KEY
#undef PATH_KEY

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> row(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) row[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t up = row[j];
      row[j] = std::min({row[j] + 1, row[j - 1] + 1, diag + (a[i - 1] == b[j - 1] ? 0 : 1)});
      diag = up;
    }
  }
  return row[b.size()];
}

}  // namespace

TrainConfig profile_config(std::string_view name) {
  TrainConfig c;
  if (name == "desk") return c;
  if (name == "paper") {
    c.d = 512;
    c.heads = 8;
    c.dropout = 0.5;
    c.lr = 5e-4;
    return c;
  }
  throw ConfigError("unknown profile '" + std::string(name) + "' (expected desk or paper)");
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& e : key_table()) k.push_back(e.name);
    return k;
  }();
  return keys;
}

std::string suggest_key(std::string_view key) {
  std::string best;
  std::size_t best_d = SIZE_MAX;
  for (const auto& name : config_keys()) {
    std::size_t d = edit_distance(key, name);
    const auto dot = name.find('.');
    if (key.find('.') == std::string_view::npos) d = std::min(d, edit_distance(key, std::string_view(name).substr(dot + 1)));
    if (d < best_d) {
      best_d = d;
      best = name;
    }
  }
  return best;
}

void set_config_value(RunConfig& config, std::string_view key, std::string_view value) {
  const auto& table = key_table();
  auto it = std::lower_bound(table.begin(), table.end(), key, [](const Key& k, std::string_view n) { return k.name < n; });
  if (it == table.end() || it->name != key) {
    throw ConfigError("unknown config key '" + std::string(key) + "'; did you mean '" + suggest_key(key) + "'?");
  }
  it->set(config, value);
}

void apply_config_text(RunConfig& config, std::string_view text, std::string_view source) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto where = std::string(source) + ":" + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    auto value = line.substr(eq + 1);
    if (const auto hash = value.find(" #"); hash != std::string_view::npos) value = value.substr(0, hash);
    value = trim(value);
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    try {
      set_config_value(config, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

void apply_config_file(RunConfig& config, const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(config, ss.str(), file.string());
}

std::string render_config(const RunConfig& config) {
  std::string out;
  for (const auto& k : key_table()) {
    if (k.name.starts_with("run.")) continue;
    const auto v = k.get(config);
    out += k.name + " = " + v + "\n";
  }
  return out;
}

nlohmann::json run_config_json(const RunConfig& config) {
  auto j = config_json(config.train);
  j["run.dataset"] = config.dataset.string();
  j["run.out"] = config.out.string();
  j["run.checkpoint"] = config.checkpoint.string();
  j["eval.split"] = config.split;
  j["explain.top_k"] = config.top_k;
  j["explain.per_node"] = config.per_node;
  return j;
}

}  // namespace seqhgnn::cli
