#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "seqhgnn/errors.hpp"
#include "seqhgnn/graph/hetero_graph.hpp"

namespace seqhgnn {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::optional<RawTable> read_csv(const fs::path& file, std::vector<std::string>& errors) {
  std::ifstream in(file, std::ios::binary);
  if (!in) {
    errors.push_back("cannot read " + file.filename().string());
    return std::nullopt;
  }
  RawTable t;
  t.file = file.filename().string();
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (first) {
      t.header = split_csv(line);
      first = false;
      continue;
    }
    if (line.empty()) continue;
    t.rows.push_back(split_csv(line));
  }
  return t;
}

std::optional<long long> parse_int(const std::string& s) {
  long long v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return std::nullopt;
  return v;
}

std::optional<double> parse_real(const std::string& s) {
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

std::vector<std::string> node_header(const NodeType& t) {
  std::vector<std::string> h{"id"};
  if (t.featureless()) return h;
  for (std::size_t f = 0; f < t.num_features; ++f) {
    for (std::size_t k = 0; k < t.feature_dim; ++k) h.push_back("f" + std::to_string(f) + "_" + std::to_string(k));
  }
  return h;
}

std::vector<std::string> multi_label_header(std::size_t classes) {
  std::vector<std::string> h{"id"};
  for (std::size_t c = 0; c < classes; ++c) h.push_back("label" + std::to_string(c));
  return h;
}

bool is_multi_label(const RawTable& labels, std::size_t classes) {
  return labels.header == multi_label_header(classes) && labels.header != std::vector<std::string>{"id", "label"};
}

std::string fmt_real(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("cannot write " + file.string());
  out << text;
}

}  // namespace

Schema parse_schema(const fs::path& file, std::vector<std::string>& errors) {
  Schema s;
  std::ifstream in(file, std::ios::binary);
  if (!in) {
    errors.push_back("missing file schema.json");
    return s;
  }
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    errors.push_back(std::string("schema.json: ") + e.what());
    return s;
  }
  try {
    for (const auto& t : j.at("node_types")) {
      s.node_types.push_back({t.at("name").get<std::string>(), t.at("num_features").get<std::size_t>(),
                              t.at("feature_dim").get<std::size_t>()});
    }
    for (const auto& r : j.at("relations")) {
      s.relations.push_back({r.at("src").get<std::string>(), r.at("name").get<std::string>(),
                             r.at("dst").get<std::string>()});
    }
    s.target_type = j.at("target_type").get<std::string>();
    s.num_classes = j.at("num_classes").get<std::size_t>();
  } catch (const json::exception& e) {
    errors.push_back(std::string("schema.json: ") + e.what());
  }
  return s;
}

RawTables read_raw_tables(const fs::path& dir) {
  RawTables raw;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    if (f.extension() != ".csv") continue;
    const std::string stem = f.stem().string();
    if (stem.rfind("nodes_", 0) == 0) {
      if (auto t = read_csv(f, raw.read_errors)) raw.nodes.emplace(stem.substr(6), std::move(*t));
    } else if (stem.rfind("edges_", 0) == 0) {
      if (auto t = read_csv(f, raw.read_errors)) raw.edges.emplace(stem.substr(6), std::move(*t));
    }
  }
  if (fs::exists(dir / "labels.csv")) raw.labels = read_csv(dir / "labels.csv", raw.read_errors);

  if (std::ifstream in{dir / "splits.json", std::ios::binary}) {
    try {
      auto j = json::parse(in);
      std::map<std::string, std::vector<long long>> splits;
      for (const auto& [k, v] : j.items()) splits[k] = v.get<std::vector<long long>>();
      raw.splits = std::move(splits);
    } catch (const json::exception& e) {
      raw.read_errors.push_back(std::string("splits.json: ") + e.what());
    }
  }
  return raw;
}

ValidationReport validate_schema(const Schema& schema, const RawTables& raw) {
  ValidationReport rep;
  auto& err = rep.errors;
  err = raw.read_errors;

  std::set<std::string> type_names;
  for (const auto& t : schema.node_types) {
    if (t.name.empty()) err.push_back("node type with empty name");
    if (!type_names.insert(t.name).second) err.push_back("duplicate node type '" + t.name + "'");
  }
  std::set<std::string> rel_keys;
  for (const auto& r : schema.relations) {
    for (const auto* end : {&r.src, &r.dst}) {
      if (!type_names.count(*end)) err.push_back("relation " + r.key() + ": unknown type '" + *end + "'");
    }
    if (!rel_keys.insert(r.key()).second) err.push_back("duplicate relation " + r.key());
  }
  if (schema.node_types.size() + schema.relations.size() <= 2) {
    err.push_back("not a heterogeneous graph: node types + relations must exceed 2");
  }
  if (!type_names.count(schema.target_type)) err.push_back("target_type: unknown type '" + schema.target_type + "'");
  if (schema.num_classes < 1) err.push_back("num_classes must be at least 1");

  // Node files.
  std::map<std::string, std::size_t> counts;
  for (const auto& t : schema.node_types) {
    auto it = raw.nodes.find(t.name);
    if (it == raw.nodes.end()) {
      err.push_back("missing file nodes_" + t.name + ".csv");
      continue;
    }
    const RawTable& tab = it->second;
    counts[t.name] = tab.rows.size();
    const auto want = node_header(t);
    if (tab.header != want) {
      err.push_back(tab.file + ": feature arity mismatch, header has " + std::to_string(tab.header.size()) +
                    " columns, schema needs " + std::to_string(want.size()) + " (" + join(want).substr(0, 60) + ")");
      continue;
    }
    for (std::size_t i = 0; i < tab.rows.size(); ++i) {
      const auto& row = tab.rows[i];
      const std::string where = tab.file + " line " + std::to_string(i + 2);
      if (row.size() != want.size()) {
        err.push_back(where + ": expected " + std::to_string(want.size()) + " columns, got " +
                      std::to_string(row.size()));
        continue;
      }
      auto id = parse_int(row[0]);
      if (!id || *id != static_cast<long long>(i)) err.push_back(where + ": id must equal row index " + std::to_string(i));
      for (std::size_t c = 1; c < row.size(); ++c) {
        if (!parse_real(row[c])) {
          err.push_back(where + ": bad feature value '" + row[c] + "'");
          break;
        }
      }
    }
  }
  for (const auto& [name, tab] : raw.nodes) {
    if (!type_names.count(name)) err.push_back(tab.file + ": unknown type '" + name + "'");
  }

  // Edge files.
  for (const auto& r : schema.relations) {
    if (!raw.edges.count(r.key())) err.push_back("missing file edges_" + r.key() + ".csv");
  }
  for (const auto& [key, tab] : raw.edges) {
    auto rel = schema.find_relation(key);
    if (!rel) {
      auto a = key.find("__");
      auto b = a == std::string::npos ? a : key.find("__", a + 2);
      if (b == std::string::npos) {
        err.push_back(tab.file + ": malformed edge file name");
        continue;
      }
      const std::string src = key.substr(0, a), dst = key.substr(b + 2);
      bool unknown = false;
      for (const auto& end : {src, dst}) {
        if (!type_names.count(end)) {
          err.push_back(tab.file + ": unknown type '" + end + "'");
          unknown = true;
        }
      }
      if (!unknown) err.push_back(tab.file + ": unknown relation '" + key + "'");
      continue;
    }
    const Relation& R = schema.relations[*rel];
    if (tab.header != std::vector<std::string>{"src_id", "dst_id"}) {
      err.push_back(tab.file + ": header must be 'src_id,dst_id'");
      continue;
    }
    const bool have_counts = counts.count(R.src) && counts.count(R.dst);
    std::set<std::pair<long long, long long>> seen;
    std::size_t duplicates = 0;
    for (std::size_t i = 0; i < tab.rows.size(); ++i) {
      const auto& row = tab.rows[i];
      const std::string where = tab.file + " line " + std::to_string(i + 2);
      std::optional<long long> s, d;
      if (row.size() == 2) {
        s = parse_int(row[0]);
        d = parse_int(row[1]);
      }
      if (!s || !d) {
        err.push_back(where + ": expected two integer ids");
        continue;
      }
      if (have_counts && (*s < 0 || *s >= static_cast<long long>(counts[R.src]))) {
        err.push_back(where + ": src_id " + row[0] + " out of range for type '" + R.src + "'");
      }
      if (have_counts && (*d < 0 || *d >= static_cast<long long>(counts[R.dst]))) {
        err.push_back(where + ": dst_id " + row[1] + " out of range for type '" + R.dst + "'");
      }
      if (!seen.insert({*s, *d}).second) ++duplicates;
    }
    if (duplicates) rep.warnings.push_back(tab.file + ": " + std::to_string(duplicates) + " duplicate edges kept");
  }

  // Labels.
  const bool have_target = counts.count(schema.target_type) > 0;
  const std::size_t num_targets = have_target ? counts[schema.target_type] : 0;
  std::set<long long> labeled;
  if (!raw.labels) {
    err.push_back("missing file labels.csv");
  } else {
    const RawTable& tab = *raw.labels;
    const bool single = tab.header == std::vector<std::string>{"id", "label"};
    const bool multi = is_multi_label(tab, schema.num_classes);
    if (!single && !multi) {
      err.push_back("labels.csv: header must be 'id,label' or 'id,label0,...,label" +
                    std::to_string(schema.num_classes ? schema.num_classes - 1 : 0) + "'");
    } else {
      for (std::size_t i = 0; i < tab.rows.size(); ++i) {
        const auto& row = tab.rows[i];
        const std::string where = "labels.csv line " + std::to_string(i + 2);
        if (row.size() != tab.header.size()) {
          err.push_back(where + ": expected " + std::to_string(tab.header.size()) + " columns");
          continue;
        }
        auto id = parse_int(row[0]);
        if (!id || (have_target && (*id < 0 || *id >= static_cast<long long>(num_targets)))) {
          err.push_back(where + ": id '" + row[0] + "' out of range for type '" + schema.target_type + "'");
          continue;
        }
        if (!labeled.insert(*id).second) err.push_back(where + ": duplicate label for id " + row[0]);
        for (std::size_t c = 1; c < row.size(); ++c) {
          auto v = parse_int(row[c]);
          const long long hi = single ? static_cast<long long>(schema.num_classes) : 2;
          if (!v || *v < 0 || *v >= hi) {
            err.push_back(where + ": label value '" + row[c] + "' out of range");
            break;
          }
        }
      }
    }
  }

  // Splits.
  if (!raw.splits) {
    if (std::none_of(err.begin(), err.end(), [](const std::string& e) { return e.rfind("splits.json", 0) == 0; })) {
      err.push_back("missing file splits.json");
    }
  } else {
    std::map<long long, std::string> owner;
    for (const char* name : {"train", "valid", "test"}) {
      auto it = raw.splits->find(name);
      if (it == raw.splits->end()) {
        err.push_back(std::string("splits.json: missing key '") + name + "'");
        continue;
      }
      for (long long id : it->second) {
        if (id < 0 || (have_target && id >= static_cast<long long>(num_targets))) {
          err.push_back(std::string("splits.json: ") + name + " id " + std::to_string(id) + " out of range");
          continue;
        }
        auto [pos, fresh] = owner.emplace(id, name);
        if (!fresh) {
          err.push_back(std::string("splits.json: id ") + std::to_string(id) + " in both " + pos->second + " and " +
                        name);
        }
        if (raw.labels && !labeled.count(id)) {
          err.push_back(std::string("splits.json: ") + name + " id " + std::to_string(id) + " has no label");
        }
      }
    }
    for (const auto& [k, v] : *raw.splits) {
      if (k != "train" && k != "valid" && k != "test") err.push_back("splits.json: unknown key '" + k + "'");
    }
  }
  return rep;
}

namespace {

HeteroGraph build_graph(const Schema& schema, const RawTables& raw) {
  HeteroGraph g;
  g.schema = schema;
  for (const auto& t : schema.node_types) {
    const RawTable& tab = raw.nodes.at(t.name);
    const std::size_t n = tab.rows.size();
    g.num_nodes.push_back(n);
    if (t.featureless()) {
      g.features.push_back(Tensor<double>({n, 0, 0}));
      continue;
    }
    Tensor<double> x({n, t.num_features, t.feature_dim});
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t c = 1; c < tab.rows[i].size(); ++c) x[i * (tab.rows[i].size() - 1) + c - 1] = *parse_real(tab.rows[i][c]);
    }
    g.features.push_back(std::move(x));
  }
  for (const auto& r : schema.relations) {
    EdgeList e;
    for (const auto& row : raw.edges.at(r.key()).rows) {
      e.src.push_back(static_cast<std::size_t>(*parse_int(row[0])));
      e.dst.push_back(static_cast<std::size_t>(*parse_int(row[1])));
    }
    g.edges.push_back(std::move(e));
  }
  const std::size_t nt = g.num_nodes[schema.target_index()];
  const RawTable& lab = *raw.labels;
  g.multi_label = is_multi_label(lab, schema.num_classes);
  g.labels.assign(nt, -1);
  g.labeled.assign(nt, false);
  if (g.multi_label) g.label_flags = Tensor<double>({nt, schema.num_classes});
  for (const auto& row : lab.rows) {
    const auto id = static_cast<std::size_t>(*parse_int(row[0]));
    g.labeled[id] = true;
    if (g.multi_label) {
      for (std::size_t c = 0; c < schema.num_classes; ++c) g.label_flags.at(id, c) = static_cast<double>(*parse_int(row[c + 1]));
    } else {
      g.labels[id] = static_cast<std::int32_t>(*parse_int(row[1]));
    }
  }
  auto ids = [&](const char* name) {
    std::vector<std::size_t> out;
    for (long long v : raw.splits->at(name)) out.push_back(static_cast<std::size_t>(v));
    return out;
  };
  g.splits = {ids("train"), ids("valid"), ids("test")};
  g.finalize();
  return g;
}

}  // namespace

HeteroGraph load_dataset(const fs::path& dir, std::vector<std::string>* warnings) {
  if (!fs::is_directory(dir)) throw ValidationError({"dataset directory not found: " + dir.string()});
  std::vector<std::string> errors;
  Schema schema = parse_schema(dir / "schema.json", errors);
  if (!errors.empty()) throw ValidationError(errors);
  RawTables raw = read_raw_tables(dir);
  ValidationReport rep = validate_schema(schema, raw);
  if (!rep.ok()) throw ValidationError(rep.errors);
  if (warnings) warnings->insert(warnings->end(), rep.warnings.begin(), rep.warnings.end());
  return build_graph(schema, raw);
}

void save_dataset(const HeteroGraph& g, const fs::path& dir) {
  fs::create_directories(dir);
  const Schema& s = g.schema;
  json j;
  j["node_types"] = json::array();
  for (const auto& t : s.node_types) {
    j["node_types"].push_back({{"name", t.name}, {"num_features", t.num_features}, {"feature_dim", t.feature_dim}});
  }
  j["relations"] = json::array();
  for (const auto& r : s.relations) j["relations"].push_back({{"src", r.src}, {"name", r.name}, {"dst", r.dst}});
  j["target_type"] = s.target_type;
  j["num_classes"] = s.num_classes;
  write_text(dir / "schema.json", j.dump(2) + "\n");

  for (std::size_t t = 0; t < s.node_types.size(); ++t) {
    std::string out = join(node_header(s.node_types[t])) + "\n";
    const auto& x = g.features[t];
    const std::size_t width = g.num_nodes[t] ? x.size() / g.num_nodes[t] : 0;
    for (std::size_t i = 0; i < g.num_nodes[t]; ++i) {
      out += std::to_string(i);
      for (std::size_t k = 0; k < width; ++k) out += "," + fmt_real(x[i * width + k]);
      out += "\n";
    }
    write_text(dir / ("nodes_" + s.node_types[t].name + ".csv"), out);
  }
  for (std::size_t r = 0; r < s.relations.size(); ++r) {
    std::string out = "src_id,dst_id\n";
    for (std::size_t k = 0; k < g.edges[r].size(); ++k) {
      out += std::to_string(g.edges[r].src[k]) + "," + std::to_string(g.edges[r].dst[k]) + "\n";
    }
    write_text(dir / ("edges_" + s.relations[r].key() + ".csv"), out);
  }
  std::string lab = g.multi_label ? join(multi_label_header(s.num_classes)) + "\n" : "id,label\n";
  for (std::size_t i = 0; i < g.labeled.size(); ++i) {
    if (!g.labeled[i]) continue;
    lab += std::to_string(i);
    if (g.multi_label) {
      for (std::size_t c = 0; c < s.num_classes; ++c) lab += g.label_flags.at(i, c) != 0.0 ? ",1" : ",0";
    } else {
      lab += "," + std::to_string(g.labels[i]);
    }
    lab += "\n";
  }
  write_text(dir / "labels.csv", lab);
  json sp = {{"train", g.splits.train}, {"valid", g.splits.valid}, {"test", g.splits.test}};
  write_text(dir / "splits.json", sp.dump() + "\n");
}

}  // namespace seqhgnn
