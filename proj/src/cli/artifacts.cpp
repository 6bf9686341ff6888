#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "seqhgnn/cli/cli.hpp"
#include "seqhgnn/errors.hpp"

namespace seqhgnn::cli {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

namespace {

std::string sha1_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw Error("sha1: cannot allocate digest context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 && EVP_DigestUpdate(ctx, data.data(), data.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw Error("sha1: digest failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("cannot read " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool is_dataset_file(const std::string& name) {
  if (name == "schema.json" || name == "splits.json" || name == "labels.csv") return true;
  const bool csv = name.size() > 4 && name.ends_with(".csv");
  return csv && (name.starts_with("nodes_") || name.starts_with("edges_"));
}

std::string shape_text(const std::vector<std::size_t>& shape) {
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "x" : "") + std::to_string(shape[i]);
  return s.empty() ? "scalar" : s;
}

}  // namespace

std::string git_blob_sha1(std::string_view bytes) {
  std::string data = "blob " + std::to_string(bytes.size());
  data.push_back('\0');
  data.append(bytes);
  return sha1_hex(data);
}

std::string file_blob_sha1(const fs::path& file) { return git_blob_sha1(read_file(file)); }

std::string dataset_hash(const fs::path& dir) {
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && is_dataset_file(name)) names.push_back(name);
  }
  std::sort(names.begin(), names.end());
  std::string listing;
  for (const auto& n : names) listing += file_blob_sha1(dir / n) + "  " + n + "\n";
  return git_blob_sha1(listing);
}

// ---- checkpoint -------------------------------------------------------------------

Checkpoint encode_checkpoint(const std::map<std::string, Tensor<double>>& values, Precision precision) {
  Checkpoint c;
  c.index = "name\tshape\toffset\tprecision\n";
  const char* prec = precision == Precision::Float32 ? "float32" : "float64";
  for (const auto& [name, t] : values) {
    c.index += name + "\t" + shape_text(t.shape()) + "\t" + std::to_string(c.bin.size()) + "\t" + prec + "\n";
    for (double v : t.data()) {
      if (precision == Precision::Float32) {
        const float f = static_cast<float>(v);
        c.bin.append(reinterpret_cast<const char*>(&f), sizeof f);
      } else {
        c.bin.append(reinterpret_cast<const char*>(&v), sizeof v);
      }
    }
  }
  return c;
}

std::vector<CheckpointEntry> parse_checkpoint_index(std::string_view index) {
  std::vector<CheckpointEntry> out;
  std::vector<std::string> problems;
  std::istringstream in{std::string(index)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    std::istringstream fields(line);
    std::string name, shape, offset, prec;
    if (!std::getline(fields, name, '\t') || !std::getline(fields, shape, '\t') || !std::getline(fields, offset, '\t') ||
        !std::getline(fields, prec)) {
      problems.push_back("checkpoint index line " + std::to_string(line_no) + ": expected 4 tab-separated fields");
      continue;
    }
    CheckpointEntry e;
    e.name = name;
    try {
      if (shape != "scalar") {
        std::size_t pos = 0;
        while (pos <= shape.size()) {
          const auto x = shape.find('x', pos);
          const auto part = shape.substr(pos, x == std::string::npos ? std::string::npos : x - pos);
          std::size_t used = 0;
          e.shape.push_back(std::stoull(part, &used));
          if (used != part.size()) throw std::invalid_argument(part);
          if (x == std::string::npos) break;
          pos = x + 1;
        }
      }
      std::size_t used = 0;
      e.offset = std::stoull(offset, &used);
      if (used != offset.size()) throw std::invalid_argument(offset);
    } catch (const std::exception&) {
      problems.push_back("checkpoint index line " + std::to_string(line_no) + ": malformed shape or offset");
      continue;
    }
    if (prec == "float32") e.precision = Precision::Float32;
    else if (prec == "float64") e.precision = Precision::Float64;
    else {
      problems.push_back("checkpoint index line " + std::to_string(line_no) + ": unknown precision '" + prec + "'");
      continue;
    }
    out.push_back(std::move(e));
  }
  if (line_no == 0) problems.push_back("checkpoint index is empty");
  if (!problems.empty()) throw ValidationError(problems);
  return out;
}

std::map<std::string, Tensor<double>> decode_checkpoint(std::string_view bin, std::string_view index) {
  std::map<std::string, Tensor<double>> out;
  for (const auto& e : parse_checkpoint_index(index)) {
    const std::size_t width = e.precision == Precision::Float32 ? 4 : 8;
    Tensor<double> t(e.shape);
    if (e.offset > bin.size() || (bin.size() - e.offset) / width < t.size()) {
      throw ValidationError({"checkpoint data too short for " + e.name});
    }
    const char* p = bin.data() + e.offset;
    for (std::size_t i = 0; i < t.size(); ++i, p += width) {
      if (width == 4) {
        float f;
        std::memcpy(&f, p, 4);
        t[i] = f;
      } else {
        std::memcpy(&t[i], p, 8);
      }
    }
    if (!out.emplace(e.name, std::move(t)).second) throw ValidationError({"duplicate checkpoint entry " + e.name});
  }
  return out;
}

std::map<std::string, Tensor<double>> read_checkpoint(const fs::path& bin_file) {
  auto idx = bin_file;
  idx.replace_extension(".idx");
  if (!fs::exists(bin_file)) throw ConfigError("checkpoint not found: " + bin_file.string());
  if (!fs::exists(idx)) throw ConfigError("checkpoint index not found: " + idx.string());
  return decode_checkpoint(read_file(bin_file), read_file(idx));
}

// ---- output directory ---------------------------------------------------------------

OutputDir::OutputDir(fs::path root) : root_(std::move(root)) {
  std::error_code ec;
  fs::create_directories(root_, ec);
  if (ec || !fs::is_directory(root_)) throw Error("cannot create output directory " + root_.string());
}

void OutputDir::write(const std::string& name, const std::string& content) {
  const auto path = root_ / name;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("cannot write " + path.string());
  hashes_[name] = git_blob_sha1(content);
}

void OutputDir::record(const std::string& name) { hashes_[name] = file_blob_sha1(root_ / name); }

void OutputDir::write_manifest(nlohmann::json manifest) {
  manifest["outputs"] = nlohmann::json::object();
  for (const auto& [name, hash] : hashes_) manifest["outputs"][name] = hash;
  const auto text = manifest.dump(2) + "\n";
  std::ofstream out(root_ / "manifest.json", std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error("cannot write " + (root_ / "manifest.json").string());
}

}  // namespace seqhgnn::cli
