#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "seqhgnn/training/training.hpp"

namespace seqhgnn::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitValidation = 3;

struct RunConfig {
  std::filesystem::path dataset;
  std::filesystem::path out = "seqhgnn_out";
  std::filesystem::path checkpoint;  // eval and explain
  std::string split = "test";        // split evaluated or explained
  std::size_t top_k = 5;
  bool per_node = false;
  TrainConfig train;
};

/// "desk" (the TrainConfig defaults) or "paper". Throws ConfigError.
TrainConfig profile_config(std::string_view name);

/// Every key accepted in a config file, sorted.
const std::vector<std::string>& config_keys();

/// Nearest valid key by edit distance, also matching the part after the
/// section prefix.
std::string suggest_key(std::string_view key);

/// Throws ConfigError on an unknown key or a malformed value.
void set_config_value(RunConfig& config, std::string_view key, std::string_view value);

/// Applies `section.key = value` lines; `#` starts a comment. `source` names
/// the text in error messages.
void apply_config_text(RunConfig& config, std::string_view text, std::string_view source = "config");
void apply_config_file(RunConfig& config, const std::filesystem::path& file);

/// Flat text of every setting except the run.* paths; apply_config_text
/// reads it back to the same settings.
std::string render_config(const RunConfig& config);
nlohmann::json run_config_json(const RunConfig& config);

// ---- artifacts ----------------------------------------------------------------

/// SHA-1 of "blob <size>\0" followed by the bytes, as lowercase hex.
std::string git_blob_sha1(std::string_view bytes);
std::string file_blob_sha1(const std::filesystem::path& file);

/// Hash over the names and blob hashes of the dataset files in `dir`.
std::string dataset_hash(const std::filesystem::path& dir);

struct CheckpointEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;  // bytes into checkpoint.bin
  Precision precision = Precision::Float32;
};

struct Checkpoint {
  std::string bin;    // raw little-endian values
  std::string index;  // one tab-separated line per tensor after a header
};

Checkpoint encode_checkpoint(const std::map<std::string, Tensor<double>>& values, Precision precision);
std::vector<CheckpointEntry> parse_checkpoint_index(std::string_view index);
/// Throws ValidationError on a malformed index or a short data file.
std::map<std::string, Tensor<double>> decode_checkpoint(std::string_view bin, std::string_view index);
std::map<std::string, Tensor<double>> read_checkpoint(const std::filesystem::path& bin_file);

/// Writes files under one directory and records their hashes for the
/// manifest.
class OutputDir {
 public:
  explicit OutputDir(std::filesystem::path root);
  void write(const std::string& name, const std::string& content);
  /// Lists a file already written under the root.
  void record(const std::string& name);
  /// Writes manifest.json listing every file written so far.
  void write_manifest(nlohmann::json manifest);
  const std::filesystem::path& root() const { return root_; }
  const std::map<std::string, std::string>& hashes() const { return hashes_; }

 private:
  std::filesystem::path root_;
  std::map<std::string, std::string> hashes_;
};

/// Parses arguments and runs one command. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace seqhgnn::cli
