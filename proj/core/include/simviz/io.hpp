#ifndef SIMVIZ_IO_HPP
#define SIMVIZ_IO_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "simviz/tensor.hpp"

namespace simviz::io {

using json = nlohmann::ordered_json;  // insertion order preserved -> stable bytes

// ---- flat binary arrays (little-endian float32, row-major) ----

void write_f32_array(const std::string& path, const Tensor& t);
Tensor read_f32_array(const std::string& path, const std::vector<int64_t>& shape);

// ---- json files ----

json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const json& j);

// ---- hashing ----

std::string sha256_bytes(const void* data, size_t len);
std::string sha256_file(const std::string& path);

// ---- array artifacts: <stem>.bin + <stem>.json sidecar ----

void write_array_artifact(const std::string& stem, const Tensor& t, json metadata = json::object());
struct ArrayArtifact {
  Tensor values;
  json metadata;
};
ArrayArtifact read_array_artifact(const std::string& stem);

// ---- model checkpoints: descriptor.json + params.bin ----

struct NamedTensorRef {
  std::string name;
  const Tensor* tensor;
};

void save_checkpoint(const std::string& dir, const json& model_desc,
                     const std::vector<NamedTensorRef>& params);

struct Checkpoint {
  json model;
  std::vector<std::string> order;  // parameter names in file order
  std::map<std::string, Tensor> params;
};
Checkpoint load_checkpoint(const std::string& dir);

/// Hash of the serialized parameter payload; identifies a trained model.
std::string checkpoint_hash(const std::string& dir);

// ---- run manifests ----

/// Records one command's outputs into <run_dir>/manifest.json under
/// commands.<name>, hashing every artifact. Existing sections from other
/// commands are preserved.
class RunManifest {
 public:
  RunManifest(std::string run_dir, std::string command);
  void set_config(json config_snapshot);
  void set_seed(uint64_t seed);
  void set_context(const std::string& key, const json& value);
  void add_artifact(const std::string& relative_path);
  void finish();  // hashes artifacts and writes manifest.json

 private:
  std::string run_dir_, command_, started_;
  json config_;
  std::optional<uint64_t> seed_;
  json context_ = json::object();
  std::vector<std::string> artifacts_;
};

/// Checks that every artifact recorded in manifest.json exists and matches
/// its hash; returns a list of human-readable problems (empty = ok).
std::vector<std::string> verify_manifest(const std::string& run_dir);

// ---- line-delimited json metrics ----

class JsonlWriter {
 public:
  explicit JsonlWriter(const std::string& path);
  ~JsonlWriter();
  void write(const json& j);

 private:
  struct Impl;
  Impl* impl_;
};

std::vector<json> read_jsonl(const std::string& path);

// ---- misc ----

void ensure_dir(const std::string& path);
bool file_exists(const std::string& path);
std::string iso8601_utc_now();

}  // namespace simviz::io

#endif
