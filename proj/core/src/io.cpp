#include "simviz/io.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace simviz::io {

namespace fs = std::filesystem;

void ensure_dir(const std::string& path) { fs::create_directories(path); }

bool file_exists(const std::string& path) { return fs::exists(path); }

std::string iso8601_utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// ---- flat arrays ----

void write_f32_array(const std::string& path, const Tensor& t) {
  std::vector<float> buf(static_cast<size_t>(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i) buf[static_cast<size_t>(i)] = static_cast<float>(t[i]);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f.write(reinterpret_cast<const char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!f) throw std::runtime_error("short write: " + path);
}

Tensor read_f32_array(const std::string& path, const std::vector<int64_t>& shape) {
  const int64_t n = shape_numel(shape);
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for read: " + path);
  std::vector<float> buf(static_cast<size_t>(n));
  f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (f.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
    throw std::runtime_error("short read (expected " + std::to_string(n) + " float32): " + path);
  Tensor t(shape);
  for (int64_t i = 0; i < n; ++i) t[i] = static_cast<double>(buf[static_cast<size_t>(i)]);
  return t;
}

// ---- json ----

json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open json file: " + path);
  json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("malformed json in " + path + ": " + e.what());
  }
  return j;
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  f << j.dump(2) << '\n';
}

// ---- hashing ----

std::string sha256_bytes(const void* data, size_t len) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int dlen = 0;
  if (!EVP_Digest(data, len, digest, &dlen, EVP_sha256(), nullptr))
    throw std::runtime_error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(dlen * 2);
  for (unsigned i = 0; i < dlen; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot hash missing file: " + path);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (f) {
    f.read(buf, sizeof(buf));
    if (f.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<size_t>(f.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int dlen = 0;
  EVP_DigestFinal_ex(ctx, digest, &dlen);
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(dlen * 2);
  for (unsigned i = 0; i < dlen; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

// ---- array artifacts ----

void write_array_artifact(const std::string& stem, const Tensor& t, json metadata) {
  write_f32_array(stem + ".bin", t);
  json j;
  j["shape"] = t.shape();
  j["dtype"] = "float32-le";
  j["order"] = "row-major";
  j["metadata"] = std::move(metadata);
  write_json_file(stem + ".json", j);
}

ArrayArtifact read_array_artifact(const std::string& stem) {
  const json j = read_json_file(stem + ".json");
  std::vector<int64_t> shape = j.at("shape").get<std::vector<int64_t>>();
  ArrayArtifact a;
  a.values = read_f32_array(stem + ".bin", shape);
  a.metadata = j.value("metadata", json::object());
  return a;
}

// ---- checkpoints ----

void save_checkpoint(const std::string& dir, const json& model_desc,
                     const std::vector<NamedTensorRef>& params) {
  ensure_dir(dir);
  json desc;
  desc["format_version"] = 1;
  desc["dtype"] = "float32-le";
  desc["model"] = model_desc;
  json plist = json::array();
  int64_t offset = 0;
  std::vector<float> payload;
  for (const auto& p : params) {
    json e;
    e["name"] = p.name;
    e["shape"] = p.tensor->shape();
    e["offset"] = offset;
    plist.push_back(std::move(e));
    for (int64_t i = 0; i < p.tensor->numel(); ++i)
      payload.push_back(static_cast<float>((*p.tensor)[i]));
    offset += p.tensor->numel();
  }
  desc["params"] = std::move(plist);
  write_json_file(dir + "/descriptor.json", desc);
  std::ofstream f(dir + "/params.bin", std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for write: " + dir + "/params.bin");
  f.write(reinterpret_cast<const char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(float)));
}

Checkpoint load_checkpoint(const std::string& dir) {
  const json desc = read_json_file(dir + "/descriptor.json");
  if (desc.value("format_version", 0) != 1)
    throw std::runtime_error("unsupported checkpoint format in " + dir);
  Checkpoint ck;
  ck.model = desc.at("model");

  std::ifstream fb(dir + "/params.bin", std::ios::binary);
  if (!fb) throw std::runtime_error("missing params.bin in " + dir);
  fb.seekg(0, std::ios::end);
  const auto nbytes = fb.tellg();
  fb.seekg(0);
  if (nbytes % sizeof(float) != 0) throw std::runtime_error("corrupt params.bin in " + dir);
  std::vector<float> data(static_cast<size_t>(nbytes) / sizeof(float));
  fb.read(reinterpret_cast<char*>(data.data()), nbytes);

  for (const auto& e : desc.at("params")) {
    const std::string name = e.at("name").get<std::string>();
    const std::vector<int64_t> shape = e.at("shape").get<std::vector<int64_t>>();
    const int64_t offset = e.at("offset").get<int64_t>();
    const int64_t n = shape_numel(shape);
    if (offset < 0 || offset + n > static_cast<int64_t>(data.size()))
      throw std::runtime_error("parameter " + name + " exceeds params.bin in " + dir);
    Tensor t(shape);
    for (int64_t i = 0; i < n; ++i) t[i] = static_cast<double>(data[static_cast<size_t>(offset + i)]);
    ck.order.push_back(name);
    ck.params.emplace(name, std::move(t));
  }
  return ck;
}

std::string checkpoint_hash(const std::string& dir) { return sha256_file(dir + "/params.bin"); }

// ---- run manifests ----

RunManifest::RunManifest(std::string run_dir, std::string command)
    : run_dir_(std::move(run_dir)), command_(std::move(command)), started_(iso8601_utc_now()) {}

void RunManifest::set_config(json config_snapshot) { config_ = std::move(config_snapshot); }
void RunManifest::set_seed(uint64_t seed) { seed_ = seed; }
void RunManifest::set_context(const std::string& key, const json& value) { context_[key] = value; }
void RunManifest::add_artifact(const std::string& relative_path) { artifacts_.push_back(relative_path); }

void RunManifest::finish() {
  ensure_dir(run_dir_);
  const std::string path = run_dir_ + "/manifest.json";
  json root;
  if (file_exists(path)) {
    root = read_json_file(path);
  } else {
    root["tool"] = "simviz";
    root["version"] = "0.1.0";
    root["commands"] = json::object();
  }
  json section;
  section["started"] = started_;
  section["finished"] = iso8601_utc_now();
  if (seed_) section["seed"] = *seed_;
  if (!config_.is_null()) section["config"] = config_;
  if (!context_.empty()) section["context"] = context_;
  json arts = json::array();
  for (const auto& rel : artifacts_) {
    const std::string full = run_dir_ + "/" + rel;
    json a;
    a["path"] = rel;
    a["bytes"] = static_cast<int64_t>(fs::file_size(full));
    a["sha256"] = sha256_file(full);
    arts.push_back(std::move(a));
  }
  section["artifacts"] = std::move(arts);
  root["commands"][command_] = std::move(section);
  write_json_file(path, root);
}

std::vector<std::string> verify_manifest(const std::string& run_dir) {
  std::vector<std::string> problems;
  const std::string path = run_dir + "/manifest.json";
  if (!file_exists(path)) {
    problems.push_back("missing manifest.json in " + run_dir);
    return problems;
  }
  const json root = read_json_file(path);
  for (const auto& [cmd, section] : root.value("commands", json::object()).items()) {
    for (const auto& a : section.value("artifacts", json::array())) {
      const std::string rel = a.at("path").get<std::string>();
      const std::string full = run_dir + "/" + rel;
      if (!file_exists(full)) {
        problems.push_back(cmd + ": missing artifact " + rel);
        continue;
      }
      const std::string h = sha256_file(full);
      if (h != a.at("sha256").get<std::string>())
        problems.push_back(cmd + ": hash mismatch for " + rel);
    }
  }
  return problems;
}

// ---- jsonl ----

struct JsonlWriter::Impl {
  std::ofstream f;
};

JsonlWriter::JsonlWriter(const std::string& path) : impl_(new Impl) {
  impl_->f.open(path, std::ios::trunc);
  if (!impl_->f) {
    delete impl_;
    throw std::runtime_error("cannot open for write: " + path);
  }
}

JsonlWriter::~JsonlWriter() { delete impl_; }

void JsonlWriter::write(const json& j) { impl_->f << j.dump() << '\n'; }

std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open jsonl file: " + path);
  std::vector<json> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    out.push_back(json::parse(line));
  }
  return out;
}

}  // namespace simviz::io
