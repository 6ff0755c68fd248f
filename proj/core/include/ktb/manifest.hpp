#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ktb {

// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_bytes(std::string_view bytes);

// Digest over every regular file below dir (relative path and contents, in
// sorted path order), skipping files named manifest.json.
std::string sha256_tree(const std::filesystem::path& dir);

struct FileDigest {
  std::string path;
  std::string sha256;
};

// Provenance record written as manifest.json into every output directory.
struct RunManifest {
  std::string command;
  std::vector<std::string> arguments;
  nlohmann::json config = nlohmann::json::object();
  std::vector<FileDigest> inputs;
  std::vector<FileDigest> outputs;
  std::uint64_t seed = 0;
  std::string tool_version;
  std::string started_at;   // UTC, ISO 8601
  std::string finished_at;

  void add_input(const std::filesystem::path& path);
  // Records every file below dir except manifests, relative to dir.
  void add_outputs(const std::filesystem::path& dir);

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  void write(const std::filesystem::path& dir) const;
  static RunManifest read(const std::filesystem::path& dir);
};

std::string utc_timestamp();
std::string tool_version();

// Creates dir for a new run; throws ConfigError when it already exists and
// is not empty, so finished runs are never overwritten.
void create_fresh_directory(const std::filesystem::path& dir);

}  // namespace ktb
