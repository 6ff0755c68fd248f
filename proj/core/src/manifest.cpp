#include "ktb/manifest.hpp"

#include "ktb/errors.hpp"

#include <fmt/chrono.h>
#include <fmt/format.h>
#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <chrono>
#include <fstream>
#include <memory>

#ifndef KTB_VERSION
#define KTB_VERSION "unknown"
#endif

namespace ktb {

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1) {
      throw RuntimeFailure("SHA-256 initialisation failed");
    }
  }
  void update(const void* data, std::size_t n) {
    if (EVP_DigestUpdate(ctx_.get(), data, n) != 1) throw RuntimeFailure("SHA-256 update failed");
  }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx_.get(), md.data(), &len) != 1) {
      throw RuntimeFailure("SHA-256 finalisation failed");
    }
    std::string out;
    for (unsigned int i = 0; i < len; ++i) out += fmt::format("{:02x}", md[i]);
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

void hash_file_into(Sha256& h, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
}

std::vector<std::filesystem::path> tree_files(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") {
      files.push_back(std::filesystem::relative(e.path(), dir));
    }
  }
  std::sort(files.begin(), files.end());
  return files;
}

}  // namespace

std::string sha256_file(const std::filesystem::path& path) {
  Sha256 h;
  hash_file_into(h, path);
  return h.hex();
}

std::string sha256_bytes(std::string_view bytes) {
  Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

std::string sha256_tree(const std::filesystem::path& dir) {
  Sha256 h;
  for (const auto& rel : tree_files(dir)) {
    const std::string name = rel.generic_string();
    h.update(name.data(), name.size() + 1);  // include the terminator as separator
    hash_file_into(h, dir / rel);
  }
  return h.hex();
}

void RunManifest::add_input(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) {
    inputs.push_back({path.string() + "/", sha256_tree(path)});
  } else {
    inputs.push_back({path.string(), sha256_file(path)});
  }
}

void RunManifest::add_outputs(const std::filesystem::path& dir) {
  outputs.clear();
  for (const auto& rel : tree_files(dir)) outputs.push_back({rel.generic_string(), sha256_file(dir / rel)});
}

nlohmann::json RunManifest::to_json() const {
  auto digests = [](const std::vector<FileDigest>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& d : v) a.push_back({{"path", d.path}, {"sha256", d.sha256}});
    return a;
  };
  return {{"command", command},     {"arguments", arguments},  {"config", config},
          {"inputs", digests(inputs)}, {"outputs", digests(outputs)}, {"seed", seed},
          {"tool_version", tool_version}, {"started_at", started_at}, {"finished_at", finished_at}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  m.command = j.at("command").get<std::string>();
  m.arguments = j.value("arguments", std::vector<std::string>{});
  m.config = j.value("config", nlohmann::json::object());
  for (const auto& d : j.value("inputs", nlohmann::json::array())) {
    m.inputs.push_back({d.at("path").get<std::string>(), d.at("sha256").get<std::string>()});
  }
  for (const auto& d : j.value("outputs", nlohmann::json::array())) {
    m.outputs.push_back({d.at("path").get<std::string>(), d.at("sha256").get<std::string>()});
  }
  m.seed = j.value("seed", std::uint64_t{0});
  m.tool_version = j.value("tool_version", "");
  m.started_at = j.value("started_at", "");
  m.finished_at = j.value("finished_at", "");
  return m;
}

void RunManifest::write(const std::filesystem::path& dir) const {
  std::ofstream out(dir / "manifest.json");
  if (!out) throw RuntimeFailure("cannot write " + (dir / "manifest.json").string());
  out << to_json().dump(2) << '\n';
}

RunManifest RunManifest::read(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("no manifest.json in " + dir.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  return from_json(j);
}

std::string utc_timestamp() {
  const auto now = std::chrono::time_point_cast<std::chrono::seconds>(std::chrono::system_clock::now());
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}", fmt::gmtime(std::chrono::system_clock::to_time_t(now)));
}

std::string tool_version() { return KTB_VERSION; }

void create_fresh_directory(const std::filesystem::path& dir) {
  if (std::filesystem::exists(dir) &&
      (!std::filesystem::is_directory(dir) || !std::filesystem::is_empty(dir))) {
    throw ConfigError("output directory " + dir.string() +
                      " already exists; choose a new name (runs are never overwritten)");
  }
  std::filesystem::create_directories(dir);
}

}  // namespace ktb
