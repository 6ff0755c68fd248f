#include "ktb/checkpoint.hpp"

#include "ktb/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace ktb {

namespace fs = std::filesystem;

namespace {

void write_f32(const fs::path& path, const Matrix& m) {
  std::vector<float> buf(static_cast<std::size_t>(m.size()));
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) buf[k++] = static_cast<float>(m(r, c));
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& f : buf) {
      auto bits = std::bit_cast<std::uint32_t>(f);
      bits = __builtin_bswap32(bits);
      f = std::bit_cast<float>(bits);
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

Matrix read_f32(const fs::path& path, Eigen::Index rows, Eigen::Index cols) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing checkpoint payload " + path.string());
  std::vector<float> buf(static_cast<std::size_t>(rows * cols));
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float))) {
    throw DataError("truncated checkpoint payload " + path.string());
  }
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& f : buf) {
      auto bits = std::bit_cast<std::uint32_t>(f);
      bits = __builtin_bswap32(bits);
      f = std::bit_cast<float>(bits);
    }
  }
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = static_cast<double>(buf[k++]);
  }
  return m;
}

}  // namespace

void save_checkpoint(const fs::path& dir, const TensorSet& tensors,
                     const nlohmann::json& metadata) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["format"] = "ktb-checkpoint";
  manifest["format_version"] = 1;
  manifest["dtype"] = "float32";
  manifest["byte_order"] = "little";
  manifest["layout"] = "row-major";
  manifest["metadata"] = metadata;
  auto& list = manifest["tensors"];
  list = nlohmann::json::array();
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const std::string file = tensors.name(i) + ".f32";
    write_f32(dir / file, tensors[i]);
    list.push_back({{"name", tensors.name(i)},
                    {"rows", tensors[i].rows()},
                    {"cols", tensors[i].cols()},
                    {"file", file}});
  }
  std::ofstream out(dir / "checkpoint.json");
  if (!out) throw RuntimeFailure("cannot write checkpoint manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "checkpoint.json");
  if (!in) throw DataError("no checkpoint manifest in " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "ktb-checkpoint") {
    throw DataError("not a ktb checkpoint: " + dir.string());
  }
  LoadedCheckpoint out;
  out.metadata = manifest.value("metadata", nlohmann::json::object());
  for (const auto& entry : manifest.at("tensors")) {
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    const auto idx = out.tensors.add(entry.at("name").get<std::string>(), rows, cols);
    out.tensors[idx] = read_f32(dir / entry.at("file").get<std::string>(), rows, cols);
  }
  return out;
}

void assign_tensors(TensorSet& target, const TensorSet& source) {
  if (!target.same_layout(source)) {
    throw DataError("checkpoint tensors do not match the model layout");
  }
  for (std::size_t i = 0; i < target.size(); ++i) target[i] = source[i];
}

}  // namespace ktb
