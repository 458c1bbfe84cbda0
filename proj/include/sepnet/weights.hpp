#pragma once

#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "sepnet/model.hpp"

namespace sepnet {

// Writes via a temp file in the same directory, then renames into place.
inline void write_file_atomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw IoError("rename failed: " + tmp.string() + " -> " + target.string());
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

namespace detail {

inline void put_u16(std::string& b, uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& b, uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& b, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(b, bits);
}

struct Reader {
  const std::string& b;
  size_t pos = 0;
  explicit Reader(const std::string& bytes) : b(bytes) {}
  void need(size_t n) const {
    if (pos + n > b.size()) throw CorruptFileError("weight file truncated");
  }
  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(b[pos++]);
  }
  uint16_t u16() {
    need(2);
    uint16_t v = static_cast<uint8_t>(b[pos]) | (static_cast<uint16_t>(static_cast<uint8_t>(b[pos + 1])) << 8);
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<uint32_t>(static_cast<uint8_t>(b[pos + static_cast<size_t>(i)])) << (8 * i);
    pos += 4;
    return v;
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = b.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail

// "SCW1" container: version, tensor count, then per tensor name/rank/dims and
// float32 little-endian payload, closed by a CRC-32 of everything before it.
inline void save_named_tensors(const std::map<std::string, Tensor<float>>& tensors,
                               const std::string& path) {
  std::string b;
  b += "SCW1";
  detail::put_u32(b, 1);
  detail::put_u32(b, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > 0xffff) throw ConfigError("tensor name too long: " + name);
    detail::put_u16(b, static_cast<uint16_t>(name.size()));
    b += name;
    b.push_back(static_cast<char>(t.rank()));
    for (int64_t d : t.shape) detail::put_u32(b, static_cast<uint32_t>(d));
    for (float v : t.data) detail::put_f32(b, v);
  }
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(b.data()), static_cast<uInt>(b.size())));
  detail::put_u32(b, crc);
  write_file_atomic(path, b);
}

template <typename T>
std::map<std::string, Tensor<float>> collect_tensors(const ModelGraph<T>& graph) {
  std::map<std::string, Tensor<float>> out;
  for (const auto& [name, p] : graph.params()) out.emplace(name, p.value.template cast<float>());
  for (const auto& [name, t] : graph.state()) out.emplace(name, t.template cast<float>());
  return out;
}

template <typename T>
void save_weights(const ModelGraph<T>& graph, const std::string& path) {
  save_named_tensors(collect_tensors(graph), path);
}

struct LoadReport {
  std::vector<std::string> loaded;
  std::vector<std::string> missing;  // in graph, absent from file
  std::vector<std::string> extra;    // in file, absent from graph
};

// Parses and CRC-validates the whole file before touching the graph, so a
// corrupt file leaves the model untouched. Missing tensors are re-initialized
// from init_seed when allow_partial is set.
template <typename T>
LoadReport load_weights(ModelGraph<T>& graph, const std::string& path, bool allow_partial,
                        uint64_t init_seed = 0) {
  const std::string b = read_file(path);
  if (b.size() < 16 || b.compare(0, 4, "SCW1") != 0)
    throw CorruptFileError("bad magic in weight file: " + path);
  {
    const uint32_t stored_crc =
        static_cast<uint32_t>(static_cast<uint8_t>(b[b.size() - 4])) |
        (static_cast<uint32_t>(static_cast<uint8_t>(b[b.size() - 3])) << 8) |
        (static_cast<uint32_t>(static_cast<uint8_t>(b[b.size() - 2])) << 16) |
        (static_cast<uint32_t>(static_cast<uint8_t>(b[b.size() - 1])) << 24);
    const uint32_t actual = static_cast<uint32_t>(crc32(
        0L, reinterpret_cast<const Bytef*>(b.data()), static_cast<uInt>(b.size() - 4)));
    if (stored_crc != actual) throw CorruptFileError("CRC mismatch in weight file: " + path);
  }
  detail::Reader r(b);
  r.pos = 4;
  const uint32_t version = r.u32();
  if (version != 1)
    throw CorruptFileError("unsupported weight file version " + std::to_string(version));
  const uint32_t count = r.u32();
  std::map<std::string, Tensor<float>> file_tensors;
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t name_len = r.u16();
    const std::string name = r.bytes(name_len);
    const uint8_t rank = r.u8();
    if (rank < 1 || rank > 4)
      throw CorruptFileError("tensor " + name + " has invalid rank " + std::to_string(rank));
    Shape shape;
    for (uint8_t d = 0; d < rank; ++d) shape.push_back(r.u32());
    Tensor<float> t(shape);
    for (auto& v : t.data) v = r.f32();
    if (!file_tensors.emplace(name, std::move(t)).second)
      throw CorruptFileError("duplicate tensor name in weight file: " + name);
  }
  if (r.pos != b.size() - 4)
    throw CorruptFileError("trailing bytes in weight file: " + path);

  LoadReport report;
  auto graph_names = [&] {
    std::vector<std::string> names;
    for (const auto& [n, p] : graph.params()) names.push_back(n);
    for (const auto& [n, t] : graph.state()) names.push_back(n);
    return names;
  }();
  for (const auto& n : graph_names)
    if (!file_tensors.count(n)) report.missing.push_back(n);
  for (const auto& [n, t] : file_tensors)
    if (!graph.has_param(n) && !graph.state().count(n)) report.extra.push_back(n);
  if (!allow_partial && !report.missing.empty())
    throw ConfigError("weight file " + path + " is missing tensor " + report.missing[0] +
                      " (" + std::to_string(report.missing.size()) + " missing total)");
  auto check_shape = [&](const std::string& n, const Shape& have, const Shape& want) {
    if (have != want)
      throw ConfigError("tensor " + n + " has shape " + shape_str(have) +
                        " in file but model expects " + shape_str(want));
  };
  for (const auto& [n, ft] : file_tensors) {
    if (graph.has_param(n)) check_shape(n, ft.shape, graph.param(n).value.shape);
    else if (graph.state().count(n)) check_shape(n, ft.shape, graph.state().at(n).shape);
  }
  // Validation complete; now mutate.
  for (auto& [n, p] : graph.params()) {
    auto it = file_tensors.find(n);
    if (it != file_tensors.end()) {
      for (size_t i = 0; i < p.value.data.size(); ++i)
        p.value.data[i] = static_cast<T>(it->second.data[i]);
      report.loaded.push_back(n);
    } else {
      graph.init_param_by_name(n, init_seed);
    }
  }
  bool stats_loaded = !graph.state().empty();
  for (auto& [n, t] : graph.state()) {
    auto it = file_tensors.find(n);
    if (it != file_tensors.end()) {
      for (size_t i = 0; i < t.data.size(); ++i)
        t.data[i] = static_cast<T>(it->second.data[i]);
      report.loaded.push_back(n);
    } else {
      t.fill(n.ends_with("running_var") ? T(1) : T(0));
      stats_loaded = false;
    }
  }
  graph.bn_stats_populated = stats_loaded;
  return report;
}

}  // namespace sepnet
