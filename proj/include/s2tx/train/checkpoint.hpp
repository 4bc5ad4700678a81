#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include "s2tx/core/tensor.hpp"

namespace s2tx {

/// Checkpoint file layout (little-endian):
///
///   char[8]  "S2TXCKPT"
///   u32      format version (1)
///   u64      config length, then that many bytes of resolved config text
///   u64      tensor count, then per tensor:
///              u32 name length, name bytes, u64 rows, u64 cols,
///              rows*cols f64 in row-major order
///   u64      scalar count, then per scalar:
///              u32 name length, name bytes, u64 value
///
/// Tensor names carry a group prefix: "param/", "best/", "adam/m/",
/// "adam/v/". Scalars hold the optimizer step and training state; doubles
/// are stored by bit pattern.
struct Checkpoint {
  static constexpr char magic[8] = {'S', '2', 'T', 'X', 'C', 'K', 'P', 'T'};
  static constexpr std::uint32_t version = 1;

  std::string config_text;
  std::map<std::string, Matrix<double>> tensors;
  std::map<std::string, std::uint64_t> scalars;

  void set_double(const std::string& k, double v) { scalars[k] = std::bit_cast<std::uint64_t>(v); }
  double get_double(const std::string& k) const { return std::bit_cast<double>(scalar(k)); }
  std::uint64_t scalar(const std::string& k) const {
    auto it = scalars.find(k);
    if (it == scalars.end()) throw DataError("checkpoint has no scalar '" + k + "'");
    return it->second;
  }

  /// Tensors under `prefix`, with the prefix stripped.
  std::map<std::string, Matrix<double>> group(const std::string& prefix) const {
    std::map<std::string, Matrix<double>> out;
    for (const auto& [k, v] : tensors)
      if (k.compare(0, prefix.size(), prefix) == 0) out.emplace(k.substr(prefix.size()), v);
    return out;
  }
  void put_group(const std::string& prefix, const std::map<std::string, Matrix<double>>& g) {
    for (const auto& [k, v] : g) tensors[prefix + k] = v;
  }
};

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace detail {

template <class U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void put_string32(std::ostream& out, const std::string& s) {
  put(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <class U>
U take(std::istream& in, const std::string& what) {
  U v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("truncated checkpoint reading " + what);
  return v;
}

inline std::string take_bytes(std::istream& in, std::uint64_t n, const std::string& what) {
  if (n > (std::uint64_t{1} << 32)) throw DataError("corrupt checkpoint: oversized " + what);
  std::string s(static_cast<std::size_t>(n), '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw DataError("truncated checkpoint reading " + what);
  return s;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& c) {
  out.write(Checkpoint::magic, sizeof Checkpoint::magic);
  detail::put(out, Checkpoint::version);
  detail::put(out, static_cast<std::uint64_t>(c.config_text.size()));
  out.write(c.config_text.data(), static_cast<std::streamsize>(c.config_text.size()));
  detail::put(out, static_cast<std::uint64_t>(c.tensors.size()));
  for (const auto& [name, m] : c.tensors) {
    detail::put_string32(out, name);
    detail::put(out, static_cast<std::uint64_t>(m.rows()));
    detail::put(out, static_cast<std::uint64_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  detail::put(out, static_cast<std::uint64_t>(c.scalars.size()));
  for (const auto& [name, v] : c.scalars) {
    detail::put_string32(out, name);
    detail::put(out, v);
  }
}

inline Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, Checkpoint::magic, sizeof magic) != 0)
    throw DataError("not a checkpoint file");
  const auto version = detail::take<std::uint32_t>(in, "version");
  if (version != Checkpoint::version) throw DataError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.config_text = detail::take_bytes(in, detail::take<std::uint64_t>(in, "config length"), "config");
  const auto tensors = detail::take<std::uint64_t>(in, "tensor count");
  for (std::uint64_t i = 0; i < tensors; ++i) {
    std::string name = detail::take_bytes(in, detail::take<std::uint32_t>(in, "name length"), "tensor name");
    const auto rows = detail::take<std::uint64_t>(in, "rows");
    const auto cols = detail::take<std::uint64_t>(in, "cols");
    if (rows > (1u << 28) || cols > (1u << 28) || rows * cols > (std::uint64_t{1} << 32))
      throw DataError("corrupt checkpoint: tensor '" + name + "' too large");
    Matrix<double> m(static_cast<Index>(rows), static_cast<Index>(cols));
    if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double))))
      throw DataError("truncated checkpoint reading tensor '" + name + "'");
    c.tensors.emplace(std::move(name), std::move(m));
  }
  const auto scalars = detail::take<std::uint64_t>(in, "scalar count");
  for (std::uint64_t i = 0; i < scalars; ++i) {
    std::string name = detail::take_bytes(in, detail::take<std::uint32_t>(in, "name length"), "scalar name");
    c.scalars.emplace(std::move(name), detail::take<std::uint64_t>(in, "scalar"));
  }
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    write_checkpoint(out, c);
    if (!out) throw DataError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace s2tx
