#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>

#include "hgdoc/heads/model.hpp"

namespace hgdoc {

// Layout: "HGDC", u32 version, u64 length + config JSON, u64 tensor count,
// then per tensor: u32 name length, name, u32 rank, u64 dims, f64 values.
// All integers and floats little-endian.
inline constexpr char kCheckpointMagic[4] = {'H', 'G', 'D', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
template <class U>
void put_le(std::ostream& out, U v) {
  char b[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, sizeof(U));
}

template <class U>
U get_le(std::istream& in) {
  unsigned char b[sizeof(U)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(U))) throw std::runtime_error("checkpoint: truncated file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

inline std::string get_string(std::istream& in, std::uint64_t n) {
  if (n > (1u << 30)) throw std::runtime_error("checkpoint: implausible string length");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n))) throw std::runtime_error("checkpoint: truncated file");
  return s;
}
}  // namespace detail

inline void write_checkpoint(const DocumentModel& m, std::ostream& out) {
  out.write(kCheckpointMagic, 4);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  const std::string cfg = nlohmann::json(m.cfg).dump();
  detail::put_le<std::uint64_t>(out, cfg.size());
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  detail::put_le<std::uint64_t>(out, m.store.size());
  for (const auto& p : m.store) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.shape.size()));
    for (auto s : p.shape) detail::put_le<std::uint64_t>(out, s);
    for (double v : p.value) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
}

inline void save_checkpoint(const DocumentModel& m, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  write_checkpoint(m, out);
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

/// Rebuilds the model from the stored config, then overwrites every
/// parameter. Missing, unknown or mis-shaped tensors are errors.
inline DocumentModel read_checkpoint(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw std::runtime_error("checkpoint: bad magic");
  const auto version = detail::get_le<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto cfg = nlohmann::json::parse(detail::get_string(in, detail::get_le<std::uint64_t>(in))).get<ModelConfig>();
  cfg.validate();
  DocumentModel m(cfg);
  const auto count = detail::get_le<std::uint64_t>(in);
  std::set<std::string> seen;
  for (std::uint64_t t = 0; t < count; ++t) {
    const auto name = detail::get_string(in, detail::get_le<std::uint32_t>(in));
    if (!m.store.contains(name)) throw std::runtime_error("checkpoint: unknown tensor '" + name + "'");
    if (!seen.insert(name).second) throw std::runtime_error("checkpoint: duplicate tensor '" + name + "'");
    auto& p = m.store.get(name);
    const auto rank = detail::get_le<std::uint32_t>(in);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<std::size_t>(detail::get_le<std::uint64_t>(in)));
    if (shape != p.shape) throw std::runtime_error("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) + ", expected " + shape_str(p.shape));
    for (auto& v : p.value) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(in));
  }
  if (seen.size() != m.store.size()) throw std::runtime_error("checkpoint: missing tensors for this configuration");
  return m;
}

inline DocumentModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  return read_checkpoint(in);
}

}  // namespace hgdoc
