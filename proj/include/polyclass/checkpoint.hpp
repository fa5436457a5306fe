#pragma once

// Binary model checkpoints. All integers and doubles are little-endian.
//
//   offset  size  field
//   0       8     magic "POLYCKPT"
//   8       4     u32 format version (1)
//   12      4     u32 k (class count)
//   16      4     u32 layer count L
//   then L times:
//           4     u32 out width
//           4     u32 in width
//           1     u8 nonlinearity (0 none, 1 relu)
//           8*out*in  f64 weights, row-major (out rows of in values)
//           8*out     f64 biases
//   last    1     u8 head (0 softmax, 1 softrmax)
//
// Doubles are stored as their IEEE-754 bit patterns, so a round trip is exact.

#include <polyclass/errors.hpp>
#include <polyclass/models.hpp>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string_view>

namespace polyclass {

inline constexpr std::string_view kCheckpointMagic = "POLYCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v), static_cast<char>(v >> 8), static_cast<char>(v >> 16),
                              static_cast<char>(v >> 24)};
  out.write(b.data(), 4);
}

inline void put_f64(std::ostream& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[static_cast<std::size_t>(i)] = static_cast<char>(v >> (8 * i));
  out.write(b.data(), 8);
}

inline void read_exact(std::istream& in, char* dst, std::size_t n) {
  in.read(dst, static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n) throw LengthError("models", "checkpoint is truncated");
}

inline std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  read_exact(in, reinterpret_cast<char*>(b.data()), 4);
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
}

inline std::uint8_t get_u8(std::istream& in) {
  char c = 0;
  read_exact(in, &c, 1);
  return static_cast<std::uint8_t>(c);
}

inline double get_f64(std::istream& in) {
  std::array<unsigned char, 8> b{};
  read_exact(in, reinterpret_cast<char*>(b.data()), 8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[static_cast<std::size_t>(i)];
  return std::bit_cast<double>(v);
}

}  // namespace detail

inline void save_checkpoint(const NeuralModel& m, std::ostream& out) {
  validate(m);
  out.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(m.k));
  detail::put_u32(out, static_cast<std::uint32_t>(m.layers.size()));
  for (const auto& layer : m.layers) {
    detail::put_u32(out, static_cast<std::uint32_t>(layer.out()));
    detail::put_u32(out, static_cast<std::uint32_t>(layer.in()));
    out.put(static_cast<char>(layer.act));
    for (double w : layer.weight.data()) detail::put_f64(out, w);
    for (double b : layer.bias) detail::put_f64(out, b);
  }
  out.put(static_cast<char>(m.head));
}

inline NeuralModel load_checkpoint(std::istream& in) {
  std::array<char, 8> magic{};
  detail::read_exact(in, magic.data(), magic.size());
  if (std::string_view(magic.data(), magic.size()) != kCheckpointMagic) {
    throw FormatError("models", "not a checkpoint (bad magic)");
  }
  const std::uint32_t version = detail::get_u32(in);
  if (version != kCheckpointVersion) {
    throw FormatError("models", "unsupported checkpoint version " + std::to_string(version));
  }
  NeuralModel m;
  m.k = static_cast<int>(detail::get_u32(in));
  const std::uint32_t layers = detail::get_u32(in);
  for (std::uint32_t l = 0; l < layers; ++l) {
    const std::uint32_t out = detail::get_u32(in);
    const std::uint32_t inw = detail::get_u32(in);
    const std::uint8_t act = detail::get_u8(in);
    if (act > 1) throw FormatError("models", "unknown nonlinearity tag " + std::to_string(act));
    DenseLayer layer{Matrix(out, inw), Vector(out), static_cast<Nonlinearity>(act)};
    for (double& w : layer.weight.data()) w = detail::get_f64(in);
    for (double& b : layer.bias) b = detail::get_f64(in);
    m.layers.push_back(std::move(layer));
  }
  const std::uint8_t head = detail::get_u8(in);
  if (head > 1) throw FormatError("models", "unknown head tag " + std::to_string(head));
  m.head = static_cast<Head>(head);
  validate(m);
  return m;
}

inline void save_checkpoint(const NeuralModel& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw MissingDataError("models", "cannot write checkpoint '" + path.string() + "'");
  save_checkpoint(m, out);
}

inline NeuralModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingDataError("models", "cannot open checkpoint '" + path.string() + "'");
  return load_checkpoint(in);
}

}  // namespace polyclass
