#include "agcn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>

namespace agcn::checkpoint {

namespace {

constexpr char kMagic[4] = {'A', 'G', 'C', 'N'};
constexpr std::uint32_t kVersion = 1;

// explicit little-endian byte order, independent of the host
void put_u16(std::ofstream& out, std::uint16_t v) {
  const char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  out.write(b, 2);
}

void put_u32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>(v >> 24)};
  out.write(b, 4);
}

std::uint16_t get_u16(std::ifstream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save(const std::string& path, const NamedTensors& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write '" + path + "'");
  out.write(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.empty() || name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw std::invalid_argument("checkpoint: bad tensor name length for '" + name + "'");
    }
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    out.put(static_cast<char>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) {
      put_u32(out, static_cast<std::uint32_t>(t.extent(d)));
    }
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      put_u32(out, std::bit_cast<std::uint32_t>(t[i]));
    }
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

NamedTensors load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != std::string(kMagic, 4)) {
    throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
  }
  const std::uint32_t version = get_u32(in);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  }
  const std::uint32_t count = get_u32(in);
  NamedTensors out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = get_u16(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const int rank = in.get();
    if (!in || rank < 1 || rank > 4) {
      throw std::runtime_error("checkpoint: corrupt tensor header for '" + name + "'");
    }
    std::vector<std::int64_t> extents(static_cast<std::size_t>(rank));
    for (auto& e : extents) {
      e = get_u32(in);
      if (e < 1) throw std::runtime_error("checkpoint: zero extent in '" + name + "'");
    }
    TensorF t(extents);
    for (std::int64_t j = 0; j < t.numel(); ++j) {
      t[j] = std::bit_cast<float>(get_u32(in));
    }
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace agcn::checkpoint
