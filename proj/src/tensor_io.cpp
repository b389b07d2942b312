#include "progan/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace progan {

namespace {

constexpr std::array<char, 5> kMagic = {'T', 'N', 'S', 'R', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> bytes = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                                     static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(bytes.data(), 4);
}

std::uint32_t get_u32(std::istream& in) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) throw FormatError("TNSR1: truncated header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& tensor) {
  out.write(kMagic.data(), kMagic.size());
  put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
  for (auto d : tensor.shape()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw FormatError("TNSR1: extent exceeds u32");
    put_u32(out, static_cast<std::uint32_t>(d));
  }
  for (float v : tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw FormatError("TNSR1: write failed");
}

Tensor read_tensor(std::istream& in) {
  std::array<char, 5> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw FormatError("TNSR1: bad magic");
  const auto rank = get_u32(in);
  if (rank > 16) throw FormatError("TNSR1: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = get_u32(in);
  const auto n = numel(shape);
  std::vector<float> values(static_cast<std::size_t>(n));
  for (auto& v : values) v = std::bit_cast<float>(get_u32(in));
  return Tensor(std::move(shape), std::move(values));
}

void save_tensor(const std::filesystem::path& path, const Tensor& tensor) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(out, tensor);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_tensor(in);
}

}  // namespace progan
