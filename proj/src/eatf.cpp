#include "eanet/eatf.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace eanet::eatf {

namespace {

template <typename T>
void put_le(std::ostream& out, T v) {
  char bytes[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  }
  out.write(bytes, sizeof(T));
}

template <typename T>
bool get_le(std::istream& in, T& v) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) return false;
  v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(bytes[i]) << (8 * i);
  }
  return true;
}

constexpr char kMagic[4] = {'E', 'A', 'T', 'F'};
// Refuse headers that would imply absurd allocations.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 34;

}  // namespace

void put_u16(std::ostream& out, std::uint16_t v) { put_le(out, v); }
void put_u32(std::ostream& out, std::uint32_t v) { put_le(out, v); }
void put_u64(std::ostream& out, std::uint64_t v) { put_le(out, v); }
void put_f64(std::ostream& out, double v) {
  put_le(out, std::bit_cast<std::uint64_t>(v));
}
bool get_u16(std::istream& in, std::uint16_t& v) { return get_le(in, v); }
bool get_u32(std::istream& in, std::uint32_t& v) { return get_le(in, v); }
bool get_u64(std::istream& in, std::uint64_t& v) { return get_le(in, v); }
bool get_f64(std::istream& in, double& v) {
  std::uint64_t bits = 0;
  if (!get_le(in, bits)) return false;
  v = std::bit_cast<double>(bits);
  return true;
}

void write(std::ostream& out, const Tensor& t) {
  out.write(kMagic, 4);
  put_u16(out, kVersion);
  put_u16(out, static_cast<std::uint16_t>(t.rank()));
  for (auto extent : t.shape()) put_u64(out, extent);
  for (double v : t.data()) put_f64(out, v);
}

Tensor read(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("EATF: truncated header");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("EATF: bad magic");
  std::uint16_t version = 0;
  std::uint16_t rank = 0;
  if (!get_u16(in, version) || !get_u16(in, rank)) {
    throw FormatError("EATF: truncated header");
  }
  if (version != kVersion) {
    throw FormatError("EATF: unsupported version " + std::to_string(version));
  }
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& extent : shape) {
    std::uint64_t e = 0;
    if (!get_u64(in, e)) throw FormatError("EATF: truncated extents");
    if (e == 0) throw FormatError("EATF: zero extent");
    count *= e;
    if (count > kMaxElements) throw FormatError("EATF: tensor too large");
    extent = static_cast<std::size_t>(e);
  }
  std::vector<double> data(static_cast<std::size_t>(count));
  for (auto& v : data) {
    if (!get_f64(in, v)) throw FormatError("EATF: truncated payload");
  }
  try {
    return Tensor(std::move(shape), std::move(data));
  } catch (const NumericError& e) {
    throw FormatError(std::string("EATF: ") + e.what());
  }
}

std::vector<std::uint8_t> encode(const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write(os, t);
  const std::string s = os.str();
  return {s.begin(), s.end()};
}

Tensor decode(const std::vector<std::uint8_t>& bytes) {
  std::istringstream is(std::string(bytes.begin(), bytes.end()), std::ios::binary);
  return read(is);
}

void save(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::ios_base::failure("cannot open " + path.string());
  write(out, t);
  if (!out) throw std::ios_base::failure("write failed for " + path.string());
}

Tensor load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::ios_base::failure("cannot open " + path.string());
  return read(in);
}

}  // namespace eanet::eatf
