#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "eanet/tensor.hpp"

namespace eanet {

/// Corrupt or truncated binary input.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// EATF tensor container:
///   "EATF" | u16 version | u16 rank | rank x u64 extents | f64 payload
/// All integers and floats little-endian.
namespace eatf {

inline constexpr std::uint16_t kVersion = 1;

void write(std::ostream& out, const Tensor& t);
Tensor read(std::istream& in);

std::vector<std::uint8_t> encode(const Tensor& t);
Tensor decode(const std::vector<std::uint8_t>& bytes);

void save(const std::filesystem::path& path, const Tensor& t);
Tensor load(const std::filesystem::path& path);

// Little-endian primitives shared with the dataset and archive writers.
void put_u16(std::ostream& out, std::uint16_t v);
void put_u32(std::ostream& out, std::uint32_t v);
void put_u64(std::ostream& out, std::uint64_t v);
void put_f64(std::ostream& out, double v);
/// Each getter returns false on a short read.
bool get_u16(std::istream& in, std::uint16_t& v);
bool get_u32(std::istream& in, std::uint32_t& v);
bool get_u64(std::istream& in, std::uint64_t& v);
bool get_f64(std::istream& in, double& v);

}  // namespace eatf

}  // namespace eanet
