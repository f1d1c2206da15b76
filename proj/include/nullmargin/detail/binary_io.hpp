#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>

#include <boost/crc.hpp>

#include "nullmargin/error.hpp"
#include "nullmargin/types.hpp"

namespace nullmargin::detail {

/// Appends little-endian scalars to a byte string regardless of host order.
class ByteWriter {
 public:
  void bytes(std::string_view s) { out_.append(s); }

  template <class UInt>
  void uint(UInt v) {
    char buf[sizeof(UInt)];
    for (std::size_t i = 0; i < sizeof(UInt); ++i)
      buf[i] = static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xffU);
    out_.append(buf, sizeof(UInt));
  }
  void u8(std::uint8_t v) { uint(v); }
  void u16(std::uint16_t v) { uint(v); }
  void u32(std::uint32_t v) { uint(v); }
  void u64(std::uint64_t v) { uint(v); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  // Column-major matrices are written row-major.
  template <class Derived>
  void matrix(const Eigen::MatrixBase<Derived>& m) {
    u64(static_cast<std::uint64_t>(m.rows()));
    u64(static_cast<std::uint64_t>(m.cols()));
    out_.reserve(out_.size() + sizeof(double) * static_cast<std::size_t>(m.size()));
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) f64(m(r, c));
  }

  /// u64 length prefix followed by the block payload.
  void block(const ByteWriter& inner) {
    u64(inner.out_.size());
    out_.append(inner.out_);
  }

  const std::string& str() const noexcept { return out_; }
  std::string take() noexcept { return std::move(out_); }

 private:
  std::string out_;
};

/// Bounds-checked reader; any overrun is a truncated-file FormatError.
class ByteReader {
 public:
  explicit ByteReader(std::string_view in, std::string context = "input")
      : in_(in), context_(std::move(context)) {}

  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  template <class UInt>
  UInt uint() {
    need(sizeof(UInt));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += sizeof(UInt);
    return static_cast<UInt>(v);
  }
  std::uint8_t u8() { return uint<std::uint8_t>(); }
  std::uint16_t u16() { return uint<std::uint16_t>(); }
  std::uint32_t u32() { return uint<std::uint32_t>(); }
  std::uint64_t u64() { return uint<std::uint64_t>(); }
  double f64() { return std::bit_cast<double>(u64()); }

  Matrix matrix() {
    const auto rows = u64();
    const auto cols = u64();
    if (cols != 0 && rows > remaining() / 8 / cols)
      throw FormatError(context_ + ": truncated matrix payload");
    Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) m(r, c) = f64();
    return m;
  }

  /// Reads a length-prefixed block and returns a reader over its payload.
  ByteReader block(const std::string& name) {
    const auto n = u64();
    if (n > remaining()) throw FormatError(context_ + ": truncated " + name + " block");
    return ByteReader(bytes(static_cast<std::size_t>(n)), context_ + "/" + name);
  }

  std::size_t remaining() const noexcept { return in_.size() - pos_; }
  bool done() const noexcept { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) throw FormatError(context_ + ": unexpected end of data (truncated)");
  }

  std::string_view in_;
  std::size_t pos_ = 0;
  std::string context_;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "' for reading");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::string& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw DataError("failed writing '" + path + "'");
}

/// CRC-64/XZ.
inline std::uint64_t checksum(std::string_view data) {
  boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL, ~0ULL, ~0ULL, true, true> crc;
  crc.process_bytes(data.data(), data.size());
  return crc.checksum();
}

}  // namespace nullmargin::detail
