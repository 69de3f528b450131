#pragma once

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "vmfcoop/error.hpp"
#include "vmfcoop/manifold.hpp"

namespace vmfcoop::io {

// EMBD layout, all integers little-endian:
//   0  "EMBD"
//   4  u16 version (1)
//   6  u16 flags: bit0 rows are unit-norm, bit1 trailing CRC32 present
//   8  u64 rows
//  16  u64 dims
//  24  rows*dims binary32, row-major
//  ..  u32 CRC32 (IEEE, zlib polynomial) of the payload bytes, if bit1 set

inline constexpr std::array<char, 4> kEmbdMagic{'E', 'M', 'B', 'D'};
inline constexpr std::uint16_t kEmbdVersion = 1;
inline constexpr std::uint16_t kFlagNormalized = 0x1;
inline constexpr std::uint16_t kFlagCrc = 0x2;
inline constexpr std::size_t kEmbdHeaderSize = 24;

namespace detail {

template <typename T>
void put_le(std::vector<unsigned char>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const unsigned char* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(p[i]) << (8 * i);
  return v;
}

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, std::numeric_limits<uInt>::max()));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

/// Serializes a matrix; values are rounded to binary32.
inline std::vector<unsigned char> encode_embd(const Matrix& m, bool normalized, bool with_crc = true) {
  std::vector<unsigned char> out;
  out.reserve(kEmbdHeaderSize + m.rows() * m.cols() * 4 + 4);
  out.insert(out.end(), kEmbdMagic.begin(), kEmbdMagic.end());
  detail::put_le<std::uint16_t>(out, kEmbdVersion);
  detail::put_le<std::uint16_t>(out, static_cast<std::uint16_t>((normalized ? kFlagNormalized : 0) | (with_crc ? kFlagCrc : 0)));
  detail::put_le<std::uint64_t>(out, m.rows());
  detail::put_le<std::uint64_t>(out, m.cols());
  for (double v : m.data()) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  if (with_crc) {
    const std::uint32_t crc = detail::crc32_of(out.data() + kEmbdHeaderSize, out.size() - kEmbdHeaderSize);
    detail::put_le<std::uint32_t>(out, crc);
  }
  return out;
}

inline std::vector<unsigned char> encode_embd(const EmbeddingMatrix& m, bool with_crc = true) {
  return encode_embd(m.values(), m.normalized(), with_crc);
}

struct EmbdHeader {
  std::uint16_t version = 0;
  std::uint16_t flags = 0;
  std::uint64_t rows = 0;
  std::uint64_t dims = 0;
};

inline EmbdHeader decode_embd_header(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < kEmbdMagic.size() || !std::equal(kEmbdMagic.begin(), kEmbdMagic.end(), bytes.begin(),
                                                      [](char a, unsigned char b) { return static_cast<unsigned char>(a) == b; }))
    fail(ErrorKind::BadMagic, "byte offset 0: missing EMBD magic");
  if (bytes.size() < kEmbdHeaderSize)
    fail(ErrorKind::TruncatedPayload, "byte offset " + std::to_string(bytes.size()) + ": header needs " +
                                          std::to_string(kEmbdHeaderSize) + " bytes");
  EmbdHeader h;
  h.version = detail::get_le<std::uint16_t>(bytes.data() + 4);
  if (h.version != kEmbdVersion)
    fail(ErrorKind::BadVersion, "byte offset 4: version " + std::to_string(h.version) + ", expected " +
                                    std::to_string(kEmbdVersion));
  h.flags = detail::get_le<std::uint16_t>(bytes.data() + 6);
  h.rows = detail::get_le<std::uint64_t>(bytes.data() + 8);
  h.dims = detail::get_le<std::uint64_t>(bytes.data() + 16);
  return h;
}

/// Parses and validates an EMBD image. Errors name the byte offset.
inline EmbeddingMatrix decode_embd(const std::vector<unsigned char>& bytes) {
  const EmbdHeader h = decode_embd_header(bytes);
  const std::uint64_t max_values = (std::numeric_limits<std::uint64_t>::max() - kEmbdHeaderSize - 4) / 4;
  if (h.dims != 0 && h.rows > max_values / h.dims)
    fail(ErrorKind::TruncatedPayload, "byte offset 8: rows x dims overflows");
  const std::uint64_t payload = h.rows * h.dims * 4;
  const bool has_crc = (h.flags & kFlagCrc) != 0;
  const std::uint64_t expected = kEmbdHeaderSize + payload + (has_crc ? 4 : 0);
  if (bytes.size() < kEmbdHeaderSize + payload)
    fail(ErrorKind::TruncatedPayload, "byte offset " + std::to_string(bytes.size()) + ": payload needs " +
                                          std::to_string(payload) + " bytes from offset 24");
  if (bytes.size() < expected)
    fail(ErrorKind::TruncatedPayload, "byte offset " + std::to_string(bytes.size()) + ": CRC32 missing at offset " +
                                          std::to_string(kEmbdHeaderSize + payload));
  if (bytes.size() > expected)
    fail(ErrorKind::TrailingData, "byte offset " + std::to_string(expected) + ": " +
                                      std::to_string(bytes.size() - expected) + " unexpected trailing bytes");
  if (has_crc) {
    const std::uint32_t stored = detail::get_le<std::uint32_t>(bytes.data() + kEmbdHeaderSize + payload);
    const std::uint32_t actual = detail::crc32_of(bytes.data() + kEmbdHeaderSize, payload);
    if (stored != actual)
      fail(ErrorKind::CrcMismatch, "byte offset " + std::to_string(kEmbdHeaderSize + payload) +
                                       ": stored CRC32 does not match payload");
  }
  Matrix m(h.rows, h.dims);
  auto out = m.data();
  const unsigned char* p = bytes.data() + kEmbdHeaderSize;
  for (std::size_t k = 0; k < out.size(); ++k, p += 4) {
    const float f = std::bit_cast<float>(detail::get_le<std::uint32_t>(p));
    require(std::isfinite(f), ErrorKind::NonFiniteInput,
            "byte offset " + std::to_string(kEmbdHeaderSize + 4 * k) + ": non-finite value");
    out[k] = f;
  }
  return EmbeddingMatrix(std::move(m), (h.flags & kFlagNormalized) != 0);
}

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes through a sibling temp file and renames into place.
inline void write_atomic(const std::filesystem::path& path, const void* data, std::size_t size) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + tmp.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out) fail(ErrorKind::Io, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::Io, "cannot move " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_atomic(path, text.data(), text.size());
}

inline EmbeddingMatrix read_embd(const std::filesystem::path& path) {
  try {
    return decode_embd(read_bytes(path));
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.message());
  }
}

inline void write_embd(const EmbeddingMatrix& m, const std::filesystem::path& path, bool with_crc = true) {
  const auto bytes = encode_embd(m, with_crc);
  write_atomic(path, bytes.data(), bytes.size());
}

inline void write_embd(const Matrix& m, bool normalized, const std::filesystem::path& path, bool with_crc = true) {
  const auto bytes = encode_embd(m, normalized, with_crc);
  write_atomic(path, bytes.data(), bytes.size());
}

/// Sidecar metadata lives next to the matrix as "<file>.json".
inline std::filesystem::path sidecar_path(const std::filesystem::path& embd) {
  std::filesystem::path p = embd;
  p += ".json";
  return p;
}

}  // namespace vmfcoop::io
