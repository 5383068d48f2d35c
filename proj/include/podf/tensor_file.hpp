#pragma once

// Binary tensor container.
//
//   offset 0   "PODF" magic
//          4   u8 version (1)
//          5   u8 dtype (0 = f64, 1 = f32)
//          6   u8 rank
//          7   u8 reserved (0)
//          8   rank x u32 extents, little endian
//          ..  payload, row-major, little endian

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "podf/tensor.hpp"

namespace podf {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class MagicError : public FormatError {
 public:
  using FormatError::FormatError;
};
class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};
class DtypeError : public FormatError {
 public:
  using FormatError::FormatError;
};
class TruncatedError : public FormatError {
 public:
  using FormatError::FormatError;
};

enum class DType : std::uint8_t { f64 = 0, f32 = 1 };

inline constexpr std::uint8_t kTensorFileVersion = 1;

struct TensorFile {
  DType dtype = DType::f64;
  std::vector<std::uint32_t> extents;
  std::vector<double> values;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto e : extents) n *= e;
    return n;
  }

  static std::size_t header_size(std::size_t rank) { return 8 + 4 * rank; }
};

namespace detail {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(p[i]) << (8 * i));
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode(const TensorFile& tf) {
  if (tf.extents.size() > 255) throw FormatError("rank exceeds 255");
  if (tf.values.size() != tf.element_count()) throw FormatError("value count does not match extents");
  std::vector<std::uint8_t> out{'P', 'O', 'D', 'F', kTensorFileVersion, static_cast<std::uint8_t>(tf.dtype),
                                static_cast<std::uint8_t>(tf.extents.size()), 0};
  for (auto e : tf.extents) detail::put_le<std::uint32_t>(out, e);
  const std::size_t width = tf.dtype == DType::f64 ? 8 : 4;
  out.reserve(out.size() + tf.values.size() * width);
  for (double v : tf.values) {
    if (tf.dtype == DType::f64) {
      detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
    } else {
      detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
  }
  return out;
}

inline TensorFile decode(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "PODF", 4) != 0) throw MagicError("bad magic: not a PODF tensor file");
  if (bytes.size() < 8) throw TruncatedError("truncated header");
  if (bytes[4] != kTensorFileVersion) throw VersionError("unsupported version " + std::to_string(bytes[4]));
  if (bytes[5] > 1) throw DtypeError("unsupported dtype " + std::to_string(bytes[5]));
  TensorFile tf;
  tf.dtype = static_cast<DType>(bytes[5]);
  const std::size_t rank = bytes[6];
  if (bytes.size() < TensorFile::header_size(rank)) throw TruncatedError("truncated extents");
  for (std::size_t i = 0; i < rank; ++i) tf.extents.push_back(detail::get_le<std::uint32_t>(bytes.data() + 8 + 4 * i));
  const std::size_t width = tf.dtype == DType::f64 ? 8 : 4;
  const std::size_t count = tf.element_count();
  const std::size_t expected = TensorFile::header_size(rank) + count * width;
  if (bytes.size() < expected) {
    throw TruncatedError("truncated payload: " + std::to_string(bytes.size()) + " bytes, expected " +
                         std::to_string(expected));
  }
  if (bytes.size() > expected) throw FormatError("trailing bytes after payload");
  tf.values.resize(count);
  const std::uint8_t* p = bytes.data() + TensorFile::header_size(rank);
  for (std::size_t i = 0; i < count; ++i) {
    if (tf.dtype == DType::f64) {
      tf.values[i] = std::bit_cast<double>(detail::get_le<std::uint64_t>(p + 8 * i));
    } else {
      tf.values[i] = static_cast<double>(std::bit_cast<float>(detail::get_le<std::uint32_t>(p + 4 * i)));
    }
  }
  return tf;
}

inline void write_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed for '" + path.string() + "'");
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

/// Writes `t` with the given rank (trailing extents of its (N,C,H,W) shape);
/// leading extents dropped this way must be 1.
inline void write_tensor(const std::filesystem::path& path, const Tensor& t, std::size_t rank = 4,
                         DType dtype = DType::f64) {
  if (rank == 0 || rank > 4) throw FormatError("tensor rank must be 1..4");
  for (std::size_t i = 0; i < 4 - rank; ++i) {
    if (t.shape()[i] != 1) throw ShapeError("cannot store " + t.shape().str() + " with rank " + std::to_string(rank));
  }
  TensorFile tf;
  tf.dtype = dtype;
  for (std::size_t i = 4 - rank; i < 4; ++i) tf.extents.push_back(static_cast<std::uint32_t>(t.shape()[i]));
  tf.values.assign(t.data().begin(), t.data().end());
  write_bytes(path, encode(tf));
}

/// Reads a rank <= 4 file; missing leading extents become 1.
inline Tensor read_tensor(const std::filesystem::path& path) {
  TensorFile tf = decode(read_bytes(path));
  if (tf.extents.size() > 4) throw FormatError("rank " + std::to_string(tf.extents.size()) + " exceeds 4");
  Shape s{1, 1, 1, 1};
  const std::size_t offset = 4 - tf.extents.size();
  for (std::size_t i = 0; i < tf.extents.size(); ++i) s.dims[offset + i] = tf.extents[i];
  return Tensor(s, std::move(tf.values));
}

}  // namespace podf
