#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "expertseg/common.hpp"

namespace expertseg {

// Single-tensor container ("OVST"):
//   magic "OVST" | version u32 LE (=1) | dtype u8 | rank u8 | reserved u16 (=0)
//   | dims rank x u64 LE | payload, row-major, little-endian.

enum class DType : std::uint8_t { F32 = 0, F64 = 1, U8 = 2, U16 = 3, I64 = 4 };

inline constexpr std::uint32_t kTensorFormatVersion = 1;
inline constexpr std::size_t kTensorFixedHeaderBytes = 12;

std::size_t dtype_size(DType dt);
const char* dtype_name(DType dt);

struct TensorHeader {
  DType dtype = DType::F32;
  std::vector<std::uint64_t> dims;

  [[nodiscard]] std::uint64_t element_count() const;
  [[nodiscard]] std::uint64_t payload_bytes() const;
};

/// A dense tensor with its payload kept as little-endian bytes.
struct TensorFile {
  DType dtype = DType::F32;
  std::vector<std::uint64_t> dims;
  std::vector<std::byte> payload;

  [[nodiscard]] std::size_t rank() const noexcept { return dims.size(); }
  [[nodiscard]] std::uint64_t element_count() const;

  /// Throws ValidationError if dims and payload disagree.
  void validate() const;

  friend bool operator==(const TensorFile&, const TensorFile&) = default;

  static TensorFile from_f32(std::vector<std::uint64_t> dims, std::span<const float> values);
  static TensorFile from_f64(std::vector<std::uint64_t> dims, std::span<const double> values);
  static TensorFile from_u8(std::vector<std::uint64_t> dims, std::span<const std::uint8_t> values);
  static TensorFile from_u16(std::vector<std::uint64_t> dims, std::span<const std::uint16_t> values);
  static TensorFile from_i64(std::vector<std::uint64_t> dims, std::span<const std::int64_t> values);

  // Typed views. The dtype must match exactly.
  [[nodiscard]] std::vector<float> to_f32() const;
  [[nodiscard]] std::vector<double> to_f64() const;
  [[nodiscard]] std::vector<std::uint8_t> to_u8() const;
  [[nodiscard]] std::vector<std::uint16_t> to_u16() const;
  [[nodiscard]] std::vector<std::int64_t> to_i64() const;

  // Widening conversions for consumers that accept several storage types.
  [[nodiscard]] std::vector<double> as_f64() const;    // f32 | f64
  [[nodiscard]] std::vector<std::uint16_t> as_labels() const;  // u8 | u16
};

std::vector<std::byte> encode_tensor(const TensorFile& t);
TensorFile decode_tensor(std::span<const std::byte> bytes);
TensorHeader decode_tensor_header(std::span<const std::byte> bytes);

void write_tensor(const std::filesystem::path& path, const TensorFile& t);
TensorFile read_tensor(const std::filesystem::path& path);
/// Reads and validates only the header, and checks the file size against it.
TensorHeader read_tensor_header(const std::filesystem::path& path);

}  // namespace expertseg
