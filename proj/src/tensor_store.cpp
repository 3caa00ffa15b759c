#include "expertseg/tensor_store.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>

namespace expertseg {
namespace {

constexpr std::array<char, 4> kMagic = {'O', 'V', 'S', 'T'};

template <typename T>
void put_le(std::vector<std::byte>& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::byte>(u & 0xFFu));
    u = static_cast<U>(u >> 8);
  }
}

template <typename T>
T get_le(std::span<const std::byte> in, std::size_t offset) {
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    u |= static_cast<U>(static_cast<U>(in[offset + i]) << (8 * i));
  }
  return static_cast<T>(u);
}

// Copies elements to/from little-endian bytes; a no-op reinterpretation on LE hosts.
template <typename T>
std::vector<std::byte> pack_le(std::span<const T> values) {
  std::vector<std::byte> out(values.size_bytes());
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    if (!values.empty()) std::memcpy(out.data(), values.data(), out.size());
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::array<std::byte, sizeof(T)> raw;
      std::memcpy(raw.data(), &values[i], sizeof(T));
      for (std::size_t b = 0; b < sizeof(T); ++b) out[i * sizeof(T) + b] = raw[sizeof(T) - 1 - b];
    }
  }
  return out;
}

template <typename T>
std::vector<T> unpack_le(std::span<const std::byte> bytes) {
  std::vector<T> out(bytes.size() / sizeof(T));
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    if (!out.empty()) std::memcpy(out.data(), bytes.data(), out.size() * sizeof(T));
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) {
      std::array<std::byte, sizeof(T)> raw;
      for (std::size_t b = 0; b < sizeof(T); ++b) raw[b] = bytes[i * sizeof(T) + sizeof(T) - 1 - b];
      std::memcpy(&out[i], raw.data(), sizeof(T));
    }
  }
  return out;
}

std::uint64_t checked_product(std::span<const std::uint64_t> dims, std::size_t elem_size) {
  std::uint64_t n = 1;
  for (auto d : dims) {
    if (d == 0) throw ValidationError("tensor dim must be >= 1");
    if (n > std::numeric_limits<std::uint64_t>::max() / d) throw ValidationError("tensor dims overflow");
    n *= d;
  }
  if (n > std::numeric_limits<std::uint64_t>::max() / elem_size) throw ValidationError("tensor dims overflow");
  return n;
}

template <typename T>
TensorFile make_tensor(DType dt, std::vector<std::uint64_t> dims, std::span<const T> values) {
  TensorFile t;
  t.dtype = dt;
  t.dims = std::move(dims);
  t.payload = pack_le(values);
  t.validate();
  return t;
}

template <typename T>
std::vector<T> typed_view(const TensorFile& t, DType expected) {
  if (t.dtype != expected) {
    throw ValidationError(std::string("tensor dtype is ") + dtype_name(t.dtype) + ", expected " +
                          dtype_name(expected));
  }
  return unpack_le<T>(t.payload);
}

DType dtype_from_code(std::uint8_t code) {
  if (code > static_cast<std::uint8_t>(DType::I64)) {
    throw ValidationError("unknown dtype code " + std::to_string(code));
  }
  return static_cast<DType>(code);
}

}  // namespace

std::size_t dtype_size(DType dt) {
  switch (dt) {
    case DType::F32: return 4;
    case DType::F64: return 8;
    case DType::U8: return 1;
    case DType::U16: return 2;
    case DType::I64: return 8;
  }
  throw ValidationError("unknown dtype");
}

const char* dtype_name(DType dt) {
  switch (dt) {
    case DType::F32: return "f32";
    case DType::F64: return "f64";
    case DType::U8: return "u8";
    case DType::U16: return "u16";
    case DType::I64: return "i64";
  }
  return "?";
}

std::uint64_t TensorHeader::element_count() const { return checked_product(dims, dtype_size(dtype)); }
std::uint64_t TensorHeader::payload_bytes() const { return element_count() * dtype_size(dtype); }

std::uint64_t TensorFile::element_count() const { return checked_product(dims, dtype_size(dtype)); }

void TensorFile::validate() const {
  if (dims.empty()) throw ValidationError("tensor rank must be >= 1");
  if (dims.size() > 255) throw ValidationError("tensor rank must be <= 255");
  if (element_count() * dtype_size(dtype) != payload.size()) {
    throw ValidationError("size mismatch: dims imply " +
                          std::to_string(element_count() * dtype_size(dtype)) + " bytes, payload has " +
                          std::to_string(payload.size()));
  }
}

TensorFile TensorFile::from_f32(std::vector<std::uint64_t> dims, std::span<const float> v) {
  return make_tensor(DType::F32, std::move(dims), v);
}
TensorFile TensorFile::from_f64(std::vector<std::uint64_t> dims, std::span<const double> v) {
  return make_tensor(DType::F64, std::move(dims), v);
}
TensorFile TensorFile::from_u8(std::vector<std::uint64_t> dims, std::span<const std::uint8_t> v) {
  return make_tensor(DType::U8, std::move(dims), v);
}
TensorFile TensorFile::from_u16(std::vector<std::uint64_t> dims, std::span<const std::uint16_t> v) {
  return make_tensor(DType::U16, std::move(dims), v);
}
TensorFile TensorFile::from_i64(std::vector<std::uint64_t> dims, std::span<const std::int64_t> v) {
  return make_tensor(DType::I64, std::move(dims), v);
}

std::vector<float> TensorFile::to_f32() const { return typed_view<float>(*this, DType::F32); }
std::vector<double> TensorFile::to_f64() const { return typed_view<double>(*this, DType::F64); }
std::vector<std::uint8_t> TensorFile::to_u8() const { return typed_view<std::uint8_t>(*this, DType::U8); }
std::vector<std::uint16_t> TensorFile::to_u16() const { return typed_view<std::uint16_t>(*this, DType::U16); }
std::vector<std::int64_t> TensorFile::to_i64() const { return typed_view<std::int64_t>(*this, DType::I64); }

std::vector<double> TensorFile::as_f64() const {
  if (dtype == DType::F64) return to_f64();
  if (dtype == DType::F32) {
    const auto f = to_f32();
    return {f.begin(), f.end()};
  }
  throw ValidationError(std::string("expected a floating-point tensor, got ") + dtype_name(dtype));
}

std::vector<std::uint16_t> TensorFile::as_labels() const {
  if (dtype == DType::U16) return to_u16();
  if (dtype == DType::U8) {
    const auto b = to_u8();
    return {b.begin(), b.end()};
  }
  throw ValidationError(std::string("expected a u8/u16 label tensor, got ") + dtype_name(dtype));
}

std::vector<std::byte> encode_tensor(const TensorFile& t) {
  t.validate();
  std::vector<std::byte> out;
  out.reserve(kTensorFixedHeaderBytes + 8 * t.dims.size() + t.payload.size());
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  put_le<std::uint32_t>(out, kTensorFormatVersion);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dims.size()));
  put_le<std::uint16_t>(out, 0);
  for (auto d : t.dims) put_le<std::uint64_t>(out, d);
  out.insert(out.end(), t.payload.begin(), t.payload.end());
  return out;
}

TensorHeader decode_tensor_header(std::span<const std::byte> bytes) {
  if (bytes.size() < kTensorFixedHeaderBytes) throw ValidationError("size mismatch: truncated header");
  for (std::size_t i = 0; i < kMagic.size(); ++i) {
    if (static_cast<char>(bytes[i]) != kMagic[i]) throw ValidationError("bad magic");
  }
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kTensorFormatVersion) {
    throw ValidationError("unsupported tensor format version " + std::to_string(version));
  }
  TensorHeader h;
  h.dtype = dtype_from_code(get_le<std::uint8_t>(bytes, 8));
  const auto rank = get_le<std::uint8_t>(bytes, 9);
  if (rank == 0) throw ValidationError("tensor rank must be >= 1");
  if (get_le<std::uint16_t>(bytes, 10) != 0) throw ValidationError("reserved header field must be 0");
  if (bytes.size() < kTensorFixedHeaderBytes + 8u * rank) throw ValidationError("size mismatch: truncated dims");
  h.dims.resize(rank);
  for (std::size_t i = 0; i < rank; ++i) h.dims[i] = get_le<std::uint64_t>(bytes, kTensorFixedHeaderBytes + 8 * i);
  static_cast<void>(h.payload_bytes());  // throws on zero or overflowing dims
  return h;
}

TensorFile decode_tensor(std::span<const std::byte> bytes) {
  const TensorHeader h = decode_tensor_header(bytes);
  const std::size_t offset = kTensorFixedHeaderBytes + 8 * h.dims.size();
  const std::uint64_t expected = h.payload_bytes();
  if (bytes.size() - offset != expected) {
    throw ValidationError("size mismatch: header implies " + std::to_string(expected) + " payload bytes, found " +
                          std::to_string(bytes.size() - offset));
  }
  TensorFile t;
  t.dtype = h.dtype;
  t.dims = h.dims;
  t.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
  return t;
}

void write_tensor(const std::filesystem::path& path, const TensorFile& t) {
  const auto bytes = encode_tensor(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

TensorFile read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::byte> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw IoError("read failed: " + path.string());
  try {
    return decode_tensor(bytes);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

TensorHeader read_tensor_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::uint64_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::byte> head(std::min<std::uint64_t>(size, kTensorFixedHeaderBytes + 8 * 255));
  in.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(head.size()));
  try {
    TensorHeader h = decode_tensor_header(head);
    const std::uint64_t header_bytes = kTensorFixedHeaderBytes + 8 * h.dims.size();
    if (size - header_bytes != h.payload_bytes()) throw ValidationError("size mismatch");
    return h;
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace expertseg
