#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

#include "expertseg/tensor_store.hpp"
#include "test_util.hpp"

using namespace expertseg;
using testutil::TempDir;

namespace {

std::vector<std::uint8_t> bytes_of(const std::vector<std::byte>& b) {
  std::vector<std::uint8_t> out(b.size());
  std::memcpy(out.data(), b.data(), b.size());
  return out;
}

void overwrite(const std::filesystem::path& p, std::size_t offset, const std::string& data) {
  std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(static_cast<std::streamoff>(offset));
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
}

}  // namespace

TEST(TensorStore, ZeroF32EncodesAsZeroBits) {
  const float zero = 0.0f;
  const auto enc = bytes_of(encode_tensor(TensorFile::from_f32({1}, {&zero, 1})));
  ASSERT_EQ(enc.size(), kTensorFixedHeaderBytes + 8 + 4);
  for (std::size_t i = enc.size() - 4; i < enc.size(); ++i) EXPECT_EQ(enc[i], 0u);
}

TEST(TensorStore, HeaderLayout) {
  const std::uint16_t v[] = {0, 1, 2, 255};
  const auto enc = bytes_of(encode_tensor(TensorFile::from_u16({2, 2}, v)));
  const std::vector<std::uint8_t> expected{
      'O', 'V', 'S', 'T', 1, 0, 0, 0,  // magic, version
      3,   2,   0,   0,                // dtype u16, rank 2, reserved
      2,   0,   0,   0,   0, 0, 0, 0,  // dim 0
      2,   0,   0,   0,   0, 0, 0, 0,  // dim 1
      0x00, 0x00, 0x01, 0x00, 0x02, 0x00, 0xFF, 0x00};
  EXPECT_EQ(enc, expected);
}

TEST(TensorStore, RandomF32RoundTripBitwise) {
  TempDir dir("ts");
  Rng rng(7);
  std::vector<float> v(3 * 4 * 5);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  const auto t = TensorFile::from_f32({3, 4, 5}, v);
  write_tensor(dir / "a.ovst", t);
  const auto back = read_tensor(dir / "a.ovst");
  EXPECT_EQ(back, t);
  const auto got = back.to_f32();
  EXPECT_EQ(std::memcmp(got.data(), v.data(), v.size() * sizeof(float)), 0);
}

TEST(TensorStore, EveryDtypeRoundTrips) {
  TempDir dir("ts");
  Rng rng(11);
  for (int rep = 0; rep < 40; ++rep) {
    const std::size_t rank = 1 + rng.uniform_index(4);
    std::vector<std::uint64_t> dims(rank);
    std::size_t n = 1;
    for (auto& d : dims) {
      d = 1 + rng.uniform_index(5);
      n *= d;
    }
    TensorFile t;
    switch (rep % 5) {
      case 0: {
        std::vector<float> v(n);
        for (auto& x : v) x = static_cast<float>(rng.normal());
        t = TensorFile::from_f32(dims, v);
        break;
      }
      case 1: {
        std::vector<double> v(n);
        for (auto& x : v) x = rng.normal();
        t = TensorFile::from_f64(dims, v);
        break;
      }
      case 2: {
        std::vector<std::uint8_t> v(n);
        for (auto& x : v) x = static_cast<std::uint8_t>(rng.next_u64());
        t = TensorFile::from_u8(dims, v);
        break;
      }
      case 3: {
        std::vector<std::uint16_t> v(n);
        for (auto& x : v) x = static_cast<std::uint16_t>(rng.next_u64());
        t = TensorFile::from_u16(dims, v);
        break;
      }
      default: {
        std::vector<std::int64_t> v(n);
        for (auto& x : v) x = static_cast<std::int64_t>(rng.next_u64());
        t = TensorFile::from_i64(dims, v);
        break;
      }
    }
    const auto p = dir / ("t" + std::to_string(rep) + ".ovst");
    write_tensor(p, t);
    const auto first = testutil::slurp(p);
    EXPECT_EQ(read_tensor(p), t);
    write_tensor(p, read_tensor(p));
    EXPECT_EQ(testutil::slurp(p), first);
  }
}

TEST(TensorStore, CorruptedMagic) {
  TempDir dir("ts");
  const float v[] = {1.0f, 2.0f};
  write_tensor(dir / "a.ovst", TensorFile::from_f32({2}, v));
  overwrite(dir / "a.ovst", 0, "XVST");
  try {
    read_tensor(dir / "a.ovst");
    FAIL() << "expected bad magic";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }
}

TEST(TensorStore, TruncatedPayload) {
  TempDir dir("ts");
  const float v[] = {1.0f, 2.0f, 3.0f};
  write_tensor(dir / "a.ovst", TensorFile::from_f32({3}, v));
  std::filesystem::resize_file(dir / "a.ovst", std::filesystem::file_size(dir / "a.ovst") - 2);
  try {
    read_tensor(dir / "a.ovst");
    FAIL() << "expected size mismatch";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("size mismatch"), std::string::npos);
  }
  EXPECT_THROW(read_tensor_header(dir / "a.ovst"), ValidationError);
}

TEST(TensorStore, RejectsBadHeaderFields) {
  TempDir dir("ts");
  const float v[] = {1.0f};
  const auto good = TensorFile::from_f32({1}, v);
  write_tensor(dir / "a.ovst", good);
  overwrite(dir / "a.ovst", 4, std::string("\x02", 1));
  EXPECT_THROW(read_tensor(dir / "a.ovst"), ValidationError);
  write_tensor(dir / "a.ovst", good);
  overwrite(dir / "a.ovst", 8, std::string("\x09", 1));
  EXPECT_THROW(read_tensor(dir / "a.ovst"), ValidationError);
  write_tensor(dir / "a.ovst", good);
  overwrite(dir / "a.ovst", 10, std::string("\x01", 1));
  EXPECT_THROW(read_tensor(dir / "a.ovst"), ValidationError);
}

TEST(TensorStore, MissingFileIsIoError) {
  TempDir dir("ts");
  EXPECT_THROW(read_tensor(dir / "nope.ovst"), IoError);
}

TEST(TensorStore, TypedViewsCheckDtype) {
  const float v[] = {1.0f, 2.0f};
  const auto t = TensorFile::from_f32({2}, v);
  EXPECT_THROW(t.to_u16(), ValidationError);
  EXPECT_THROW(t.as_labels(), ValidationError);
  EXPECT_EQ(t.as_f64(), (std::vector<double>{1.0, 2.0}));
  const std::uint8_t l[] = {3, 4};
  EXPECT_EQ(TensorFile::from_u8({2}, l).as_labels(), (std::vector<std::uint16_t>{3, 4}));
}

TEST(TensorStore, DimsMustMatchPayload) {
  TensorFile t;
  t.dtype = DType::F32;
  t.dims = {2, 2};
  t.payload.resize(12);
  EXPECT_THROW(t.validate(), ValidationError);
  t.dims = {2, 0};
  t.payload.clear();
  EXPECT_THROW(t.validate(), ValidationError);
}
