#include <gtest/gtest.h>

#include <cstring>
#include <limits>

#include "test_support.hpp"
#include "xctlab/error.hpp"
#include "xctlab/random.hpp"
#include "xctlab/volume_io.hpp"

using namespace xct;

namespace {

std::vector<std::byte> bytes_of(std::initializer_list<int> values) {
  std::vector<std::byte> out;
  for (int v : values) out.push_back(static_cast<std::byte>(v));
  return out;
}

template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no xct::Error thrown";
  return ErrorCode::InvalidArgument;
}

Volume iota_cube() {
  std::vector<std::byte> raw;
  for (int i = 0; i < 8; ++i) raw.push_back(static_cast<std::byte>(i));
  return load_raw(raw, parse_meta("DimSize=2 2 2\nElementType=uint8"));
}

}  // namespace

TEST(ParseMeta, MinimalDocumentTakesDefaults) {
  const VolumeMeta m = parse_meta("DimSize=2 2 2\nElementType=uint8");
  EXPECT_EQ(m.dims, (std::array<std::int64_t, 3>{2, 2, 2}));
  EXPECT_EQ(m.dtype, DType::UInt8);
  EXPECT_EQ(m.spacing, (std::array<double, 3>{1, 1, 1}));
  EXPECT_EQ(m.byte_order, ByteOrder::Little);
  EXPECT_EQ(m.origin, (std::array<double, 3>{0, 0, 0}));
}

TEST(ParseMeta, ScannerSizedVolume) {
  const VolumeMeta m = parse_meta("DimSize=250 250 300\nElementType=uint16");
  EXPECT_EQ(m.dims, (std::array<std::int64_t, 3>{250, 250, 300}));
  EXPECT_EQ(m.byte_size(), 37'500'000u);
}

TEST(ParseMeta, ZeroDimensionIsBadValue) {
  EXPECT_EQ(code_of([] { parse_meta("DimSize=0 2 2\nElementType=uint8"); }), ErrorCode::BadValue);
}

TEST(ParseMeta, ErrorsNameTheProblem) {
  try {
    parse_meta("ElementType=uint8\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingKey);
    EXPECT_NE(std::string(e.what()).find("DimSize"), std::string::npos);
  }
  try {
    parse_meta("DimSize=2 x 2\nElementType=uint8");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BadValue);
    EXPECT_NE(std::string(e.what()).find("'x'"), std::string::npos);
  }
  EXPECT_EQ(code_of([] { parse_meta("DimSize=2 2 2\nElementType=int64"); }), ErrorCode::UnknownDtype);
  EXPECT_EQ(code_of([] { parse_meta("DimSize=2 2 2\nElementType=uint8\nElementSpacing=1 0 1"); }),
            ErrorCode::BadValue);
  EXPECT_EQ(code_of([] { parse_meta("DimSize=2 2 2\nElementType=uint8\nByteOrder=middle"); }),
            ErrorCode::BadValue);
  EXPECT_EQ(code_of([] { parse_meta("DimSize=2 2\nElementType=uint8"); }), ErrorCode::BadValue);
}

TEST(ParseMeta, CommentsBlankLinesUnknownKeysAndAliases) {
  const VolumeMeta m = parse_meta(
      "# header\n\n  DimSize = 3 4 5 \r\nElementType = MET_USHORT\nElementSpacing = 0.5 0.25 2\n"
      "ByteOrder = BIG\nOrigin = -1 2.5 0\nObjectType = Image\n");
  EXPECT_EQ(m.dims, (std::array<std::int64_t, 3>{3, 4, 5}));
  EXPECT_EQ(m.dtype, DType::UInt16);
  EXPECT_EQ(m.spacing, (std::array<double, 3>{0.5, 0.25, 2}));
  EXPECT_EQ(m.byte_order, ByteOrder::Big);
  EXPECT_EQ(m.origin, (std::array<double, 3>{-1, 2.5, 0}));
}

TEST(ParseMeta, FormatRoundTrips) {
  VolumeMeta m;
  m.dims = {7, 1, 300};
  m.spacing = {0.1, 1.0 / 3.0, 2e-5};
  m.dtype = DType::Float32;
  m.byte_order = ByteOrder::Big;
  m.origin = {-12.75, 0.1 + 0.2, 1e10};
  EXPECT_EQ(parse_meta(format_meta(m)), m);
}

TEST(LoadRaw, IdentityLayout) {
  const Volume v = iota_cube();
  EXPECT_EQ(v.voxel(1, 1, 1), 7.0f);
  EXPECT_EQ(v.voxel(1, 0, 0), 1.0f);
  EXPECT_EQ(v.voxel(0, 1, 0), 2.0f);
  EXPECT_EQ(v.voxel(0, 0, 1), 4.0f);
}

TEST(LoadRaw, ByteCountMustMatch) {
  const VolumeMeta m = parse_meta("DimSize=250 250 300\nElementType=uint16");
  const std::size_t expected = 250ull * 250ull * 300ull * 2ull;
  std::vector<std::byte> raw(expected);
  EXPECT_EQ(load_raw(raw, m).size(), 250u * 250u * 300u);
  raw.pop_back();
  try {
    load_raw(raw, m);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LengthMismatch);
    EXPECT_NE(std::string(e.what()).find("37500000"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("37499999"), std::string::npos);
  }
}

TEST(LoadRaw, BigEndianUint16) {
  VolumeMeta m = parse_meta("DimSize=1 1 1\nElementType=uint16\nByteOrder=big");
  EXPECT_EQ(load_raw(bytes_of({0x01, 0x00}), m).voxel(0, 0, 0), 256.0f);
  m.byte_order = ByteOrder::Little;
  EXPECT_EQ(load_raw(bytes_of({0x01, 0x00}), m).voxel(0, 0, 0), 1.0f);
}

TEST(LoadRaw, NormalizationUsesDtypeRange) {
  const VolumeMeta m = parse_meta("DimSize=2 1 1\nElementType=uint16");
  const Volume v = load_raw(bytes_of({0x00, 0x00, 0xff, 0xff}), m);
  EXPECT_DOUBLE_EQ(v.normalized(0, 0, 0), 0.0);
  EXPECT_DOUBLE_EQ(v.normalized(1, 0, 0), 1.0);
  EXPECT_EQ(v.voxel(1, 0, 0), 65535.0f);
}

TEST(LoadRaw, FloatVolumesNormalizeOverDataRange) {
  VolumeMeta m = parse_meta("DimSize=3 1 1\nElementType=float32");
  const Volume v(m, {-2.0f, 0.0f, 6.0f});
  EXPECT_DOUBLE_EQ(v.normalized(0, 0, 0), 0.0);
  EXPECT_DOUBLE_EQ(v.normalized(1, 0, 0), 0.25);
  EXPECT_DOUBLE_EQ(v.normalized(2, 0, 0), 1.0);
}

TEST(LoadRaw, VoxelOutsideGridThrows) {
  const Volume v = iota_cube();
  EXPECT_EQ(code_of([&] { (void)v.voxel(2, 0, 0); }), ErrorCode::IndexOutOfRange);
  EXPECT_EQ(code_of([&] { (void)v.voxel(0, -1, 0); }), ErrorCode::IndexOutOfRange);
}

// Flat index must follow the x-fastest nested enumeration.
TEST(LoadRaw, FlatIndexMatchesNestedLoops) {
  VolumeMeta m;
  m.dims = {5, 3, 4};
  m.dtype = DType::UInt16;
  std::vector<std::byte> raw(m.byte_size());
  for (std::size_t i = 0; i < m.voxel_count(); ++i) {
    const auto v = static_cast<std::uint16_t>(i * 7 + 3);
    std::memcpy(&raw[2 * i], &v, 2);
  }
  const Volume vol = load_raw(raw, m);
  std::size_t expected = 0;
  for (std::int64_t z = 0; z < 4; ++z)
    for (std::int64_t y = 0; y < 3; ++y)
      for (std::int64_t x = 0; x < 5; ++x) {
        ASSERT_EQ(vol.index(x, y, z), expected);
        ASSERT_EQ(vol.voxel(x, y, z), static_cast<float>(expected * 7 + 3));
        ++expected;
      }
}

class RawRoundTrip : public ::testing::TestWithParam<std::tuple<DType, ByteOrder>> {};

TEST_P(RawRoundTrip, ReserializesIdenticalBytes) {
  const auto [dtype, order] = GetParam();
  VolumeMeta m;
  m.dims = {6, 5, 4};
  m.dtype = dtype;
  m.byte_order = order;
  Rng rng(42);
  std::vector<std::byte> raw(m.byte_size());
  if (dtype == DType::Float32) {
    // Random finite floats only; arbitrary bit patterns would include NaNs whose payloads are not data.
    for (std::size_t i = 0; i < m.voxel_count(); ++i) {
      const float f = static_cast<float>(rng.normal(0.0, 1e3));
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      for (int b = 0; b < 4; ++b) {
        const int shift = order == ByteOrder::Little ? 8 * b : 8 * (3 - b);
        raw[4 * i + static_cast<std::size_t>(b)] = static_cast<std::byte>((bits >> shift) & 0xff);
      }
    }
  } else {
    for (auto& b : raw) b = static_cast<std::byte>(rng.next_u64() & 0xff);
  }
  const Volume v = load_raw(raw, m);
  EXPECT_EQ(write_raw(v), raw);
}

INSTANTIATE_TEST_SUITE_P(AllEncodings, RawRoundTrip,
                         ::testing::Combine(::testing::Values(DType::UInt8, DType::UInt16, DType::Float32),
                                            ::testing::Values(ByteOrder::Little, ByteOrder::Big)));

TEST(ExtractSlice, ZSliceOfIotaCube) {
  const Image2D s = extract_slice(iota_cube(), Axis::Z, 1);
  EXPECT_EQ(s.width, 2);
  EXPECT_EQ(s.height, 2);
  EXPECT_EQ(s.pixels, (std::vector<float>{4, 5, 6, 7}));
}

TEST(ExtractSlice, OrientationOfXAndYSlices) {
  const Volume v = iota_cube();
  // y-slice: (x, z); x-slice: (y, z)
  EXPECT_EQ(extract_slice(v, Axis::Y, 1).pixels, (std::vector<float>{2, 3, 6, 7}));
  EXPECT_EQ(extract_slice(v, Axis::X, 1).pixels, (std::vector<float>{1, 3, 5, 7}));
}

TEST(ExtractSlice, IndexPastEndThrows) {
  const Volume v = iota_cube();
  EXPECT_EQ(code_of([&] { extract_slice(v, Axis::Z, 2); }), ErrorCode::IndexOutOfRange);
  EXPECT_EQ(code_of([&] { extract_slice(v, Axis::X, -1); }), ErrorCode::IndexOutOfRange);
}

TEST(ExtractSlice, ConstantVolumeGivesConstantSlice) {
  VolumeMeta m;
  m.dims = {4, 3, 2};
  const Volume v(m, std::vector<float>(24, 9.0f));
  for (Axis a : {Axis::X, Axis::Y, Axis::Z}) {
    for (float p : extract_slice(v, a, 0).pixels) EXPECT_EQ(p, 9.0f);
  }
}

TEST(ExtractSlice, RestackingEverySliceRebuildsTheVolume) {
  VolumeMeta m;
  m.dims = {4, 3, 5};
  m.dtype = DType::Float32;
  Rng rng(3);
  std::vector<float> values(m.voxel_count());
  for (auto& v : values) v = static_cast<float>(rng.uniform());
  const Volume vol(m, values);
  for (int a = 0; a < 3; ++a) {
    const Axis axis = static_cast<Axis>(a);
    std::vector<float> rebuilt(values.size(), -1.0f);
    for (std::int64_t k = 0; k < m.dims[static_cast<std::size_t>(a)]; ++k) {
      const Image2D s = extract_slice(vol, axis, k);
      for (std::int64_t j = 0; j < s.height; ++j)
        for (std::int64_t i = 0; i < s.width; ++i) {
          std::int64_t x = 0, y = 0, z = 0;
          if (axis == Axis::Z) { x = i; y = j; z = k; }
          if (axis == Axis::Y) { x = i; z = j; y = k; }
          if (axis == Axis::X) { y = i; z = j; x = k; }
          rebuilt[vol.index(x, y, z)] = s.pixels[static_cast<std::size_t>(i + s.width * j)];
        }
    }
    EXPECT_EQ(rebuilt, values) << "axis " << a;
  }
}

TEST(AxisNames, ParseAcceptsLetters) {
  EXPECT_EQ(parse_axis("x"), Axis::X);
  EXPECT_EQ(parse_axis("y"), Axis::Y);
  EXPECT_EQ(parse_axis("z"), Axis::Z);
  EXPECT_THROW(parse_axis("w"), Error);
}

TEST(VolumeFiles, SaveLoadRoundTripsBytesAndMeta) {
  xct::testing::TempDir dir;
  VolumeMeta m;
  m.dims = {9, 8, 7};
  m.spacing = {0.5, 0.5, 0.75};
  m.dtype = DType::UInt16;
  m.byte_order = ByteOrder::Big;
  m.origin = {1, 2, 3};
  Rng rng(11);
  std::vector<float> values(m.voxel_count());
  for (auto& v : values) v = static_cast<float>(rng.uniform_int(0, 65535));
  const Volume vol(m, values);
  const auto raw = dir / "v.raw";
  save_volume(vol, raw, default_meta_path(raw));
  EXPECT_EQ(default_meta_path(raw), dir / "v.meta");
  const Volume back = load_volume(raw);
  EXPECT_EQ(back.meta(), m);
  EXPECT_EQ(write_raw(back), write_raw(vol));
  EXPECT_EQ(read_file_bytes(raw), write_raw(vol));
}

TEST(VolumeFiles, MissingFileIsIoError) {
  EXPECT_EQ(code_of([] { load_volume("/nonexistent/v.raw"); }), ErrorCode::Io);
}
