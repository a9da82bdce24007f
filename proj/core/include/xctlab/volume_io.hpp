#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace xct {

enum class DType { UInt8, UInt16, Float32 };
enum class ByteOrder { Little, Big };

std::string_view to_string(DType dtype);
std::size_t dtype_size(DType dtype);

/// Geometry and encoding of a raw volume, read from a key=value sidecar.
///
/// Recognized keys: DimSize (required), ElementType (required),
/// ElementSpacing (default 1 1 1), ByteOrder (default little), Origin
/// (default 0 0 0). Blank lines, '#' comments and unknown keys are ignored.
struct VolumeMeta {
  std::array<std::int64_t, 3> dims{1, 1, 1};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  DType dtype = DType::UInt8;
  ByteOrder byte_order = ByteOrder::Little;
  std::array<double, 3> origin{0.0, 0.0, 0.0};

  [[nodiscard]] std::size_t voxel_count() const;
  [[nodiscard]] std::size_t byte_size() const { return voxel_count() * dtype_size(dtype); }
  [[nodiscard]] double min_spacing() const;

  friend bool operator==(const VolumeMeta&, const VolumeMeta&) = default;
};

VolumeMeta parse_meta(std::string_view text);
std::string format_meta(const VolumeMeta& meta);

/// Immutable 3D scalar grid, x-fastest: index = x + dims.x * (y + dims.y * z).
///
/// Raw values are kept exactly (integers are exact in float32) so histograms
/// and serialization see the stored data. normalized() maps them to [0,1]
/// through the volume's value range: the full dtype range for integer types,
/// the data min..max for float32 unless a range is supplied explicitly.
class Volume {
 public:
  Volume() = default;
  Volume(VolumeMeta meta, std::vector<float> values);
  Volume(VolumeMeta meta, std::vector<float> values, double range_lo, double range_hi);

  [[nodiscard]] const VolumeMeta& meta() const { return meta_; }
  [[nodiscard]] const std::array<std::int64_t, 3>& dims() const { return meta_.dims; }
  [[nodiscard]] std::size_t size() const { return values_.size(); }
  [[nodiscard]] std::span<const float> values() const { return values_; }

  [[nodiscard]] std::size_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return static_cast<std::size_t>(x + meta_.dims[0] * (y + meta_.dims[1] * z));
  }
  [[nodiscard]] bool contains(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < meta_.dims[0] && y < meta_.dims[1] && z < meta_.dims[2];
  }
  /// Raw value; throws IndexOutOfRange outside the grid.
  [[nodiscard]] float voxel(std::int64_t x, std::int64_t y, std::int64_t z) const;
  [[nodiscard]] float at(std::size_t flat) const { return values_[flat]; }

  [[nodiscard]] double range_lo() const { return range_lo_; }
  [[nodiscard]] double range_hi() const { return range_hi_; }
  [[nodiscard]] double normalize(double raw) const;
  [[nodiscard]] double normalized(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return normalize(voxel(x, y, z));
  }

 private:
  VolumeMeta meta_;
  std::vector<float> values_;
  double range_lo_ = 0.0;
  double range_hi_ = 1.0;
};

Volume load_raw(std::span<const std::byte> bytes, const VolumeMeta& meta);
/// Encodes values with meta's dtype and byte order. Values are cast, not
/// rescaled, so integer volumes must hold in-range integers.
std::vector<std::byte> write_raw(const Volume& volume);

enum class Axis { X = 0, Y = 1, Z = 2 };
Axis parse_axis(std::string_view name);

/// Axis-aligned section. Pixel (i, j) is stored at i + width * j, with i
/// running along the lower of the two remaining axes and j along the higher
/// one: z-slices are (x, y), y-slices are (x, z), x-slices are (y, z).
struct Image2D {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<float> pixels;
};

Image2D extract_slice(const Volume& volume, Axis axis, std::int64_t index);

// File helpers. The sidecar path defaults to the .raw path with a .meta extension.
std::filesystem::path default_meta_path(const std::filesystem::path& raw_path);
Volume load_volume(const std::filesystem::path& raw_path, const std::filesystem::path& meta_path);
Volume load_volume(const std::filesystem::path& raw_path);
void save_volume(const Volume& volume, const std::filesystem::path& raw_path,
                 const std::filesystem::path& meta_path);

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);
std::string read_file_text(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes);
void write_file_text(const std::filesystem::path& path, std::string_view text);

}  // namespace xct
