#include "xctlab/volume_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "xctlab/error.hpp"

namespace xct {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
    if (i > start) out.push_back(s.substr(start, i - start));
  }
  return out;
}

template <typename T>
T parse_number(std::string_view key, std::string_view token) {
  T value{};
  const auto* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw Error(ErrorCode::BadValue, std::string(key) + ": '" + std::string(token) + "'");
  }
  return value;
}

template <typename T>
std::array<T, 3> parse_triple(std::string_view key, std::string_view value) {
  const auto tokens = split_ws(value);
  if (tokens.size() != 3) {
    throw Error(ErrorCode::BadValue,
                std::string(key) + ": expected 3 values, got '" + std::string(value) + "'");
  }
  return {parse_number<T>(key, tokens[0]), parse_number<T>(key, tokens[1]),
          parse_number<T>(key, tokens[2])};
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

DType parse_dtype(std::string_view token) {
  const std::string t = lower(token);
  if (t == "uint8" || t == "met_uchar") return DType::UInt8;
  if (t == "uint16" || t == "met_ushort") return DType::UInt16;
  if (t == "float32" || t == "met_float") return DType::Float32;
  throw Error(ErrorCode::UnknownDtype, "ElementType '" + std::string(token) + "'");
}

template <typename T>
T read_scalar(const std::byte* p, bool swap) {
  std::array<std::byte, sizeof(T)> buf;
  std::memcpy(buf.data(), p, sizeof(T));
  if (swap) std::reverse(buf.begin(), buf.end());
  T v;
  std::memcpy(&v, buf.data(), sizeof(T));
  return v;
}

template <typename T>
void write_scalar(std::byte* p, T v, bool swap) {
  std::array<std::byte, sizeof(T)> buf;
  std::memcpy(buf.data(), &v, sizeof(T));
  if (swap) std::reverse(buf.begin(), buf.end());
  std::memcpy(p, buf.data(), sizeof(T));
}

bool needs_swap(ByteOrder order) {
  return (order == ByteOrder::Little) != (std::endian::native == std::endian::little);
}

std::string format_double(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

std::string_view to_string(DType dtype) {
  switch (dtype) {
    case DType::UInt8: return "uint8";
    case DType::UInt16: return "uint16";
    case DType::Float32: return "float32";
  }
  return "?";
}

std::size_t dtype_size(DType dtype) {
  switch (dtype) {
    case DType::UInt8: return 1;
    case DType::UInt16: return 2;
    case DType::Float32: return 4;
  }
  return 0;
}

std::size_t VolumeMeta::voxel_count() const {
  return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
         static_cast<std::size_t>(dims[2]);
}

double VolumeMeta::min_spacing() const { return std::min({spacing[0], spacing[1], spacing[2]}); }

VolumeMeta parse_meta(std::string_view text) {
  std::map<std::string, std::string, std::less<>> entries;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = text.find('\n', pos);
    const std::string_view line =
        trim(text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos));
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::BadValue, "line without '=': '" + std::string(line) + "'");
    }
    entries[std::string(trim(line.substr(0, eq)))] = std::string(trim(line.substr(eq + 1)));
  }

  auto require = [&](std::string_view key) -> const std::string& {
    const auto it = entries.find(key);
    if (it == entries.end()) throw Error(ErrorCode::MissingKey, std::string(key));
    return it->second;
  };

  VolumeMeta meta;
  meta.dims = parse_triple<std::int64_t>("DimSize", require("DimSize"));
  for (const auto d : meta.dims) {
    if (d < 1) throw Error(ErrorCode::BadValue, "DimSize: '" + std::to_string(d) + "'");
  }
  meta.dtype = parse_dtype(require("ElementType"));

  if (const auto it = entries.find("ElementSpacing"); it != entries.end()) {
    meta.spacing = parse_triple<double>("ElementSpacing", it->second);
    for (const auto s : meta.spacing) {
      if (!(s > 0.0) || !std::isfinite(s)) {
        throw Error(ErrorCode::BadValue, "ElementSpacing: '" + format_double(s) + "'");
      }
    }
  }
  if (const auto it = entries.find("ByteOrder"); it != entries.end()) {
    const std::string v = lower(it->second);
    if (v == "little") {
      meta.byte_order = ByteOrder::Little;
    } else if (v == "big") {
      meta.byte_order = ByteOrder::Big;
    } else {
      throw Error(ErrorCode::BadValue, "ByteOrder: '" + it->second + "'");
    }
  }
  if (const auto it = entries.find("Origin"); it != entries.end()) {
    meta.origin = parse_triple<double>("Origin", it->second);
  }
  return meta;
}

std::string format_meta(const VolumeMeta& meta) {
  std::ostringstream os;
  os << "DimSize = " << meta.dims[0] << ' ' << meta.dims[1] << ' ' << meta.dims[2] << '\n';
  os << "ElementType = " << to_string(meta.dtype) << '\n';
  os << "ElementSpacing = " << format_double(meta.spacing[0]) << ' ' << format_double(meta.spacing[1])
     << ' ' << format_double(meta.spacing[2]) << '\n';
  os << "ByteOrder = " << (meta.byte_order == ByteOrder::Little ? "little" : "big") << '\n';
  os << "Origin = " << format_double(meta.origin[0]) << ' ' << format_double(meta.origin[1]) << ' '
     << format_double(meta.origin[2]) << '\n';
  return os.str();
}

Volume::Volume(VolumeMeta meta, std::vector<float> values) : meta_(meta), values_(std::move(values)) {
  if (values_.size() != meta_.voxel_count()) {
    throw Error(ErrorCode::LengthMismatch, "expected " + std::to_string(meta_.voxel_count()) +
                                               " voxels, got " + std::to_string(values_.size()));
  }
  switch (meta_.dtype) {
    case DType::UInt8:
      range_lo_ = 0.0;
      range_hi_ = 255.0;
      break;
    case DType::UInt16:
      range_lo_ = 0.0;
      range_hi_ = 65535.0;
      break;
    case DType::Float32: {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (const float v : values_) {
        if (!std::isfinite(v)) continue;
        lo = std::min(lo, static_cast<double>(v));
        hi = std::max(hi, static_cast<double>(v));
      }
      if (!(lo <= hi)) lo = hi = 0.0;
      range_lo_ = lo;
      range_hi_ = hi;
      break;
    }
  }
}

Volume::Volume(VolumeMeta meta, std::vector<float> values, double range_lo, double range_hi)
    : Volume(meta, std::move(values)) {
  if (!(range_lo <= range_hi)) {
    throw Error(ErrorCode::InvalidArgument, "value range lo must not exceed hi");
  }
  range_lo_ = range_lo;
  range_hi_ = range_hi;
}

float Volume::voxel(std::int64_t x, std::int64_t y, std::int64_t z) const {
  if (!contains(x, y, z)) {
    throw Error(ErrorCode::IndexOutOfRange, "voxel (" + std::to_string(x) + "," + std::to_string(y) +
                                                "," + std::to_string(z) + ")");
  }
  return values_[index(x, y, z)];
}

double Volume::normalize(double raw) const {
  if (!(range_hi_ > range_lo_)) return 0.0;
  return std::clamp((raw - range_lo_) / (range_hi_ - range_lo_), 0.0, 1.0);
}

Volume load_raw(std::span<const std::byte> bytes, const VolumeMeta& meta) {
  const std::size_t expected = meta.byte_size();
  if (bytes.size() != expected) {
    throw Error(ErrorCode::LengthMismatch, "expected " + std::to_string(expected) + " bytes, got " +
                                               std::to_string(bytes.size()));
  }
  const std::size_t n = meta.voxel_count();
  const bool swap = needs_swap(meta.byte_order);
  std::vector<float> values(n);
  const std::byte* p = bytes.data();
  switch (meta.dtype) {
    case DType::UInt8:
      for (std::size_t i = 0; i < n; ++i) values[i] = static_cast<float>(std::to_integer<std::uint8_t>(p[i]));
      break;
    case DType::UInt16:
      for (std::size_t i = 0; i < n; ++i) values[i] = static_cast<float>(read_scalar<std::uint16_t>(p + 2 * i, swap));
      break;
    case DType::Float32:
      for (std::size_t i = 0; i < n; ++i) values[i] = read_scalar<float>(p + 4 * i, swap);
      break;
  }
  return Volume(meta, std::move(values));
}

std::vector<std::byte> write_raw(const Volume& volume) {
  const VolumeMeta& meta = volume.meta();
  const bool swap = needs_swap(meta.byte_order);
  std::vector<std::byte> out(meta.byte_size());
  const auto values = volume.values();
  switch (meta.dtype) {
    case DType::UInt8:
      for (std::size_t i = 0; i < values.size(); ++i) {
        out[i] = static_cast<std::byte>(static_cast<std::uint8_t>(std::clamp(values[i], 0.0f, 255.0f)));
      }
      break;
    case DType::UInt16:
      for (std::size_t i = 0; i < values.size(); ++i) {
        write_scalar(out.data() + 2 * i,
                     static_cast<std::uint16_t>(std::clamp(values[i], 0.0f, 65535.0f)), swap);
      }
      break;
    case DType::Float32:
      for (std::size_t i = 0; i < values.size(); ++i) write_scalar(out.data() + 4 * i, values[i], swap);
      break;
  }
  return out;
}

Axis parse_axis(std::string_view name) {
  if (name == "x" || name == "X") return Axis::X;
  if (name == "y" || name == "Y") return Axis::Y;
  if (name == "z" || name == "Z") return Axis::Z;
  throw Error(ErrorCode::InvalidArgument, "axis must be x, y or z, got '" + std::string(name) + "'");
}

Image2D extract_slice(const Volume& volume, Axis axis, std::int64_t index) {
  const auto& d = volume.dims();
  const int a = static_cast<int>(axis);
  if (index < 0 || index >= d[static_cast<std::size_t>(a)]) {
    throw Error(ErrorCode::IndexOutOfRange, "slice " + std::to_string(index) + " on axis of size " +
                                                std::to_string(d[static_cast<std::size_t>(a)]));
  }
  const int u = a == 0 ? 1 : 0;
  const int v = a == 2 ? 1 : 2;
  Image2D img;
  img.width = d[static_cast<std::size_t>(u)];
  img.height = d[static_cast<std::size_t>(v)];
  img.pixels.resize(static_cast<std::size_t>(img.width * img.height));
  std::array<std::int64_t, 3> p{};
  p[static_cast<std::size_t>(a)] = index;
  for (std::int64_t j = 0; j < img.height; ++j) {
    p[static_cast<std::size_t>(v)] = j;
    for (std::int64_t i = 0; i < img.width; ++i) {
      p[static_cast<std::size_t>(u)] = i;
      img.pixels[static_cast<std::size_t>(i + img.width * j)] = volume.at(volume.index(p[0], p[1], p[2]));
    }
  }
  return img;
}

std::filesystem::path default_meta_path(const std::filesystem::path& raw_path) {
  auto p = raw_path;
  p.replace_extension(".meta");
  return p;
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open '" + path.string() + "'");
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::byte> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (!in) throw Error(ErrorCode::Io, "short read on '" + path.string() + "'");
  return bytes;
}

std::string read_file_text(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed on '" + path.string() + "'");
}

void write_file_text(const std::filesystem::path& path, std::string_view text) {
  write_file_bytes(path, std::as_bytes(std::span(text.data(), text.size())));
}

Volume load_volume(const std::filesystem::path& raw_path, const std::filesystem::path& meta_path) {
  const VolumeMeta meta = parse_meta(read_file_text(meta_path));
  return load_raw(read_file_bytes(raw_path), meta);
}

Volume load_volume(const std::filesystem::path& raw_path) {
  return load_volume(raw_path, default_meta_path(raw_path));
}

void save_volume(const Volume& volume, const std::filesystem::path& raw_path,
                 const std::filesystem::path& meta_path) {
  write_file_bytes(raw_path, write_raw(volume));
  write_file_text(meta_path, format_meta(volume.meta()));
}

}  // namespace xct
