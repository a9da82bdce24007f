#include "xctlab/image_io.hpp"

#include <png.h>

#include <cctype>
#include <cstring>
#include <string>

#include "xctlab/error.hpp"
#include "xctlab/volume_io.hpp"

namespace xct {

namespace {

std::vector<std::byte> write_png(const void* buffer, int width, int height, png_uint_32 format) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, buffer, 0, nullptr)) {
    throw Error(ErrorCode::Io, std::string("png encode: ") + image.message);
  }
  std::vector<std::byte> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, buffer, 0, nullptr)) {
    throw Error(ErrorCode::Io, std::string("png encode: ") + image.message);
  }
  out.resize(size);
  return out;
}

template <typename Image>
Image read_png(std::span<const std::byte> bytes, png_uint_32 format, int channels) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw Error(ErrorCode::InvalidArgument, std::string("png decode: ") + image.message);
  }
  image.format = format;
  Image out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.pixels.resize(static_cast<std::size_t>(channels) * image.width * image.height);
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error(ErrorCode::InvalidArgument, std::string("png decode: ") + image.message);
  }
  return out;
}

}  // namespace

std::vector<std::byte> encode_png(const ImageRGBA& image) {
  return write_png(image.pixels.data(), image.width, image.height, PNG_FORMAT_RGBA);
}

std::vector<std::byte> encode_png(const GrayImage& image) {
  return write_png(image.pixels.data(), image.width, image.height, PNG_FORMAT_GRAY);
}

ImageRGBA decode_png_rgba(std::span<const std::byte> bytes) {
  return read_png<ImageRGBA>(bytes, PNG_FORMAT_RGBA, 4);
}

GrayImage decode_png_gray(std::span<const std::byte> bytes) {
  return read_png<GrayImage>(bytes, PNG_FORMAT_GRAY, 1);
}

GrayImage decode_pgm(std::span<const std::byte> bytes) {
  std::size_t pos = 0;
  auto fail = [](const std::string& why) -> GrayImage { throw Error(ErrorCode::InvalidArgument, "pgm: " + why); };
  auto peek = [&]() { return pos < bytes.size() ? static_cast<char>(bytes[pos]) : '\0'; };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      const char c = peek();
      if (c == '#') {
        while (pos < bytes.size() && peek() != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> int {
    skip_space();
    int v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(peek()))) {
      v = v * 10 + (peek() - '0');
      ++pos;
      any = true;
    }
    if (!any) throw Error(ErrorCode::InvalidArgument, "pgm: expected integer");
    return v;
  };
  if (bytes.size() < 2 || peek() != 'P') return fail("missing magic");
  ++pos;
  const char kind = peek();
  ++pos;
  if (kind != '5' && kind != '2') return fail("only P2/P5 supported");
  const int w = read_int();
  const int h = read_int();
  const int maxval = read_int();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) return fail("bad header");
  GrayImage img(w, h);
  const auto n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (kind == '5') {
    ++pos;  // single whitespace after maxval
    if (bytes.size() < pos + n) return fail("truncated pixel data");
    for (std::size_t i = 0; i < n; ++i) img.pixels[i] = std::to_integer<std::uint8_t>(bytes[pos + i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) img.pixels[i] = static_cast<std::uint8_t>(read_int());
  }
  if (maxval != 255) {
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>((p * 255 + maxval / 2) / maxval);
  }
  return img;
}

std::vector<std::byte> encode_pgm(const GrayImage& image) {
  const std::string header = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::byte> out;
  out.reserve(header.size() + image.pixels.size());
  for (const char c : header) out.push_back(static_cast<std::byte>(c));
  for (const auto p : image.pixels) out.push_back(static_cast<std::byte>(p));
  return out;
}

GrayImage decode_frame(std::span<const std::byte> bytes) {
  if (bytes.size() >= 8 && std::to_integer<unsigned>(bytes[0]) == 0x89 && static_cast<char>(bytes[1]) == 'P' &&
      static_cast<char>(bytes[2]) == 'N' && static_cast<char>(bytes[3]) == 'G') {
    return decode_png_gray(bytes);
  }
  return decode_pgm(bytes);
}

GrayImage load_frame(const std::filesystem::path& path) { return decode_frame(read_file_bytes(path)); }

}  // namespace xct
