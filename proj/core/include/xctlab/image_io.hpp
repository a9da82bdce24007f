#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace xct {

/// 8-bit RGBA, row-major from the top-left pixel.
struct ImageRGBA {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  ///< 4 * width * height

  ImageRGBA() = default;
  ImageRGBA(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(4 * w * h), 0) {}

  [[nodiscard]] std::uint8_t* at(int x, int y) { return &pixels[static_cast<std::size_t>(4 * (x + width * y))]; }
  [[nodiscard]] const std::uint8_t* at(int x, int y) const {
    return &pixels[static_cast<std::size_t>(4 * (x + width * y))];
  }
  friend bool operator==(const ImageRGBA&, const ImageRGBA&) = default;
};

/// 8-bit single-channel frame, row-major from the top-left pixel.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w * h), fill) {}

  [[nodiscard]] std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(x + width * y)]; }
  [[nodiscard]] std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(x + width * y)]; }
  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

std::vector<std::byte> encode_png(const ImageRGBA& image);
std::vector<std::byte> encode_png(const GrayImage& image);
ImageRGBA decode_png_rgba(std::span<const std::byte> bytes);
/// Decodes any PNG to 8-bit luminance.
GrayImage decode_png_gray(std::span<const std::byte> bytes);

/// Binary (P5) and ASCII (P2) PGM with maxval <= 255.
GrayImage decode_pgm(std::span<const std::byte> bytes);
std::vector<std::byte> encode_pgm(const GrayImage& image);

/// Picks PNG or PGM from the magic bytes.
GrayImage decode_frame(std::span<const std::byte> bytes);
GrayImage load_frame(const std::filesystem::path& path);

}  // namespace xct
