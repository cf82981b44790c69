#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace varlab {

// 8-bit raster, row-major, interleaved channels (3 for RGB, 1 for gray).
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 3;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * channels + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * channels + c]; }
  bool operator==(const Image&) const = default;
};

// Binary P6 (RGB) and P5 (gray), maxval 255. Readers accept '#' comments in
// the header and throw ParseError with the failing byte offset.
std::vector<std::uint8_t> encode_ppm(const Image& rgb);
std::vector<std::uint8_t> encode_pgm(const Image& gray);
Image decode_ppm(std::span<const std::uint8_t> bytes);
Image decode_pgm(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

Image read_ppm(const std::filesystem::path& path);
Image read_pgm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& rgb);
void write_pgm(const std::filesystem::path& path, const Image& gray);

}  // namespace varlab
