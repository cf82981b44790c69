#include "varlab/io/image_io.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

#include "varlab/errors.hpp"

namespace varlab {

namespace {

std::vector<std::uint8_t> encode_pnm(const Image& img, std::size_t channels, const char* magic) {
  expects(img.channels == channels, std::string(magic) + " needs " + std::to_string(channels) + "-channel pixels");
  expects(img.width > 0 && img.height > 0, "image must be nonempty");
  expects(img.pixels.size() == img.width * img.height * channels, "pixel buffer does not match image size");
  const std::string header =
      std::string(magic) + "\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> b) : b_(b) {}

  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else if (std::isspace(b_[pos_])) {
        ++pos_;
      } else {
        return;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_] - '0');
      if (v > (1u << 24)) throw ParseError(std::string(what) + " is too large", start);
      ++pos_;
    }
    if (pos_ == start) {
      throw ParseError(pos_ >= b_.size() ? std::string("file ends before ") + what : std::string("expected ") + what,
                       pos_);
    }
    return v;
  }

  std::size_t pos_ = 0;

 private:
  std::span<const std::uint8_t> b_;
};

Image decode_pnm(std::span<const std::uint8_t> bytes, char kind, std::size_t channels) {
  if (bytes.size() < 2) throw ParseError("file too short for a header", bytes.size());
  if (bytes[0] != 'P' || bytes[1] != static_cast<std::uint8_t>(kind)) {
    throw ParseError(std::string("expected magic P") + kind, 0);
  }
  HeaderReader r(bytes);
  r.pos_ = 2;
  Image img;
  img.channels = channels;
  img.width = r.number("width");
  img.height = r.number("height");
  const std::size_t maxval = r.number("maxval");
  if (img.width == 0 || img.height == 0) throw ParseError("zero image dimension", r.pos_);
  if (maxval != 255) throw ParseError("only maxval 255 is supported, got " + std::to_string(maxval), r.pos_);
  if (r.pos_ >= bytes.size() || !std::isspace(bytes[r.pos_])) {
    throw ParseError("expected one whitespace byte after maxval", r.pos_);
  }
  const std::size_t data = r.pos_ + 1;
  const std::size_t need = img.width * img.height * channels;
  if (bytes.size() < data + need) {
    throw ParseError("truncated pixel data: need " + std::to_string(need) + " bytes, have " +
                         std::to_string(bytes.size() - data),
                     bytes.size());
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(data),
                    bytes.begin() + static_cast<std::ptrdiff_t>(data + need));
  return img;
}

}  // namespace

std::vector<std::uint8_t> encode_ppm(const Image& rgb) { return encode_pnm(rgb, 3, "P6"); }
std::vector<std::uint8_t> encode_pgm(const Image& gray) { return encode_pnm(gray, 1, "P5"); }
Image decode_ppm(std::span<const std::uint8_t> bytes) { return decode_pnm(bytes, '6', 3); }
Image decode_pgm(std::span<const std::uint8_t> bytes) { return decode_pnm(bytes, '5', 1); }

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const std::filesystem::path& path) {
  auto b = read_file(path);
  return {b.begin(), b.end()};
}

Image read_ppm(const std::filesystem::path& path) { return decode_ppm(read_file(path)); }
Image read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file(path)); }
void write_ppm(const std::filesystem::path& path, const Image& rgb) { write_file(path, encode_ppm(rgb)); }
void write_pgm(const std::filesystem::path& path, const Image& gray) { write_file(path, encode_pgm(gray)); }

}  // namespace varlab
