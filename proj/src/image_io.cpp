#include "occ/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

namespace occ {

namespace {

constexpr long long kMaxPixels = 1LL << 26;

class HeaderReader {
 public:
  HeaderReader(const std::vector<unsigned char>& bytes, const std::string& name)
      : bytes_(bytes), name_(name) {}

  std::size_t position() const { return pos_; }

  // Skips whitespace and comments, then reads a positive decimal.
  long long number(const char* field) {
    skip_separators();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) {
      throw FormatError(name_ + ": expected " + field + " in header");
    }
    long long value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_++] - '0');
      if (value > std::numeric_limits<int>::max()) {
        throw FormatError(name_ + ": " + field + " overflows");
      }
    }
    return value;
  }

  // Exactly one whitespace byte separates the header from the raster.
  void end_of_header() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw FormatError(name_ + ": missing separator after header");
    }
    ++pos_;
  }

 private:
  void skip_separators() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n' && bytes_[pos_] != '\r') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<unsigned char>& bytes_;
  std::string name_;
  std::size_t pos_ = 2;
};

}  // namespace

int quantize8(double v) {
  return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void save_image(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw ShapeError("save_image expects 1 x H x W or 3 x H x W, got " + to_string(image.shape()));
  }
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::string bytes = (c == 3 ? "P6\n" : "P5\n") + std::to_string(w) + " " + std::to_string(h) +
                      "\n255\n";
  const std::size_t header = bytes.size();
  bytes.resize(header + static_cast<std::size_t>(c) * h * w);
  const double* src = image.data();
  const std::ptrdiff_t plane = static_cast<std::ptrdiff_t>(h) * w;
  for (std::ptrdiff_t p = 0; p < plane; ++p) {
    for (int k = 0; k < c; ++k) {
      const double v = src[k * plane + p];
      if (!std::isfinite(v)) throw NumericError("save_image: non-finite pixel in " + path.string());
      bytes[header + static_cast<std::size_t>(p * c + k)] = static_cast<char>(quantize8(v));
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

Tensor load_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                         std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError(name + ": not a binary PGM/PPM file");
  }
  const int c = bytes[1] == '6' ? 3 : 1;
  HeaderReader header(bytes, name);
  const long long w = header.number("width");
  const long long h = header.number("height");
  const long long maxval = header.number("maxval");
  header.end_of_header();
  if (w < 1 || h < 1) throw FormatError(name + ": empty image");
  if (w * h > kMaxPixels) throw FormatError(name + ": dimensions " + std::to_string(w) + "x" +
                                            std::to_string(h) + " exceed the supported size");
  if (maxval < 1 || maxval > 255) {
    throw FormatError(name + ": maxval " + std::to_string(maxval) + " unsupported");
  }
  const std::size_t need = static_cast<std::size_t>(c * w * h);
  if (bytes.size() - header.position() < need) throw FormatError(name + ": truncated raster");

  Tensor image({c, static_cast<int>(h), static_cast<int>(w)});
  double* dst = image.data();
  const std::ptrdiff_t plane = static_cast<std::ptrdiff_t>(h * w);
  const unsigned char* raster = bytes.data() + header.position();
  for (std::ptrdiff_t p = 0; p < plane; ++p) {
    for (int k = 0; k < c; ++k) {
      const int level = raster[p * c + k];
      if (level > maxval) throw FormatError(name + ": sample exceeds maxval");
      dst[k * plane + p] = static_cast<double>(level) / static_cast<double>(maxval);
    }
  }
  return image;
}

}  // namespace occ
