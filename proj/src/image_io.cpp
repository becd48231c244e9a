#include "ppmn/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace ppmn {

namespace {

class HeaderParser {
 public:
  HeaderParser(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path)
      : bytes_(bytes), path_(path) {}

  std::size_t number() {
    skip_space_and_comments();
    std::size_t value = 0;
    std::size_t digits = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (++digits > 9) fail("header number too large");
      ++pos_;
    }
    if (digits == 0) fail("expected a number in the header");
    return value;
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) fail("missing whitespace before pixel data");
    return pos_ + 1;
  }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(path_.string() + ": malformed PPM, " + what);
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  const std::filesystem::path& path_;
  std::size_t pos_ = 2;  // past the magic
};

}  // namespace

Rgb8Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open");
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  HeaderParser parser(bytes, path);
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') {
    parser.fail("not a binary P6 file");
  }
  Rgb8Image image;
  image.width = parser.number();
  image.height = parser.number();
  const std::size_t maxval = parser.number();
  if (image.width == 0 || image.height == 0) parser.fail("zero image extent");
  if (maxval == 0 || maxval > 255) parser.fail("maxval " + std::to_string(maxval) + " is not 8-bit");
  const std::size_t start = parser.raster_start();
  const std::size_t len = image.width * image.height * 3;
  if (bytes.size() - start < len) parser.fail("pixel data truncated");
  image.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(start),
                      bytes.begin() + static_cast<std::ptrdiff_t>(start + len));
  if (maxval != 255) {
    for (auto& p : image.pixels) {
      p = static_cast<std::uint8_t>(std::lround(std::min<std::size_t>(p, maxval) * 255.0 / maxval));
    }
  }
  return image;
}

void write_ppm(const std::filesystem::path& path, const Rgb8Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path.string() + ": cannot write");
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
}

void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width, const float* values) {
  const std::size_t n = height * width;
  const auto [lo, hi] = std::minmax_element(values, values + n);
  const float range = *hi - *lo;
  std::vector<std::uint8_t> gray(n);
  for (std::size_t i = 0; i < n; ++i) {
    gray[i] = range > 0.0f ? static_cast<std::uint8_t>(std::lround((values[i] - *lo) / range * 255.0f)) : 0;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(path.string() + ": cannot write");
  out << "P5\n" << width << " " << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(gray.data()), static_cast<std::streamsize>(gray.size()));
}

Rgb8Image resize_bilinear(const Rgb8Image& image, std::size_t height, std::size_t width) {
  if (height == image.height && width == image.width) return image;
  Rgb8Image out{height, width, std::vector<std::uint8_t>(height * width * 3)};
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  auto source = [](double pos, std::size_t extent, std::size_t& i0, std::size_t& i1, double& frac) {
    pos = std::clamp(pos, 0.0, static_cast<double>(extent - 1));
    i0 = static_cast<std::size_t>(std::floor(pos));
    i1 = std::min(i0 + 1, extent - 1);
    frac = pos - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < height; ++y) {
    std::size_t y0, y1;
    double fy;
    source((static_cast<double>(y) + 0.5) * sy - 0.5, image.height, y0, y1, fy);
    for (std::size_t x = 0; x < width; ++x) {
      std::size_t x0, x1;
      double fx;
      source((static_cast<double>(x) + 0.5) * sx - 0.5, image.width, x0, x1, fx);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        auto px = [&](std::size_t yy, std::size_t xx) {
          return static_cast<double>(image.pixels[(yy * image.width + xx) * 3 + ch]);
        };
        const double top = px(y0, x0) * (1.0 - fx) + px(y0, x1) * fx;
        const double bottom = px(y1, x0) * (1.0 - fx) + px(y1, x1) * fx;
        const double v = top * (1.0 - fy) + bottom * fy;
        out.pixels[(y * width + x) * 3 + ch] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

Tensor to_tensor(const Rgb8Image& image) {
  Tensor t(Shape{1, 3, image.height, image.width});
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        t.at(0, ch, y, x) = static_cast<float>(image.pixels[(y * image.width + x) * 3 + ch]) / 255.0f;
      }
    }
  }
  return t;
}

Rgb8Image to_rgb8(const Tensor& image) {
  const Shape& s = image.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("to_rgb8 expects [1 x 3 x h x w], got " + s.str());
  Rgb8Image out{s.h, s.w, std::vector<std::uint8_t>(s.h * s.w * 3)};
  for (std::size_t y = 0; y < s.h; ++y) {
    for (std::size_t x = 0; x < s.w; ++x) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const float v = std::clamp(image.at(0, ch, y, x), 0.0f, 1.0f);
        out.pixels[(y * s.w + x) * 3 + ch] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  return out;
}

}  // namespace ppmn
