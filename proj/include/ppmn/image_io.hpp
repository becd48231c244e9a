#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ppmn/tensor.hpp"

namespace ppmn {

// Interleaved 8-bit RGB raster.
struct Rgb8Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3
};

// Binary P6 with maxval <= 255. Throws FormatError naming the path.
Rgb8Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Rgb8Image& image);
// Single-channel P5 debug dump; values are min-max normalised to 0..255.
void write_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width, const float* values);

// Bilinear resize with half-pixel centres; computed in double precision and
// rounded, so a constant image stays exactly constant.
Rgb8Image resize_bilinear(const Rgb8Image& image, std::size_t height, std::size_t width);

// [1, 3, h, w] tensor with values in [0, 1].
Tensor to_tensor(const Rgb8Image& image);
// Rounds and clamps [0, 1] values back to 8 bits.
Rgb8Image to_rgb8(const Tensor& image);

}  // namespace ppmn
