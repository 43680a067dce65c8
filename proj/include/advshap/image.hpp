#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "advshap/tensor.hpp"

namespace advshap {

// Planar image, pixel (c, y, x) at index (c * height + y) * width + x.
// Pixel values of a valid input lie in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  std::size_t size() const { return pixels.size(); }
  std::size_t plane() const { return height * width; }
  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
  Tensor as_tensor() const { return Tensor(Shape{channels, height, width}, pixels); }

  friend bool operator==(const Image&, const Image&) = default;
};

// Spatial binary mask (height * width, row-major), shared across channels.
using SpatialMask = std::vector<std::uint8_t>;

}  // namespace advshap
