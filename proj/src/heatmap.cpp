#include "advshap/heatmap.hpp"

#include <algorithm>
#include <cmath>

#include "advshap/error.hpp"

namespace advshap {
namespace {

struct Stop {
  double at;
  double r, g, b;
};

// Red-blue diverging ramp.
constexpr Stop kRamp[] = {
    {-1.0, 5, 48, 97},     {-0.5, 67, 147, 195}, {0.0, 255, 255, 255},
    {0.5, 214, 96, 77},    {1.0, 103, 0, 31},
};

std::uint8_t channel(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); }

}  // namespace

std::array<std::uint8_t, 3> diverging_color(double v) {
  v = std::clamp(std::isfinite(v) ? v : 0.0, -1.0, 1.0);
  std::size_t i = 0;
  while (i + 2 < std::size(kRamp) && v > kRamp[i + 1].at) ++i;
  const Stop& a = kRamp[i];
  const Stop& b = kRamp[i + 1];
  const double t = (v - a.at) / (b.at - a.at);
  return {channel(a.r + t * (b.r - a.r)), channel(a.g + t * (b.g - a.g)), channel(a.b + t * (b.b - a.b))};
}

Rgb8 heatmap_image(std::span<const double> values, std::size_t rows, std::size_t cols, std::size_t scale) {
  if (values.size() != rows * cols) throw Error("render_heatmap", "values do not match a rows x cols grid");
  if (scale == 0) throw Error("render_heatmap", "scale must be positive");
  double peak = 0.0;
  for (double v : values) {
    if (!std::isfinite(v)) throw Error("render_heatmap", "map contains non-finite values");
    peak = std::max(peak, std::abs(v));
  }
  Rgb8 img;
  img.height = rows * scale;
  img.width = cols * scale;
  img.pixels.resize(img.height * img.width);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const double v = values[(y / scale) * cols + x / scale];
      img.pixels[y * img.width + x] = diverging_color(peak > 0.0 ? v / peak : 0.0);
    }
  }
  return img;
}

void render_heatmap(std::span<const double> values, std::size_t rows, std::size_t cols,
                    const std::filesystem::path& path, std::size_t scale) {
  write_ppm(heatmap_image(values, rows, cols, scale), path);
}

Rgb8 label_overlay(std::span<const std::size_t> labels, std::size_t height, std::size_t width,
                   std::span<const double> gray, std::size_t scale) {
  if (labels.size() != height * width || gray.size() < height * width) {
    throw Error("label_overlay", "labels and image must be height x width");
  }
  Rgb8 img;
  img.height = height * scale;
  img.width = width * scale;
  img.pixels.resize(img.height * img.width);
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      const std::size_t p = (y / scale) * width + x / scale;
      // Golden-angle hue steps keep neighboring labels distinct.
      const double hue = std::fmod(static_cast<double>(labels[p]) * 137.508, 360.0) / 60.0;
      const double f = hue - std::floor(hue);
      double r = 0, g = 0, b = 0;
      switch (static_cast<int>(hue) % 6) {
        case 0: r = 1; g = f; break;
        case 1: r = 1 - f; g = 1; break;
        case 2: g = 1; b = f; break;
        case 3: g = 1 - f; b = 1; break;
        case 4: r = f; b = 1; break;
        default: r = 1; b = 1 - f; break;
      }
      const double base = std::clamp(gray[p], 0.0, 1.0) * 255.0;
      img.pixels[y * img.width + x] = {channel(0.5 * base + 0.5 * 255.0 * r), channel(0.5 * base + 0.5 * 255.0 * g),
                                       channel(0.5 * base + 0.5 * 255.0 * b)};
    }
  }
  return img;
}

}  // namespace advshap
