#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "advshap/image_io.hpp"

namespace advshap {

// Diverging blue-white-red color for v in [-1, 1]; 0 maps to white.
std::array<std::uint8_t, 3> diverging_color(double v);

// rows x cols grid, each cell upscaled to scale x scale pixels. Colors are
// scaled by the largest |value|, so an all-zero map renders white.
Rgb8 heatmap_image(std::span<const double> values, std::size_t rows, std::size_t cols, std::size_t scale = 16);
void render_heatmap(std::span<const double> values, std::size_t rows, std::size_t cols,
                    const std::filesystem::path& path, std::size_t scale = 16);

// Flat-colored label map (one color per label) over an image, blended 50/50
// with the grayscale image.
Rgb8 label_overlay(std::span<const std::size_t> labels, std::size_t height, std::size_t width,
                   std::span<const double> gray, std::size_t scale = 8);

}  // namespace advshap
