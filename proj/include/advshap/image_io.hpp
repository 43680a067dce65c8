#pragma once

// Netpbm reading and writing. Grayscale maps to P5, RGB to P6; the readers
// also accept the ASCII variants P2/P3.

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "advshap/image.hpp"

namespace advshap {

struct Rgb8 {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::array<std::uint8_t, 3>> pixels;  // row-major
};

// Reads a PGM/PPM into [0,1] values. `channels` forces 1 (luma) or 3.
Image read_netpbm(const std::filesystem::path& path, std::size_t channels = 0);

// Writes channel 0 (1 channel) or RGB (3 channels), values clamped to [0,1].
void write_netpbm(const Image& image, const std::filesystem::path& path);

void write_ppm(const Rgb8& image, const std::filesystem::path& path);
Rgb8 read_ppm(const std::filesystem::path& path);

}  // namespace advshap
