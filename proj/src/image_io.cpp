#include "advshap/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "advshap/error.hpp"

namespace advshap {
namespace {

struct Header {
  std::string magic;
  std::size_t width = 0, height = 0, maxval = 0;
};

void skip_space_and_comments(std::istream& in) {
  while (true) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      in.get();
    } else {
      return;
    }
  }
}

std::size_t read_number(std::istream& in, const std::filesystem::path& path) {
  skip_space_and_comments(in);
  std::size_t v = 0;
  if (!(in >> v)) throw Error("read_netpbm", "malformed header in " + path.string());
  return v;
}

Header read_header(std::istream& in, const std::filesystem::path& path) {
  Header h;
  in >> h.magic;
  if (h.magic != "P2" && h.magic != "P3" && h.magic != "P5" && h.magic != "P6") {
    throw Error("read_netpbm", "unsupported format '" + h.magic + "' in " + path.string());
  }
  h.width = read_number(in, path);
  h.height = read_number(in, path);
  h.maxval = read_number(in, path);
  if (h.width == 0 || h.height == 0 || h.maxval == 0 || h.maxval > 65535) {
    throw Error("read_netpbm", "invalid dimensions in " + path.string());
  }
  in.get();  // single whitespace before raster
  return h;
}

std::vector<double> read_samples(std::istream& in, const Header& h, std::size_t count,
                                 const std::filesystem::path& path) {
  std::vector<double> out(count);
  const bool binary = h.magic == "P5" || h.magic == "P6";
  const double scale = 1.0 / static_cast<double>(h.maxval);
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t v = 0;
    if (binary) {
      if (h.maxval < 256) {
        const int c = in.get();
        if (c == EOF) throw Error("read_netpbm", "truncated raster in " + path.string());
        v = static_cast<std::size_t>(c);
      } else {
        const int hi = in.get(), lo = in.get();
        if (lo == EOF) throw Error("read_netpbm", "truncated raster in " + path.string());
        v = static_cast<std::size_t>(hi) * 256 + static_cast<std::size_t>(lo);
      }
    } else {
      v = read_number(in, path);
    }
    out[i] = std::min(1.0, static_cast<double>(v) * scale);
  }
  return out;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::ofstream open_out(const std::filesystem::path& path, const char* op) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(op, "cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace

Image read_netpbm(const std::filesystem::path& path, std::size_t channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("read_netpbm", "cannot open " + path.string());
  const Header h = read_header(in, path);
  const bool color = h.magic == "P3" || h.magic == "P6";
  const std::size_t src_channels = color ? 3 : 1;
  const std::vector<double> raw = read_samples(in, h, h.width * h.height * src_channels, path);
  const std::size_t want = channels == 0 ? src_channels : channels;
  if (want != 1 && want != 3) throw Error("read_netpbm", "channels must be 1 or 3");
  Image img(h.height, h.width, want);
  for (std::size_t y = 0; y < h.height; ++y) {
    for (std::size_t x = 0; x < h.width; ++x) {
      const std::size_t p = y * h.width + x;
      if (src_channels == 1) {
        for (std::size_t c = 0; c < want; ++c) img.at(c, y, x) = raw[p];
      } else if (want == 3) {
        for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = raw[p * 3 + c];
      } else {
        img.at(0, y, x) = 0.299 * raw[p * 3] + 0.587 * raw[p * 3 + 1] + 0.114 * raw[p * 3 + 2];
      }
    }
  }
  return img;
}

void write_netpbm(const Image& image, const std::filesystem::path& path) {
  std::ofstream out = open_out(path, "write_netpbm");
  const bool color = image.channels == 3;
  out << (color ? "P6" : "P5") << '\n' << image.width << ' ' << image.height << "\n255\n";
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      if (color) {
        for (std::size_t c = 0; c < 3; ++c) out.put(static_cast<char>(to_byte(image.at(c, y, x))));
      } else {
        out.put(static_cast<char>(to_byte(image.at(0, y, x))));
      }
    }
  }
  if (!out) throw Error("write_netpbm", "write failed for " + path.string());
}

void write_ppm(const Rgb8& image, const std::filesystem::path& path) {
  std::ofstream out = open_out(path, "write_ppm");
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  for (const auto& px : image.pixels) out.write(reinterpret_cast<const char*>(px.data()), 3);
  if (!out) throw Error("write_ppm", "write failed for " + path.string());
}

Rgb8 read_ppm(const std::filesystem::path& path) {
  const Image img = read_netpbm(path, 3);
  Rgb8 out;
  out.height = img.height;
  out.width = img.width;
  out.pixels.resize(img.plane());
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) out.pixels[y * img.width + x][c] = to_byte(img.at(c, y, x));
    }
  }
  return out;
}

}  // namespace advshap
