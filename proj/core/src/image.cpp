#include "corisk/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>

#include "corisk/error.hpp"

namespace corisk {
namespace {

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::string_view bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    const char c = bytes[pos];
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  std::string token;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    token.push_back(bytes[pos++]);
  }
  return token;
}

std::size_t parse_header_int(const std::string& token, const char* what) {
  if (token.empty() || !std::all_of(token.begin(), token.end(),
                                    [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
    throw InputError(std::string("PGM: malformed ") + what);
  }
  return std::stoul(token);
}

}  // namespace

GrayImage decode_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  if (next_token(bytes, pos) != "P5") {
    throw InputError("PGM: expected binary 'P5' magic");
  }
  GrayImage img;
  img.width = parse_header_int(next_token(bytes, pos), "width");
  img.height = parse_header_int(next_token(bytes, pos), "height");
  const std::size_t maxval = parse_header_int(next_token(bytes, pos), "maxval");
  if (maxval == 0 || maxval > 255) {
    throw InputError("PGM: only 8-bit graymaps are supported");
  }
  if (img.width == 0 || img.height == 0) {
    throw InputError("PGM: empty image");
  }
  ++pos;  // single whitespace after maxval
  const std::size_t n = img.width * img.height;
  if (bytes.size() < pos + n) {
    throw InputError("PGM: truncated pixel data");
  }
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    img.pixels[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i]));
  }
  return img;
}

std::vector<unsigned char> encode_pgm(const GrayImage& image) {
  const std::string header = "P5\n" + std::to_string(image.width) + " " +
                             std::to_string(image.height) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(header.size() + image.pixels.size());
  for (double v : image.pixels) {
    out.push_back(static_cast<unsigned char>(std::clamp(std::lround(v), 0L, 255L)));
  }
  return out;
}

GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw InputError("cannot open image '" + path.string() + "'");
  }
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_pgm(bytes);
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  const auto bytes = encode_pgm(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw InputError("cannot write image '" + path.string() + "'");
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

ChestImage preprocess_image(const GrayImage& raw, std::size_t target_height,
                            std::size_t target_width) {
  if (raw.empty() || raw.pixels.size() != raw.width * raw.height) {
    throw InputError("preprocess_image: empty image");
  }
  if (target_height == 0 || target_width == 0) {
    throw InputError("preprocess_image: empty target size");
  }
  const std::size_t side = std::min(raw.width, raw.height);
  const std::size_t row0 = (raw.height - side) / 2;
  const std::size_t col0 = (raw.width - side) / 2;

  ChestImage out;
  out.image.width = target_width;
  out.image.height = target_height;
  out.image.pixels.resize(target_width * target_height);

  const double sy = static_cast<double>(side) / static_cast<double>(target_height);
  const double sx = static_cast<double>(side) / static_cast<double>(target_width);
  const auto max_index = static_cast<double>(side - 1);
  for (std::size_t r = 0; r < target_height; ++r) {
    const double fy = std::clamp((static_cast<double>(r) + 0.5) * sy - 0.5, 0.0, max_index);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, side - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t c = 0; c < target_width; ++c) {
      const double fx = std::clamp((static_cast<double>(c) + 0.5) * sx - 0.5, 0.0, max_index);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, side - 1);
      const double wx = fx - static_cast<double>(x0);
      const double top = raw.at(row0 + y0, col0 + x0) * (1.0 - wx) + raw.at(row0 + y0, col0 + x1) * wx;
      const double bottom =
          raw.at(row0 + y1, col0 + x0) * (1.0 - wx) + raw.at(row0 + y1, col0 + x1) * wx;
      out.image.pixels[r * target_width + c] = top * (1.0 - wy) + bottom * wy;
    }
  }

  const auto [lo_it, hi_it] = std::minmax_element(out.image.pixels.begin(), out.image.pixels.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  for (double& v : out.image.pixels) {
    v = range > 0.0 ? (v - lo) / range : 0.0;
  }
  return out;
}

GrayImage render_synthetic_cxr(double severity, std::size_t width, std::size_t height, Rng& rng) {
  GrayImage img;
  img.width = width;
  img.height = height;
  img.pixels.assign(width * height, 0.0);
  std::normal_distribution<double> noise(0.0, 0.04);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double w = static_cast<double>(width);
  const double h = static_cast<double>(height);
  // Lung fields: two dark ellipses on a brighter mediastinum/soft-tissue background.
  struct Ellipse {
    double cx, cy, rx, ry;
  };
  const Ellipse lungs[2] = {{0.32 * w, 0.5 * h, 0.17 * w, 0.34 * h},
                            {0.68 * w, 0.5 * h, 0.17 * w, 0.34 * h}};

  // Opacities: count and brightness both grow with severity.
  std::poisson_distribution<int> blob_count(0.5 + 7.0 * severity);
  const int n_blobs = blob_count(rng);
  struct Blob {
    double cx, cy, radius, strength;
  };
  std::vector<Blob> blobs;
  for (int i = 0; i < n_blobs; ++i) {
    const Ellipse& lung = lungs[unit(rng) < 0.5 ? 0 : 1];
    const double angle = 2.0 * std::numbers::pi * unit(rng);
    const double rad = std::sqrt(unit(rng));
    blobs.push_back({lung.cx + 0.8 * rad * lung.rx * std::cos(angle),
                     lung.cy + 0.8 * rad * lung.ry * std::sin(angle),
                     (0.04 + 0.05 * unit(rng)) * w, 0.25 + 0.35 * severity});
  }

  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const double x = static_cast<double>(c) + 0.5;
      const double y = static_cast<double>(r) + 0.5;
      double v = 0.55 + 0.1 * (y / h);
      for (const Ellipse& e : lungs) {
        const double dx = (x - e.cx) / e.rx;
        const double dy = (y - e.cy) / e.ry;
        const double d2 = dx * dx + dy * dy;
        if (d2 < 1.0) v -= 0.35 * (1.0 - 0.3 * d2);
      }
      for (const Blob& b : blobs) {
        const double dx = x - b.cx;
        const double dy = y - b.cy;
        v += b.strength * std::exp(-(dx * dx + dy * dy) / (2.0 * b.radius * b.radius));
      }
      v += noise(rng);
      img.pixels[r * width + c] = std::clamp(std::round(v * 255.0), 0.0, 255.0);
    }
  }
  return img;
}

}  // namespace corisk
