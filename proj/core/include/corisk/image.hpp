#pragma once

#include <cstddef>
#include <filesystem>
#include <string_view>
#include <vector>

#include "corisk/random.hpp"

namespace corisk {

// Row-major grayscale raster. Pixel values are reals; raw loads keep the
// 0..255 range, preprocessed images are in [0,1].
struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;

  double at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
  bool empty() const { return width == 0 || height == 0; }
};

enum class ImageView { AP, PA, Synthetic };

// Model input: fixed size, values in [0,1].
struct ChestImage {
  GrayImage image;
  ImageView source_view = ImageView::Synthetic;
};

// Binary 8-bit portable graymap (P5). Comments in the header are allowed.
GrayImage decode_pgm(std::string_view bytes);
std::vector<unsigned char> encode_pgm(const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

// Center-crop to the largest centered square, bilinear resize to
// target_height x target_width, then min-max normalize to [0,1]. A constant
// image maps to all zeros. Throws InputError on an empty image.
ChestImage preprocess_image(const GrayImage& raw, std::size_t target_height,
                            std::size_t target_width);

// Renders a synthetic frontal chest radiograph whose opacity burden grows with
// severity in [0,1]. Used by the cohort generator.
GrayImage render_synthetic_cxr(double severity, std::size_t width, std::size_t height, Rng& rng);

}  // namespace corisk
