#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "diffusam/geometry.hpp"

namespace diffusam {

/// 8-bit interleaved RGB raster, row-major.
struct ImageBuffer {
  Dims dims;
  std::vector<std::uint8_t> pixels;

  ImageBuffer() = default;
  /// Filled with a single color.
  ImageBuffer(Dims d, std::uint8_t r = 0, std::uint8_t g = 0, std::uint8_t b = 0);
  /// Throws std::invalid_argument if the buffer is not width*height*3 bytes.
  ImageBuffer(Dims d, std::vector<std::uint8_t> px);

  int width() const { return dims.width; }
  int height() const { return dims.height; }

  std::uint8_t* at(int x, int y) { return pixels.data() + (std::size_t(y) * dims.width + x) * 3; }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (std::size_t(y) * dims.width + x) * 3;
  }

  /// Copy of the pixels inside `b`, which must lie within the image.
  ImageBuffer crop(const BBox& b) const;

  bool operator==(const ImageBuffer&) const = default;
};

/// Planar CIELAB image. L in [0,100]; a and b signed.
struct LabImage {
  Dims dims;
  std::vector<double> L, a, b;

  LabImage() = default;
  explicit LabImage(Dims d);
};

struct TileGrid {
  int cols = 8;
  int rows = 8;
};

struct EnhanceParams {
  double clahe_clip_limit = 2.0;
  TileGrid clahe_tile_grid{};
  double unsharp_sigma = 1.5;
  double unsharp_amount = 0.5;

  /// Throws std::invalid_argument on out-of-range fields.
  void validate() const;
};

/// Histogram resolution used by CLAHE on the L channel.
inline constexpr int kClaheBins = 256;

// sRGB (IEC 61966-2-1 transfer curve) <-> CIELAB under D65.
LabImage srgb_to_lab(const ImageBuffer& img);
ImageBuffer lab_to_srgb(const LabImage& lab);

/// Per-tile transfer functions: luts[row * cols + col][bin] -> output level
/// in [0, kClaheBins - 1].
struct ClaheTables {
  TileGrid grid;
  std::vector<int> x_edges;  // cols + 1 tile boundaries
  std::vector<int> y_edges;  // rows + 1
  std::vector<std::vector<double>> luts;
};

/// Builds the clipped-histogram transfer functions for every tile of L.
ClaheTables clahe_tables(const LabImage& lab, double clip_limit, TileGrid grid);

/// Contrast-limited adaptive histogram equalization of the L channel with
/// bilinear blending between the four nearest tile mappings (border tiles
/// replicate). a/b are copied untouched. Throws std::invalid_argument when the
/// grid has more tiles than pixels along either axis.
LabImage clahe_luminance(const LabImage& lab, double clip_limit, TileGrid grid);

/// Normalized 1-D Gaussian taps, radius ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);

/// Separable Gaussian blur with clamp-to-edge borders.
ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma);

/// out = clamp(in + amount * (in - blur(in))).
ImageBuffer unsharp_mask(const ImageBuffer& img, double sigma, double amount);

/// Haze reduction chain: Lab -> CLAHE(L) -> sRGB -> unsharp mask.
ImageBuffer preprocess(const ImageBuffer& img, const EnhanceParams& params);

}  // namespace diffusam
