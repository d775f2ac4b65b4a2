#include "diffusam/imaging.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace diffusam {

ImageBuffer::ImageBuffer(Dims d, std::uint8_t r, std::uint8_t g, std::uint8_t b)
    : dims(d), pixels(std::size_t(d.area()) * 3) {
  for (std::size_t i = 0; i < pixels.size(); i += 3) {
    pixels[i] = r;
    pixels[i + 1] = g;
    pixels[i + 2] = b;
  }
}

ImageBuffer::ImageBuffer(Dims d, std::vector<std::uint8_t> px) : dims(d), pixels(std::move(px)) {
  if (std::int64_t(pixels.size()) != d.area() * 3)
    throw std::invalid_argument("ImageBuffer: pixel buffer is " + std::to_string(pixels.size()) +
                                " bytes, expected " + std::to_string(d.area() * 3));
}

ImageBuffer ImageBuffer::crop(const BBox& b) const {
  if (!b.within(dims)) throw std::invalid_argument("ImageBuffer::crop: box outside image");
  ImageBuffer out(Dims(b.width(), b.height()));
  for (int y = 0; y < b.height(); ++y) {
    const std::uint8_t* src = at(b.x_min(), b.y_min() + y);
    std::copy(src, src + std::size_t(b.width()) * 3, out.at(0, y));
  }
  return out;
}

LabImage::LabImage(Dims d) : dims(d), L(d.area()), a(d.area()), b(d.area()) {}

void EnhanceParams::validate() const {
  if (!(clahe_clip_limit > 0.0)) throw std::invalid_argument("clahe_clip_limit must be > 0");
  if (clahe_tile_grid.cols < 1 || clahe_tile_grid.rows < 1)
    throw std::invalid_argument("clahe_tile_grid must be positive");
  if (!(unsharp_sigma > 0.0)) throw std::invalid_argument("unsharp_sigma must be > 0");
  if (!(unsharp_amount >= 0.0)) throw std::invalid_argument("unsharp_amount must be >= 0");
}

// ---------------------------------------------------------------------------
// Color

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

// Linear sRGB -> XYZ, D65.
constexpr Mat3 kRgbToXyz{{{0.4124564, 0.3575761, 0.1804375},
                          {0.2126729, 0.7151522, 0.0721750},
                          {0.0193339, 0.1191920, 0.9503041}}};

Mat3 invert(const Mat3& m) {
  const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                     m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                     m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
  Mat3 r{};
  r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
  r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
  r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
  r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
  r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
  r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
  r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
  r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
  r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
  return r;
}

std::array<double, 3> apply(const Mat3& m, double r, double g, double b) {
  return {m[0][0] * r + m[0][1] * g + m[0][2] * b, m[1][0] * r + m[1][1] * g + m[1][2] * b,
          m[2][0] * r + m[2][1] * g + m[2][2] * b};
}

// White is the image of RGB (1,1,1) so that white maps to a = b = 0 exactly.
const std::array<double, 3> kWhite = apply(kRgbToXyz, 1.0, 1.0, 1.0);
const Mat3 kXyzToRgb = invert(kRgbToXyz);

constexpr double kEpsilon = 216.0 / 24389.0;
constexpr double kKappa = 24389.0 / 27.0;

double srgb_decode(double v) {
  return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

double srgb_encode(double v) {
  return v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

double lab_f(double t) { return t > kEpsilon ? std::cbrt(t) : (kKappa * t + 16.0) / 116.0; }

double lab_f_inv(double f) {
  const double f3 = f * f * f;
  return f3 > kEpsilon ? f3 : (116.0 * f - 16.0) / kKappa;
}

std::array<double, 256> decode_table() {
  std::array<double, 256> t{};
  for (int i = 0; i < 256; ++i) t[i] = srgb_decode(i / 255.0);
  return t;
}

std::uint8_t to_byte(double v) { return std::uint8_t(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

LabImage srgb_to_lab(const ImageBuffer& img) {
  static const auto lin = decode_table();
  LabImage out(img.dims);
  const std::size_t n = std::size_t(img.dims.area());
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* p = img.pixels.data() + i * 3;
    auto xyz = apply(kRgbToXyz, lin[p[0]], lin[p[1]], lin[p[2]]);
    const double fx = lab_f(xyz[0] / kWhite[0]);
    const double fy = lab_f(xyz[1] / kWhite[1]);
    const double fz = lab_f(xyz[2] / kWhite[2]);
    out.L[i] = std::clamp(116.0 * fy - 16.0, 0.0, 100.0);
    out.a[i] = 500.0 * (fx - fy);
    out.b[i] = 200.0 * (fy - fz);
  }
  return out;
}

ImageBuffer lab_to_srgb(const LabImage& lab) {
  ImageBuffer out(lab.dims);
  const std::size_t n = std::size_t(lab.dims.area());
  for (std::size_t i = 0; i < n; ++i) {
    const double L = std::clamp(lab.L[i], 0.0, 100.0);
    const double fy = (L + 16.0) / 116.0;
    const double fx = fy + lab.a[i] / 500.0;
    const double fz = fy - lab.b[i] / 200.0;
    const double y = L > kKappa * kEpsilon ? fy * fy * fy : L / kKappa;
    auto rgb = apply(kXyzToRgb, lab_f_inv(fx) * kWhite[0], y * kWhite[1], lab_f_inv(fz) * kWhite[2]);
    std::uint8_t* p = out.pixels.data() + i * 3;
    for (int c = 0; c < 3; ++c) p[c] = to_byte(255.0 * srgb_encode(std::clamp(rgb[c], 0.0, 1.0)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CLAHE

namespace {

std::vector<int> tile_edges(int extent, int tiles) {
  std::vector<int> e(tiles + 1);
  for (int i = 0; i <= tiles; ++i) e[i] = int(std::int64_t(i) * extent / tiles);
  return e;
}

int luminance_bin(double L) {
  return int(std::clamp(std::lround(L * (kClaheBins - 1) / 100.0), 0L, long(kClaheBins - 1)));
}

// For coordinate `p`, the two neighbouring tiles and the weight of the second.
struct Blend {
  int lo, hi;
  double w;
};

std::vector<Blend> blend_axis(const std::vector<int>& edges, int extent) {
  const int tiles = int(edges.size()) - 1;
  std::vector<double> centers(tiles);
  for (int i = 0; i < tiles; ++i) centers[i] = (edges[i] + edges[i + 1] - 1) / 2.0;
  std::vector<Blend> out(extent);
  int i = 0;
  for (int p = 0; p < extent; ++p) {
    if (p <= centers.front()) {
      out[p] = {0, 0, 0.0};
    } else if (p >= centers.back()) {
      out[p] = {tiles - 1, tiles - 1, 0.0};
    } else {
      while (centers[i + 1] <= p) ++i;
      out[p] = {i, i + 1, (p - centers[i]) / (centers[i + 1] - centers[i])};
    }
  }
  return out;
}

}  // namespace

ClaheTables clahe_tables(const LabImage& lab, double clip_limit, TileGrid grid) {
  const Dims d = lab.dims;
  if (grid.cols < 1 || grid.rows < 1 || grid.cols > d.width || grid.rows > d.height)
    throw std::invalid_argument("clahe: tile grid " + std::to_string(grid.cols) + "x" +
                                std::to_string(grid.rows) + " does not fit a " +
                                std::to_string(d.width) + "x" + std::to_string(d.height) +
                                " image");
  if (!(clip_limit > 0.0)) throw std::invalid_argument("clahe: clip limit must be > 0");

  ClaheTables t;
  t.grid = grid;
  t.x_edges = tile_edges(d.width, grid.cols);
  t.y_edges = tile_edges(d.height, grid.rows);
  t.luts.resize(std::size_t(grid.cols) * grid.rows);

  for (int ty = 0; ty < grid.rows; ++ty) {
    for (int tx = 0; tx < grid.cols; ++tx) {
      std::array<int, kClaheBins> hist{};
      for (int y = t.y_edges[ty]; y < t.y_edges[ty + 1]; ++y)
        for (int x = t.x_edges[tx]; x < t.x_edges[tx + 1]; ++x)
          ++hist[luminance_bin(lab.L[std::size_t(y) * d.width + x])];

      const int area = (t.x_edges[tx + 1] - t.x_edges[tx]) * (t.y_edges[ty + 1] - t.y_edges[ty]);
      const int limit = std::max(1, int(clip_limit * area / kClaheBins));

      int excess = 0;
      for (int& h : hist) {
        if (h > limit) {
          excess += h - limit;
          h = limit;
        }
      }
      const int batch = excess / kClaheBins;
      int residual = excess - batch * kClaheBins;
      for (int& h : hist) h += batch;
      if (residual > 0) {
        const int step = std::max(kClaheBins / residual, 1);
        for (int i = 0; i < kClaheBins && residual > 0; i += step, --residual) ++hist[i];
      }

      auto& lut = t.luts[std::size_t(ty) * grid.cols + tx];
      lut.resize(kClaheBins);
      const double scale = double(kClaheBins - 1) / area;
      int cdf = 0;
      for (int i = 0; i < kClaheBins; ++i) {
        cdf += hist[i];
        lut[i] = std::min(cdf * scale, double(kClaheBins - 1));
      }
    }
  }
  return t;
}

LabImage clahe_luminance(const LabImage& lab, double clip_limit, TileGrid grid) {
  const ClaheTables t = clahe_tables(lab, clip_limit, grid);
  const Dims d = lab.dims;
  const auto bx = blend_axis(t.x_edges, d.width);
  const auto by = blend_axis(t.y_edges, d.height);

  LabImage out = lab;
  for (int y = 0; y < d.height; ++y) {
    const Blend& vy = by[y];
    for (int x = 0; x < d.width; ++x) {
      const Blend& vx = bx[x];
      const std::size_t i = std::size_t(y) * d.width + x;
      const int bin = luminance_bin(lab.L[i]);
      auto tile = [&](int r, int c) { return t.luts[std::size_t(r) * grid.cols + c][bin]; };
      const double top = (1.0 - vx.w) * tile(vy.lo, vx.lo) + vx.w * tile(vy.lo, vx.hi);
      const double bottom = (1.0 - vx.w) * tile(vy.hi, vx.lo) + vx.w * tile(vy.hi, vx.hi);
      const double level = (1.0 - vy.w) * top + vy.w * bottom;
      out.L[i] = std::clamp(level * 100.0 / (kClaheBins - 1), 0.0, 100.0);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Blur and sharpening

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be > 0");
  const int radius = int(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-double(i) * i / (2.0 * sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;
  return k;
}

namespace {

// Blurred copy of all channels, unrounded.
std::vector<double> blur_planes(const ImageBuffer& img, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int r = int(k.size() / 2);
  const int w = img.width(), h = img.height();
  std::vector<double> tmp(img.pixels.size()), out(img.pixels.size());

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) {
          const int sx = std::clamp(x + i, 0, w - 1);
          acc += k[i + r] * img.pixels[(std::size_t(y) * w + sx) * 3 + c];
        }
        tmp[(std::size_t(y) * w + x) * 3 + c] = acc;
      }
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) {
          const int sy = std::clamp(y + i, 0, h - 1);
          acc += k[i + r] * tmp[(std::size_t(sy) * w + x) * 3 + c];
        }
        out[(std::size_t(y) * w + x) * 3 + c] = acc;
      }
    }
  }
  return out;
}

}  // namespace

ImageBuffer gaussian_blur(const ImageBuffer& img, double sigma) {
  const auto planes = blur_planes(img, sigma);
  ImageBuffer out(img.dims);
  for (std::size_t i = 0; i < planes.size(); ++i) out.pixels[i] = to_byte(planes[i]);
  return out;
}

ImageBuffer unsharp_mask(const ImageBuffer& img, double sigma, double amount) {
  if (!(amount >= 0.0)) throw std::invalid_argument("unsharp_mask: amount must be >= 0");
  if (amount == 0.0) {
    gaussian_kernel(sigma);  // still validates sigma
    return img;
  }
  const auto blurred = blur_planes(img, sigma);
  ImageBuffer out(img.dims);
  for (std::size_t i = 0; i < blurred.size(); ++i) {
    const double v = img.pixels[i];
    out.pixels[i] = to_byte(v + amount * (v - blurred[i]));
  }
  return out;
}

ImageBuffer preprocess(const ImageBuffer& img, const EnhanceParams& params) {
  params.validate();
  const LabImage lab = srgb_to_lab(img);
  const LabImage enhanced = clahe_luminance(lab, params.clahe_clip_limit, params.clahe_tile_grid);
  return unsharp_mask(lab_to_srgb(enhanced), params.unsharp_sigma, params.unsharp_amount);
}

}  // namespace diffusam
