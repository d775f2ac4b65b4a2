#include "diffusam/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace diffusam {

Dims::Dims(int w, int h) : width(w), height(h) {
  if (w <= 0 || h <= 0)
    throw std::invalid_argument("Dims: width and height must be positive, got " +
                                std::to_string(w) + "x" + std::to_string(h));
}

BBox::BBox(int x_min, int y_min, int x_max, int y_max)
    : x_min_(x_min), y_min_(y_min), x_max_(x_max), y_max_(y_max) {
  if (x_min >= x_max || y_min >= y_max)
    throw std::invalid_argument("BBox: degenerate box (" + std::to_string(x_min) + "," +
                                std::to_string(y_min) + "," + std::to_string(x_max) + "," +
                                std::to_string(y_max) + ")");
}

std::optional<BBox> BBox::make(int x_min, int y_min, int x_max, int y_max) {
  if (x_min >= x_max || y_min >= y_max) return std::nullopt;
  return BBox(x_min, y_min, x_max, y_max);
}

bool BBox::contains(const BBox& o) const {
  return o.x_min_ >= x_min_ && o.y_min_ >= y_min_ && o.x_max_ <= x_max_ && o.y_max_ <= y_max_;
}

bool BBox::within(Dims d) const {
  return x_min_ >= 0 && y_min_ >= 0 && x_max_ <= d.width && y_max_ <= d.height;
}

BinaryMask::BinaryMask(Dims d, double s) : BinaryMask(d, std::vector<std::uint8_t>(d.area(), 0), s) {}

BinaryMask::BinaryMask(Dims d, std::vector<std::uint8_t> b, double s)
    : dims(d), bits(std::move(b)), score(s) {
  if (std::int64_t(bits.size()) != d.area())
    throw std::invalid_argument("BinaryMask: bit count does not match dimensions");
  if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("BinaryMask: score outside [0,1]");
}

std::int64_t BinaryMask::foreground_count() const {
  return std::count_if(bits.begin(), bits.end(), [](std::uint8_t v) { return v != 0; });
}

MaybeBox intersect(const BBox& a, const BBox& b) {
  return BBox::make(std::max(a.x_min(), b.x_min()), std::max(a.y_min(), b.y_min()),
                    std::min(a.x_max(), b.x_max()), std::min(a.y_max(), b.y_max()));
}

std::int64_t intersection_area(const BBox& a, const BBox& b) {
  auto i = intersect(a, b);
  return i ? i->area() : 0;
}

double iou(const BBox& a, const BBox& b) {
  const std::int64_t inter = intersection_area(a, b);
  const std::int64_t uni = a.area() + b.area() - inter;
  return double(inter) / double(uni);
}

double containment(const BBox& inner, const BBox& outer) {
  return double(intersection_area(inner, outer)) / double(inner.area());
}

MaybeBox mask_to_bbox(const BinaryMask& m) {
  int x0 = m.dims.width, y0 = m.dims.height, x1 = -1, y1 = -1;
  for (int y = 0; y < m.dims.height; ++y) {
    const std::uint8_t* row = m.bits.data() + std::size_t(y) * m.dims.width;
    for (int x = 0; x < m.dims.width; ++x) {
      if (!row[x]) continue;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (x1 < 0) return std::nullopt;
  return BBox(x0, y0, x1 + 1, y1 + 1);
}

double area_ratio_percent(const BBox& b, Dims d) {
  return 100.0 * double(b.area()) / double(d.area());
}

BBox remap_to_original(const BBox& b, Point o) {
  return BBox(b.x_min() + o.x, b.y_min() + o.y, b.x_max() + o.x, b.y_max() + o.y);
}

MaybeBox clamp_bbox(const BBox& b, Dims d) {
  return intersect(b, BBox(0, 0, d.width, d.height));
}

BBox expand_bbox(const BBox& b, double margin_fraction, Dims d) {
  if (margin_fraction < 0.0) throw std::invalid_argument("expand_bbox: negative margin");
  const int gx = int(std::lround(margin_fraction * b.width()));
  const int gy = int(std::lround(margin_fraction * b.height()));
  auto grown = BBox(b.x_min() - gx, b.y_min() - gy, b.x_max() + gx, b.y_max() + gy);
  auto clamped = clamp_bbox(grown, d);
  if (!clamped) throw std::invalid_argument("expand_bbox: box lies outside the image");
  return *clamped;
}

}  // namespace diffusam
