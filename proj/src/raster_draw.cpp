#include "diffusam/raster_draw.hpp"

#include <algorithm>

namespace diffusam {

void fill_rect(ImageBuffer& img, const BBox& b, Rgb color) {
  auto c = clamp_bbox(b, img.dims);
  if (!c) return;
  for (int y = c->y_min(); y < c->y_max(); ++y)
    for (int x = c->x_min(); x < c->x_max(); ++x) std::copy(color.begin(), color.end(), img.at(x, y));
}

void draw_rect_outline(ImageBuffer& img, const BBox& b, int stroke, Rgb color) {
  stroke = std::max(stroke, 1);
  const int sx = std::min(stroke, b.width());
  const int sy = std::min(stroke, b.height());
  fill_rect(img, BBox(b.x_min(), b.y_min(), b.x_max(), b.y_min() + sy), color);
  fill_rect(img, BBox(b.x_min(), b.y_max() - sy, b.x_max(), b.y_max()), color);
  fill_rect(img, BBox(b.x_min(), b.y_min(), b.x_min() + sx, b.y_max()), color);
  fill_rect(img, BBox(b.x_max() - sx, b.y_min(), b.x_max(), b.y_max()), color);
}

}  // namespace diffusam
