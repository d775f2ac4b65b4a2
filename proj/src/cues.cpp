#include "diffusam/cues.hpp"

#include <algorithm>
#include <stdexcept>

namespace diffusam {

void RedCueParams::validate() const {
  auto in_range = [](int v) { return v >= 0 && v <= 255; };
  if (!in_range(r_min) || !in_range(g_max) || !in_range(b_max))
    throw std::invalid_argument("red cue thresholds must lie in [0,255]");
  if (min_component_area < 1) throw std::invalid_argument("min_component_area must be >= 1");
  if (!(nesting_containment >= 0.0 && nesting_containment <= 1.0))
    throw std::invalid_argument("nesting_containment must lie in [0,1]");
}

BinaryMask red_pixel_mask(const ImageBuffer& img, const RedCueParams& p) {
  BinaryMask m(img.dims, 1.0);
  const std::size_t n = std::size_t(img.dims.area());
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* px = img.pixels.data() + i * 3;
    m.bits[i] = (px[0] >= p.r_min && px[1] <= p.g_max && px[2] <= p.b_max) ? 1 : 0;
  }
  return m;
}

std::vector<Component> connected_components(const BinaryMask& m) {
  const int w = m.dims.width, h = m.dims.height;
  std::vector<std::uint8_t> seen(m.bits.size(), 0);
  std::vector<Component> out;
  std::vector<Point> stack;

  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t idx = std::size_t(y) * w + x;
      if (!m.bits[idx] || seen[idx]) continue;
      seen[idx] = 1;
      stack.assign(1, Point{x, y});
      std::vector<Point> pixels;
      int x0 = x, y0 = y, x1 = x, y1 = y;
      while (!stack.empty()) {
        const Point p = stack.back();
        stack.pop_back();
        pixels.push_back(p);
        x0 = std::min(x0, p.x);
        x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y);
        y1 = std::max(y1, p.y);
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = p.x + dx, ny = p.y + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            const std::size_t n = std::size_t(ny) * w + nx;
            if (m.bits[n] && !seen[n]) {
              seen[n] = 1;
              stack.push_back({nx, ny});
            }
          }
        }
      }
      std::sort(pixels.begin(), pixels.end(),
                [](Point a, Point b) { return a.y != b.y ? a.y < b.y : a.x < b.x; });
      out.push_back(Component{std::move(pixels), BBox(x0, y0, x1 + 1, y1 + 1)});
    }
  }

  std::stable_sort(out.begin(), out.end(), [](const Component& a, const Component& b) {
    if (a.pixel_count() != b.pixel_count()) return a.pixel_count() > b.pixel_count();
    if (a.box.y_min() != b.box.y_min()) return a.box.y_min() < b.box.y_min();
    return a.box.x_min() < b.box.x_min();
  });
  return out;
}

CueSet extract_cues(const ImageBuffer& edited, const RedCueParams& p) {
  p.validate();
  const auto comps = connected_components(red_pixel_mask(edited, p));

  std::vector<BBox> kept;
  for (const auto& c : comps) {
    if (c.pixel_count() < p.min_component_area) continue;
    kept.push_back(c.box);
  }

  // Drop boxes nested inside a larger surviving box (double strokes, labels).
  CueSet cues;
  for (std::size_t i = 0; i < kept.size(); ++i) {
    bool nested = false;
    for (std::size_t j = 0; j < kept.size() && !nested; ++j) {
      if (i == j) continue;
      const bool j_is_outer = kept[j].area() > kept[i].area() ||
                              (kept[j].area() == kept[i].area() && j < i);
      nested = j_is_outer && containment(kept[i], kept[j]) >= p.nesting_containment;
    }
    if (!nested) cues.boxes.push_back(kept[i]);
  }
  return cues;
}

}  // namespace diffusam
