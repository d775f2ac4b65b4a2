#pragma once

#include <cstdint>
#include <vector>

#include "diffusam/geometry.hpp"
#include "diffusam/imaging.hpp"

namespace diffusam {

/// Thresholds for recognizing the editor's red highlight strokes.
struct RedCueParams {
  int r_min = 200;
  int g_max = 80;
  int b_max = 80;
  int min_component_area = 25;
  double nesting_containment = 0.9;

  void validate() const;
};

enum class CueSource { diffusion_edit };

struct CueSet {
  std::vector<BBox> boxes;
  CueSource source = CueSource::diffusion_edit;
};

/// One 8-connected foreground region.
struct Component {
  std::vector<Point> pixels;
  BBox box;

  std::int64_t pixel_count() const { return std::int64_t(pixels.size()); }
};

/// Foreground iff R >= r_min && G <= g_max && B <= b_max (inclusive bounds).
BinaryMask red_pixel_mask(const ImageBuffer& img, const RedCueParams& p);

/// 8-connected components, largest first; ties broken by (y_min, x_min).
std::vector<Component> connected_components(const BinaryMask& m);

/// Decodes red highlight rectangles drawn by the image editor into boxes,
/// largest stroke first. Boxes mostly inside a larger box are dropped.
CueSet extract_cues(const ImageBuffer& edited, const RedCueParams& p);

}  // namespace diffusam
