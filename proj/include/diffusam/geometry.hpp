#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace diffusam {

/// Image extent in pixels. Both sides are strictly positive.
struct Dims {
  int width = 0;
  int height = 0;

  Dims() = default;
  Dims(int w, int h);

  std::int64_t area() const { return std::int64_t(width) * height; }
  bool operator==(const Dims&) const = default;
};

/// Axis-aligned integer pixel box, half-open: pixel (x, y) is inside iff
/// x_min <= x < x_max and y_min <= y < y_max. An empty box cannot be
/// constructed; "no box" is spelled std::optional<BBox>.
class BBox {
 public:
  /// Throws std::invalid_argument unless x_min < x_max and y_min < y_max.
  BBox(int x_min, int y_min, int x_max, int y_max);

  /// Non-throwing factory; nullopt for degenerate extents.
  static std::optional<BBox> make(int x_min, int y_min, int x_max, int y_max);

  int x_min() const { return x_min_; }
  int y_min() const { return y_min_; }
  int x_max() const { return x_max_; }
  int y_max() const { return y_max_; }
  int width() const { return x_max_ - x_min_; }
  int height() const { return y_max_ - y_min_; }
  std::int64_t area() const { return std::int64_t(width()) * height(); }

  bool contains(int x, int y) const {
    return x >= x_min_ && x < x_max_ && y >= y_min_ && y < y_max_;
  }
  bool contains(const BBox& other) const;
  bool within(Dims d) const;

  bool operator==(const BBox&) const = default;

 private:
  int x_min_, y_min_, x_max_, y_max_;
};

using MaybeBox = std::optional<BBox>;

/// Per-pixel foreground raster plus the producer's confidence.
struct BinaryMask {
  Dims dims;
  std::vector<std::uint8_t> bits;  // row-major, 0 or 1
  double score = 1.0;

  BinaryMask() = default;
  /// All-background mask. Throws on score outside [0,1].
  BinaryMask(Dims d, double score = 1.0);
  BinaryMask(Dims d, std::vector<std::uint8_t> bits, double score);

  bool at(int x, int y) const { return bits[std::size_t(y) * dims.width + x] != 0; }
  void set(int x, int y, bool on = true) { bits[std::size_t(y) * dims.width + x] = on ? 1 : 0; }
  std::int64_t foreground_count() const;
};

/// Intersection of two boxes, nullopt when they do not overlap.
MaybeBox intersect(const BBox& a, const BBox& b);
std::int64_t intersection_area(const BBox& a, const BBox& b);

/// Intersection over union, in [0,1]. 0 when disjoint.
double iou(const BBox& a, const BBox& b);

/// Fraction of `inner` covered by `outer`.
double containment(const BBox& inner, const BBox& outer);

/// Tightest box around the foreground; nullopt for an empty mask.
MaybeBox mask_to_bbox(const BinaryMask& m);

/// 100 * area(b) / area(d). `b` is expected to lie inside `d`.
double area_ratio_percent(const BBox& b, Dims d);

struct Point {
  int x = 0;
  int y = 0;
};

/// Translate a crop-space box back into the original image frame.
BBox remap_to_original(const BBox& b_in_crop, Point crop_origin);

MaybeBox clamp_bbox(const BBox& b, Dims d);

/// Grows each side by round(margin_fraction * side length) and clamps to `d`.
/// `b` must overlap `d`.
BBox expand_bbox(const BBox& b, double margin_fraction, Dims d);

}  // namespace diffusam
