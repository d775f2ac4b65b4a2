#pragma once

#include <array>
#include <cstdint>

#include "diffusam/geometry.hpp"
#include "diffusam/imaging.hpp"

namespace diffusam {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kRed{255, 0, 0};
inline constexpr Rgb kGreen{0, 255, 0};
inline constexpr Rgb kBlue{0, 0, 255};

/// Paints `b` (clipped to the image) with a solid color.
void fill_rect(ImageBuffer& img, const BBox& b, Rgb color);

/// Rectangle outline whose strokes lie inside `b`, so the painted pixels'
/// tight bounding box is exactly `b` (after clipping).
void draw_rect_outline(ImageBuffer& img, const BBox& b, int stroke, Rgb color);

}  // namespace diffusam
