#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "diffusam/geometry.hpp"
#include "diffusam/imaging.hpp"

namespace diffusam {

/// Raised for unreadable, corrupt or unsupported raster files.
class ImageIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reads PNG or JPEG (sniffed from the file signature) into 8-bit RGB.
/// Alpha is composited away by dropping it; grayscale is replicated.
ImageBuffer load_image(const std::filesystem::path& path);

void save_png(const ImageBuffer& img, const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const ImageBuffer& img);
ImageBuffer decode_png(std::span<const std::uint8_t> bytes);
ImageBuffer decode_jpeg(std::span<const std::uint8_t> bytes);

/// Single-channel PNG, foreground 255, background 0.
std::vector<std::uint8_t> encode_mask_png(const BinaryMask& m);
/// Any nonzero gray level counts as foreground.
BinaryMask decode_mask_png(std::span<const std::uint8_t> bytes, double score);

}  // namespace diffusam
