#include "diffusam/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>

// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>

namespace diffusam {

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool is_png(std::span<const std::uint8_t> b) {
  return b.size() >= 8 && png_sig_cmp(b.data(), 0, 8) == 0;
}

bool is_jpeg(std::span<const std::uint8_t> b) {
  return b.size() >= 3 && b[0] == 0xFF && b[1] == 0xD8 && b[2] == 0xFF;
}

struct PngImage {
  png_image img{};
  PngImage() { img.version = PNG_IMAGE_VERSION; }
  ~PngImage() { png_image_free(&img); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

std::vector<std::uint8_t> decode_png_format(std::span<const std::uint8_t> bytes,
                                            png_uint_32 format, Dims& dims) {
  PngImage p;
  if (!png_image_begin_read_from_memory(&p.img, bytes.data(), bytes.size()))
    throw ImageIoError(std::string("png: ") + p.img.message);
  p.img.format = format;
  if (p.img.width == 0 || p.img.height == 0) throw ImageIoError("png: empty image");
  dims = Dims(int(p.img.width), int(p.img.height));
  std::vector<std::uint8_t> out(PNG_IMAGE_SIZE(p.img));
  if (!png_image_finish_read(&p.img, nullptr, out.data(), 0, nullptr))
    throw ImageIoError(std::string("png: ") + p.img.message);
  return out;
}

std::vector<std::uint8_t> encode_png_format(const std::uint8_t* data, Dims d, png_uint_32 format) {
  PngImage p;
  p.img.width = png_uint_32(d.width);
  p.img.height = png_uint_32(d.height);
  p.img.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&p.img, nullptr, &size, 0, data, 0, nullptr))
    throw ImageIoError(std::string("png encode: ") + p.img.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&p.img, out.data(), &size, 0, data, 0, nullptr))
    throw ImageIoError(std::string("png encode: ") + p.img.message);
  out.resize(size);
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

}  // namespace

ImageBuffer decode_png(std::span<const std::uint8_t> bytes) {
  Dims d;
  auto px = decode_png_format(bytes, PNG_FORMAT_RGB, d);
  return ImageBuffer(d, std::move(px));
}

ImageBuffer decode_jpeg(std::span<const std::uint8_t> bytes) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  std::vector<std::uint8_t> px;
  int w = 0, h = 0;
  // No C++ objects with destructors may be created between setjmp and the
  // last libjpeg call.
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ImageIoError(std::string("jpeg: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  w = int(cinfo.output_width);
  h = int(cinfo.output_height);
  px.resize(std::size_t(w) * h * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = px.data() + std::size_t(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return ImageBuffer(Dims(w, h), std::move(px));
}

ImageBuffer load_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  try {
    if (is_png(bytes)) return decode_png(bytes);
    if (is_jpeg(bytes)) return decode_jpeg(bytes);
  } catch (const ImageIoError& e) {
    throw ImageIoError(path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ImageIoError(path.string() + ": " + e.what());
  }
  throw ImageIoError(path.string() + ": not a PNG or JPEG file");
}

std::vector<std::uint8_t> encode_png(const ImageBuffer& img) {
  return encode_png_format(img.pixels.data(), img.dims, PNG_FORMAT_RGB);
}

void save_png(const ImageBuffer& img, const std::filesystem::path& path) {
  const auto bytes = encode_png(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageIoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw ImageIoError("short write to " + path.string());
}

std::vector<std::uint8_t> encode_mask_png(const BinaryMask& m) {
  std::vector<std::uint8_t> gray(m.bits.size());
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = m.bits[i] ? 255 : 0;
  return encode_png_format(gray.data(), m.dims, PNG_FORMAT_GRAY);
}

BinaryMask decode_mask_png(std::span<const std::uint8_t> bytes, double score) {
  Dims d;
  auto gray = decode_png_format(bytes, PNG_FORMAT_GRAY, d);
  for (auto& v : gray) v = v ? 1 : 0;
  return BinaryMask(d, std::move(gray), score);
}

}  // namespace diffusam
