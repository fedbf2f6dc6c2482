#include "efficientad/image_io.hpp"

#include <png.h>
#include <jpeglib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <vector>

#include "efficientad/error.hpp"
#include "efficientad/ops.hpp"
#include "efficientad/preprocess.hpp"

namespace ead {
namespace {

std::string lower_extension(const std::string& path) {
  std::string ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

bool is_jpeg(const std::string& path) {
  const std::string ext = lower_extension(path);
  return ext == ".jpg" || ext == ".jpeg";
}

Tensor bytes_to_tensor(const std::vector<std::uint8_t>& px, std::int64_t h, std::int64_t w,
                       int channels) {
  Tensor out({3, h, w});
  const std::int64_t plane = h * w;
  for (std::int64_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      const int src = channels == 1 ? 0 : c;
      out[c * plane + i] = static_cast<float>(px[static_cast<std::size_t>(i * channels + src)]) / 255.0f;
    }
  }
  return out;
}

Tensor read_png(const std::string& path, png_uint_32 format, int channels) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("cannot decode PNG " + path + ": " + image.message);
  }
  image.format = format;
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, px.data(), 0, nullptr)) {
    png_image_free(&image);
    throw IoError("cannot decode PNG " + path + ": " + image.message);
  }
  if (image.width == 0 || image.height == 0) throw IoError("zero-size image " + path);
  return bytes_to_tensor(px, image.height, image.width, channels);
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

Tensor read_jpeg(const std::string& path, bool header_only, std::int64_t* h_out,
                 std::int64_t* w_out) {
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!file) throw IoError("cannot open " + path);
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  std::vector<std::uint8_t> px;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError("cannot decode JPEG " + path + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  if (header_only) {
    *h_out = cinfo.image_height;
    *w_out = cinfo.image_width;
    jpeg_destroy_decompress(&cinfo);
    return Tensor();
  }
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const std::int64_t w = cinfo.output_width, h = cinfo.output_height;
  px.resize(static_cast<std::size_t>(w * h * 3));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = px.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  if (w == 0 || h == 0) throw IoError("zero-size image " + path);
  return bytes_to_tensor(px, h, w, 3);
}

void write_png(const std::string& path, const std::vector<std::uint8_t>& bytes,
               std::int64_t h, std::int64_t w, png_uint_32 format) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path + ": " + image.message);
  }
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

bool is_image_file(const std::string& path) {
  const std::string ext = lower_extension(path);
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

Tensor read_image_rgb(const std::string& path) {
  if (!std::filesystem::is_regular_file(path)) throw IoError("no such image " + path);
  if (is_jpeg(path)) return read_jpeg(path, false, nullptr, nullptr);
  return read_png(path, PNG_FORMAT_RGB, 3);
}

std::pair<std::int64_t, std::int64_t> read_image_size(const std::string& path) {
  if (is_jpeg(path)) {
    std::int64_t h = 0, w = 0;
    read_jpeg(path, true, &h, &w);
    return {h, w};
  }
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw IoError("cannot decode PNG " + path + ": " + image.message);
  }
  const std::pair<std::int64_t, std::int64_t> size{image.height, image.width};
  png_image_free(&image);
  return size;
}

Tensor load_image_rgb(const std::string& path, std::int64_t size) {
  return bilinear_resize(read_image_rgb(path), size, size);
}

Tensor load_image(const std::string& path, std::int64_t size) {
  return standardize(load_image_rgb(path, size));
}

Tensor load_mask(const std::string& path) {
  Tensor rgb = read_png(path, PNG_FORMAT_GRAY, 1);
  Tensor mask({1, rgb.height(), rgb.width()});
  auto src = rgb.channel(0);
  for (std::int64_t i = 0; i < mask.size(); ++i) {
    mask[i] = src[static_cast<std::size_t>(i)] > 0.0f ? 1.0f : 0.0f;
  }
  return mask;
}

void write_png_rgb(const std::string& path, const Tensor& rgb) {
  require_chw(rgb, "write_png_rgb");
  if (rgb.channels() != 3) throw ShapeError("write_png_rgb: expected 3 channels");
  const std::int64_t plane = rgb.height() * rgb.width();
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(plane * 3));
  for (std::int64_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) bytes[static_cast<std::size_t>(i * 3 + c)] = to_byte(rgb[c * plane + i]);
  }
  write_png(path, bytes, rgb.height(), rgb.width(), PNG_FORMAT_RGB);
}

void write_png_gray(const std::string& path, const Tensor& gray) {
  require_chw(gray, "write_png_gray");
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(gray.height() * gray.width()));
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(gray[static_cast<std::int64_t>(i)]);
  write_png(path, bytes, gray.height(), gray.width(), PNG_FORMAT_GRAY);
}

MapEncoding write_png_map16(const std::string& path, const Tensor& map) {
  require_chw(map, "write_png_map16");
  const auto [lo, hi] = std::minmax_element(map.storage().begin(), map.storage().end());
  MapEncoding enc;
  enc.offset = *lo;
  enc.scale = *hi > *lo ? 65535.0 / (static_cast<double>(*hi) - *lo) : 0.0;

  const png_uint_32 w = static_cast<png_uint_32>(map.width());
  const png_uint_32 h = static_cast<png_uint_32>(map.height());
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!file) throw IoError("cannot open " + path + " for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 2);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("cannot write PNG " + path);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, w, h, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (png_uint_32 y = 0; y < h; ++y) {
    for (png_uint_32 x = 0; x < w; ++x) {
      const double v = (map[static_cast<std::int64_t>(y) * w + x] - enc.offset) * enc.scale;
      const auto code = static_cast<std::uint16_t>(std::clamp(std::lround(v), 0L, 65535L));
      row[2 * x] = static_cast<std::uint8_t>(code >> 8);  // PNG stores 16-bit big-endian
      row[2 * x + 1] = static_cast<std::uint8_t>(code & 0xff);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);

  std::ofstream side(path + ".txt");
  if (!side) throw IoError("cannot write sidecar for " + path);
  side.precision(9);
  side << "# value = code / scale + offset\n"
       << "offset " << enc.offset << "\n"
       << "scale " << enc.scale << "\n"
       << "min " << *lo << "\nmax " << *hi << "\n";
  return enc;
}

}  // namespace ead
