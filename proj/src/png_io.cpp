#include "pplus/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

#include "pplus/fsutil.hpp"

namespace pplus {

namespace {

void append_bytes(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(data), n);
}

void flush_noop(png_structp) {}

struct Reader {
  const std::string* bytes;
  size_t off;
};

void read_bytes(png_structp png, png_bytep data, png_size_t n) {
  auto* r = static_cast<Reader*>(png_get_io_ptr(png));
  if (r->off + n > r->bytes->size()) {
    png_error(png, "unexpected end of PNG stream");
  }
  std::memcpy(data, r->bytes->data() + r->off, n);
  r->off += n;
}

}  // namespace

std::string encode_png(const Tensor& img) {
  if (img.rank() != 3 || img.dim(0) != 3) {
    throw std::invalid_argument("PNG writer expects a (3,h,w) tensor, got " + shape_str(img.shape()));
  }
  const int64_t h = img.dim(1), w = img.dim(2);
  std::vector<unsigned char> rgb(static_cast<size_t>(h * w * 3));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      for (int64_t c = 0; c < 3; ++c) {
        double v = img.at((c * h + y) * w + x);
        v = (std::min(1.0, std::max(-1.0, v)) + 1.0) * 0.5 * 255.0;
        rgb[static_cast<size_t>((y * w + x) * 3 + c)] = static_cast<unsigned char>(std::lround(v));
      }
    }
  }

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  std::string out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng write error");
  }
  png_set_write_fn(png, &out, append_bytes, flush_noop);
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> row_ptrs(static_cast<size_t>(h));
  for (int64_t y = 0; y < h; ++y) row_ptrs[static_cast<size_t>(y)] = rgb.data() + y * w * 3;
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const std::string& path, const Tensor& img) { atomic_write(path, encode_png(img)); }

Tensor read_png(const std::string& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8)) {
    throw std::runtime_error("not a PNG file: " + path);
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng read error on " + path);
  }
  Reader reader{&bytes, 0};
  png_set_read_fn(png, &reader, read_bytes);
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  if (png_get_channels(png, info) != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("unexpected channel count in " + path);
  }
  std::vector<unsigned char> rgb(static_cast<size_t>(w) * h * 3);
  std::vector<png_bytep> row_ptrs(h);
  for (png_uint_32 y = 0; y < h; ++y) row_ptrs[y] = rgb.data() + static_cast<size_t>(y) * w * 3;
  png_read_image(png, row_ptrs.data());
  png_destroy_read_struct(&png, &info, nullptr);

  std::vector<double> vals(static_cast<size_t>(3) * h * w);
  for (png_uint_32 y = 0; y < h; ++y) {
    for (png_uint_32 x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        const double u = rgb[(static_cast<size_t>(y) * w + x) * 3 + static_cast<size_t>(c)];
        vals[(static_cast<size_t>(c) * h + y) * w + x] = u / 255.0 * 2.0 - 1.0;
      }
    }
  }
  return Tensor::constant({3, static_cast<int64_t>(h), static_cast<int64_t>(w)}, std::move(vals));
}

}  // namespace pplus
