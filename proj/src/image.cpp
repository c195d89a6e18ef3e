#include "aquags/image.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "aquags/errors.hpp"

namespace aquags {

double srgb_to_linear(double v) {
  return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

double linear_to_srgb(double v) {
  return v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

Image clamp01(const Image& img) {
  Image out = img;
  for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

Image to_srgb(const Image& linear) {
  Image out = clamp01(linear);
  for (double& v : out.data) v = linear_to_srgb(v);
  return out;
}

Image to_linear(const Image& srgb) {
  Image out = srgb;
  for (double& v : out.data) v = srgb_to_linear(v);
  return out;
}

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace

void write_float_dump(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path);
  os.write("AQGS", 4);
  put_u32(os, static_cast<uint32_t>(img.height));
  put_u32(os, static_cast<uint32_t>(img.width));
  put_u32(os, static_cast<uint32_t>(img.channels));
  for (double v : img.data) {
    float f = static_cast<float>(v);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(os, bits);
  }
  if (!os) throw IoError("short write to " + path);
}

Image read_float_dump(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "AQGS", 4) != 0) throw IoError("bad float dump magic in " + path);
  const uint32_t h = get_u32(is);
  const uint32_t w = get_u32(is);
  const uint32_t c = get_u32(is);
  if (!is || h == 0 || w == 0 || c == 0 || h > 65536 || w > 65536 || c > 64)
    throw IoError("bad float dump header in " + path);
  Image img(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c));
  for (double& v : img.data) {
    uint32_t bits = get_u32(is);
    float f;
    std::memcpy(&f, &bits, 4);
    v = f;
  }
  if (!is) throw IoError("truncated float dump " + path);
  return img;
}

void write_png8(const std::string& path, const Image& display) {
  if (display.channels != 1 && display.channels != 3) throw ContractViolation("png needs 1 or 3 channels");
  std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot write " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng failed writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, display.width, display.height, 8,
               display.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  // Fixed settings keep output byte-identical run to run.
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<size_t>(display.width) * display.channels);
  for (int r = 0; r < display.height; ++r) {
    for (int c = 0; c < display.width; ++c)
      for (int ch = 0; ch < display.channels; ++ch) {
        const double v = std::clamp(display.at(r, c, ch), 0.0, 1.0);
        row[static_cast<size_t>(c) * display.channels + ch] = static_cast<png_byte>(std::lround(v * 255.0));
      }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_png_linear(const std::string& path, const Image& linear) { write_png8(path, to_srgb(linear)); }

Image read_png(const std::string& path) {
  std::unique_ptr<FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng failed reading " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (depth == 16) png_set_swap(png);  // native little-endian u16
  png_read_update_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  const int in_ch = png_get_channels(png, info);
  const int bd = png_get_bit_depth(png, info);
  const int out_ch = in_ch >= 3 ? 3 : 1;
  std::vector<png_byte> row(png_get_rowbytes(png, info));
  Image img(h, w, out_ch);
  const double scale = bd == 16 ? 65535.0 : 255.0;
  for (int r = 0; r < h; ++r) {
    png_read_row(png, row.data(), nullptr);
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < out_ch; ++ch) {
        const size_t k = static_cast<size_t>(c) * in_ch + ch;
        double v;
        if (bd == 16) {
          uint16_t u;
          std::memcpy(&u, &row[2 * k], 2);
          v = u;
        } else {
          v = row[k];
        }
        img.at(r, c, ch) = v / scale;
      }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

Image colormap(const Image& scalar, double lo, double hi) {
  // Polynomial fit of the turbo colormap.
  static constexpr std::array<double, 6> kr = {0.13572138, 4.61539260, -42.66032258, 132.13108234, -152.94239396, 59.28637943};
  static constexpr std::array<double, 6> kg = {0.09140261, 2.19418839, 4.84296658, -14.18503333, 4.27729857, 2.82956604};
  static constexpr std::array<double, 6> kb = {0.10667330, 12.64194608, -60.58204836, 110.36276771, -89.90310912, 27.34824973};
  auto poly = [](const std::array<double, 6>& k, double x) {
    return k[0] + x * (k[1] + x * (k[2] + x * (k[3] + x * (k[4] + x * k[5]))));
  };
  Image out(scalar.height, scalar.width, 3);
  const double span = hi > lo ? hi - lo : 1.0;
  for (int r = 0; r < scalar.height; ++r)
    for (int c = 0; c < scalar.width; ++c) {
      const double x = std::clamp((scalar.at(r, c) - lo) / span, 0.0, 1.0);
      out.at(r, c, 0) = std::clamp(poly(kr, x), 0.0, 1.0);
      out.at(r, c, 1) = std::clamp(poly(kg, x), 0.0, 1.0);
      out.at(r, c, 2) = std::clamp(poly(kb, x), 0.0, 1.0);
    }
  return out;
}

}  // namespace aquags
