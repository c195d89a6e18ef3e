#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace aquags {

/// Dense row-major H x W x C buffer of doubles. Channel index is fastest.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0)
      : height(h), width(w), channels(c), data(static_cast<size_t>(h) * w * c, fill) {}

  size_t index(int row, int col, int ch = 0) const {
    return (static_cast<size_t>(row) * width + col) * channels + ch;
  }
  double& at(int row, int col, int ch = 0) { return data[index(row, col, ch)]; }
  double at(int row, int col, int ch = 0) const { return data[index(row, col, ch)]; }

  size_t pixels() const { return static_cast<size_t>(height) * width; }
  size_t size() const { return data.size(); }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  bool empty() const { return data.empty(); }
};

// sRGB transfer curve (IEC 61966-2-1), scalar.
double srgb_to_linear(double v);
double linear_to_srgb(double v);

Image clamp01(const Image& img);
Image to_srgb(const Image& linear);  // clamps first
Image to_linear(const Image& srgb);

// Float dump: "AQGS", u32 H, u32 W, u32 C (little-endian), then H*W*C f32.
void write_float_dump(const std::string& path, const Image& img);
Image read_float_dump(const std::string& path);

// 8-bit PNG of an image whose values are already display-encoded in [0,1].
void write_png8(const std::string& path, const Image& display);
// Linear image -> clamp -> sRGB -> 8-bit PNG.
void write_png_linear(const std::string& path, const Image& linear);
// Returns display values in [0,1]; 8- or 16-bit, gray/RGB/RGBA (alpha dropped).
Image read_png(const std::string& path);

/// Maps a scalar field to RGB with a fixed turbo-like polynomial colormap.
Image colormap(const Image& scalar, double lo, double hi);

}  // namespace aquags
