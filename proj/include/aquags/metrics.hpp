#pragma once

#include <optional>
#include <string>
#include <vector>

#include "aquags/geom.hpp"
#include "aquags/image.hpp"

namespace aquags {

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE), capped at 99 dB for identical inputs.
double psnr(const Image& a, const Image& b);

/// Same kernel as the training SSIM.
double ssim(const Image& a, const Image& b);

struct Lab {
  double L = 0, a = 0, b = 0;
};

/// sRGB in [0,1] -> linear -> XYZ (D65) -> CIELAB.
Lab srgb_to_lab(const Vec3& srgb);
double ciede2000(const Lab& x, const Lab& y);
double ciede2000(const Vec3& srgb_a, const Vec3& srgb_b);

struct AngularError {
  double mean_degrees = 0;
  int used = 0;
  int skipped = 0;  // pairs with a zero vector
};

AngularError mean_angular_error(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

struct ChartPatch {
  int chart = 0;
  int patch = 0;
  Vec3 position = Vec3::Zero();  // world-space patch center
  Vec3 reference = Vec3::Zero(); // linear RGB
};

struct ChartReport {
  std::vector<double> delta_e;   // per visible chart, mean over its patches
  std::vector<double> angular;   // per visible chart, mean degrees
  double delta_e_mean = 0, delta_e_std = 0;
  double angular_mean = 0, angular_std = 0;
  std::vector<int> excluded;     // charts with no visible patch
};

/// Samples a 5x5 per-channel median around every projected patch center of a
/// linear restored image and compares it to the reference. ΔE00 is computed on
/// the sRGB encodings, the angular error on linear RGB. When `depth` is given,
/// patches whose rendered depth disagrees by more than 5% count as occluded.
ChartReport chart_eval(const Image& restored, const std::vector<ChartPatch>& charts, const Camera& cam,
                       const Image* depth = nullptr);

void write_charts(const std::string& path, const std::vector<ChartPatch>& charts);
std::vector<ChartPatch> read_charts(const std::string& path);

}  // namespace aquags
