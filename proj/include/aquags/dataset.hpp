#pragma once

#include <optional>
#include <string>
#include <vector>

#include "aquags/gaussians.hpp"
#include "aquags/geom.hpp"
#include "aquags/image.hpp"
#include "aquags/metrics.hpp"
#include "aquags/waterfield.hpp"

namespace aquags {

/// Closed-form, spatially uniform water. Zero coefficients are allowed here
/// (unlike a WaterField, whose softplus outputs are strictly positive).
struct UniformWater {
  Vec3 ambient = Vec3::Zero();
  Vec3 beta_d = Vec3::Zero();
  Vec3 beta_b = Vec3::Zero();
};

struct SparsePoint {
  Vec3 position = Vec3::Zero();
  Vec3 color = Vec3::Zero();  // linear RGB
};

/// In-memory view of a dataset archive:
///   cameras.txt, points.txt, scene.txt, charts.txt (optional)
///   views/NNN_underwater.{png,f32}, views/NNN_clean.{png,f32}, views/NNN_disp.f32, views/NNN_masks.png
///   gt/cloud.ckpt-fragment, gt/water.ckpt-fragment, gt/water_uniform.txt
struct Dataset {
  std::vector<Camera> cameras;
  std::vector<Image> underwater;  // linear RGB
  std::vector<Image> clean;       // linear RGB, empty when absent
  std::vector<Image> disparity;   // single channel in [0, 1]
  std::vector<SparsePoint> points;
  std::vector<ChartPatch> charts;
  std::optional<GaussianCloud> gt_cloud;
  std::optional<WaterField> gt_water;
  std::optional<UniformWater> gt_uniform_water;
  double r_max = 1;

  size_t views() const { return cameras.size(); }
  // One in every eight views (index % 8 == 0) is held out.
  static bool is_test_view(size_t index) { return index % 8 == 0; }
  std::vector<size_t> train_views() const;
  std::vector<size_t> test_views() const;
};

std::string view_path(const std::string& root, size_t index, const std::string& suffix);

Dataset load_dataset(const std::string& root);

void write_points(const std::string& path, const std::vector<SparsePoint>& points);
std::vector<SparsePoint> read_points(const std::string& path);

/// Loads a linear RGB view from a float dump, or decodes an sRGB PNG.
Image load_linear_rgb(const std::string& path);
/// Loads a disparity map from a float dump or a grayscale PNG (8/16-bit), values in [0, 1].
Image load_disparity(const std::string& path);

}  // namespace aquags
