#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "aquags/dataset.hpp"
#include "aquags/losses.hpp"
#include "aquags/rasterizer.hpp"

namespace aquags {

enum class WaterKind { None, Uniform, Varying };

WaterKind parse_water_kind(const std::string& name);
std::string to_string(WaterKind kind);

struct SceneRecipe {
  std::string family = "textured-wall";  // textured-wall | terraced-terrain | color-chart-field
  WaterKind water = WaterKind::Uniform;
  int views = 16;
  int width = 160;
  int height = 128;
  uint64_t seed = 1;
  // Cameras look at the scene center from distances in [min, max], spread
  // over +-azimuth_deg and +-elevation_deg.
  double distance_min = 2.6;
  double distance_max = 4.4;
  double azimuth_deg = 30.0;
  double elevation_deg = 12.0;
  double focal = 140.0;
  int terraces = 3;  // terraced-terrain only
  // Ground-truth water for the uniform kind (also the mean level of the varying kind).
  UniformWater water_params{Vec3(0.05, 0.32, 0.42), Vec3(0.42, 0.17, 0.14), Vec3(0.34, 0.24, 0.21)};
  double tau_disparity = 0.4;
  double tau_edge = 0.05;
};

struct SyntheticScene {
  SceneRecipe recipe;
  GaussianCloud gt_cloud;
  WaterField gt_water;      // meaningful unless the kind is None
  UniformWater gt_uniform;  // meaningful for None and Uniform
  std::vector<Camera> cameras;
  std::vector<Image> underwater, clean, depth, distance, disparity;
  std::vector<PseudoDepth> masks;
  std::vector<SparsePoint> points;
  std::vector<ChartPatch> charts;
  double r_max = 1;
};

/// Scene families as Gaussian clouds; exposed for tests.
GaussianCloud build_scene_cloud(const SceneRecipe& recipe, std::vector<ChartPatch>* charts = nullptr);
std::vector<Camera> build_cameras(const SceneRecipe& recipe, double r_max);
/// Direction-varying water sampled from the model class around `mean`.
WaterField sample_water_field(const UniformWater& mean, uint64_t seed);

/// Per-view water parameter images for the scene's ground-truth medium.
void gt_water_images(const SyntheticScene& scene, const Camera& cam, Image& A, Image& beta_d, Image& beta_b);

/// min-max normalized 1 / (depth + 1); a constant map becomes all ones.
Image disparity_from_depth(const Image& depth);

/// Builds the complete scene in memory. Throws ConfigError for unknown families.
SyntheticScene synthesize(const SceneRecipe& recipe);

/// Writes the dataset archive (see Dataset) to out_dir.
void write_scene(const SyntheticScene& scene, const std::string& out_dir);

SyntheticScene generate(const SceneRecipe& recipe, const std::string& out_dir);

/// Writes views/NNN_disp.f32 for every view; returns the paths.
std::vector<std::string> export_pseudo_depth(const SyntheticScene& scene, const std::string& out_dir);

}  // namespace aquags
