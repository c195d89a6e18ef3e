#include "aquags/scenegen.hpp"

#include <Eigen/Geometry>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>

#include "aquags/checkpoint.hpp"
#include "aquags/compositor.hpp"
#include "aquags/errors.hpp"

namespace aquags {

namespace fs = std::filesystem;

WaterKind parse_water_kind(const std::string& name) {
  if (name == "none") return WaterKind::None;
  if (name == "uniform") return WaterKind::Uniform;
  if (name == "varying") return WaterKind::Varying;
  throw ConfigError("unknown water kind '" + name + "' (none | uniform | varying)");
}

std::string to_string(WaterKind kind) {
  switch (kind) {
    case WaterKind::None: return "none";
    case WaterKind::Uniform: return "uniform";
    case WaterKind::Varying: return "varying";
  }
  return "?";
}

namespace {

constexpr double kSolidLogit = 4.6;  // opacity ~0.99

// Quaternion (w, x, y, z) rotating +z onto `normal`.
Vec4 facing(const Vec3& normal) {
  const Eigen::Quaterniond q = Eigen::Quaterniond::FromTwoVectors(Vec3::UnitZ(), normal.normalized());
  return Vec4(q.w(), q.x(), q.y(), q.z());
}

double hash01(int a, int b, int salt) {
  uint64_t h = 1469598103934665603ull ^ static_cast<uint64_t>(salt);
  for (int v : {a, b}) {
    h ^= static_cast<uint64_t>(static_cast<uint32_t>(v));
    h *= 1099511628211ull;
    h ^= h >> 29;
  }
  return static_cast<double>(h % 1000003) / 1000003.0;
}

// Flat panel of Gaussians on the plane z = z0, spanning [x0,x1] x [y0,y1].
template <typename ColorFn>
void add_panel(GaussianCloud& cloud, double x0, double x1, double y0, double y1, double z0, double spacing,
               ColorFn&& color) {
  const int nx = std::max(1, static_cast<int>(std::round((x1 - x0) / spacing)));
  const int ny = std::max(1, static_cast<int>(std::round((y1 - y0) / spacing)));
  const double sx = (x1 - x0) / nx, sy = (y1 - y0) / ny;
  const Vec3 log_scale(std::log(0.6 * sx), std::log(0.6 * sy), std::log(0.004));
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const double x = x0 + (i + 0.5) * sx, y = y0 + (j + 0.5) * sy;
      cloud.push_back(Vec3(x, y, z0), Vec4(1, 0, 0, 0), log_scale, kSolidLogit, rgb_to_sh0(color(x, y)));
    }
}

// Ellipsoid surface from a Fibonacci lattice, Gaussians flattened along the normal.
template <typename ColorFn>
void add_rock(GaussianCloud& cloud, const Vec3& center, const Vec3& radii, double spacing, ColorFn&& color) {
  const double area = 4.0 * std::numbers::pi * std::pow((radii.x() * radii.y() + radii.y() * radii.z() +
                                                         radii.x() * radii.z()) / 3.0, 1.0);
  const int n = std::max(16, static_cast<int>(area / (spacing * spacing)));
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < n; ++i) {
    const double y = 1.0 - 2.0 * (i + 0.5) / n;
    const double r = std::sqrt(1.0 - y * y);
    const double phi = golden * i;
    const Vec3 unit(r * std::cos(phi), y, r * std::sin(phi));
    const Vec3 p = center + radii.cwiseProduct(unit);
    const Vec3 normal = unit.cwiseQuotient(radii).normalized();
    cloud.push_back(p, facing(normal), Vec3(std::log(0.65 * spacing), std::log(0.65 * spacing), std::log(0.004)),
                    kSolidLogit, rgb_to_sh0(color(unit)));
  }
}

Vec3 brick_color(double x, double y) {
  static const std::array<Vec3, 6> palette = {Vec3(0.55, 0.18, 0.10), Vec3(0.70, 0.42, 0.16), Vec3(0.35, 0.50, 0.22),
                                              Vec3(0.62, 0.58, 0.40), Vec3(0.25, 0.30, 0.55), Vec3(0.78, 0.70, 0.60)};
  const double bw = 0.5, bh = 0.25;
  const int row = static_cast<int>(std::floor(y / bh));
  const double xs = x + (row % 2 != 0 ? bw / 2 : 0.0);
  const int col = static_cast<int>(std::floor(xs / bw));
  const double fx = xs / bw - col, fy = y / bh - row;
  if (fx < 0.07 || fy < 0.12) return Vec3(0.45, 0.45, 0.42);  // mortar
  const Vec3 base = palette[static_cast<size_t>(hash01(row, col, 7) * palette.size()) % palette.size()];
  const double shade = 0.8 + 0.2 * std::sin(3.1 * x + 1.7 * y) + 0.12 * (hash01(row, col, 11) - 0.5);
  return (base * shade).cwiseMax(0.02).cwiseMin(0.95);
}

Vec3 sand_color(double x, double y) {
  const double n = 0.5 + 0.25 * std::sin(5.3 * x) * std::cos(4.1 * y) + 0.15 * std::sin(13.0 * x + 7.0 * y);
  return Vec3(0.50, 0.44, 0.32) * (0.7 + 0.5 * n);
}

// ColorChecker-style reference colors (sRGB 8-bit), converted to linear.
const std::array<std::array<int, 3>, 24> kChecker = {{
    {115, 82, 68},   {194, 150, 130}, {98, 122, 157},  {87, 108, 67},   {133, 128, 177}, {103, 189, 170},
    {214, 126, 44},  {80, 91, 166},   {193, 90, 99},   {94, 60, 108},   {157, 188, 64},  {224, 163, 46},
    {56, 61, 150},   {70, 148, 73},   {175, 54, 60},   {231, 199, 31},  {187, 86, 149},  {8, 133, 161},
    {243, 243, 242}, {200, 200, 200}, {160, 160, 160}, {122, 122, 121}, {85, 85, 85},    {52, 52, 52},
}};

void add_chart(GaussianCloud& cloud, std::vector<ChartPatch>* charts, int chart_id, const Vec3& center) {
  constexpr double patch = 0.2, gap = 0.03;
  constexpr int cols = 6, rows = 4, sub = 4;
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const int idx = r * cols + c;
      const Vec3 srgb(kChecker[idx][0] / 255.0, kChecker[idx][1] / 255.0, kChecker[idx][2] / 255.0);
      const Vec3 lin(srgb_to_linear(srgb[0]), srgb_to_linear(srgb[1]), srgb_to_linear(srgb[2]));
      const double px = center.x() + (c - (cols - 1) / 2.0) * (patch + gap);
      const double py = center.y() - (r - (rows - 1) / 2.0) * (patch + gap);
      add_panel(cloud, px - patch / 2, px + patch / 2, py - patch / 2, py + patch / 2, center.z(), patch / sub,
                [&](double, double) { return lin; });
      if (charts) charts->push_back({chart_id, idx, Vec3(px, py, center.z()), lin});
    }
}

}  // namespace

GaussianCloud build_scene_cloud(const SceneRecipe& recipe, std::vector<ChartPatch>* charts) {
  GaussianCloud cloud;
  if (recipe.family == "textured-wall") {
    add_panel(cloud, -2.2, 2.2, -1.6, 1.6, 0.0, 0.06, brick_color);
    add_rock(cloud, Vec3(-0.8, -0.7, 0.6), Vec3(0.45, 0.35, 0.35), 0.06, [](const Vec3& u) -> Vec3 {
      return Vec3(0.30, 0.45, 0.20) * (0.75 + 0.25 * std::sin(6.0 * u.x() + 4.0 * u.y()));
    });
    add_rock(cloud, Vec3(0.9, 0.35, 0.9), Vec3(0.3, 0.3, 0.3), 0.06, [](const Vec3& u) -> Vec3 {
      return Vec3(0.55, 0.25, 0.45) * (0.75 + 0.25 * std::cos(5.0 * u.y() - 3.0 * u.z()));
    });
  } else if (recipe.family == "terraced-terrain") {
    const int n = std::max(1, recipe.terraces);
    const double x0 = -3.0, x1 = 3.0, width = (x1 - x0) / n;
    for (int i = 0; i < n; ++i) {
      const Vec3 tint = Vec3(0.5 + 0.3 * std::sin(i * 1.3), 0.45 + 0.25 * std::cos(i * 0.7), 0.35 + 0.1 * (i % 3));
      add_panel(cloud, x0 + i * width, x0 + (i + 1) * width, -2.5, 2.5, -1.2 * i, 0.07, [&](double x, double y) {
        return Vec3(tint.cwiseProduct(sand_color(x, y) * 1.6).cwiseMin(0.95));
      });
    }
  } else if (recipe.family == "color-chart-field") {
    add_panel(cloud, -2.2, 2.2, -1.6, 1.6, 0.0, 0.06, sand_color);
    add_chart(cloud, charts, 0, Vec3(-1.05, 0.55, 0.6));
    add_chart(cloud, charts, 1, Vec3(0.9, -0.55, 0.3));
    add_chart(cloud, charts, 2, Vec3(0.75, 0.75, 0.08));
  } else {
    throw ConfigError("unknown scene recipe '" + recipe.family +
                      "' (textured-wall | terraced-terrain | color-chart-field)");
  }
  return cloud;
}

std::vector<Camera> build_cameras(const SceneRecipe& recipe, double r_max) {
  if (recipe.views <= 0 || recipe.width <= 0 || recipe.height <= 0) throw ConfigError("recipe needs views and size");
  if (!(recipe.distance_min > 0 && recipe.distance_max >= recipe.distance_min))
    throw ConfigError("recipe camera distance range is invalid");
  std::mt19937_64 rng(recipe.seed * 0x9E3779B97F4A7C15ull + 17);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 0.12);
  const double deg = std::numbers::pi / 180.0;
  std::vector<Camera> cams;
  for (int i = 0; i < recipe.views; ++i) {
    // Stratified azimuth so every run covers the full arc.
    const double az = (-1.0 + 2.0 * (i + unit(rng)) / recipe.views) * recipe.azimuth_deg * deg;
    const double el = (2.0 * unit(rng) - 1.0) * recipe.elevation_deg * deg;
    const double dist = recipe.distance_min + (recipe.distance_max - recipe.distance_min) * unit(rng);
    const Vec3 target(jitter(rng), jitter(rng), 0.0);
    const Vec3 eye = target + dist * Vec3(std::sin(az) * std::cos(el), std::sin(el), std::cos(az) * std::cos(el));
    cams.push_back(Camera::look_at(eye, target, Vec3::UnitY(), recipe.focal, recipe.focal, recipe.width,
                                   recipe.height, r_max));
  }
  return cams;
}

WaterField sample_water_field(const UniformWater& mean, uint64_t seed) {
  std::mt19937_64 rng(seed * 0xD1B54A32D192ED03ull + 5);
  WaterField f = WaterField::initialized(mean.ambient, rng);
  // Damp the higher encoding frequencies so the medium varies smoothly over the view cone.
  for (int level = 0; level < 4; ++level) f.w1.middleCols(3 + 6 * level, 6) *= std::pow(0.5, level + 1);
  f.w2 *= 2.0;
  std::normal_distribution<double> n01(0.0, 1.0);
  const double k = 2.0 * std::sqrt(std::numbers::pi);
  for (int i = 1; i < kShBasis; ++i) {
    const int l = i < 4 ? 1 : (i < 9 ? 2 : 3);
    for (int c = 0; c < 3; ++c) f.sh(i, c) = mean.ambient[c] * k * 0.15 * std::pow(0.6, l - 1) * n01(rng);
  }
  // Center the outputs on the requested mean coefficients over the forward view cone.
  std::vector<Vec3> dirs;
  std::uniform_real_distribution<double> u(-0.45, 0.45);
  for (int i = 0; i < 256; ++i) dirs.push_back(Vec3(u(rng), u(rng), -1.0).normalized());
  const auto feats = direction_features(dirs);
  const Eigen::MatrixXd pre1 = (f.w1 * feats.enc).colwise() + f.b1;
  const Eigen::MatrixXd act1 = pre1.unaryExpr([](double x) { return softplus(x); });
  const Eigen::VectorXd mean_pre = (f.w2 * act1).rowwise().mean();
  for (int c = 0; c < 3; ++c) {
    f.b2[c] = inverse_softplus(mean.beta_d[c]) - mean_pre[c];
    f.b2[3 + c] = inverse_softplus(mean.beta_b[c]) - mean_pre[3 + c];
  }
  return f;
}

void gt_water_images(const SyntheticScene& scene, const Camera& cam, Image& A, Image& beta_d, Image& beta_b) {
  const int H = cam.height, W = cam.width;
  if (scene.recipe.water == WaterKind::Varying) {
    const WaterEval ev = field_forward(scene.gt_water, pixel_directions(cam));
    A = rgb_matrix_to_image(ev.A, H, W);
    beta_d = rgb_matrix_to_image(ev.beta_d, H, W);
    beta_b = rgb_matrix_to_image(ev.beta_b, H, W);
    return;
  }
  A = Image(H, W, 3);
  beta_d = Image(H, W, 3);
  beta_b = Image(H, W, 3);
  for (size_t p = 0; p < A.pixels(); ++p)
    for (int c = 0; c < 3; ++c) {
      A.data[3 * p + c] = scene.gt_uniform.ambient[c];
      beta_d.data[3 * p + c] = scene.gt_uniform.beta_d[c];
      beta_b.data[3 * p + c] = scene.gt_uniform.beta_b[c];
    }
}

Image disparity_from_depth(const Image& depth) {
  require(depth.channels == 1, "disparity_from_depth needs a single channel");
  Image out(depth.height, depth.width, 1);
  double lo = 1e300, hi = -1e300;
  for (size_t i = 0; i < depth.size(); ++i) {
    out.data[i] = 1.0 / (depth.data[i] + 1.0);
    lo = std::min(lo, out.data[i]);
    hi = std::max(hi, out.data[i]);
  }
  const double range = hi - lo;
  for (double& v : out.data) v = range < 1e-12 ? 1.0 : (v - lo) / range;
  return out;
}

SyntheticScene synthesize(const SceneRecipe& recipe) {
  SyntheticScene s;
  s.recipe = recipe;
  s.gt_cloud = build_scene_cloud(recipe, &s.charts);

  // Sparse surface samples stand in for structure-from-motion points.
  constexpr double kProvisionalRange = 1e3;
  std::vector<Camera> cams = build_cameras(recipe, kProvisionalRange);
  std::mt19937_64 rng(recipe.seed * 0xA24BAED4963EE407ull + 3);
  struct Sample {
    size_t view;
    int row, col;
  };
  std::vector<Sample> samples;
  for (size_t v = 0; v < cams.size(); ++v) {
    const RenderBundle b = rasterize(project(s.gt_cloud, cams[v]), cams[v]);
    std::uniform_int_distribution<int> rr(0, recipe.height - 1), cc(0, recipe.width - 1);
    int taken = 0;
    for (int attempt = 0; attempt < 4000 && taken < 160; ++attempt) {
      const int r = rr(rng), c = cc(rng);
      if (b.o_acc.at(r, c) < 0.9) continue;
      const Camera& cam = cams[v];
      const double d = b.D.at(r, c);
      const Vec3 p_cam((c + 0.5 - cam.cx) / cam.fx * d, (r + 0.5 - cam.cy) / cam.fy * d, d);
      s.points.push_back({cam.rotation.transpose() * (p_cam - cam.translation), Vec3::Zero()});
      samples.push_back({v, r, c});
      ++taken;
    }
  }
  if (s.points.empty()) throw ConfigError("scene recipe produced no visible surface");

  std::vector<Vec3> centers, pts;
  for (const Camera& c : cams) centers.push_back(c.position());
  for (const SparsePoint& p : s.points) pts.push_back(p.position);
  s.r_max = compute_r_max(centers, pts, 2.0);
  s.cameras = build_cameras(recipe, s.r_max);

  s.gt_uniform = recipe.water == WaterKind::None ? UniformWater{recipe.water_params.ambient, Vec3::Zero(), Vec3::Zero()}
                                                 : recipe.water_params;
  if (recipe.water == WaterKind::Varying)
    s.gt_water = sample_water_field(recipe.water_params, recipe.seed);
  else if (recipe.water == WaterKind::Uniform)
    s.gt_water = WaterField::uniform(recipe.water_params.ambient, recipe.water_params.beta_d,
                                     recipe.water_params.beta_b);

  for (const Camera& cam : s.cameras) {
    const RenderBundle b = rasterize(project(s.gt_cloud, cam), cam);
    Image A, bd, bb;
    gt_water_images(s, cam, A, bd, bb);
    s.clean.push_back(b.J);
    s.depth.push_back(b.D);
    s.distance.push_back(b.R);
    s.underwater.push_back(compose(b.J, b.R, A, bd, bb).I);
    s.disparity.push_back(disparity_from_depth(b.D));
    s.masks.push_back(build_masks(s.disparity.back(), recipe.tau_disparity, recipe.tau_edge));
  }
  for (size_t i = 0; i < samples.size(); ++i) {
    const Image& img = s.underwater[samples[i].view];
    for (int c = 0; c < 3; ++c) s.points[i].color[c] = img.at(samples[i].row, samples[i].col, c);
  }
  return s;
}

std::vector<std::string> export_pseudo_depth(const SyntheticScene& scene, const std::string& out_dir) {
  fs::create_directories(fs::path(out_dir) / "views");
  std::vector<std::string> paths;
  for (size_t v = 0; v < scene.disparity.size(); ++v) {
    paths.push_back(view_path(out_dir, v, "disp.f32"));
    write_float_dump(paths.back(), scene.disparity[v]);
  }
  return paths;
}

void write_scene(const SyntheticScene& s, const std::string& out_dir) {
  fs::create_directories(fs::path(out_dir) / "views");
  fs::create_directories(fs::path(out_dir) / "gt");
  write_cameras((fs::path(out_dir) / "cameras.txt").string(), s.cameras);
  write_points((fs::path(out_dir) / "points.txt").string(), s.points);
  {
    std::ofstream os(fs::path(out_dir) / "scene.txt");
    os << std::setprecision(17) << "family = " << s.recipe.family << "\nwater = " << to_string(s.recipe.water)
       << "\nseed = " << s.recipe.seed << "\nviews = " << s.cameras.size() << "\nwidth = " << s.recipe.width
       << "\nheight = " << s.recipe.height << "\nr_max = " << s.r_max << '\n';
  }
  if (!s.charts.empty()) write_charts((fs::path(out_dir) / "charts.txt").string(), s.charts);
  for (size_t v = 0; v < s.cameras.size(); ++v) {
    write_png_linear(view_path(out_dir, v, "underwater.png"), s.underwater[v]);
    write_float_dump(view_path(out_dir, v, "underwater.f32"), s.underwater[v]);
    write_png_linear(view_path(out_dir, v, "clean.png"), s.clean[v]);
    write_float_dump(view_path(out_dir, v, "clean.f32"), s.clean[v]);
    Image masks(s.recipe.height, s.recipe.width, 3);
    for (size_t p = 0; p < masks.pixels(); ++p) {
      masks.data[3 * p + 0] = s.masks[v].near_mask[p];
      masks.data[3 * p + 1] = s.masks[v].edge_mask[p];
      masks.data[3 * p + 2] = s.masks[v].far_mask[p];
    }
    write_png8(view_path(out_dir, v, "masks.png"), masks);
  }
  export_pseudo_depth(s, out_dir);
  save_cloud_fragment((fs::path(out_dir) / "gt" / "cloud.ckpt-fragment").string(), s.gt_cloud);
  if (s.recipe.water != WaterKind::None)
    save_water_fragment((fs::path(out_dir) / "gt" / "water.ckpt-fragment").string(), s.gt_water);
  if (s.recipe.water != WaterKind::Varying) {
    std::ofstream os(fs::path(out_dir) / "gt" / "water_uniform.txt");
    os << std::setprecision(17) << "# ambient(3) beta_d(3) beta_b(3)\n";
    for (const Vec3* v : {&s.gt_uniform.ambient, &s.gt_uniform.beta_d, &s.gt_uniform.beta_b})
      os << (*v)[0] << ' ' << (*v)[1] << ' ' << (*v)[2] << '\n';
  }
}

SyntheticScene generate(const SceneRecipe& recipe, const std::string& out_dir) {
  SyntheticScene s = synthesize(recipe);
  write_scene(s, out_dir);
  return s;
}

}  // namespace aquags
