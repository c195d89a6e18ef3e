#include "aquags/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "aquags/checkpoint.hpp"
#include "aquags/errors.hpp"

namespace aquags {

namespace fs = std::filesystem;

std::vector<size_t> Dataset::train_views() const {
  std::vector<size_t> out;
  for (size_t i = 0; i < views(); ++i)
    if (!is_test_view(i)) out.push_back(i);
  return out;
}

std::vector<size_t> Dataset::test_views() const {
  std::vector<size_t> out;
  for (size_t i = 0; i < views(); ++i)
    if (is_test_view(i)) out.push_back(i);
  return out;
}

std::string view_path(const std::string& root, size_t index, const std::string& suffix) {
  char name[32];
  std::snprintf(name, sizeof(name), "%03zu_", index);
  return (fs::path(root) / "views" / (std::string(name) + suffix)).string();
}

void write_points(const std::string& path, const std::vector<SparsePoint>& points) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << std::setprecision(17) << "# x y z r g b (linear)\n";
  for (const SparsePoint& p : points)
    os << p.position.x() << ' ' << p.position.y() << ' ' << p.position.z() << ' ' << p.color.x() << ' '
       << p.color.y() << ' ' << p.color.z() << '\n';
}

std::vector<SparsePoint> read_points(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path);
  std::vector<SparsePoint> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    SparsePoint p;
    if (!(ls >> p.position.x() >> p.position.y() >> p.position.z() >> p.color.x() >> p.color.y() >> p.color.z()))
      throw IoError("malformed point line in " + path + ": " + line);
    out.push_back(p);
  }
  return out;
}

static bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

Image load_linear_rgb(const std::string& path) {
  Image img = ends_with(path, ".f32") ? read_float_dump(path) : to_linear(read_png(path));
  if (img.channels != 3) throw IoError(path + ": expected an RGB image");
  return img;
}

Image load_disparity(const std::string& path) {
  Image img = ends_with(path, ".f32") ? read_float_dump(path) : read_png(path);
  if (img.channels != 1) {
    // Accept gray stored as RGB by keeping the first channel.
    Image gray(img.height, img.width, 1);
    for (size_t p = 0; p < gray.pixels(); ++p) gray.data[p] = img.data[p * img.channels];
    img = std::move(gray);
  }
  for (double v : img.data)
    if (!(v >= 0.0 && v <= 1.0)) throw IoError(path + ": disparity values must lie in [0, 1]");
  return img;
}

static std::string pick(const std::string& root, size_t idx, const std::string& stem) {
  const std::string f32 = view_path(root, idx, stem + ".f32");
  if (fs::exists(f32)) return f32;
  const std::string png = view_path(root, idx, stem + ".png");
  if (fs::exists(png)) return png;
  return {};
}

Dataset load_dataset(const std::string& root) {
  if (!fs::is_directory(root)) throw IoError("dataset directory not found: " + root);
  Dataset ds;
  ds.cameras = read_cameras((fs::path(root) / "cameras.txt").string());
  if (ds.cameras.empty()) throw IoError(root + ": no cameras");
  ds.r_max = ds.cameras.front().r_max;
  const fs::path points = fs::path(root) / "points.txt";
  if (fs::exists(points)) ds.points = read_points(points.string());
  const fs::path charts = fs::path(root) / "charts.txt";
  if (fs::exists(charts)) ds.charts = read_charts(charts.string());

  for (size_t v = 0; v < ds.cameras.size(); ++v) {
    const Camera& cam = ds.cameras[v];
    const std::string uw = pick(root, v, "underwater");
    if (uw.empty()) throw IoError(root + ": missing underwater image for view " + std::to_string(v));
    ds.underwater.push_back(load_linear_rgb(uw));
    const std::string clean = pick(root, v, "clean");
    ds.clean.push_back(clean.empty() ? Image() : load_linear_rgb(clean));
    const std::string disp = pick(root, v, "disp");
    if (disp.empty()) throw IoError(root + ": missing disparity for view " + std::to_string(v));
    ds.disparity.push_back(load_disparity(disp));
    if (ds.underwater.back().height != cam.height || ds.underwater.back().width != cam.width ||
        ds.disparity.back().height != cam.height || ds.disparity.back().width != cam.width)
      throw IoError(root + ": view " + std::to_string(v) + " does not match its camera size");
  }

  const fs::path gt = fs::path(root) / "gt";
  if (fs::exists(gt / "cloud.ckpt-fragment")) ds.gt_cloud = load_cloud_fragment((gt / "cloud.ckpt-fragment").string());
  if (fs::exists(gt / "water.ckpt-fragment")) ds.gt_water = load_water_fragment((gt / "water.ckpt-fragment").string());
  if (fs::exists(gt / "water_uniform.txt")) {
    std::ifstream is(gt / "water_uniform.txt");
    std::string line;
    UniformWater w;
    int row = 0;
    while (row < 3 && std::getline(is, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      Vec3& v = row == 0 ? w.ambient : (row == 1 ? w.beta_d : w.beta_b);
      if (!(ls >> v[0] >> v[1] >> v[2])) throw IoError("malformed gt/water_uniform.txt");
      ++row;
    }
    if (row != 3) throw IoError("truncated gt/water_uniform.txt");
    ds.gt_uniform_water = w;
  }
  return ds;
}

}  // namespace aquags
