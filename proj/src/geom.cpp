#include "aquags/geom.hpp"

#include <Eigen/Geometry>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "aquags/errors.hpp"

namespace aquags {

void Camera::validate() const {
  const Mat3 gram = rotation.transpose() * rotation;
  if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() >= 1e-9)
    throw ConfigError("camera rotation is not orthonormal");
  if (!(r_max > 0)) throw ConfigError("camera r_max must be positive");
  if (!(fx > 0 && fy > 0)) throw ConfigError("camera focal lengths must be positive");
  if (width <= 0 || height <= 0) throw ConfigError("camera size must be positive");
  if (!(cx >= 0 && cx < width && cy >= 0 && cy < height))
    throw ConfigError("camera principal point outside the image");
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fx, double fy, int width,
                       int height, double r_max) {
  const Vec3 z = (target - eye).normalized();
  Vec3 x = z.cross(-up);  // image +x to the right when +y points down
  if (x.norm() < 1e-12) x = z.unitOrthogonal();
  x.normalize();
  const Vec3 y = z.cross(x);
  Camera cam;
  cam.rotation.row(0) = x.transpose();
  cam.rotation.row(1) = y.transpose();
  cam.rotation.row(2) = z.transpose();
  cam.translation = -cam.rotation * eye;
  cam.fx = fx;
  cam.fy = fy;
  cam.width = width;
  cam.height = height;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  cam.r_max = r_max;
  return cam;
}

PixelRay pixel_direction(const Camera& cam, int row, int col) {
  if (row < 0 || row >= cam.height || col < 0 || col >= cam.width)
    throw std::out_of_range("pixel index outside the image");
  const Vec3 d_cam((col + 0.5 - cam.cx) / cam.fx, (row + 0.5 - cam.cy) / cam.fy, 1.0);
  PixelRay ray;
  ray.row = row;
  ray.col = col;
  ray.direction = (cam.rotation.transpose() * d_cam).normalized();
  return ray;
}

std::vector<Vec3> pixel_directions(const Camera& cam) {
  std::vector<Vec3> dirs;
  dirs.reserve(static_cast<size_t>(cam.width) * cam.height);
  for (int r = 0; r < cam.height; ++r)
    for (int c = 0; c < cam.width; ++c) dirs.push_back(pixel_direction(cam, r, c).direction);
  return dirs;
}

double compute_r_max(const std::vector<Vec3>& camera_positions, const std::vector<Vec3>& points,
                     double lambda_scale) {
  if (camera_positions.empty() || points.empty()) throw ConfigError("compute_r_max needs cameras and points");
  if (!(lambda_scale > 0)) throw ConfigError("compute_r_max scale must be positive");
  double best = 0.0;
  for (const Vec3& o : camera_positions)
    for (const Vec3& p : points) best = std::max(best, (o - p).squaredNorm());
  return lambda_scale * std::sqrt(best);
}

std::string format_camera(const Camera& cam) {
  std::ostringstream os;
  os << std::setprecision(17) << cam.fx << ' ' << cam.fy << ' ' << cam.cx << ' ' << cam.cy << ' ' << cam.width
     << ' ' << cam.height;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) os << ' ' << cam.rotation(i, j);
  for (int i = 0; i < 3; ++i) os << ' ' << cam.translation(i);
  os << ' ' << cam.r_max;
  return os.str();
}

Camera parse_camera(const std::string& line) {
  std::istringstream is(line);
  Camera cam;
  is >> cam.fx >> cam.fy >> cam.cx >> cam.cy >> cam.width >> cam.height;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) is >> cam.rotation(i, j);
  for (int i = 0; i < 3; ++i) is >> cam.translation(i);
  is >> cam.r_max;
  if (!is) throw IoError("malformed camera record: " + line);
  cam.validate();
  return cam;
}

void write_cameras(const std::string& path, const std::vector<Camera>& cams) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << "# fx fy cx cy width height r00 r01 r02 r10 r11 r12 r20 r21 r22 t0 t1 t2 r_max\n";
  for (const Camera& cam : cams) os << format_camera(cam) << '\n';
}

std::vector<Camera> read_cameras(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::vector<Camera> cams;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    cams.push_back(parse_camera(line));
  }
  return cams;
}

}  // namespace aquags
