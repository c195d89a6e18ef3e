#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

namespace aquags {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

/// Pinhole camera. `rotation` and `translation` map world to camera:
/// x_cam = rotation * x_world + translation. The camera looks down +z,
/// image rows grow along +y. Pixel (row, col) has its center at
/// (col + 0.5, row + 0.5) in pixel coordinates.
struct Camera {
  double fx = 1, fy = 1;
  double cx = 0, cy = 0;
  int width = 1, height = 1;
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double r_max = 1;

  Vec3 position() const { return -rotation.transpose() * translation; }
  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }

  // Throws ConfigError when an invariant is broken.
  void validate() const;

  // Camera at `eye` looking at `target`; `up` is the approximate world up (image -y).
  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fx, double fy, int width,
                        int height, double r_max);
};

struct PixelRay {
  int row = 0;
  int col = 0;
  Vec3 direction = Vec3::UnitZ();
};

PixelRay pixel_direction(const Camera& cam, int row, int col);

/// Unit world-frame directions for every pixel, row-major.
std::vector<Vec3> pixel_directions(const Camera& cam);

/// lambda * max_{i,j} |O_i - P_j|.
double compute_r_max(const std::vector<Vec3>& camera_positions, const std::vector<Vec3>& points,
                     double lambda_scale = 2.0);

// Plain-text camera table, one record per line:
// fx fy cx cy width height r00..r22 t0 t1 t2 r_max
void write_cameras(const std::string& path, const std::vector<Camera>& cams);
std::vector<Camera> read_cameras(const std::string& path);
std::string format_camera(const Camera& cam);
Camera parse_camera(const std::string& line);

}  // namespace aquags
