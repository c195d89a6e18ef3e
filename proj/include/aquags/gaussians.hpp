#pragma once

#include <Eigen/Core>
#include <vector>

#include "aquags/geom.hpp"

namespace aquags {

using Vec4 = Eigen::Vector4d;  // quaternion stored (w, x, y, z)

inline constexpr double kShC0 = 0.28209479177387814;  // 1 / (2 sqrt(pi))
inline constexpr double kZNear = 0.01;
inline constexpr double kCov2dFloor = 0.3;  // px^2 added to both diagonal entries

/// Structure-of-arrays Gaussian model. The same layout doubles as a gradient
/// buffer (see `zeros_like`).
struct GaussianCloud {
  std::vector<Vec3> positions;
  std::vector<Vec4> rotations;
  std::vector<Vec3> log_scales;
  std::vector<double> opacity_logits;
  std::vector<Vec3> colors;  // degree-0 SH coefficients

  size_t size() const { return positions.size(); }
  void resize(size_t n);
  void push_back(const Vec3& pos, const Vec4& rot, const Vec3& log_scale, double logit, const Vec3& color);
  void erase_if(const std::vector<bool>& remove);
  void renormalize_rotations();
  void set_zero();
  GaussianCloud zeros_like() const;

  double opacity(size_t i) const;
  // Linear RGB of the degree-0 SH color: 0.5 + C0 * coefficient.
  Vec3 rgb(size_t i) const { return Vec3::Constant(0.5) + kShC0 * colors[i]; }
};

double sigmoid(double x);
double logit(double p);
inline Vec3 rgb_to_sh0(const Vec3& rgb) { return (rgb - Vec3::Constant(0.5)) / kShC0; }

Mat3 quaternion_to_matrix(const Vec4& q);
// Gradient of L w.r.t. q given dL/dR, differentiating the raw (unnormalized) formula.
Vec4 quaternion_matrix_backward(const Vec4& q, const Mat3& dL_dR);

/// R diag(exp(log_scale))^2 R^T.
Mat3 build_covariance(const Vec4& rotation, const Vec3& log_scale);

struct Splat2D {
  int source_index = 0;
  Vec2 mean2d = Vec2::Zero();
  Mat2 cov2d = Mat2::Identity();
  double depth_z = 0;
  double dist_r = 0;
  double opacity = 0;
  Vec3 color = Vec3::Zero();
};

/// Gradient w.r.t. one Splat2D. `cov2d` holds (a, b, c) for the symmetric
/// matrix [[a, b], [b, c]], treating b as a single parameter.
struct SplatGrad {
  Vec2 mean2d = Vec2::Zero();
  Vec3 cov2d = Vec3::Zero();
  double depth_z = 0;
  double dist_r = 0;
  double opacity = 0;
  Vec3 color = Vec3::Zero();
  // Sum over pixels of |dL/dmean2d| per component (pixel units).
  Vec2 abs_mean2d = Vec2::Zero();

  SplatGrad& operator+=(const SplatGrad& o);
};

/// Screen-space 3-sigma radius of a projected covariance.
double screen_radius(const Mat2& cov2d);

std::vector<Splat2D> project(const GaussianCloud& cloud, const Camera& cam);

/// Chains splat gradients into the Gaussian parameters. `splats` must be the
/// output of `project(cloud, cam)`. Gradients are accumulated into `grad`.
void project_backward(const GaussianCloud& cloud, const Camera& cam, const std::vector<Splat2D>& splats,
                      const std::vector<SplatGrad>& splat_grads, GaussianCloud& grad);

}  // namespace aquags
