#include "aquags/gaussians.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

#include "aquags/errors.hpp"

namespace aquags {

void GaussianCloud::resize(size_t n) {
  positions.resize(n, Vec3::Zero());
  rotations.resize(n, Vec4(1, 0, 0, 0));
  log_scales.resize(n, Vec3::Zero());
  opacity_logits.resize(n, 0.0);
  colors.resize(n, Vec3::Zero());
}

void GaussianCloud::push_back(const Vec3& pos, const Vec4& rot, const Vec3& log_scale, double logit_value,
                              const Vec3& color) {
  positions.push_back(pos);
  rotations.push_back(rot);
  log_scales.push_back(log_scale);
  opacity_logits.push_back(logit_value);
  colors.push_back(color);
}

void GaussianCloud::erase_if(const std::vector<bool>& remove) {
  require(remove.size() == size(), "erase_if mask size mismatch");
  size_t w = 0;
  for (size_t i = 0; i < size(); ++i) {
    if (remove[i]) continue;
    positions[w] = positions[i];
    rotations[w] = rotations[i];
    log_scales[w] = log_scales[i];
    opacity_logits[w] = opacity_logits[i];
    colors[w] = colors[i];
    ++w;
  }
  resize(w);
}

void GaussianCloud::renormalize_rotations() {
  for (Vec4& q : rotations) {
    const double n = q.norm();
    q = n > 0 ? Vec4(q / n) : Vec4(1, 0, 0, 0);
  }
}

void GaussianCloud::set_zero() {
  for (auto& v : positions) v.setZero();
  for (auto& v : rotations) v.setZero();
  for (auto& v : log_scales) v.setZero();
  for (auto& v : opacity_logits) v = 0;
  for (auto& v : colors) v.setZero();
}

GaussianCloud GaussianCloud::zeros_like() const {
  GaussianCloud g;
  g.resize(size());
  g.set_zero();
  return g;
}

double GaussianCloud::opacity(size_t i) const { return sigmoid(opacity_logits[i]); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

SplatGrad& SplatGrad::operator+=(const SplatGrad& o) {
  mean2d += o.mean2d;
  cov2d += o.cov2d;
  depth_z += o.depth_z;
  dist_r += o.dist_r;
  opacity += o.opacity;
  color += o.color;
  abs_mean2d += o.abs_mean2d;
  return *this;
}

Mat3 quaternion_to_matrix(const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),  //
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),   //
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Vec4 quaternion_matrix_backward(const Vec4& q, const Mat3& g) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Vec4 d;
  d[0] = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
  d[1] = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) +
              w * g(2, 1) - 2 * x * g(2, 2));
  d[2] = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) +
              z * g(2, 1) - 2 * y * g(2, 2));
  d[3] = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) + y * g(1, 2) +
              x * g(2, 0) + y * g(2, 1));
  return d;
}

Mat3 build_covariance(const Vec4& rotation, const Vec3& log_scale) {
  const Mat3 m = quaternion_to_matrix(rotation) * log_scale.array().exp().matrix().asDiagonal();
  return m * m.transpose();
}

double screen_radius(const Mat2& cov2d) {
  const double mid = 0.5 * (cov2d(0, 0) + cov2d(1, 1));
  const double det = cov2d(0, 0) * cov2d(1, 1) - cov2d(0, 1) * cov2d(1, 0);
  const double lambda_max = mid + std::sqrt(std::max(0.1, mid * mid - det));
  return 3.0 * std::sqrt(lambda_max);
}

namespace {

// Perspective Jacobian at camera-space point t (2x3).
Eigen::Matrix<double, 2, 3> perspective_jacobian(const Camera& cam, const Vec3& t) {
  const double iz = 1.0 / t.z();
  Eigen::Matrix<double, 2, 3> j;
  j << cam.fx * iz, 0, -cam.fx * t.x() * iz * iz,  //
      0, cam.fy * iz, -cam.fy * t.y() * iz * iz;
  return j;
}

}  // namespace

std::vector<Splat2D> project(const GaussianCloud& cloud, const Camera& cam) {
  std::vector<Splat2D> out;
  out.reserve(cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 t = cam.to_camera(cloud.positions[i]);
    if (t.z() <= kZNear || t.z() > cam.r_max) continue;
    const auto jac = perspective_jacobian(cam, t);
    const Eigen::Matrix<double, 2, 3> tw = jac * cam.rotation;
    Mat2 cov = tw * build_covariance(cloud.rotations[i], cloud.log_scales[i]) * tw.transpose();
    cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
    cov(0, 0) += kCov2dFloor;
    cov(1, 1) += kCov2dFloor;
    const Vec2 mean(cam.fx * t.x() / t.z() + cam.cx, cam.fy * t.y() / t.z() + cam.cy);
    const double radius = screen_radius(cov);
    if (mean.x() + radius < 0 || mean.x() - radius > cam.width || mean.y() + radius < 0 ||
        mean.y() - radius > cam.height)
      continue;
    Splat2D s;
    s.source_index = static_cast<int>(i);
    s.mean2d = mean;
    s.cov2d = cov;
    s.depth_z = t.z();
    s.dist_r = t.norm();
    s.opacity = cloud.opacity(i);
    s.color = cloud.rgb(i);
    out.push_back(s);
  }
  return out;
}

void project_backward(const GaussianCloud& cloud, const Camera& cam, const std::vector<Splat2D>& splats,
                      const std::vector<SplatGrad>& splat_grads, GaussianCloud& grad) {
  require(splats.size() == splat_grads.size(), "project_backward: splat/gradient count mismatch");
  require(grad.size() == cloud.size(), "project_backward: gradient buffer size mismatch");
  const Mat3& w = cam.rotation;
  for (size_t k = 0; k < splats.size(); ++k) {
    const SplatGrad& g = splat_grads[k];
    const size_t i = static_cast<size_t>(splats[k].source_index);
    require(i < cloud.size(), "project_backward: splat source index out of range");

    const double o = splats[k].opacity;
    grad.opacity_logits[i] += g.opacity * o * (1.0 - o);
    grad.colors[i] += kShC0 * g.color;

    const Vec3 t = cam.to_camera(cloud.positions[i]);
    const double x = t.x(), y = t.y(), z = t.z();
    const double iz = 1.0 / z, iz2 = iz * iz, iz3 = iz2 * iz;
    Vec3 gt = Vec3::Zero();
    gt.x() += g.mean2d.x() * cam.fx * iz;
    gt.y() += g.mean2d.y() * cam.fy * iz;
    gt.z() += -g.mean2d.x() * cam.fx * x * iz2 - g.mean2d.y() * cam.fy * y * iz2;
    gt.z() += g.depth_z;
    gt += g.dist_r * t / t.norm();

    // cov2d = T S T^T + floor, T = J W.
    Mat2 gm;
    gm << g.cov2d[0], 0.5 * g.cov2d[1], 0.5 * g.cov2d[1], g.cov2d[2];
    const auto jac = perspective_jacobian(cam, t);
    const Eigen::Matrix<double, 2, 3> tw = jac * w;
    const Vec3 s = cloud.log_scales[i].array().exp();
    const Mat3 rq = quaternion_to_matrix(cloud.rotations[i]);
    const Mat3 m = rq * s.asDiagonal();
    const Mat3 sigma = m * m.transpose();
    const Eigen::Matrix<double, 2, 3> g_tw = 2.0 * gm * tw * sigma;
    const Mat3 g_sigma = tw.transpose() * gm * tw;
    const Eigen::Matrix<double, 2, 3> g_jac = g_tw * w.transpose();
    gt.z() += g_jac(0, 0) * (-cam.fx * iz2);
    gt.x() += g_jac(0, 2) * (-cam.fx * iz2);
    gt.z() += g_jac(0, 2) * (2.0 * cam.fx * x * iz3);
    gt.z() += g_jac(1, 1) * (-cam.fy * iz2);
    gt.y() += g_jac(1, 2) * (-cam.fy * iz2);
    gt.z() += g_jac(1, 2) * (2.0 * cam.fy * y * iz3);
    grad.positions[i] += w.transpose() * gt;

    const Mat3 g_m = 2.0 * g_sigma * m;
    for (int a = 0; a < 3; ++a) grad.log_scales[i][a] += g_m.col(a).dot(rq.col(a)) * s[a];
    grad.rotations[i] += quaternion_matrix_backward(cloud.rotations[i], g_m * s.asDiagonal());
  }
}

}  // namespace aquags
