#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <random>

#include "aquags/gaussians.hpp"
#include "oracles.hpp"

using namespace aquags;

namespace {

Vec4 random_quaternion(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Vec4(n(rng), n(rng), n(rng), n(rng)).normalized();
}

GaussianCloud single(const Vec3& pos, double log_scale = std::log(0.1), double opacity = 0.5) {
  GaussianCloud c;
  c.push_back(pos, Vec4(1, 0, 0, 0), Vec3::Constant(log_scale), logit(opacity), Vec3::Zero());
  return c;
}

}  // namespace

TEST(BuildCovariance, IdentityUnitScale) {
  EXPECT_TRUE(build_covariance(Vec4(1, 0, 0, 0), Vec3::Zero()).isApprox(Mat3::Identity(), 1e-15));
}

TEST(BuildCovariance, AxisScalingSquares) {
  const Mat3 c = build_covariance(Vec4(1, 0, 0, 0), Vec3(std::log(2.0), 0, 0));
  EXPECT_NEAR((c - Vec3(4, 1, 1).asDiagonal().toDenseMatrix()).norm(), 0.0, 1e-14);
}

TEST(BuildCovariance, EigenvaluesAreSquaredScales) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int k = 0; k < 100; ++k) {
    const Vec4 q = random_quaternion(rng);
    const Vec3 ls(n(rng), n(rng), n(rng));
    const Mat3 c = build_covariance(q, ls);
    EXPECT_NEAR((c - c.transpose()).norm(), 0.0, 1e-12);
    Eigen::SelfAdjointEigenSolver<Mat3> es(c);
    Vec3 expect = (2.0 * ls).array().exp();
    std::sort(expect.data(), expect.data() + 3);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(es.eigenvalues()[i], expect[i], 1e-10 * expect.maxCoeff());
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-12);
  }
}

TEST(Quaternion, MatrixIsOrthonormalForUnitInput) {
  std::mt19937_64 rng(2);
  for (int k = 0; k < 20; ++k) {
    const Mat3 R = quaternion_to_matrix(random_quaternion(rng));
    EXPECT_NEAR((R * R.transpose() - Mat3::Identity()).norm(), 0.0, 1e-12);
    EXPECT_NEAR(R.determinant(), 1.0, 1e-12);
  }
}

TEST(Cloud, OpacityStrictlyInsideUnitInterval) {
  GaussianCloud c;
  for (double l : {-30.0, -5.0, 0.0, 5.0, 30.0}) c.push_back(Vec3::Zero(), Vec4(1, 0, 0, 0), Vec3::Zero(), l, Vec3::Zero());
  for (size_t i = 0; i < c.size(); ++i) {
    EXPECT_GT(c.opacity(i), 0.0);
    EXPECT_LT(c.opacity(i), 1.0);
  }
  EXPECT_NEAR(sigmoid(logit(0.37)), 0.37, 1e-15);
}

TEST(Cloud, RenormalizeAndErase) {
  GaussianCloud c;
  c.push_back(Vec3(1, 0, 0), Vec4(2, 0, 0, 0), Vec3::Zero(), 0, Vec3::Zero());
  c.push_back(Vec3(2, 0, 0), Vec4(1, 1, 1, 1), Vec3::Zero(), 0, Vec3::Zero());
  c.push_back(Vec3(3, 0, 0), Vec4(0, 3, 0, 4), Vec3::Zero(), 0, Vec3::Zero());
  c.renormalize_rotations();
  for (const Vec4& q : c.rotations) EXPECT_NEAR(q.norm(), 1.0, 1e-15);
  c.erase_if({false, true, false});
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c.positions[1].x(), 3.0);
  EXPECT_THROW(c.erase_if({true}), ContractViolation);
}

TEST(Project, OnAxisGaussianLandsOnPrincipalPoint) {
  const Camera cam = oracle::pinhole(64, 48, 50, 20);
  const auto s = project(single(Vec3(0, 0, 5)), cam);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_NEAR(s[0].mean2d.x(), cam.cx, 1e-12);
  EXPECT_NEAR(s[0].mean2d.y(), cam.cy, 1e-12);
  EXPECT_DOUBLE_EQ(s[0].depth_z, 5.0);
  EXPECT_DOUBLE_EQ(s[0].dist_r, 5.0);
}

TEST(Project, BeyondRMaxIsCulled) {
  const Camera cam = oracle::pinhole(64, 48, 50, 10);
  EXPECT_TRUE(project(single(Vec3(0, 0, 10.1)), cam).empty());
  EXPECT_EQ(project(single(Vec3(0, 0, 10.0)), cam).size(), 1u);
  EXPECT_TRUE(project(single(Vec3(0, 0, 0.005)), cam).empty());
  EXPECT_TRUE(project(single(Vec3(0, 0, -3)), cam).empty());
}

TEST(Project, IsotropicCovarianceBeforeFloor) {
  const Camera cam = oracle::pinhole(64, 48, 50, 20);
  const double s = 0.2, z = 4.0;
  const auto sp = project(single(Vec3(0, 0, z), std::log(s)), cam);
  ASSERT_EQ(sp.size(), 1u);
  EXPECT_NEAR(sp[0].cov2d(0, 0) - kCov2dFloor, std::pow(cam.fx * s / z, 2), 1e-12);
  EXPECT_NEAR(sp[0].cov2d(1, 1) - kCov2dFloor, std::pow(cam.fy * s / z, 2), 1e-12);
  EXPECT_NEAR(sp[0].cov2d(0, 1), 0.0, 1e-12);
}

TEST(Project, CullingMatchesBruteForce) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Camera cam = Camera::look_at(Vec3(0.3, -0.2, -1), Vec3(0, 0, 3), Vec3::UnitY(), 40, 40, 48, 32, 6.0);
  GaussianCloud cloud;
  for (int i = 0; i < 400; ++i)
    cloud.push_back(Vec3(4 * u(rng), 3 * u(rng), 3 + 5 * u(rng)), random_quaternion(rng),
                    Vec3::Constant(std::log(0.05 + 0.3 * (u(rng) + 1))), u(rng), Vec3::Zero());
  const auto splats = project(cloud, cam);
  std::vector<int> expected;
  for (size_t i = 0; i < cloud.size(); ++i) {
    const Vec3 t = cam.to_camera(cloud.positions[i]);
    if (t.z() <= kZNear || t.z() > cam.r_max) continue;
    // Recompute the screen footprint from the projected covariance.
    Eigen::Matrix<double, 2, 3> J;
    J << cam.fx / t.z(), 0, -cam.fx * t.x() / (t.z() * t.z()), 0, cam.fy / t.z(), -cam.fy * t.y() / (t.z() * t.z());
    const Eigen::Matrix<double, 2, 3> M = J * cam.rotation;
    Mat2 cov = M * build_covariance(cloud.rotations[i], cloud.log_scales[i]) * M.transpose();
    cov += kCov2dFloor * Mat2::Identity();
    const double r = 3.0 * std::sqrt(Eigen::SelfAdjointEigenSolver<Mat2>(cov).eigenvalues().maxCoeff());
    const double mx = cam.fx * t.x() / t.z() + cam.cx, my = cam.fy * t.y() / t.z() + cam.cy;
    if (mx + r < 0 || mx - r > cam.width || my + r < 0 || my - r > cam.height) continue;
    expected.push_back(static_cast<int>(i));
  }
  ASSERT_EQ(splats.size(), expected.size());
  for (size_t k = 0; k < splats.size(); ++k) {
    EXPECT_EQ(splats[k].source_index, expected[k]);
    const Vec3 t = cam.to_camera(cloud.positions[expected[k]]);
    EXPECT_NEAR(splats[k].dist_r, (cloud.positions[expected[k]] - cam.position()).norm(), 1e-9);
    EXPECT_DOUBLE_EQ(splats[k].depth_z, t.z());
    EXPECT_GE(splats[k].dist_r, splats[k].depth_z);
    Eigen::SelfAdjointEigenSolver<Mat2> es(splats[k].cov2d);
    EXPECT_GE(es.eigenvalues().minCoeff(), 0.0);
  }
}

class ProjectGradient : public ::testing::TestWithParam<int> {};

TEST_P(ProjectGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(100 + GetParam());
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const Camera cam = Camera::look_at(Vec3(0.5, 0.3, -2), Vec3(0, 0, 2), Vec3::UnitY(), 60, 55, 64, 48, 15.0);
  GaussianCloud cloud;
  for (int i = 0; i < 4; ++i)
    cloud.push_back(Vec3(u(rng), u(rng), 2 + u(rng)), random_quaternion(rng),
                    Vec3(std::log(0.2 + 0.1 * u(rng)), std::log(0.15 + 0.1 * u(rng)), std::log(0.1 + 0.05 * u(rng))),
                    u(rng), Vec3(u(rng), u(rng), u(rng)));
  // Random linear functional of every splat output.
  std::vector<SplatGrad> weights(cloud.size());
  for (auto& w : weights) {
    w.mean2d = Vec2(u(rng), u(rng));
    w.cov2d = Vec3(u(rng), u(rng), u(rng));
    w.depth_z = u(rng);
    w.dist_r = u(rng);
    w.opacity = u(rng);
    w.color = Vec3(u(rng), u(rng), u(rng));
  }
  auto f = [&] {
    const auto sp = project(cloud, cam);
    double v = 0;
    for (const Splat2D& s : sp) {
      const SplatGrad& w = weights[s.source_index];
      v += w.mean2d.dot(s.mean2d) + w.cov2d[0] * s.cov2d(0, 0) + w.cov2d[1] * s.cov2d(0, 1) +
           w.cov2d[2] * s.cov2d(1, 1) + w.depth_z * s.depth_z + w.dist_r * s.dist_r + w.opacity * s.opacity +
           w.color.dot(s.color);
    }
    return v;
  };
  const auto splats = project(cloud, cam);
  ASSERT_EQ(splats.size(), cloud.size());
  std::vector<SplatGrad> sg;
  for (const Splat2D& s : splats) sg.push_back(weights[s.source_index]);
  GaussianCloud grad = cloud.zeros_like();
  project_backward(cloud, cam, splats, sg, grad);

  auto check = [&](double* values, const double* grads, size_t n, const char* what) {
    for (size_t i = 0; i < n; ++i) {
      const double num = oracle::central_difference(f, values[i]);
      EXPECT_TRUE(oracle::gradients_agree(grads[i], num)) << what << "[" << i << "] analytic " << grads[i] << " numeric " << num;
    }
  };
  check(cloud.positions[0].data(), grad.positions[0].data(), 3 * cloud.size(), "position");
  check(cloud.rotations[0].data(), grad.rotations[0].data(), 4 * cloud.size(), "rotation");
  check(cloud.log_scales[0].data(), grad.log_scales[0].data(), 3 * cloud.size(), "log_scale");
  check(cloud.opacity_logits.data(), grad.opacity_logits.data(), cloud.size(), "opacity");
  check(cloud.colors[0].data(), grad.colors[0].data(), 3 * cloud.size(), "color");
}

INSTANTIATE_TEST_SUITE_P(Seeds, ProjectGradient, ::testing::Range(0, 5));

TEST(ProjectBackward, RejectsMismatchedInputs) {
  const Camera cam = oracle::pinhole(16, 16, 16, 10);
  const GaussianCloud cloud = single(Vec3(0, 0, 3));
  const auto splats = project(cloud, cam);
  GaussianCloud grad = cloud.zeros_like();
  EXPECT_THROW(project_backward(cloud, cam, splats, {}, grad), ContractViolation);
  GaussianCloud wrong;
  EXPECT_THROW(project_backward(cloud, cam, splats, std::vector<SplatGrad>(splats.size()), wrong), ContractViolation);
}
