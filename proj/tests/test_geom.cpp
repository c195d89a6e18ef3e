#include <gtest/gtest.h>

#include <Eigen/Geometry>
#include <algorithm>
#include <filesystem>
#include <random>

#include "aquags/errors.hpp"
#include "aquags/geom.hpp"
#include "oracles.hpp"

using namespace aquags;

namespace {

Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

Camera random_camera(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Camera cam = oracle::pinhole(40 + static_cast<int>(60 * u(rng)), 30 + static_cast<int>(50 * u(rng)),
                               30 + 100 * u(rng), 10.0);
  cam.fy = cam.fx * (0.8 + 0.4 * u(rng));
  cam.rotation = random_rotation(rng);
  cam.translation = Vec3(u(rng), u(rng), u(rng)) * 4.0;
  return cam;
}

}  // namespace

TEST(PixelDirection, CenterPixelLooksDownTheAxis) {
  const Camera cam = oracle::pinhole(11, 11, 100, 10);
  const Vec3 d = pixel_direction(cam, 5, 5).direction;
  EXPECT_NEAR(d.x(), 0.0, 1e-15);
  EXPECT_NEAR(d.y(), 0.0, 1e-15);
  EXPECT_NEAR(d.z(), 1.0, 1e-15);
}

TEST(PixelDirection, OneColumnRightOfCenter) {
  const Camera cam = oracle::pinhole(11, 11, 100, 10);
  const PixelRay ray = pixel_direction(cam, 5, 6);
  const Vec3 expect = Vec3(0.01, 0.0, 1.0).normalized();
  EXPECT_EQ(ray.row, 5);
  EXPECT_EQ(ray.col, 6);
  EXPECT_NEAR((ray.direction - expect).norm(), 0.0, 1e-15);
}

TEST(PixelDirection, HalfPixelOffsetOnEvenImage) {
  // With cx at the image center of an even-sized image, pixel 0 sits half a pixel off the edge.
  const Camera cam = oracle::pinhole(100, 100, 100, 10);
  const Vec3 d = pixel_direction(cam, 50, 50).direction;
  EXPECT_NEAR(d.x() / d.z(), 0.005, 1e-15);
  EXPECT_NEAR(d.y() / d.z(), 0.005, 1e-15);
}

TEST(PixelDirection, UnitLengthOnRandomCameras) {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 1000; ++k) {
    const Camera cam = random_camera(rng);
    std::uniform_int_distribution<int> row(0, cam.height - 1), col(0, cam.width - 1);
    EXPECT_NEAR(pixel_direction(cam, row(rng), col(rng)).direction.norm(), 1.0, 1e-9);
  }
}

TEST(PixelDirection, RotationEquivariance) {
  std::mt19937_64 rng(2);
  for (int k = 0; k < 50; ++k) {
    Camera cam = random_camera(rng);
    const Mat3 Q = random_rotation(rng);
    Camera rotated = cam;
    rotated.rotation = Q * cam.rotation;
    std::uniform_int_distribution<int> row(0, cam.height - 1), col(0, cam.width - 1);
    const int r = row(rng), c = col(rng);
    const Vec3 d = pixel_direction(cam, r, c).direction;
    const Vec3 dq = pixel_direction(rotated, r, c).direction;
    EXPECT_NEAR((dq - cam.rotation.transpose() * Q.transpose() * cam.rotation * d).norm(), 0.0, 1e-9);
  }
}

TEST(PixelDirection, AllDirectionsMatchSingleQueries) {
  std::mt19937_64 rng(3);
  const Camera cam = random_camera(rng);
  const std::vector<Vec3> all = pixel_directions(cam);
  ASSERT_EQ(all.size(), static_cast<size_t>(cam.width * cam.height));
  for (int r = 0; r < cam.height; r += 7)
    for (int c = 0; c < cam.width; c += 5)
      EXPECT_NEAR((all[r * cam.width + c] - pixel_direction(cam, r, c).direction).norm(), 0.0, 1e-15);
}

TEST(PixelDirection, OutOfRangeThrows) {
  const Camera cam = oracle::pinhole(8, 6, 10, 10);
  EXPECT_THROW(pixel_direction(cam, 6, 0), std::out_of_range);
  EXPECT_THROW(pixel_direction(cam, 0, 8), std::out_of_range);
  EXPECT_THROW(pixel_direction(cam, -1, 0), std::out_of_range);
}

TEST(ComputeRMax, SinglePair) { EXPECT_DOUBLE_EQ(compute_r_max({Vec3::Zero()}, {Vec3(3, 0, 0)}, 2.0), 6.0); }

TEST(ComputeRMax, MaxSelection) {
  EXPECT_DOUBLE_EQ(compute_r_max({Vec3::Zero()}, {Vec3(1, 0, 0), Vec3(0, 0, 5)}, 2.0), 10.0);
}

TEST(ComputeRMax, MatchesExhaustiveLoopAndIsPermutationInvariant) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 3.0);
  std::vector<Vec3> cams(10), pts(100);
  for (auto& c : cams) c = Vec3(n(rng), n(rng), n(rng));
  for (auto& p : pts) p = Vec3(n(rng), n(rng), n(rng));
  double best = 0;
  for (const auto& c : cams)
    for (const auto& p : pts) best = std::max(best, (c - p).norm());
  EXPECT_DOUBLE_EQ(compute_r_max(cams, pts, 2.0), 2.0 * best);
  std::shuffle(cams.begin(), cams.end(), rng);
  std::shuffle(pts.begin(), pts.end(), rng);
  EXPECT_DOUBLE_EQ(compute_r_max(cams, pts, 2.0), 2.0 * best);
}

TEST(ComputeRMax, EmptyInputsAreConfigErrors) {
  EXPECT_THROW(compute_r_max({}, {Vec3::Zero()}), ConfigError);
  EXPECT_THROW(compute_r_max({Vec3::Zero()}, {}), ConfigError);
  EXPECT_THROW(compute_r_max({Vec3::Zero()}, {Vec3::Ones()}, 0.0), ConfigError);
}

TEST(Camera, LookAtPutsTargetOnTheAxis) {
  const Camera cam = Camera::look_at(Vec3(3, 1, -4), Vec3(0.5, 0.2, 1), Vec3::UnitY(), 80, 80, 64, 48, 20);
  const Vec3 t = cam.to_camera(Vec3(0.5, 0.2, 1));
  EXPECT_NEAR(t.x(), 0.0, 1e-12);
  EXPECT_NEAR(t.y(), 0.0, 1e-12);
  EXPECT_GT(t.z(), 0.0);
  EXPECT_NEAR((cam.position() - Vec3(3, 1, -4)).norm(), 0.0, 1e-12);
  EXPECT_NO_THROW(cam.validate());
}

TEST(Camera, ValidateRejectsBrokenInvariants) {
  Camera cam = oracle::pinhole(8, 8, 10, 5);
  EXPECT_NO_THROW(cam.validate());
  Camera c1 = cam;
  c1.rotation(0, 0) = 2.0;
  EXPECT_THROW(c1.validate(), ConfigError);
  Camera c2 = cam;
  c2.r_max = 0;
  EXPECT_THROW(c2.validate(), ConfigError);
  Camera c3 = cam;
  c3.fx = -1;
  EXPECT_THROW(c3.validate(), ConfigError);
}

TEST(Camera, TextTableRoundTrip) {
  std::mt19937_64 rng(5);
  std::vector<Camera> cams;
  for (int i = 0; i < 4; ++i) cams.push_back(random_camera(rng));
  const auto path = std::filesystem::temp_directory_path() / "aquags_test_cameras.txt";
  write_cameras(path.string(), cams);
  const std::vector<Camera> back = read_cameras(path.string());
  ASSERT_EQ(back.size(), cams.size());
  for (size_t i = 0; i < cams.size(); ++i) {
    EXPECT_EQ(back[i].width, cams[i].width);
    EXPECT_EQ(back[i].height, cams[i].height);
    EXPECT_EQ(back[i].fx, cams[i].fx);
    EXPECT_EQ(back[i].rotation, cams[i].rotation);
    EXPECT_EQ(back[i].translation, cams[i].translation);
    EXPECT_EQ(back[i].r_max, cams[i].r_max);
  }
  std::filesystem::remove(path);
  EXPECT_THROW(parse_camera("1 2 3"), IoError);
  EXPECT_THROW(read_cameras("/nonexistent/cameras.txt"), IoError);
}
