#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "aquags/waterfield.hpp"
#include "oracles.hpp"

using namespace aquags;

namespace {

Vec3 random_dir(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return Vec3(n(rng), n(rng), n(rng)).normalized();
}

// Real SH from associated Legendre functions. std::assoc_legendre omits the
// Condon-Shortley phase, which the graphics convention includes.
double real_sh(int l, int m, const Vec3& d) {
  const double theta = std::acos(std::clamp(d.z(), -1.0, 1.0));
  const double phi = std::atan2(d.y(), d.x());
  const int am = std::abs(m);
  double fact = 1.0;
  for (int k = l - am + 1; k <= l + am; ++k) fact *= k;  // (l+|m|)! / (l-|m|)!
  const double K = std::sqrt((2 * l + 1) / (4 * M_PI) / fact);
  const double P = (am % 2 ? -1.0 : 1.0) * std::assoc_legendre(l, am, std::cos(theta));
  if (m == 0) return K * P;
  if (m > 0) return std::sqrt(2.0) * K * P * std::cos(m * phi);
  return std::sqrt(2.0) * K * P * std::sin(am * phi);
}

double softplus_ref(double x) { return std::log1p(std::exp(x)); }

}  // namespace

TEST(ShBasis, MatchesLegendreOracle) {
  std::mt19937_64 rng(1);
  for (int k = 0; k < 100; ++k) {
    const Vec3 d = random_dir(rng);
    const auto b = sh_basis(d);
    int i = 0;
    for (int l = 0; l <= 3; ++l)
      for (int m = -l; m <= l; ++m, ++i) EXPECT_NEAR(b[i], real_sh(l, m, d), 1e-12) << "l=" << l << " m=" << m;
  }
}

TEST(ShAmbient, ConstantTermOnly) {
  WaterField f;
  f.sh.row(0) = Vec3(0.7, 0.7, 0.7).transpose();
  std::mt19937_64 rng(2);
  for (int k = 0; k < 10; ++k) {
    const Vec3 a = sh_ambient(f, random_dir(rng));
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(a[c], 0.7 / (2 * std::sqrt(M_PI)), 1e-15);
  }
}

TEST(ShAmbient, DegreeOneIsOdd) {
  WaterField f;
  f.sh.row(2) = Vec3(0.3, -0.2, 0.5).transpose();  // (l, m) = (1, 0)
  const Vec3 up = sh_ambient(f, Vec3(0, 0, 1)), down = sh_ambient(f, Vec3(0, 0, -1));
  EXPECT_NEAR((up + down).norm(), 0.0, 1e-15);
  EXPECT_GT(up.norm(), 0.0);
}

TEST(ShAmbient, LinearInCoefficients) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  WaterField a, b, c;
  for (int i = 0; i < kShBasis; ++i)
    for (int ch = 0; ch < 3; ++ch) {
      a.sh(i, ch) = n(rng);
      b.sh(i, ch) = n(rng);
      c.sh(i, ch) = 1.7 * a.sh(i, ch) - 0.4 * b.sh(i, ch);
    }
  for (int k = 0; k < 20; ++k) {
    const Vec3 d = random_dir(rng);
    EXPECT_NEAR((sh_ambient(c, d) - (1.7 * sh_ambient(a, d) - 0.4 * sh_ambient(b, d))).norm(), 0.0, 1e-9);
  }
}

TEST(ShAmbient, RejectsNonUnitDirection) {
  WaterField f;
  EXPECT_THROW(sh_ambient(f, Vec3(0, 0, 2)), ContractViolation);
  EXPECT_THROW(water_coeffs(f, Vec3(0.1, 0, 0)), ContractViolation);
}

TEST(PositionalEncode, AxisDirection) {
  const auto e = positional_encode(Vec3(0, 0, 1));
  ASSERT_EQ(e.size(), 27u);
  EXPECT_EQ(e[0], 0.0);
  EXPECT_EQ(e[1], 0.0);
  EXPECT_EQ(e[2], 1.0);
  for (int level = 0; level < 4; ++level) {
    const int sin0 = 3 + 6 * level, cos0 = sin0 + 3;
    for (int c = 0; c < 2; ++c) {
      EXPECT_EQ(e[sin0 + c], 0.0);
      EXPECT_EQ(e[cos0 + c], 1.0);
    }
  }
}

TEST(PositionalEncode, SecondFrequencySinOfXAxis) {
  const auto e = positional_encode(Vec3(1, 0, 0));
  EXPECT_NEAR(e[3 + 6 * 1 + 0], std::sin(2 * M_PI), 1e-9);
  EXPECT_NEAR(e[3 + 6 * 1 + 0], 0.0, 1e-9);
  EXPECT_NEAR(e[3 + 0], std::sin(M_PI), 1e-15);
  EXPECT_NEAR(e[3 + 3], -1.0, 1e-15);  // cos(pi)
}

TEST(WaterCoeffs, ZeroNetworkGivesLn2) {
  WaterField f;
  const auto [bd, bb] = water_coeffs(f, Vec3(0, 1, 0));
  for (int c = 0; c < 3; ++c) {
    EXPECT_NEAR(bd[c], std::log(2.0), 1e-15);
    EXPECT_NEAR(bb[c], std::log(2.0), 1e-15);
  }
}

TEST(WaterCoeffs, MatchesDenseLayerOracleAndStaysPositive) {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    WaterField f = oracle::random_water(rng);
    std::normal_distribution<double> n(0.0, 2.0);
    for (int i = 0; i < f.b2.size(); ++i) f.b2(i) = n(rng) - 4.0;  // include outputs deep in the softplus tail
    for (int k = 0; k < 20; ++k) {
      const Vec3 d = random_dir(rng);
      const auto enc = positional_encode(d);
      double hidden[kHiddenDim];
      for (int i = 0; i < kHiddenDim; ++i) {
        double s = f.b1(i);
        for (int j = 0; j < kEncodingDim; ++j) s += f.w1(i, j) * enc[j];
        hidden[i] = softplus_ref(s);
      }
      double out[kWaterOutputs];
      for (int o = 0; o < kWaterOutputs; ++o) {
        double s = f.b2(o);
        for (int i = 0; i < kHiddenDim; ++i) s += f.w2(o, i) * hidden[i];
        out[o] = softplus_ref(s);
      }
      const auto [bd, bb] = water_coeffs(f, d);
      for (int c = 0; c < 3; ++c) {
        EXPECT_NEAR(bd[c], out[c], 1e-12 * (1 + out[c]));
        EXPECT_NEAR(bb[c], out[3 + c], 1e-12 * (1 + out[3 + c]));
        EXPECT_GT(bd[c], 0.0);
        EXPECT_GT(bb[c], 0.0);
      }
    }
  }
}

TEST(WaterCoeffs, LipschitzSmoke) {
  std::mt19937_64 rng(5);
  const WaterField f = WaterField::initialized(Vec3(0.2, 0.3, 0.4), rng);
  for (int k = 0; k < 50; ++k) {
    const Vec3 d = random_dir(rng);
    const Vec3 e = (d + 1e-6 * random_dir(rng)).normalized();
    const auto [a1, b1] = water_coeffs(f, d);
    const auto [a2, b2] = water_coeffs(f, e);
    EXPECT_LT((a1 - a2).norm() + (b1 - b2).norm(), 1e-3);
  }
}

TEST(FieldForward, BatchMatchesSingleQueries) {
  std::mt19937_64 rng(6);
  const WaterField f = oracle::random_water(rng);
  std::vector<Vec3> dirs;
  for (int k = 0; k < 300; ++k) dirs.push_back(random_dir(rng));  // more than one column block
  const WaterEval ev = field_forward(f, dirs);
  for (size_t k = 0; k < dirs.size(); ++k) {
    const auto [bd, bb] = water_coeffs(f, dirs[k]);
    EXPECT_NEAR((ev.beta_d.col(k) - bd).norm(), 0.0, 1e-12);
    EXPECT_NEAR((ev.beta_b.col(k) - bb).norm(), 0.0, 1e-12);
    EXPECT_NEAR((ev.A.col(k) - sh_ambient(f, dirs[k])).norm(), 0.0, 1e-12);
  }
}

TEST(Initialization, MeanColorAndGentleWater) {
  std::mt19937_64 rng(7);
  const WaterField f = WaterField::initialized(Vec3(0.1, 0.4, 0.5), rng);
  const Vec3 a = sh_ambient(f, Vec3(0, 0, 1));
  EXPECT_NEAR((a - Vec3(0.1, 0.4, 0.5)).norm(), 0.0, 1e-12);
  const double bound = 1.0 / std::sqrt(27.0);
  EXPECT_LE(f.w1.cwiseAbs().maxCoeff(), bound);
  EXPECT_TRUE((f.b1.array() == -1.0).all());
  const WaterField u = WaterField::uniform(Vec3(0.2, 0.3, 0.4), Vec3(0.5, 0.1, 0.05), Vec3(0.3, 0.2, 0.1));
  const auto [bd, bb] = water_coeffs(u, random_dir(rng));
  EXPECT_NEAR((bd - Vec3(0.5, 0.1, 0.05)).norm(), 0.0, 1e-12);
  EXPECT_NEAR((bb - Vec3(0.3, 0.2, 0.1)).norm(), 0.0, 1e-12);
}

TEST(WaterField, FlattenRoundTrip) {
  std::mt19937_64 rng(8);
  const WaterField f = oracle::random_water(rng);
  const std::vector<double> flat = f.flatten();
  ASSERT_EQ(flat.size(), f.parameter_count());
  EXPECT_EQ(flat[0], f.sh(0, 0));
  EXPECT_EQ(flat[3], f.sh(1, 0));
  WaterField g;
  g.unflatten(flat);
  EXPECT_EQ(g.flatten(), flat);
  EXPECT_EQ(g.fingerprint(), f.fingerprint());
  EXPECT_THROW(g.unflatten({1.0, 2.0}), ContractViolation);
}

TEST(FieldBackward, ZeroUpstreamAndConstantTerm) {
  std::mt19937_64 rng(9);
  const WaterField f = oracle::random_water(rng);
  std::vector<Vec3> dirs;
  for (int k = 0; k < 16; ++k) dirs.push_back(random_dir(rng));
  const WaterEval ev = field_forward(f, dirs);
  const Rgb3xN zero = Rgb3xN::Zero(3, 16);
  const WaterField g0 = field_backward(f, ev, zero, zero, zero);
  for (double v : g0.flatten()) EXPECT_EQ(v, 0.0);

  Rgb3xN gA = Rgb3xN::Random(3, 16);
  const WaterField g = field_backward(f, ev, gA, zero, zero);
  const Vec3 expect = gA.rowwise().sum() / (2 * std::sqrt(M_PI));
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(g.sh(0, c), expect[c], 1e-12);
}

class FieldGradient : public ::testing::TestWithParam<int> {};

TEST_P(FieldGradient, MatchesFiniteDifferences) {
  std::mt19937_64 rng(100 + GetParam());
  WaterField f = oracle::random_water(rng);
  // Directions of a 4 x 4 image.
  Camera cam = oracle::pinhole(4, 4, 3, 10);
  const std::vector<Vec3> dirs = pixel_directions(cam);
  std::uniform_real_distribution<double> u(-1, 1);
  Rgb3xN gA(3, 16), gD(3, 16), gB(3, 16);
  for (int i = 0; i < 48; ++i) {
    gA.data()[i] = u(rng);
    gD.data()[i] = u(rng);
    gB.data()[i] = u(rng);
  }
  auto loss = [&] {
    const WaterEval e = field_forward(f, dirs);
    return (e.A.cwiseProduct(gA) + e.beta_d.cwiseProduct(gD) + e.beta_b.cwiseProduct(gB)).sum();
  };
  const WaterField g = field_backward(f, field_forward(f, dirs), gA, gD, gB);
  auto check = [&](double* v, const double* gr, Eigen::Index n, const char* what) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double num = oracle::central_difference(loss, v[i]);
      EXPECT_TRUE(oracle::gradients_agree(gr[i], num)) << what << "[" << i << "] " << gr[i] << " vs " << num;
    }
  };
  check(f.sh.data(), g.sh.data(), f.sh.size(), "sh");
  check(f.w1.data(), g.w1.data(), f.w1.size(), "w1");
  check(f.b1.data(), g.b1.data(), f.b1.size(), "b1");
  check(f.w2.data(), g.w2.data(), f.w2.size(), "w2");
  check(f.b2.data(), g.b2.data(), f.b2.size(), "b2");
}

INSTANTIATE_TEST_SUITE_P(Seeds, FieldGradient, ::testing::Range(0, 10));

TEST(FieldBackward, RejectsForeignCache) {
  std::mt19937_64 rng(10);
  WaterField f = oracle::random_water(rng);
  const std::vector<Vec3> dirs = {Vec3(0, 0, 1), Vec3(1, 0, 0)};
  const WaterEval ev = field_forward(f, dirs);
  f.b1(0) += 1.0;
  const Rgb3xN z = Rgb3xN::Zero(3, 2);
  EXPECT_THROW(field_backward(f, ev, z, z, z), ContractViolation);
  f.b1(0) -= 1.0;
  EXPECT_THROW(field_backward(f, ev, Rgb3xN::Zero(3, 3), z, z), ContractViolation);
}
