#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "aquags/compositor.hpp"
#include "aquags/errors.hpp"
#include "oracles.hpp"

using namespace aquags;

namespace {

struct Inputs {
  Image J, R, A, bd, bb;
};

Inputs uniform_inputs(double j, double r, double a, double bd, double bb, int h = 1, int w = 1) {
  return {Image(h, w, 3, j), Image(h, w, 1, r), Image(h, w, 3, a), Image(h, w, 3, bd), Image(h, w, 3, bb)};
}

Inputs random_inputs(std::mt19937_64& rng, int h, int w) {
  return {oracle::random_image(h, w, 3, rng), oracle::random_image(h, w, 1, rng, 0.0, 3.0),
          oracle::random_image(h, w, 3, rng), oracle::random_image(h, w, 3, rng, 0.0, 2.0),
          oracle::random_image(h, w, 3, rng, 0.0, 2.0)};
}

Image compose_I(const Inputs& in) { return compose(in.J, in.R, in.A, in.bd, in.bb).I; }

}  // namespace

TEST(Compose, ClearWaterPassesThrough) {
  const Image I = compose_I(uniform_inputs(0.5, 1.0, 0.3, 0.0, 0.0));
  for (double v : I.data) EXPECT_EQ(v, 0.5);
}

TEST(Compose, ScalarExample) {
  const Image I = compose_I(uniform_inputs(0.8, 2.0, 0.2, 0.5, 0.25));
  EXPECT_NEAR(I.data[0], 0.8 * std::exp(-1.0) + 0.2 * (1 - std::exp(-0.5)), 1e-15);
  EXPECT_NEAR(I.data[0], 0.37299, 1e-5);
}

TEST(Compose, ZeroDistanceAndFarLimit) {
  const Image near = compose_I(uniform_inputs(0.6, 0.0, 0.9, 1.0, 1.0));
  for (double v : near.data) EXPECT_EQ(v, 0.6);
  const Image far = compose_I(uniform_inputs(0.6, 1e4, 0.9, 1.0, 1.0));
  for (double v : far.data) EXPECT_NEAR(v, 0.9, 1e-12);
}

TEST(Compose, ClampedViewOnlyClamps) {
  std::mt19937_64 rng(1);
  Inputs in = random_inputs(rng, 5, 6);
  in.J = oracle::random_image(5, 6, 3, rng, -0.5, 1.8);
  const UnderwaterImage out = compose(in.J, in.R, in.A, in.bd, in.bb);
  for (size_t k = 0; k < out.I.size(); ++k) EXPECT_EQ(out.clamped_view.data[k], std::clamp(out.I.data[k], 0.0, 1.0));
}

TEST(Compose, MonotoneInDistance) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int k = 0; k < 200; ++k) {
    const double j = u(rng), a = u(rng), bd = 2 * u(rng), bb = 2 * u(rng);
    const double r1 = 3 * u(rng), r2 = r1 + u(rng);
    const double i1 = compose_I(uniform_inputs(j, r1, a, bd, bb)).data[0];
    const double i2 = compose_I(uniform_inputs(j, r2, a, bd, bb)).data[0];
    // The direct term decays and the backscatter term grows with distance.
    const double d1 = j * std::exp(-bd * r1) - a * std::exp(-bb * r1);
    const double d2 = j * std::exp(-bd * r2) - a * std::exp(-bb * r2);
    EXPECT_NEAR(i1 - a, d1, 1e-12);
    EXPECT_NEAR(i2 - a, d2, 1e-12);
    EXPECT_LE(j * std::exp(-bd * r2), j * std::exp(-bd * r1));
    EXPECT_GE(a * (1 - std::exp(-bb * r2)), a * (1 - std::exp(-bb * r1)));
  }
}

TEST(Compose, EqualCoefficientsPullTowardAmbient) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int k = 0; k < 100; ++k) {
    const double j = u(rng), a = u(rng), b = 2 * u(rng), r1 = 3 * u(rng), r2 = r1 + u(rng);
    const double i1 = compose_I(uniform_inputs(j, r1, a, b, b)).data[0];
    const double i2 = compose_I(uniform_inputs(j, r2, a, b, b)).data[0];
    EXPECT_LE(std::abs(i2 - a), std::abs(i1 - a) + 1e-15);
  }
}

TEST(Compose, ChannelsAreSeparable) {
  std::mt19937_64 rng(4);
  Inputs in = random_inputs(rng, 4, 4);
  const Image base = compose_I(in);
  for (size_t p = 0; p < in.J.pixels(); ++p) {
    in.J.data[3 * p + 1] += 0.3;
    in.A.data[3 * p + 1] -= 0.2;
    in.bd.data[3 * p + 1] += 0.7;
  }
  const Image changed = compose_I(in);
  for (size_t p = 0; p < in.J.pixels(); ++p) {
    EXPECT_EQ(changed.data[3 * p + 0], base.data[3 * p + 0]);
    EXPECT_EQ(changed.data[3 * p + 2], base.data[3 * p + 2]);
  }
}

TEST(Compose, ShapeMismatchIsContractViolation) {
  const Inputs in = uniform_inputs(0.5, 1.0, 0.3, 0.1, 0.1, 3, 4);
  EXPECT_THROW(compose(in.J, Image(3, 4, 3), in.A, in.bd, in.bb), ContractViolation);
  EXPECT_THROW(compose(in.J, in.R, Image(4, 3, 3), in.bd, in.bb), ContractViolation);
  EXPECT_THROW(compose_backward(in.J, in.R, in.A, in.bd, in.bb, Image(3, 4, 1)), ContractViolation);
}

TEST(InvertFormation, RecoversJ) {
  std::mt19937_64 rng(5);
  const Inputs in = random_inputs(rng, 6, 7);
  const Image J = invert_formation(compose_I(in), in.R, in.A, in.bd, in.bb);
  EXPECT_LT(oracle::max_abs_diff(J, in.J), 1e-10);
}

TEST(ComposeBackward, ClosedFormAtOnePixel) {
  const Inputs in = uniform_inputs(0.8, 2.0, 0.2, 0.5, 0.25);
  const ComposeGrad g = compose_backward(in.J, in.R, in.A, in.bd, in.bb, Image(1, 1, 3, 1.0));
  const double td = std::exp(-1.0), tb = std::exp(-0.5);
  EXPECT_NEAR(g.J.data[0], td, 1e-15);
  EXPECT_NEAR(g.A.data[0], 1 - tb, 1e-15);
  EXPECT_NEAR(g.beta_d.data[0], -0.8 * 2.0 * td, 1e-15);
  EXPECT_NEAR(g.beta_b.data[0], 0.2 * 2.0 * tb, 1e-15);
  EXPECT_NEAR(g.R.data[0], 3 * (-0.8 * 0.5 * td + 0.2 * 0.25 * tb), 1e-15);
}

TEST(ComposeBackward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 5; ++trial) {
    Inputs in = random_inputs(rng, 3, 4);
    const Image w = oracle::random_image(3, 4, 3, rng, -1.0, 1.0);
    auto loss = [&] {
      const Image I = compose_I(in);
      double s = 0;
      for (size_t k = 0; k < I.size(); ++k) s += w.data[k] * I.data[k];
      return s;
    };
    const ComposeGrad g = compose_backward(in.J, in.R, in.A, in.bd, in.bb, w);
    auto check = [&](Image& x, const Image& gx, const char* what) {
      for (size_t k = 0; k < x.size(); ++k) {
        const double num = oracle::central_difference(loss, x.data[k], 1e-6);
        EXPECT_TRUE(oracle::gradients_agree(gx.data[k], num)) << what << "[" << k << "] " << gx.data[k] << " vs " << num;
      }
    };
    check(in.J, g.J, "J");
    check(in.R, g.R, "R");
    check(in.A, g.A, "A");
    check(in.bd, g.beta_d, "beta_d");
    check(in.bb, g.beta_b, "beta_b");
  }
}

TEST(RgbMatrix, RoundTrip) {
  std::mt19937_64 rng(7);
  const Image img = oracle::random_image(3, 5, 3, rng);
  const Rgb3xN m = image_to_rgb_matrix(img);
  ASSERT_EQ(m.cols(), 15);
  EXPECT_EQ(m(1, 5 + 2), img.at(1, 2, 1));
  const Image back = rgb_matrix_to_image(m, 3, 5);
  EXPECT_EQ(back.data, img.data);
}
