#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "aquags/geom.hpp"

namespace aquags {

inline constexpr int kShBasis = 16;  // real SH up to degree 3
inline constexpr int kEncodingDim = 27;
inline constexpr int kHiddenDim = 128;
inline constexpr int kWaterOutputs = 6;

/// Direction-dependent water medium: SH table for the ambient light A and a
/// two-layer softplus perceptron for (beta_D, beta_B).
struct WaterField {
  Eigen::Matrix<double, kShBasis, 3> sh = Eigen::Matrix<double, kShBasis, 3>::Zero();
  Eigen::MatrixXd w1 = Eigen::MatrixXd::Zero(kHiddenDim, kEncodingDim);
  Eigen::VectorXd b1 = Eigen::VectorXd::Zero(kHiddenDim);
  Eigen::MatrixXd w2 = Eigen::MatrixXd::Zero(kWaterOutputs, kHiddenDim);
  Eigen::VectorXd b2 = Eigen::VectorXd::Zero(kWaterOutputs);

  static WaterField zeros() { return WaterField{}; }

  // A ~ mean_color everywhere, weights U(+-1/sqrt(fan_in)), all biases -1.
  static WaterField initialized(const Vec3& mean_color, std::mt19937_64& rng);

  // Spatially uniform medium inside the model class: zero weights, biases
  // set so softplus returns the requested coefficients.
  static WaterField uniform(const Vec3& ambient, const Vec3& beta_d, const Vec3& beta_b);

  size_t parameter_count() const { return 16 * 3 + w1.size() + b1.size() + w2.size() + b2.size(); }
  // Flat views in declared field order (sh row-major by basis, then w1, b1, w2, b2 column-major).
  std::vector<double> flatten() const;
  void unflatten(const std::vector<double>& flat);
  uint64_t fingerprint() const;

  WaterField& operator+=(const WaterField& o);
};

double softplus(double x);
double inverse_softplus(double y);

/// The 16 real SH basis values at a unit direction, ordered by (l, m) with m
/// from -l to l.
std::array<double, kShBasis> sh_basis(const Vec3& dir);

Vec3 sh_ambient(const WaterField& field, const Vec3& dir);

/// (d, sin(pi d), cos(pi d), sin(2 pi d), cos(2 pi d), ..., cos(8 pi d)).
std::array<double, kEncodingDim> positional_encode(const Vec3& dir);

std::pair<Vec3, Vec3> water_coeffs(const WaterField& field, const Vec3& dir);

using Rgb3xN = Eigen::Matrix<double, 3, Eigen::Dynamic>;

/// Batched forward pass over a set of directions with the activations kept
/// for `field_backward`.
struct WaterEval {
  Rgb3xN A, beta_d, beta_b;
  // cached activations
  Eigen::MatrixXd basis;   // 16 x n
  Eigen::MatrixXd enc;     // 27 x n
  Eigen::MatrixXd act1;    // 128 x n
  Eigen::MatrixXd pre2;    // 6 x n
  Eigen::MatrixXd dact1;   // softplus'(pre1)
  Eigen::MatrixXd dact2;   // softplus'(pre2)
  uint64_t field_fingerprint = 0;

  Eigen::Index count() const { return A.cols(); }
};

/// Direction-only part of the pass; reusable across steps for a fixed camera.
struct DirectionFeatures {
  Eigen::MatrixXd basis;  // 16 x n
  Eigen::MatrixXd enc;    // 27 x n
};

DirectionFeatures direction_features(const std::vector<Vec3>& dirs);

WaterEval field_forward(const WaterField& field, const std::vector<Vec3>& dirs);
WaterEval field_forward(const WaterField& field, const DirectionFeatures& features);

/// Exact gradients of sum(gA.A + gD.beta_d + gB.beta_b) w.r.t. every field
/// parameter. Throws ContractViolation if `eval` was not produced by this
/// field or the upstream shapes differ.
WaterField field_backward(const WaterField& field, const WaterEval& eval, const Rgb3xN& grad_A,
                          const Rgb3xN& grad_beta_d, const Rgb3xN& grad_beta_b);

}  // namespace aquags
