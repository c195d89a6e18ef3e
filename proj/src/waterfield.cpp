#include "aquags/waterfield.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

#include "aquags/errors.hpp"
#include "aquags/gaussians.hpp"

namespace aquags {

namespace {

void check_unit(const Vec3& dir) {
  if (std::abs(dir.norm() - 1.0) > 1e-6) throw ContractViolation("water field query needs a unit direction");
}

// Softplus and its derivative (the logistic sigmoid) sharing one exponential.
// `e` and `inv` are scratch buffers reused across calls.
void softplus_array(const Eigen::MatrixXd& x, Eigen::MatrixXd& value, Eigen::MatrixXd& slope, Eigen::ArrayXXd& e,
                    Eigen::ArrayXXd& inv) {
  const auto xa = x.array();
  e.resize(x.rows(), x.cols());
  inv.resize(x.rows(), x.cols());
  value.resize(x.rows(), x.cols());
  slope.resize(x.rows(), x.cols());
  e = (-xa.abs()).exp();
  inv = 1.0 / (1.0 + e);
  value.array() = xa.cwiseMax(0.0) + (1.0 + e).log();
  slope.array() = 0.5 + (inv - 0.5) * xa.sign();
}

}  // namespace

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double inverse_softplus(double y) {
  require(y > 0, "inverse_softplus needs a positive value");
  return y > 30 ? y : std::log(std::expm1(y));
}

WaterField WaterField::initialized(const Vec3& mean_color, std::mt19937_64& rng) {
  WaterField f;
  f.sh.row(0) = (mean_color * 2.0 * std::sqrt(std::numbers::pi)).transpose();
  std::uniform_real_distribution<double> u1(-1.0 / std::sqrt(double(kEncodingDim)),
                                            1.0 / std::sqrt(double(kEncodingDim)));
  std::uniform_real_distribution<double> u2(-1.0 / std::sqrt(double(kHiddenDim)),
                                            1.0 / std::sqrt(double(kHiddenDim)));
  for (Eigen::Index j = 0; j < f.w1.cols(); ++j)
    for (Eigen::Index i = 0; i < f.w1.rows(); ++i) f.w1(i, j) = u1(rng);
  for (Eigen::Index j = 0; j < f.w2.cols(); ++j)
    for (Eigen::Index i = 0; i < f.w2.rows(); ++i) f.w2(i, j) = u2(rng);
  f.b1.setConstant(-1.0);
  f.b2.setConstant(-1.0);
  return f;
}

WaterField WaterField::uniform(const Vec3& ambient, const Vec3& beta_d, const Vec3& beta_b) {
  WaterField f;
  f.sh.row(0) = (ambient * 2.0 * std::sqrt(std::numbers::pi)).transpose();
  // softplus(b2 + W2 softplus(b1)) with W2 = 0 is softplus(b2).
  for (int c = 0; c < 3; ++c) {
    f.b2[c] = inverse_softplus(beta_d[c]);
    f.b2[3 + c] = inverse_softplus(beta_b[c]);
  }
  return f;
}

std::vector<double> WaterField::flatten() const {
  std::vector<double> out;
  out.reserve(parameter_count());
  for (int i = 0; i < kShBasis; ++i)
    for (int c = 0; c < 3; ++c) out.push_back(sh(i, c));
  out.insert(out.end(), w1.data(), w1.data() + w1.size());
  out.insert(out.end(), b1.data(), b1.data() + b1.size());
  out.insert(out.end(), w2.data(), w2.data() + w2.size());
  out.insert(out.end(), b2.data(), b2.data() + b2.size());
  return out;
}

void WaterField::unflatten(const std::vector<double>& flat) {
  require(flat.size() == parameter_count(), "WaterField::unflatten size mismatch");
  const double* p = flat.data();
  for (int i = 0; i < kShBasis; ++i)
    for (int c = 0; c < 3; ++c) sh(i, c) = *p++;
  std::memcpy(w1.data(), p, sizeof(double) * w1.size());
  p += w1.size();
  std::memcpy(b1.data(), p, sizeof(double) * b1.size());
  p += b1.size();
  std::memcpy(w2.data(), p, sizeof(double) * w2.size());
  p += w2.size();
  std::memcpy(b2.data(), p, sizeof(double) * b2.size());
}

uint64_t WaterField::fingerprint() const {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const double* d, Eigen::Index n) {
    const auto* b = reinterpret_cast<const unsigned char*>(d);
    for (size_t i = 0; i < sizeof(double) * static_cast<size_t>(n); ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  mix(sh.data(), sh.size());
  mix(w1.data(), w1.size());
  mix(b1.data(), b1.size());
  mix(w2.data(), w2.size());
  mix(b2.data(), b2.size());
  return h;
}

WaterField& WaterField::operator+=(const WaterField& o) {
  sh += o.sh;
  w1 += o.w1;
  b1 += o.b1;
  w2 += o.w2;
  b2 += o.b2;
  return *this;
}

std::array<double, kShBasis> sh_basis(const Vec3& d) {
  const double x = d.x(), y = d.y(), z = d.z();
  const double xx = x * x, yy = y * y, zz = z * z;
  return {
      0.28209479177387814,
      -0.4886025119029199 * y,
      0.4886025119029199 * z,
      -0.4886025119029199 * x,
      1.0925484305920792 * x * y,
      -1.0925484305920792 * y * z,
      0.31539156525252005 * (2.0 * zz - xx - yy),
      -1.0925484305920792 * x * z,
      0.5462742152960396 * (xx - yy),
      -0.5900435899266435 * y * (3.0 * xx - yy),
      2.890611442640554 * x * y * z,
      -0.4570457994644658 * y * (4.0 * zz - xx - yy),
      0.3731763325901154 * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
      -0.4570457994644658 * x * (4.0 * zz - xx - yy),
      1.445305721320277 * z * (xx - yy),
      -0.5900435899266435 * x * (xx - 3.0 * yy),
  };
}

Vec3 sh_ambient(const WaterField& field, const Vec3& dir) {
  check_unit(dir);
  const auto basis = sh_basis(dir);
  Vec3 a = Vec3::Zero();
  for (int i = 0; i < kShBasis; ++i) a += basis[i] * field.sh.row(i).transpose();
  return a;
}

std::array<double, kEncodingDim> positional_encode(const Vec3& dir) {
  std::array<double, kEncodingDim> e{};
  e[0] = dir.x();
  e[1] = dir.y();
  e[2] = dir.z();
  int k = 3;
  double freq = std::numbers::pi;
  for (int level = 0; level < 4; ++level, freq *= 2.0) {
    for (int c = 0; c < 3; ++c) e[k++] = std::sin(freq * dir[c]);
    for (int c = 0; c < 3; ++c) e[k++] = std::cos(freq * dir[c]);
  }
  return e;
}

std::pair<Vec3, Vec3> water_coeffs(const WaterField& field, const Vec3& dir) {
  check_unit(dir);
  const auto enc = positional_encode(dir);
  const Eigen::Map<const Eigen::Matrix<double, kEncodingDim, 1>> x(enc.data());
  Eigen::VectorXd h = field.w1 * x + field.b1;
  for (Eigen::Index i = 0; i < h.size(); ++i) h[i] = softplus(h[i]);
  Eigen::VectorXd o = field.w2 * h + field.b2;
  for (Eigen::Index i = 0; i < o.size(); ++i) o[i] = softplus(o[i]);
  return {o.head<3>(), o.tail<3>()};
}

DirectionFeatures direction_features(const std::vector<Vec3>& dirs) {
  DirectionFeatures f;
  const auto n = static_cast<Eigen::Index>(dirs.size());
  f.basis.resize(kShBasis, n);
  f.enc.resize(kEncodingDim, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    check_unit(dirs[j]);
    const auto b = sh_basis(dirs[j]);
    const auto e = positional_encode(dirs[j]);
    for (int i = 0; i < kShBasis; ++i) f.basis(i, j) = b[i];
    for (int i = 0; i < kEncodingDim; ++i) f.enc(i, j) = e[i];
  }
  return f;
}

WaterEval field_forward(const WaterField& field, const std::vector<Vec3>& dirs) {
  return field_forward(field, direction_features(dirs));
}

WaterEval field_forward(const WaterField& field, const DirectionFeatures& features) {
  WaterEval ev;
  const Eigen::Index n = features.enc.cols();
  require(features.basis.cols() == n, "field_forward: feature sizes differ");
  ev.basis = features.basis;
  ev.enc = features.enc;
  ev.A = field.sh.transpose() * ev.basis;
  ev.act1.resize(kHiddenDim, n);
  ev.dact1.resize(kHiddenDim, n);
  ev.pre2.resize(kWaterOutputs, n);
  // Column blocks keep the hidden layer in cache between the two products.
  constexpr Eigen::Index kBlock = 256;
  Eigen::MatrixXd pre, act, dact;
  Eigen::ArrayXXd e, inv;
  for (Eigen::Index c0 = 0; c0 < n; c0 += kBlock) {
    const Eigen::Index nc = std::min(kBlock, n - c0);
    pre.noalias() = field.w1 * ev.enc.middleCols(c0, nc);
    pre.colwise() += field.b1;
    softplus_array(pre, act, dact, e, inv);
    ev.act1.middleCols(c0, nc) = act;
    ev.dact1.middleCols(c0, nc) = dact;
    ev.pre2.middleCols(c0, nc).noalias() = field.w2 * act;
  }
  ev.pre2.colwise() += field.b2;
  // The output layer uses the exact scalar form so tiny coefficients stay strictly positive.
  ev.dact2.resize(kWaterOutputs, n);
  ev.beta_d.resize(3, n);
  ev.beta_b.resize(3, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (int r = 0; r < kWaterOutputs; ++r) {
      const double x = ev.pre2(r, j);
      ev.dact2(r, j) = sigmoid(x);
      (r < 3 ? ev.beta_d(r, j) : ev.beta_b(r - 3, j)) = softplus(x);
    }
  ev.field_fingerprint = field.fingerprint();
  return ev;
}

WaterField field_backward(const WaterField& field, const WaterEval& ev, const Rgb3xN& grad_A,
                          const Rgb3xN& grad_beta_d, const Rgb3xN& grad_beta_b) {
  require(ev.field_fingerprint == field.fingerprint(), "field_backward: cache was produced by a different field");
  const Eigen::Index n = ev.count();
  require(grad_A.cols() == n && grad_beta_d.cols() == n && grad_beta_b.cols() == n,
          "field_backward: upstream size does not match the cached directions");
  WaterField g;
  g.sh = ev.basis * grad_A.transpose();
  Eigen::MatrixXd g_out(kWaterOutputs, n);
  g_out.topRows(3) = grad_beta_d;
  g_out.bottomRows(3) = grad_beta_b;
  const Eigen::MatrixXd g_pre2 = g_out.cwiseProduct(ev.dact2);
  g.w2 = g_pre2 * ev.act1.transpose();
  g.b2 = g_pre2.rowwise().sum();
  const Eigen::MatrixXd w2t = field.w2.transpose();
  constexpr Eigen::Index kBlock = 256;
  Eigen::MatrixXd g_pre1;
  for (Eigen::Index c0 = 0; c0 < n; c0 += kBlock) {
    const Eigen::Index nc = std::min(kBlock, n - c0);
    g_pre1.noalias() = w2t * g_pre2.middleCols(c0, nc);
    g_pre1.array() *= ev.dact1.middleCols(c0, nc).array();
    g.w1.noalias() += g_pre1 * ev.enc.middleCols(c0, nc).transpose();
    g.b1 += g_pre1.rowwise().sum();
  }
  return g;
}

}  // namespace aquags
