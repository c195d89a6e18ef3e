#include "aquags/losses.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>

#include "aquags/errors.hpp"

namespace aquags {

namespace {

std::array<double, kSsimWindow> gaussian_window() {
  std::array<double, kSsimWindow> g{};
  double sum = 0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double x = i - kSsimWindow / 2;
    g[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
    sum += g[i];
  }
  for (double& v : g) v /= sum;
  return g;
}

// Same-size separable correlation of one H x W plane with zero padding. The
// window is symmetric, so this is also its own adjoint.
std::vector<double> blur(const std::vector<double>& in, int H, int W) {
  static const auto g = gaussian_window();
  constexpr int r = kSsimWindow / 2;
  std::vector<double> tmp(in.size(), 0.0), out(in.size(), 0.0);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double s = 0;
      for (int k = -r; k <= r; ++k) {
        const int xx = x + k;
        if (xx >= 0 && xx < W) s += g[k + r] * in[static_cast<size_t>(y) * W + xx];
      }
      tmp[static_cast<size_t>(y) * W + x] = s;
    }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double s = 0;
      for (int k = -r; k <= r; ++k) {
        const int yy = y + k;
        if (yy >= 0 && yy < H) s += g[k + r] * tmp[static_cast<size_t>(yy) * W + x];
      }
      out[static_cast<size_t>(y) * W + x] = s;
    }
  return out;
}

std::vector<double> plane(const Image& img, int ch) {
  std::vector<double> p(img.pixels());
  for (size_t i = 0; i < p.size(); ++i) p[i] = img.data[i * img.channels + ch];
  return p;
}

void check_masks(const Image& buf, const PseudoDepth& m) {
  require(buf.channels == 1, "loss buffer must be single channel");
  require(m.near_mask.size() == buf.pixels() && m.far_mask.size() == buf.pixels() &&
              m.edge_mask.size() == buf.pixels(),
          "mask size does not match the buffer");
}

}  // namespace

double ssim_value(const Image& a, const Image& b, Image* grad_a) {
  require(a.same_shape(b), "ssim: shape mismatch");
  const int H = a.height, W = a.width;
  const double count = static_cast<double>(a.size());
  if (grad_a) *grad_a = Image(H, W, a.channels);
  double total = 0;
  for (int ch = 0; ch < a.channels; ++ch) {
    const auto x = plane(a, ch), y = plane(b, ch);
    std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    const auto mx = blur(x, H, W), my = blur(y, H, W);
    const auto exx = blur(xx, H, W), eyy = blur(yy, H, W), exy = blur(xy, H, W);
    std::vector<double> d_m(x.size()), d_exx(x.size()), d_exy(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
      const double sxx = exx[i] - mx[i] * mx[i];
      const double syy = eyy[i] - my[i] * my[i];
      const double sxy = exy[i] - mx[i] * my[i];
      const double a1 = 2 * mx[i] * my[i] + kSsimC1, a2 = 2 * sxy + kSsimC2;
      const double b1 = mx[i] * mx[i] + my[i] * my[i] + kSsimC1, b2 = sxx + syy + kSsimC2;
      const double s = a1 * a2 / (b1 * b2);
      total += s;
      if (grad_a) {
        d_m[i] = s * (2 * my[i] / a1 - 2 * my[i] / a2 - 2 * mx[i] / b1 + 2 * mx[i] / b2) / count;
        d_exx[i] = -s / b2 / count;
        d_exy[i] = 2 * s / a2 / count;
      }
    }
    if (grad_a) {
      const auto g_m = blur(d_m, H, W), g_xx = blur(d_exx, H, W), g_xy = blur(d_exy, H, W);
      for (size_t i = 0; i < x.size(); ++i)
        grad_a->data[i * a.channels + ch] = g_m[i] + 2 * x[i] * g_xx[i] + y[i] * g_xy[i];
    }
  }
  return total / count;
}

ReconLoss recon_loss(const Image& rendered, const Image& target, double lambda_ssim) {
  require(rendered.same_shape(target), "recon_loss: shape mismatch");
  ReconLoss out;
  const double n = static_cast<double>(rendered.size());
  Image g_ssim;
  out.ssim = ssim_value(rendered, target, &g_ssim);
  out.grad = Image(rendered.height, rendered.width, rendered.channels);
  double l1 = 0;
  for (size_t i = 0; i < rendered.size(); ++i) {
    const double d = rendered.data[i] - target.data[i];
    l1 += std::abs(d);
    const double sign = d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0);
    out.grad.data[i] = (1 - lambda_ssim) * sign / n - lambda_ssim * 0.5 * g_ssim.data[i];
  }
  out.l1 = l1 / n;
  out.value = (1 - lambda_ssim) * out.l1 + lambda_ssim * 0.5 * (1 - out.ssim);
  return out;
}

Image sobel_magnitude(const Image& gray) {
  require(gray.channels == 1, "sobel_magnitude needs a single channel");
  const int H = gray.height, W = gray.width;
  auto px = [&](int r, int c) { return gray.at(std::clamp(r, 0, H - 1), std::clamp(c, 0, W - 1)); };
  Image out(H, W, 1);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      const double gx = (px(r - 1, c + 1) + 2 * px(r, c + 1) + px(r + 1, c + 1) - px(r - 1, c - 1) -
                         2 * px(r, c - 1) - px(r + 1, c - 1)) / 8.0;
      const double gy = (px(r + 1, c - 1) + 2 * px(r + 1, c) + px(r + 1, c + 1) - px(r - 1, c - 1) -
                         2 * px(r - 1, c) - px(r - 1, c + 1)) / 8.0;
      out.at(r, c) = std::hypot(gx, gy);
    }
  return out;
}

PseudoDepth build_masks(const Image& disparity, double tau_disparity, double tau_edge) {
  require(disparity.channels == 1, "build_masks needs a single-channel disparity");
  PseudoDepth p;
  p.disparity = disparity;
  const size_t n = disparity.pixels();
  p.near_mask.assign(n, 0);
  p.far_mask.assign(n, 0);
  p.edge_mask.assign(n, 0);
  const Image edges = sobel_magnitude(disparity);
  for (size_t i = 0; i < n; ++i) {
    const bool near = disparity.data[i] > tau_disparity;
    p.near_mask[i] = near;
    p.far_mask[i] = !near;
    p.edge_mask[i] = edges.data[i] > tau_edge;
  }
  return p;
}

ScalarLoss dgt_loss(const Image& t_metric, const PseudoDepth& masks, double gamma_near, double gamma_far) {
  check_masks(t_metric, masks);
  ScalarLoss out;
  out.grad = Image(t_metric.height, t_metric.width, 1);
  const double n = static_cast<double>(t_metric.pixels());
  for (size_t i = 0; i < t_metric.pixels(); ++i) {
    const double gamma = masks.near_mask[i] ? gamma_near : gamma_far;
    out.value += gamma * t_metric.data[i];
    out.grad.data[i] = gamma / n;
  }
  out.value /= n;
  return out;
}

ScalarLoss dvm_loss(const Image& depth_variance, const PseudoDepth& masks, double eta_near, double eta_far,
                    double eta_edge) {
  check_masks(depth_variance, masks);
  ScalarLoss out;
  out.grad = Image(depth_variance.height, depth_variance.width, 1);
  const double n = static_cast<double>(depth_variance.pixels());
  for (size_t i = 0; i < depth_variance.pixels(); ++i) {
    const double eta = masks.edge_mask[i] ? eta_edge : (masks.near_mask[i] ? eta_near : eta_far);
    out.value += eta * depth_variance.data[i];
    out.grad.data[i] = eta / n;
  }
  out.value /= n;
  return out;
}

ScalarLoss idc_loss(const Image& depth, const Image& disparity) {
  require(depth.channels == 1 && disparity.same_shape(depth), "idc_loss: shape mismatch");
  const size_t n = depth.pixels();
  std::vector<double> inv(n);
  double mx = 0, my = 0;
  for (size_t i = 0; i < n; ++i) {
    inv[i] = 1.0 / (depth.data[i] + 1.0);
    mx += inv[i];
    my += disparity.data[i];
  }
  mx /= n;
  my /= n;
  double vx = 0, vy = 0, cxy = 0;
  for (size_t i = 0; i < n; ++i) {
    const double dx = inv[i] - mx, dy = disparity.data[i] - my;
    vx += dx * dx;
    vy += dy * dy;
    cxy += dx * dy;
  }
  vx /= n;
  vy /= n;
  cxy /= n;
  require(vy > 1e-12, "idc_loss: pseudo-depth has zero variance");
  ScalarLoss out;
  out.grad = Image(depth.height, depth.width, 1);
  if (vx < 1e-12) {
    out.value = 1.0;
    return out;
  }
  const double sx = std::sqrt(vx), sy = std::sqrt(vy);
  const double rho = cxy / (sx * sy);
  out.value = 1.0 - rho;
  for (size_t i = 0; i < n; ++i) {
    const double d_rho = ((disparity.data[i] - my) / (sx * sy) - rho * (inv[i] - mx) / vx) / n;
    out.grad.data[i] = d_rho * inv[i] * inv[i];  // -(d rho) * d inv/dD, inv' = -inv^2
  }
  return out;
}

ScalarLoss dpf_loss(const Image& rendered, const Image& target, const Image& disparity, int k) {
  require(rendered.same_shape(target), "dpf_loss: image shape mismatch");
  require(disparity.channels == 1 && disparity.height == rendered.height && disparity.width == rendered.width,
          "dpf_loss: disparity shape mismatch");
  if (k < 1 || k > std::min(rendered.height, rendered.width))
    throw ConfigError("dpf_loss: patch size " + std::to_string(k) + " does not fit the image");
  using Cmat = Eigen::MatrixXcd;
  Cmat dft(k, k);
  for (int u = 0; u < k; ++u)
    for (int x = 0; x < k; ++x)
      dft(u, x) = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>((u * x) % k) / k);
  const int py = rendered.height / k, px = rendered.width / k;
  const double K = static_cast<double>(py) * px;
  ScalarLoss out;
  out.grad = Image(rendered.height, rendered.width, rendered.channels);
  Eigen::MatrixXd xr(k, k), xt(k, k);
  for (int pr = 0; pr < py; ++pr)
    for (int pc = 0; pc < px; ++pc) {
      double mean_disp = 0;
      for (int y = 0; y < k; ++y)
        for (int x = 0; x < k; ++x) mean_disp += disparity.at(pr * k + y, pc * k + x);
      const double psi = 1.0 - mean_disp / (k * k);
      for (int ch = 0; ch < rendered.channels; ++ch) {
        for (int y = 0; y < k; ++y)
          for (int x = 0; x < k; ++x) {
            xr(y, x) = rendered.at(pr * k + y, pc * k + x, ch);
            xt(y, x) = target.at(pr * k + y, pc * k + x, ch);
          }
        const Cmat fr = dft * xr.cast<std::complex<double>>() * dft;
        const Cmat ft = dft * xt.cast<std::complex<double>>() * dft;
        Cmat g(k, k);
        for (int v = 0; v < k; ++v)
          for (int u = 0; u < k; ++u) {
            const double mr = std::abs(fr(u, v)), mt = std::abs(ft(u, v));
            out.value += psi * std::abs(mr - mt) / K;
            const double s = mr > mt ? 1.0 : (mr < mt ? -1.0 : 0.0);
            g(u, v) = mr > 0 ? std::complex<double>(psi * s / K / mr) * fr(u, v) : std::complex<double>(0.0);
          }
        // dL/dX = Re(W conj(G) W) with W symmetric.
        const Eigen::MatrixXd gx = (dft * g.conjugate() * dft).real();
        for (int y = 0; y < k; ++y)
          for (int x = 0; x < k; ++x) out.grad.at(pr * k + y, pc * k + x, ch) = gx(y, x);
      }
    }
  return out;
}

LossReport total_loss(const Image& rendered, const Image& target, const RenderBundle& bundle,
                      const PseudoDepth& guide, const LossWeights& w) {
  LossReport rep;
  const ReconLoss rec = recon_loss(rendered, target, w.lambda_ssim);
  rep.recon = rec.value;
  rep.l1 = rec.l1;
  rep.ssim = rec.ssim;
  rep.grad_I = rec.grad;
  rep.grad_bundle = BundleGrad::zeros(rendered.height, rendered.width);
  rep.total = rec.value;
  auto axpy = [](Image& dst, double a, const Image& src) {
    for (size_t i = 0; i < dst.size(); ++i) dst.data[i] += a * src.data[i];
  };
  if (w.lambda_dgt != 0) {
    const ScalarLoss l = dgt_loss(bundle.t_metric, guide, w.gamma_near, w.gamma_far);
    rep.dgt = l.value;
    rep.total += w.lambda_dgt * l.value;
    axpy(rep.grad_bundle.t_metric, w.lambda_dgt, l.grad);
  }
  if (w.lambda_dvm != 0) {
    const ScalarLoss l = dvm_loss(bundle.V_D, guide, w.eta_near, w.eta_far, w.eta_edge);
    rep.dvm = l.value;
    rep.total += w.lambda_dvm * l.value;
    axpy(rep.grad_bundle.V_D, w.lambda_dvm, l.grad);
  }
  if (w.lambda_idc != 0) {
    const ScalarLoss l = idc_loss(bundle.D, guide.disparity);
    rep.idc = l.value;
    rep.total += w.lambda_idc * l.value;
    axpy(rep.grad_bundle.D, w.lambda_idc, l.grad);
  }
  if (w.lambda_dpf != 0) {
    const ScalarLoss l = dpf_loss(rendered, target, guide.disparity, w.patch_size);
    rep.dpf = l.value;
    rep.total += w.lambda_dpf * l.value;
    axpy(rep.grad_I, w.lambda_dpf, l.grad);
  }
  return rep;
}

}  // namespace aquags
