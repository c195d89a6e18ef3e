#pragma once

#include <cstdint>
#include <vector>

#include "aquags/image.hpp"
#include "aquags/rasterizer.hpp"

namespace aquags {

/// Pseudo-depth guidance for one view. Disparity is normalized relative
/// inverse depth in [0, 1], larger = nearer.
struct PseudoDepth {
  Image disparity;  // single channel
  std::vector<uint8_t> near_mask, far_mask, edge_mask;
};

struct LossWeights {
  double lambda_ssim = 0.2;
  double lambda_dgt = 0.0001;
  double lambda_dvm = 0.001;
  double lambda_idc = 0.1;
  double lambda_dpf = 0.02;
  double gamma_near = 1.0;
  double gamma_far = 10.0;
  double eta_near = 1.0;
  double eta_far = 0.1;
  double eta_edge = 0.001;
  double tau_disparity = 0.4;
  double tau_edge = 0.05;
  int patch_size = 256;
};

struct ScalarLoss {
  double value = 0;
  Image grad;  // same shape as the differentiated input
};

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;

/// Mean SSIM over pixels and channels with a zero-padded 11x11 Gaussian
/// window (sigma 1.5). When `grad_a` is non-null it receives dSSIM/da.
double ssim_value(const Image& a, const Image& b, Image* grad_a = nullptr);

struct ReconLoss {
  double value = 0, l1 = 0, ssim = 0;
  Image grad;
};

/// (1 - lambda_ssim) L1 + lambda_ssim (1 - SSIM) / 2; gradient w.r.t. `rendered`.
ReconLoss recon_loss(const Image& rendered, const Image& target, double lambda_ssim);

PseudoDepth build_masks(const Image& disparity, double tau_disparity, double tau_edge);
// Normalized Sobel magnitude (kernels / 8, replicate border).
Image sobel_magnitude(const Image& gray);

ScalarLoss dgt_loss(const Image& t_metric, const PseudoDepth& masks, double gamma_near, double gamma_far);
ScalarLoss dvm_loss(const Image& depth_variance, const PseudoDepth& masks, double eta_near, double eta_far,
                    double eta_edge);
/// 1 - Pearson(1 / (D + 1), disparity); gradient w.r.t. D.
ScalarLoss idc_loss(const Image& depth, const Image& disparity);
/// Depth-weighted patch DFT magnitude L1; gradient w.r.t. `rendered`.
ScalarLoss dpf_loss(const Image& rendered, const Image& target, const Image& disparity, int patch_size);

struct LossReport {
  double total = 0;
  double recon = 0, l1 = 0, ssim = 0, dgt = 0, dvm = 0, idc = 0, dpf = 0;
  Image grad_I;         // dL/dI (underwater render)
  BundleGrad grad_bundle;  // dL/d{t_metric, V_D, D}; J and R are filled by the compositor chain
};

/// L_recon + lambda_dgt L_dgt + lambda_dvm L_dvm + lambda_idc L_idc + lambda_dpf L_dpf.
/// Terms whose weight is zero are skipped entirely.
LossReport total_loss(const Image& rendered, const Image& target, const RenderBundle& bundle,
                      const PseudoDepth& guide, const LossWeights& w);

}  // namespace aquags
