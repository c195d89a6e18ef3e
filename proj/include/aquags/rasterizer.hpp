#pragma once

#include <cstdint>
#include <vector>

#include "aquags/gaussians.hpp"
#include "aquags/image.hpp"

namespace aquags {

inline constexpr double kAlphaMax = 0.99;
inline constexpr double kAlphaMin = 1.0 / 255.0;
inline constexpr double kTransmittanceStop = 1e-4;
inline constexpr int kTileSize = 4;

/// Per-pixel outputs of one rasterization pass.
struct RenderBundle {
  Image J;         // H x W x 3 water-free color
  Image o_acc;     // accumulated opacity
  Image D;         // normalized depth (r_max where o_acc == 0)
  Image R;         // normalized Euclidean distance (r_max where o_acc == 0)
  Image V_D;       // depth variance
  Image t_metric;  // transmittance bimodality metric
  std::vector<int> per_pixel_N;

  // Forward bookkeeping replayed by the backward pass.
  double r_max = 0;
  std::vector<int> sorted;                 // splat indices, ascending depth
  std::vector<std::vector<int>> tiles;     // per tile: positions into `sorted`
  std::vector<int> stop_pos;               // per pixel: tile-list position one past the last visited
  std::vector<double> final_T;             // per pixel
  uint64_t fingerprint = 0;                // hash of the forward inputs

  int height() const { return J.height; }
  int width() const { return J.width; }
};

/// Upstream gradients for every differentiable RenderBundle buffer.
/// Empty images are treated as zero.
struct BundleGrad {
  Image J, o_acc, D, R, V_D, t_metric;

  static BundleGrad zeros(int height, int width);
};

/// -log(exp(-10|T|) + exp(-10|1-T|)) and its derivative for T in [0, 1].
double transmittance_penalty(double T);
double transmittance_penalty_grad(double T);

uint64_t fingerprint_splats(const std::vector<Splat2D>& splats, const Camera& cam);

RenderBundle rasterize(const std::vector<Splat2D>& splats, const Camera& cam, int threads = 1);

/// Reverse mode through `rasterize`. Throws ContractViolation when the bundle
/// was not produced from exactly these splats and camera.
std::vector<SplatGrad> rasterize_backward(const std::vector<Splat2D>& splats, const Camera& cam,
                                          const RenderBundle& bundle, const BundleGrad& upstream,
                                          int threads = 1);

}  // namespace aquags
