#pragma once

#include <string>

#include "aquags/geom.hpp"
#include "aquags/image.hpp"
#include "aquags/waterfield.hpp"

namespace aquags {

struct Checkpoint;

struct UnderwaterImage {
  Image I;             // linear RGB, unclamped
  Image clamped_view;  // I clamped to [0, 1]
};

struct ComposeGrad {
  Image J, R, A, beta_d, beta_b;  // R is single-channel
};

/// I = J exp(-beta_d R) + A (1 - exp(-beta_b R)), per pixel and channel.
/// J, A, beta_d, beta_b are H x W x 3; R is H x W x 1.
UnderwaterImage compose(const Image& J, const Image& R, const Image& A, const Image& beta_d, const Image& beta_b);

ComposeGrad compose_backward(const Image& J, const Image& R, const Image& A, const Image& beta_d,
                             const Image& beta_b, const Image& grad_I);

/// Algebraic inverse of `compose` for J. Ill-conditioned where exp(-beta_d R) is tiny.
Image invert_formation(const Image& I, const Image& R, const Image& A, const Image& beta_d, const Image& beta_b);

/// Packs a 3 x (H W) matrix, column per pixel in row-major order, into an image.
Image rgb_matrix_to_image(const Rgb3xN& m, int height, int width);
Rgb3xN image_to_rgb_matrix(const Image& img);

struct Restoration {
  Image J;  // clamped to [0, 1]
  Image D;
};

/// Water-free render of a checkpoint (3D Gaussian branch only).
Restoration restore(const Checkpoint& ckpt, const Camera& cam, int threads = 1);
Restoration restore(const std::string& checkpoint_path, const Camera& cam, int threads = 1);

}  // namespace aquags
