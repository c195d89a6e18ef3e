#include "aquags/compositor.hpp"

#include <cmath>
#include <cstring>

#include "aquags/checkpoint.hpp"
#include "aquags/errors.hpp"
#include "aquags/gaussians.hpp"
#include "aquags/rasterizer.hpp"

namespace aquags {

namespace {

void check_shapes(const Image& J, const Image& R, const Image& A, const Image& bd, const Image& bb) {
  require(J.channels == 3 && R.channels == 1, "compose: J needs 3 channels and R one channel");
  require(J.height == R.height && J.width == R.width, "compose: J and R differ in size");
  require(A.same_shape(J) && bd.same_shape(J) && bb.same_shape(J), "compose: water buffers differ in shape");
}

}  // namespace

UnderwaterImage compose(const Image& J, const Image& R, const Image& A, const Image& beta_d, const Image& beta_b) {
  check_shapes(J, R, A, beta_d, beta_b);
  UnderwaterImage out;
  out.I = Image(J.height, J.width, 3);
  for (size_t p = 0; p < J.pixels(); ++p) {
    const double r = R.data[p];
    for (int c = 0; c < 3; ++c) {
      const size_t k = 3 * p + c;
      out.I.data[k] = J.data[k] * std::exp(-beta_d.data[k] * r) + A.data[k] * (1.0 - std::exp(-beta_b.data[k] * r));
    }
  }
  out.clamped_view = clamp01(out.I);
  return out;
}

ComposeGrad compose_backward(const Image& J, const Image& R, const Image& A, const Image& beta_d,
                             const Image& beta_b, const Image& grad_I) {
  check_shapes(J, R, A, beta_d, beta_b);
  require(grad_I.same_shape(J), "compose_backward: upstream shape mismatch");
  ComposeGrad g;
  g.J = Image(J.height, J.width, 3);
  g.A = Image(J.height, J.width, 3);
  g.beta_d = Image(J.height, J.width, 3);
  g.beta_b = Image(J.height, J.width, 3);
  g.R = Image(J.height, J.width, 1);
  for (size_t p = 0; p < J.pixels(); ++p) {
    const double r = R.data[p];
    double gr = 0;
    for (int c = 0; c < 3; ++c) {
      const size_t k = 3 * p + c;
      const double up = grad_I.data[k];
      const double td = std::exp(-beta_d.data[k] * r);
      const double tb = std::exp(-beta_b.data[k] * r);
      g.J.data[k] = up * td;
      g.A.data[k] = up * (1.0 - tb);
      g.beta_d.data[k] = -up * J.data[k] * r * td;
      g.beta_b.data[k] = up * A.data[k] * r * tb;
      gr += up * (-J.data[k] * beta_d.data[k] * td + A.data[k] * beta_b.data[k] * tb);
    }
    g.R.data[p] = gr;
  }
  return g;
}

Image invert_formation(const Image& I, const Image& R, const Image& A, const Image& beta_d, const Image& beta_b) {
  check_shapes(I, R, A, beta_d, beta_b);
  Image J(I.height, I.width, 3);
  for (size_t p = 0; p < I.pixels(); ++p) {
    const double r = R.data[p];
    for (int c = 0; c < 3; ++c) {
      const size_t k = 3 * p + c;
      J.data[k] = (I.data[k] - A.data[k] * (1.0 - std::exp(-beta_b.data[k] * r))) * std::exp(beta_d.data[k] * r);
    }
  }
  return J;
}

Image rgb_matrix_to_image(const Rgb3xN& m, int height, int width) {
  require(m.cols() == static_cast<Eigen::Index>(height) * width, "rgb_matrix_to_image: size mismatch");
  Image img(height, width, 3);
  std::memcpy(img.data.data(), m.data(), sizeof(double) * img.data.size());
  return img;
}

Rgb3xN image_to_rgb_matrix(const Image& img) {
  require(img.channels == 3, "image_to_rgb_matrix needs 3 channels");
  Rgb3xN m(3, static_cast<Eigen::Index>(img.pixels()));
  std::memcpy(m.data(), img.data.data(), sizeof(double) * img.data.size());
  return m;
}

Restoration restore(const Checkpoint& ckpt, const Camera& cam, int threads) {
  const RenderBundle b = rasterize(project(ckpt.cloud, cam), cam, threads);
  return {clamp01(b.J), b.D};
}

Restoration restore(const std::string& checkpoint_path, const Camera& cam, int threads) {
  return restore(load_checkpoint(checkpoint_path), cam, threads);
}

}  // namespace aquags
