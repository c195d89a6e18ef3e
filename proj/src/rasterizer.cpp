#include "aquags/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "aquags/errors.hpp"
#include "aquags/parallel.hpp"

namespace aquags {

namespace {

struct Prepared {
  double mx, my;
  double ia, ib, ic;  // inverse covariance [[ia, ib], [ib, ic]]
  double opacity;
  double depth, dist;
  Vec3 color;
  double q_cut;  // beyond this Mahalanobis distance alpha < 1/255 for sure
};

Prepared prepare(const Splat2D& s) {
  const double a = s.cov2d(0, 0), b = s.cov2d(0, 1), c = s.cov2d(1, 1);
  const double det = a * c - b * b;
  require(det > 0, "rasterize: cov2d is not positive definite");
  // The skip test applies to the unclamped opacity * G, so the cut uses the raw opacity.
  const double level = 255.0 * s.opacity;
  const double q_cut = level >= 1.0 ? 2.0 * std::log(level) + 1e-9 : -1.0;
  return {s.mean2d.x(), s.mean2d.y(), c / det, -b / det, a / det, s.opacity, s.depth_z, s.dist_r, s.color, q_cut};
}

inline double mahalanobis(const Prepared& p, double dx, double dy) {
  return p.ia * dx * dx + 2.0 * p.ib * dx * dy + p.ic * dy * dy;
}

void hash_bytes(uint64_t& h, const void* data, size_t n) {
  const auto* b = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= b[i];
    h *= 1099511628211ull;
  }
}

void hash_double(uint64_t& h, double v) { hash_bytes(h, &v, sizeof v); }

int tiles_x(const Camera& cam) { return (cam.width + kTileSize - 1) / kTileSize; }
int tiles_y(const Camera& cam) { return (cam.height + kTileSize - 1) / kTileSize; }

}  // namespace

double transmittance_penalty(double T) {
  const double t = std::abs(T);
  const double u = std::abs(1.0 - T);
  // -log(e^{-10t} + e^{-10u}) written with a single exponential.
  return 10.0 * std::min(t, u) - std::log1p(std::exp(-10.0 * std::abs(t - u)));
}

double transmittance_penalty_grad(double T) {
  const double t = std::abs(T);
  const double u = std::abs(1.0 - T);
  const double st = T >= 0 ? 10.0 : -10.0;     // d(10t)/dT
  const double su = T <= 1 ? -10.0 : 10.0;     // d(10u)/dT
  // Softmin weights of the two exponents.
  const double e = std::exp(-10.0 * std::abs(t - u));
  const double w_small = 1.0 / (1.0 + e);
  const double w_large = e / (1.0 + e);
  const bool t_small = t <= u;
  return t_small ? w_small * st + w_large * su : w_small * su + w_large * st;
}

BundleGrad BundleGrad::zeros(int height, int width) {
  BundleGrad g;
  g.J = Image(height, width, 3);
  g.o_acc = Image(height, width, 1);
  g.D = Image(height, width, 1);
  g.R = Image(height, width, 1);
  g.V_D = Image(height, width, 1);
  g.t_metric = Image(height, width, 1);
  return g;
}

uint64_t fingerprint_splats(const std::vector<Splat2D>& splats, const Camera& cam) {
  uint64_t h = 1469598103934665603ull;
  hash_bytes(h, &cam.width, sizeof cam.width);
  hash_bytes(h, &cam.height, sizeof cam.height);
  hash_double(h, cam.r_max);
  for (const Splat2D& s : splats) {
    hash_bytes(h, &s.source_index, sizeof s.source_index);
    hash_double(h, s.mean2d.x());
    hash_double(h, s.mean2d.y());
    hash_double(h, s.cov2d(0, 0));
    hash_double(h, s.cov2d(0, 1));
    hash_double(h, s.cov2d(1, 1));
    hash_double(h, s.depth_z);
    hash_double(h, s.dist_r);
    hash_double(h, s.opacity);
    for (int c = 0; c < 3; ++c) hash_double(h, s.color[c]);
  }
  return h;
}

RenderBundle rasterize(const std::vector<Splat2D>& splats, const Camera& cam, int threads) {
  const int H = cam.height, W = cam.width;
  RenderBundle b;
  b.r_max = cam.r_max;
  b.J = Image(H, W, 3);
  b.o_acc = Image(H, W, 1);
  b.D = Image(H, W, 1, cam.r_max);
  b.R = Image(H, W, 1, cam.r_max);
  b.V_D = Image(H, W, 1);
  b.t_metric = Image(H, W, 1);
  b.per_pixel_N.assign(static_cast<size_t>(H) * W, 0);
  b.stop_pos.assign(static_cast<size_t>(H) * W, 0);
  b.final_T.assign(static_cast<size_t>(H) * W, 1.0);
  b.fingerprint = fingerprint_splats(splats, cam);

  std::vector<Prepared> prep;
  prep.reserve(splats.size());
  for (const Splat2D& s : splats) prep.push_back(prepare(s));

  b.sorted.resize(splats.size());
  std::iota(b.sorted.begin(), b.sorted.end(), 0);
  std::sort(b.sorted.begin(), b.sorted.end(), [&](int l, int r) {
    if (splats[l].depth_z != splats[r].depth_z) return splats[l].depth_z < splats[r].depth_z;
    return splats[l].source_index < splats[r].source_index;
  });

  // Bin by the exact alpha >= 1/255 ellipse (plus one pixel of slack) so tiling never changes values.
  const int tx = tiles_x(cam), ty = tiles_y(cam);
  b.tiles.assign(static_cast<size_t>(tx) * ty, {});
  for (int pos = 0; pos < static_cast<int>(b.sorted.size()); ++pos) {
    const Splat2D& s = splats[b.sorted[pos]];
    const double level = 255.0 * s.opacity;
    if (level < 1.0) continue;
    const double r = std::sqrt(2.0 * std::log(level));
    const double hx = r * std::sqrt(s.cov2d(0, 0)) + 1.0;
    const double hy = r * std::sqrt(s.cov2d(1, 1)) + 1.0;
    const int c0 = std::max(0, static_cast<int>(std::floor(s.mean2d.x() - hx)));
    const int c1 = std::min(W - 1, static_cast<int>(std::ceil(s.mean2d.x() + hx)));
    const int r0 = std::max(0, static_cast<int>(std::floor(s.mean2d.y() - hy)));
    const int r1 = std::min(H - 1, static_cast<int>(std::ceil(s.mean2d.y() + hy)));
    if (c0 > c1 || r0 > r1) continue;
    for (int ty_i = r0 / kTileSize; ty_i <= r1 / kTileSize; ++ty_i)
      for (int tx_i = c0 / kTileSize; tx_i <= c1 / kTileSize; ++tx_i)
        b.tiles[static_cast<size_t>(ty_i) * tx + tx_i].push_back(pos);
  }

  parallel_chunks(b.tiles.size(), threads, [&](size_t begin, size_t end, int) {
    std::vector<Prepared> local;
    for (size_t tile = begin; tile < end; ++tile) {
      const auto& list = b.tiles[tile];
      local.clear();
      for (int pos : list) local.push_back(prep[b.sorted[pos]]);
      const int tr = static_cast<int>(tile) / tx, tc = static_cast<int>(tile) % tx;
      for (int row = tr * kTileSize; row < std::min(H, (tr + 1) * kTileSize); ++row)
        for (int col = tc * kTileSize; col < std::min(W, (tc + 1) * kTileSize); ++col) {
          const double px = col + 0.5, py = row + 0.5;
          double T = 1.0, O = 0, Dn = 0, Rn = 0, S1 = 0, S2 = 0, d0 = 0, tsum = 0;
          Vec3 C = Vec3::Zero();
          int n = 0;
          size_t p = 0;
          for (; p < list.size(); ++p) {
            const Prepared& s = local[p];
            const double q = mahalanobis(s, px - s.mx, py - s.my);
            if (q > s.q_cut) continue;
            const double alpha = std::min(kAlphaMax, s.opacity * std::exp(-0.5 * q));
            if (alpha < kAlphaMin) continue;
            if (n == 0) d0 = s.depth;
            const double w = alpha * T;
            tsum += transmittance_penalty(T);
            C += w * s.color;
            O += w;
            Dn += w * s.depth;
            Rn += w * s.dist;
            S1 += w * (s.depth - d0);
            S2 += w * (s.depth - d0) * (s.depth - d0);
            T *= 1.0 - alpha;
            ++n;
            if (T < kTransmittanceStop) {
              ++p;
              break;
            }
          }
          const size_t pix = static_cast<size_t>(row) * W + col;
          b.stop_pos[pix] = static_cast<int>(p);
          b.final_T[pix] = T;
          b.per_pixel_N[pix] = n;
          if (n == 0) continue;
          for (int c = 0; c < 3; ++c) b.J.at(row, col, c) = C[c];
          b.o_acc.at(row, col) = O;
          b.D.at(row, col) = Dn / O;
          b.R.at(row, col) = Rn / O;
          const double m1 = S1 / O;
          b.V_D.at(row, col) = std::max(0.0, S2 / O - m1 * m1);
          b.t_metric.at(row, col) = tsum / n;
        }
    }
  });
  return b;
}

namespace {

struct Contribution {
  int splat;
  double alpha, T, G, dx, dy;
  bool clamped;
};

inline double grad_at(const Image& img, int row, int col, int ch = 0) {
  return img.empty() ? 0.0 : img.at(row, col, ch);
}

}  // namespace

std::vector<SplatGrad> rasterize_backward(const std::vector<Splat2D>& splats, const Camera& cam,
                                          const RenderBundle& bundle, const BundleGrad& up, int threads) {
  const int H = cam.height, W = cam.width;
  require(bundle.height() == H && bundle.width() == W, "rasterize_backward: bundle size mismatch");
  require(bundle.fingerprint == fingerprint_splats(splats, cam),
          "rasterize_backward: bundle was produced from different splats");
  for (const Image* g : {&up.J, &up.o_acc, &up.D, &up.R, &up.V_D, &up.t_metric})
    require(g->empty() || (g->height == H && g->width == W), "rasterize_backward: upstream size mismatch");

  std::vector<Prepared> prep;
  prep.reserve(splats.size());
  for (const Splat2D& s : splats) prep.push_back(prepare(s));

  const int tx = tiles_x(cam);
  const int workers = std::max(1, threads);
  std::vector<std::vector<SplatGrad>> partial(workers, std::vector<SplatGrad>(splats.size()));

  parallel_chunks(bundle.tiles.size(), workers, [&](size_t begin, size_t end, int worker) {
    std::vector<SplatGrad>& out = partial[worker];
    std::vector<Contribution> contrib;
    std::vector<double> gw, wprime;
    for (size_t tile = begin; tile < end; ++tile) {
      const auto& list = bundle.tiles[tile];
      const int tr = static_cast<int>(tile) / tx, tc = static_cast<int>(tile) % tx;
      for (int row = tr * kTileSize; row < std::min(H, (tr + 1) * kTileSize); ++row)
        for (int col = tc * kTileSize; col < std::min(W, (tc + 1) * kTileSize); ++col) {
          const size_t pix = static_cast<size_t>(row) * W + col;
          const int n = bundle.per_pixel_N[pix];
          if (n == 0) continue;
          const double px = col + 0.5, py = row + 0.5;
          contrib.clear();
          double T = 1.0;
          for (int p = 0; p < bundle.stop_pos[pix]; ++p) {
            const int si = bundle.sorted[list[p]];
            const Prepared& s = prep[si];
            const double dx = px - s.mx, dy = py - s.my;
            const double q = mahalanobis(s, dx, dy);
            if (q > s.q_cut) continue;
            const double G = std::exp(-0.5 * q);
            const double raw = s.opacity * G;
            const double alpha = std::min(kAlphaMax, raw);
            if (alpha < kAlphaMin) continue;
            contrib.push_back({si, alpha, T, G, dx, dy, raw > kAlphaMax});
            T *= 1.0 - alpha;
          }
          require(static_cast<int>(contrib.size()) == n, "rasterize_backward: replay diverged from forward");

          const double O = bundle.o_acc.at(row, col);
          const double D = bundle.D.at(row, col);
          const double R = bundle.R.at(row, col);
          const double V = bundle.V_D.at(row, col);
          const Vec3 gJ(grad_at(up.J, row, col, 0), grad_at(up.J, row, col, 1), grad_at(up.J, row, col, 2));
          const double gO = grad_at(up.o_acc, row, col);
          const double gD = grad_at(up.D, row, col);
          const double gR = grad_at(up.R, row, col);
          const double gV = grad_at(up.V_D, row, col);
          const double gt = grad_at(up.t_metric, row, col);

          // Per contribution: dL/dw' (w' = alpha T) and dL/dT through the penalty.
          gw.resize(n);
          wprime.resize(n);
          for (int i = 0; i < n; ++i) {
            const Contribution& k = contrib[i];
            const Prepared& s = prep[k.splat];
            const double w = k.alpha * k.T;
            wprime[i] = w;
            const double dd = s.depth - D;
            gw[i] = gJ.dot(s.color) + gO + (gD * dd + gR * (s.dist - R) + gV * (dd * dd - V)) / O;
            SplatGrad& g = out[k.splat];
            g.color += gJ * w;
            g.depth_z += (gD + 2.0 * gV * dd) * w / O;
            g.dist_r += gR * w / O;
          }
          double suffix = 0.0;
          for (int i = n - 1; i >= 0; --i) {
            const Contribution& k = contrib[i];
            const Prepared& s = prep[k.splat];
            const double gT = gt * transmittance_penalty_grad(k.T) / n;
            const double g_alpha = gw[i] * k.T - suffix / (1.0 - k.alpha);
            suffix += gw[i] * wprime[i] + gT * k.T;
            if (k.clamped) continue;
            SplatGrad& g = out[k.splat];
            g.opacity += g_alpha * k.G;
            const double g_q = -0.5 * g_alpha * s.opacity * k.G;
            const double ux = s.ia * k.dx + s.ib * k.dy;
            const double uy = s.ib * k.dx + s.ic * k.dy;
            const Vec2 gm(-2.0 * g_q * ux, -2.0 * g_q * uy);
            g.mean2d += gm;
            g.abs_mean2d += gm.cwiseAbs();
            g.cov2d += Vec3(-g_q * ux * ux, -2.0 * g_q * ux * uy, -g_q * uy * uy);
          }
        }
    }
  });

  std::vector<SplatGrad> total = std::move(partial[0]);
  for (int w = 1; w < workers; ++w)
    for (size_t i = 0; i < total.size(); ++i) total[i] += partial[w][i];
  return total;
}

}  // namespace aquags
