#include "aquags/metrics.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <sstream>

#include "aquags/errors.hpp"
#include "aquags/losses.hpp"

namespace aquags {

double psnr(const Image& a, const Image& b) {
  require(a.same_shape(b), "psnr: shape mismatch");
  double mse = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse <= 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Image& a, const Image& b) { return ssim_value(a, b); }

Lab srgb_to_lab(const Vec3& srgb) {
  const Vec3 lin(srgb_to_linear(srgb[0]), srgb_to_linear(srgb[1]), srgb_to_linear(srgb[2]));
  Mat3 m;
  m << 0.4124564, 0.3575761, 0.1804375,  //
      0.2126729, 0.7151522, 0.0721750,   //
      0.0193339, 0.1191920, 0.9503041;
  const Vec3 xyz = m * lin;
  const Vec3 white(0.95047, 1.0, 1.08883);
  auto f = [](double t) {
    constexpr double delta = 6.0 / 29.0;
    return t > delta * delta * delta ? std::cbrt(t) : t / (3 * delta * delta) + 4.0 / 29.0;
  };
  const double fx = f(xyz[0] / white[0]), fy = f(xyz[1] / white[1]), fz = f(xyz[2] / white[2]);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

double ciede2000(const Lab& x, const Lab& y) {
  constexpr double pi = std::numbers::pi;
  constexpr double deg = pi / 180.0;
  constexpr double pow25_7 = 6103515625.0;
  const double c1 = std::hypot(x.a, x.b), c2 = std::hypot(y.a, y.b);
  const double c_bar7 = std::pow((c1 + c2) / 2.0, 7.0);
  const double g = 0.5 * (1.0 - std::sqrt(c_bar7 / (c_bar7 + pow25_7)));
  const double a1 = (1.0 + g) * x.a, a2 = (1.0 + g) * y.a;
  const double cp1 = std::hypot(a1, x.b), cp2 = std::hypot(a2, y.b);
  auto hue = [&](double b, double a) {
    if (a == 0 && b == 0) return 0.0;
    const double h = std::atan2(b, a);
    return h < 0 ? h + 2 * pi : h;
  };
  const double h1 = hue(x.b, a1), h2 = hue(y.b, a2);

  const double dl = y.L - x.L;
  const double dc = cp2 - cp1;
  double dh = 0;
  if (cp1 * cp2 != 0) {
    dh = h2 - h1;
    if (dh > pi)
      dh -= 2 * pi;
    else if (dh < -pi)
      dh += 2 * pi;
  }
  const double dH = 2.0 * std::sqrt(cp1 * cp2) * std::sin(dh / 2.0);

  const double l_bar = (x.L + y.L) / 2.0;
  const double cp_bar = (cp1 + cp2) / 2.0;
  double h_bar = h1 + h2;
  if (cp1 * cp2 != 0) {
    if (std::abs(h1 - h2) <= pi)
      h_bar = (h1 + h2) / 2.0;
    else if (h1 + h2 < 2 * pi)
      h_bar = (h1 + h2 + 2 * pi) / 2.0;
    else
      h_bar = (h1 + h2 - 2 * pi) / 2.0;
  }
  const double t = 1.0 - 0.17 * std::cos(h_bar - 30 * deg) + 0.24 * std::cos(2 * h_bar) +
                   0.32 * std::cos(3 * h_bar + 6 * deg) - 0.20 * std::cos(4 * h_bar - 63 * deg);
  const double d_theta = 30 * deg * std::exp(-std::pow((h_bar / deg - 275.0) / 25.0, 2.0));
  const double cp_bar7 = std::pow(cp_bar, 7.0);
  const double rc = 2.0 * std::sqrt(cp_bar7 / (cp_bar7 + pow25_7));
  const double l50 = (l_bar - 50.0) * (l_bar - 50.0);
  const double sl = 1.0 + 0.015 * l50 / std::sqrt(20.0 + l50);
  const double sc = 1.0 + 0.045 * cp_bar;
  const double sh = 1.0 + 0.015 * cp_bar * t;
  const double rt = -std::sin(2.0 * d_theta) * rc;
  const double tl = dl / sl, tc = dc / sc, th = dH / sh;
  return std::sqrt(tl * tl + tc * tc + th * th + rt * tc * th);
}

double ciede2000(const Vec3& srgb_a, const Vec3& srgb_b) {
  return ciede2000(srgb_to_lab(srgb_a), srgb_to_lab(srgb_b));
}

AngularError mean_angular_error(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  require(a.size() == b.size(), "mean_angular_error: size mismatch");
  AngularError out;
  double sum = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double na = a[i].norm(), nb = b[i].norm();
    if (na == 0 || nb == 0) {
      ++out.skipped;
      continue;
    }
    // atan2 keeps full precision for nearly parallel vectors, where acos does not.
    sum += std::atan2(a[i].cross(b[i]).norm(), a[i].dot(b[i])) * 180.0 / std::numbers::pi;
    ++out.used;
  }
  out.mean_degrees = out.used > 0 ? sum / out.used : 0.0;
  return out;
}

namespace {

void mean_std(const std::vector<double>& v, double& mean, double& stdev) {
  mean = stdev = 0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= v.size();
  for (double x : v) stdev += (x - mean) * (x - mean);
  stdev = std::sqrt(stdev / v.size());
}

}  // namespace

ChartReport chart_eval(const Image& restored, const std::vector<ChartPatch>& charts, const Camera& cam,
                       const Image* depth) {
  require(restored.channels == 3, "chart_eval needs an RGB image");
  ChartReport rep;
  int max_chart = -1;
  for (const auto& p : charts) max_chart = std::max(max_chart, p.chart);
  std::vector<std::vector<double>> de(max_chart + 1), ang(max_chart + 1);
  std::vector<bool> present(max_chart + 1, false);
  for (const ChartPatch& p : charts) {
    present[p.chart] = true;
    const Vec3 t = cam.to_camera(p.position);
    if (t.z() <= 0) continue;
    const double u = cam.fx * t.x() / t.z() + cam.cx, v = cam.fy * t.y() / t.z() + cam.cy;
    const int col = static_cast<int>(std::floor(u)), row = static_cast<int>(std::floor(v));
    if (row < 2 || col < 2 || row >= restored.height - 2 || col >= restored.width - 2) continue;
    if (depth && std::abs(depth->at(row, col) - t.z()) > 0.05 * t.z()) continue;
    Vec3 sample;
    for (int c = 0; c < 3; ++c) {
      std::vector<double> window;
      for (int dr = -2; dr <= 2; ++dr)
        for (int dc = -2; dc <= 2; ++dc) window.push_back(restored.at(row + dr, col + dc, c));
      std::nth_element(window.begin(), window.begin() + 12, window.end());
      sample[c] = window[12];
    }
    auto to_display = [](const Vec3& lin) {
      return Vec3(linear_to_srgb(std::clamp(lin[0], 0.0, 1.0)), linear_to_srgb(std::clamp(lin[1], 0.0, 1.0)),
                  linear_to_srgb(std::clamp(lin[2], 0.0, 1.0)));
    };
    de[p.chart].push_back(ciede2000(to_display(sample), to_display(p.reference)));
    const AngularError e = mean_angular_error({sample}, {p.reference});
    if (e.used) ang[p.chart].push_back(e.mean_degrees);
  }
  for (int c = 0; c <= max_chart; ++c) {
    if (!present[c]) continue;
    if (de[c].empty()) {
      rep.excluded.push_back(c);
      std::cerr << "warning: chart " << c << " not visible, excluded\n";
      continue;
    }
    double m, s;
    mean_std(de[c], m, s);
    rep.delta_e.push_back(m);
    mean_std(ang[c], m, s);
    rep.angular.push_back(m);
  }
  mean_std(rep.delta_e, rep.delta_e_mean, rep.delta_e_std);
  mean_std(rep.angular, rep.angular_mean, rep.angular_std);
  return rep;
}

void write_charts(const std::string& path, const std::vector<ChartPatch>& charts) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << "# chart patch x y z r g b (linear RGB)\n" << std::setprecision(17);
  for (const auto& p : charts)
    os << p.chart << ' ' << p.patch << ' ' << p.position.x() << ' ' << p.position.y() << ' ' << p.position.z()
       << ' ' << p.reference.x() << ' ' << p.reference.y() << ' ' << p.reference.z() << '\n';
}

std::vector<ChartPatch> read_charts(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  std::vector<ChartPatch> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    ChartPatch p;
    ls >> p.chart >> p.patch >> p.position.x() >> p.position.y() >> p.position.z() >> p.reference.x() >>
        p.reference.y() >> p.reference.z();
    if (!ls || p.chart < 0) throw IoError("malformed chart record: " + line);
    out.push_back(p);
  }
  return out;
}

}  // namespace aquags
