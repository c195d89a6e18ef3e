#include "aquags/optim.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "aquags/compositor.hpp"
#include "aquags/errors.hpp"
#include "aquags/metrics.hpp"

namespace aquags {

namespace fs = std::filesystem;

Freeze parse_freeze(const std::string& name) {
  if (name == "none") return Freeze::None;
  if (name == "water") return Freeze::Water;
  if (name == "gaussians") return Freeze::Gaussians;
  throw ConfigError("unknown freeze mode '" + name + "' (none | water | gaussians)");
}

std::string to_string(Freeze f) {
  switch (f) {
    case Freeze::None: return "none";
    case Freeze::Water: return "water";
    case Freeze::Gaussians: return "gaussians";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  for (double lr : {lr_position_init, lr_position_final, lr_color, lr_opacity, lr_scale, lr_rotation, lr_water_sh0,
                    lr_water_sh_rest, lr_mlp_init, lr_mlp_final})
    if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("learning rates must be positive");
  if (densify_interval < 1) throw ConfigError("densify_interval must be >= 1");
  if (!(split_factor > 1)) throw ConfigError("split_factor must exceed 1");
  if (max_gaussians < 1) throw ConfigError("max_gaussians must be >= 1");
  if (weights.patch_size < 1) throw ConfigError("patch_size must be >= 1");
}

// ---------------------------------------------------------------------------
// Config text

namespace {

struct ConfigKey {
  std::string name;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

double parse_double(const std::string& key, const std::string& s) {
  double v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("bad number for " + key + ": '" + s + "'");
  return v;
}

int64_t parse_int(const std::string& key, const std::string& s) {
  int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ConfigError("bad integer for " + key + ": '" + s + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "on") return true;
  if (s == "false" || s == "0" || s == "off") return false;
  throw ConfigError("bad boolean for " + key + ": '" + s + "'");
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

template <typename T>
ConfigKey real_key(const std::string& name, T member) {
  return {name, [=](TrainConfig& c, const std::string& v) { std::invoke(member, c) = parse_double(name, v); },
          [=](const TrainConfig& c) { return fmt(std::invoke(member, c)); }};
}

template <typename T>
ConfigKey int_key(const std::string& name, T member) {
  return {name,
          [=](TrainConfig& c, const std::string& v) {
            std::invoke(member, c) = static_cast<std::remove_reference_t<decltype(std::invoke(member, c))>>(
                parse_int(name, v));
          },
          [=](const TrainConfig& c) { return std::to_string(std::invoke(member, c)); }};
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    k.push_back(int_key("iterations", &TrainConfig::iterations));
    k.push_back(int_key("seed", &TrainConfig::seed));
    k.push_back({"freeze", [](TrainConfig& c, const std::string& v) { c.freeze = parse_freeze(v); },
                 [](const TrainConfig& c) { return to_string(c.freeze); }});
    k.push_back(int_key("threads", &TrainConfig::threads));
    k.push_back(real_key("lr_position_init", &TrainConfig::lr_position_init));
    k.push_back(real_key("lr_position_final", &TrainConfig::lr_position_final));
    k.push_back(real_key("lr_color", &TrainConfig::lr_color));
    k.push_back(real_key("lr_opacity", &TrainConfig::lr_opacity));
    k.push_back(real_key("lr_scale", &TrainConfig::lr_scale));
    k.push_back(real_key("lr_rotation", &TrainConfig::lr_rotation));
    k.push_back(real_key("lr_water_sh0", &TrainConfig::lr_water_sh0));
    k.push_back(real_key("lr_water_sh_rest", &TrainConfig::lr_water_sh_rest));
    k.push_back(real_key("lr_mlp_init", &TrainConfig::lr_mlp_init));
    k.push_back(real_key("lr_mlp_final", &TrainConfig::lr_mlp_final));
    k.push_back(int_key("densify_interval", &TrainConfig::densify_interval));
    k.push_back(int_key("densify_start", &TrainConfig::densify_start));
    k.push_back(int_key("densify_stop", &TrainConfig::densify_stop));
    k.push_back(real_key("densify_grad_threshold", &TrainConfig::densify_grad_threshold));
    k.push_back(real_key("prune_opacity", &TrainConfig::prune_opacity));
    k.push_back(real_key("split_factor", &TrainConfig::split_factor));
    k.push_back(real_key("percent_dense", &TrainConfig::percent_dense));
    k.push_back(int_key("opacity_reset_interval", &TrainConfig::opacity_reset_interval));
    k.push_back(int_key("max_gaussians", &TrainConfig::max_gaussians));
    k.push_back({"dgo", [](TrainConfig& c, const std::string& v) { c.dgo = parse_bool("dgo", v); },
                 [](const TrainConfig& c) { return std::string(c.dgo ? "true" : "false"); }});
    auto weight = [](const std::string& name, double LossWeights::*member) {
      return ConfigKey{name, [=](TrainConfig& c, const std::string& v) { c.weights.*member = parse_double(name, v); },
                       [=](const TrainConfig& c) { return fmt(c.weights.*member); }};
    };
    k.push_back(weight("lambda_ssim", &LossWeights::lambda_ssim));
    k.push_back(weight("lambda_dgt", &LossWeights::lambda_dgt));
    k.push_back(weight("lambda_dvm", &LossWeights::lambda_dvm));
    k.push_back(weight("lambda_idc", &LossWeights::lambda_idc));
    k.push_back(weight("lambda_dpf", &LossWeights::lambda_dpf));
    k.push_back(weight("gamma_near", &LossWeights::gamma_near));
    k.push_back(weight("gamma_far", &LossWeights::gamma_far));
    k.push_back(weight("eta_near", &LossWeights::eta_near));
    k.push_back(weight("eta_far", &LossWeights::eta_far));
    k.push_back(weight("eta_edge", &LossWeights::eta_edge));
    k.push_back(weight("tau_disparity", &LossWeights::tau_disparity));
    k.push_back(weight("tau_edge", &LossWeights::tau_edge));
    k.push_back({"patch_size",
                 [](TrainConfig& c, const std::string& v) {
                   c.weights.patch_size = static_cast<int>(parse_int("patch_size", v));
                 },
                 [](const TrainConfig& c) { return std::to_string(c.weights.patch_size); }});
    return k;
  }();
  return keys;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void apply_config_entry(TrainConfig& cfg, const std::string& key, const std::string& value) {
  for (const ConfigKey& k : config_keys())
    if (k.name == key) {
      k.set(cfg, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_text(TrainConfig& cfg, const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    apply_config_entry(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void apply_config_file(TrainConfig& cfg, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  apply_config_text(cfg, ss.str());
}

std::string config_text(const TrainConfig& cfg) {
  std::string out;
  for (const ConfigKey& k : config_keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Adam

double exp_decay(double init, double final_value, double t) {
  t = std::clamp(t, 0.0, 1.0);
  return std::exp((1.0 - t) * std::log(init) + t * std::log(final_value));
}

bool adam_step(double* params, const double* grads, size_t n, AdamState& state, double lr, double beta1,
               double beta2, double eps) {
  require(state.m.size() == n && state.v.size() == n, "adam_step: moment buffers do not match the parameters");
  for (size_t i = 0; i < n; ++i)
    if (!std::isfinite(grads[i])) return false;
  ++state.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (size_t i = 0; i < n; ++i) {
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i] * grads[i];
    const double mhat = state.m[i] / bc1;
    const double vhat = state.v[i] / bc2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
  return true;
}

void OptimizerState::resize_cloud(size_t n) {
  position.resize(3 * n);
  rotation.resize(4 * n);
  scale.resize(3 * n);
  opacity.resize(n);
  color.resize(3 * n);
}

namespace {

void remap(AdamState& s, const std::vector<bool>& keep, size_t width, size_t added) {
  std::vector<double> m, v;
  for (size_t i = 0; i < keep.size(); ++i)
    if (keep[i])
      for (size_t k = 0; k < width; ++k) {
        m.push_back(s.m[i * width + k]);
        v.push_back(s.v[i * width + k]);
      }
  m.resize(m.size() + added * width, 0.0);
  v.resize(v.size() + added * width, 0.0);
  s.m = std::move(m);
  s.v = std::move(v);
}

}  // namespace

void OptimizerState::remap_cloud(const std::vector<bool>& keep, size_t added) {
  remap(position, keep, 3, added);
  remap(rotation, keep, 4, added);
  remap(scale, keep, 3, added);
  remap(opacity, keep, 1, added);
  remap(color, keep, 3, added);
}

// ---------------------------------------------------------------------------
// Density control

DensifyReport densify_and_prune(GaussianCloud& cloud, DensifyStats& stats, OptimizerState& opt,
                                const TrainConfig& cfg, double extent, std::mt19937_64& rng) {
  const size_t n = cloud.size();
  require(stats.grad_accum.size() == n && stats.visible.size() == n, "densify_and_prune: statistics size mismatch");
  DensifyReport rep;
  GaussianCloud added;
  std::vector<bool> keep(n, true);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double large = cfg.percent_dense * extent;
  const double shrink = std::log(cfg.split_factor);
  for (size_t i = 0; i < n; ++i) {
    if (cloud.opacity(i) < cfg.prune_opacity) {
      keep[i] = false;
      ++rep.pruned;
      continue;
    }
    const double avg = stats.visible[i] > 0 ? stats.grad_accum[i] / stats.visible[i] : 0.0;
    if (avg < cfg.densify_grad_threshold) continue;
    const size_t current = n - rep.pruned - rep.split + added.size();
    const Vec3 s = cloud.log_scales[i].array().exp();
    if (s.maxCoeff() <= large) {
      if (current + 1 > static_cast<size_t>(cfg.max_gaussians)) continue;
      added.push_back(cloud.positions[i], cloud.rotations[i], cloud.log_scales[i], cloud.opacity_logits[i],
                      cloud.colors[i]);
      ++rep.cloned;
    } else {
      if (current + 1 > static_cast<size_t>(cfg.max_gaussians)) continue;
      const Mat3 R = quaternion_to_matrix(cloud.rotations[i]);
      for (int k = 0; k < 2; ++k) {
        const Vec3 z(normal(rng), normal(rng), normal(rng));
        added.push_back(cloud.positions[i] + R * s.cwiseProduct(z), cloud.rotations[i],
                        cloud.log_scales[i] - Vec3::Constant(shrink), cloud.opacity_logits[i], cloud.colors[i]);
      }
      keep[i] = false;
      ++rep.split;
    }
  }
  std::vector<bool> remove(n);
  for (size_t i = 0; i < n; ++i) remove[i] = !keep[i];
  cloud.erase_if(remove);
  for (size_t i = 0; i < added.size(); ++i)
    cloud.push_back(added.positions[i], added.rotations[i], added.log_scales[i], added.opacity_logits[i],
                    added.colors[i]);
  opt.remap_cloud(keep, added.size());
  stats.reset(cloud.size());
  return rep;
}

// ---------------------------------------------------------------------------
// Initialization

GaussianCloud init_cloud_from_points(const std::vector<SparsePoint>& points) {
  if (points.empty()) throw ConfigError("cannot initialize Gaussians: the dataset has no sparse points");
  GaussianCloud cloud;
  const size_t n = points.size();
  for (size_t i = 0; i < n; ++i) {
    // Three smallest squared distances (brute force; point sets are small).
    double best[3] = {1e300, 1e300, 1e300};
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d2 = (points[i].position - points[j].position).squaredNorm();
      if (d2 < best[2]) {
        best[2] = d2;
        std::sort(best, best + 3);
      }
    }
    int found = 0;
    double sum = 0;
    for (double b : best)
      if (b < 1e300) {
        sum += b;
        ++found;
      }
    const double mean_d2 = found > 0 ? sum / found : 1e-2;
    const double scale = std::sqrt(std::max(mean_d2, 1e-14));
    cloud.push_back(points[i].position, Vec4(1, 0, 0, 0), Vec3::Constant(std::log(scale)), logit(0.1),
                    rgb_to_sh0(points[i].color));
  }
  return cloud;
}

double scene_extent(const std::vector<Camera>& cams) {
  require(!cams.empty(), "scene_extent needs cameras");
  Vec3 center = Vec3::Zero();
  for (const Camera& c : cams) center += c.position();
  center /= static_cast<double>(cams.size());
  double radius = 0;
  for (const Camera& c : cams) radius = std::max(radius, (c.position() - center).norm());
  return 1.1 * std::max(radius, 1e-6);
}

WaterField init_water(const Dataset& ds, std::mt19937_64& rng) {
  Vec3 mean = Vec3::Zero();
  size_t count = 0;
  for (size_t v : ds.train_views()) {
    const Image& img = ds.underwater[v];
    for (size_t p = 0; p < img.pixels(); ++p)
      for (int c = 0; c < 3; ++c) mean[c] += img.data[3 * p + c];
    count += img.pixels();
  }
  if (count > 0) mean /= static_cast<double>(count);
  return WaterField::initialized(mean, rng);
}

// ---------------------------------------------------------------------------
// Rendering and evaluation

ViewRender render_view(const GaussianCloud& cloud, const WaterField& water, const Camera& cam, int threads) {
  ViewRender r;
  r.splats = project(cloud, cam);
  r.bundle = rasterize(r.splats, cam, threads);
  r.water = field_forward(water, pixel_directions(cam));
  r.A = rgb_matrix_to_image(r.water.A, cam.height, cam.width);
  r.beta_d = rgb_matrix_to_image(r.water.beta_d, cam.height, cam.width);
  r.beta_b = rgb_matrix_to_image(r.water.beta_b, cam.height, cam.width);
  r.underwater = compose(r.bundle.J, r.bundle.R, r.A, r.beta_d, r.beta_b).I;
  return r;
}

ViewGradients loss_and_gradients(const GaussianCloud& cloud, const WaterField& water, const Camera& cam,
                                 const Image& target, const PseudoDepth& guide, const LossWeights& weights,
                                 int threads) {
  ViewGradients out;
  ViewRender r = render_view(cloud, water, cam, threads);
  out.loss = total_loss(r.underwater, target, r.bundle, guide, weights);
  const ComposeGrad cg = compose_backward(r.bundle.J, r.bundle.R, r.A, r.beta_d, r.beta_b, out.loss.grad_I);
  BundleGrad up = out.loss.grad_bundle;
  up.J = cg.J;
  up.R = cg.R;
  out.splat_grads = rasterize_backward(r.splats, cam, r.bundle, up, threads);
  out.cloud_grad = cloud.zeros_like();
  project_backward(cloud, cam, r.splats, out.splat_grads, out.cloud_grad);
  out.water_grad = field_backward(water, r.water, image_to_rgb_matrix(cg.A), image_to_rgb_matrix(cg.beta_d),
                                  image_to_rgb_matrix(cg.beta_b));
  out.underwater = std::move(r.underwater);
  out.splats = std::move(r.splats);
  return out;
}

EvalSummary evaluate_views(const Dataset& ds, const GaussianCloud& cloud, const WaterField& water,
                           const std::vector<size_t>& views, int threads) {
  EvalSummary s;
  size_t with_clean = 0;
  for (size_t v : views) {
    require(v < ds.views(), "evaluate_views: view index out of range");
    const ViewRender r = render_view(cloud, water, ds.cameras[v], threads);
    ViewMetrics m;
    m.view = v;
    const Image pred = to_srgb(r.underwater), gt = to_srgb(ds.underwater[v]);
    m.psnr_underwater = psnr(pred, gt);
    m.ssim_underwater = ssim(pred, gt);
    if (!ds.clean[v].empty()) {
      const Image pc = to_srgb(r.bundle.J), gc = to_srgb(ds.clean[v]);
      m.psnr_clean = psnr(pc, gc);
      m.ssim_clean = ssim(pc, gc);
      ++with_clean;
    }
    m.mean_depth_variance =
        std::accumulate(r.bundle.V_D.data.begin(), r.bundle.V_D.data.end(), 0.0) / r.bundle.V_D.size();
    s.psnr_underwater += m.psnr_underwater;
    s.ssim_underwater += m.ssim_underwater;
    s.psnr_clean += m.psnr_clean;
    s.ssim_clean += m.ssim_clean;
    s.mean_depth_variance += m.mean_depth_variance;
    s.views.push_back(m);
  }
  if (!views.empty()) {
    const double k = static_cast<double>(views.size());
    s.psnr_underwater /= k;
    s.ssim_underwater /= k;
    s.mean_depth_variance /= k;
  }
  if (with_clean > 0) {
    s.psnr_clean /= static_cast<double>(with_clean);
    s.ssim_clean /= static_cast<double>(with_clean);
  }
  return s;
}

std::string log_header() {
  return "iteration,view,total,recon,l1,ssim,dgt,dvm,idc,dpf,psnr,lr_position,lr_color,lr_opacity,lr_scale,"
         "lr_rotation,lr_water_sh0,lr_water_sh_rest,lr_water_mlp,gaussians,wall_ms";
}

std::string format_log_row(const LogRow& r) {
  std::ostringstream os;
  os << std::setprecision(17) << r.iteration << ',' << r.view << ',' << r.total << ',' << r.recon << ',' << r.l1
     << ',' << r.ssim << ',' << r.dgt << ',' << r.dvm << ',' << r.idc << ',' << r.dpf << ',' << r.psnr << ','
     << r.lr_position << ',' << r.lr_color << ',' << r.lr_opacity << ',' << r.lr_scale << ',' << r.lr_rotation
     << ',' << r.lr_water_sh0 << ',' << r.lr_water_sh_rest << ',' << r.lr_water_mlp << ',' << r.gaussians << ','
     << std::setprecision(6) << r.wall_ms;
  return os.str();
}

// ---------------------------------------------------------------------------
// Training

namespace {

// Independent random streams derived from the single configured seed.
std::mt19937_64 substream(uint64_t seed, uint64_t stream) {
  std::seed_seq seq{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32), static_cast<uint32_t>(stream)};
  return std::mt19937_64(seq);
}

bool cloud_step(GaussianCloud& cloud, const GaussianCloud& grad, OptimizerState& opt, const LogRow& lr,
                size_t& skipped) {
  const size_t n = cloud.size();
  if (n == 0) return true;
  bool all = true;
  auto step = [&](double* p, const double* g, size_t count, AdamState& s, double rate) {
    if (!adam_step(p, g, count, s, rate)) {
      ++skipped;
      all = false;
    }
  };
  step(cloud.positions.front().data(), grad.positions.front().data(), 3 * n, opt.position, lr.lr_position);
  step(cloud.rotations.front().data(), grad.rotations.front().data(), 4 * n, opt.rotation, lr.lr_rotation);
  step(cloud.log_scales.front().data(), grad.log_scales.front().data(), 3 * n, opt.scale, lr.lr_scale);
  step(cloud.opacity_logits.data(), grad.opacity_logits.data(), n, opt.opacity, lr.lr_opacity);
  step(cloud.colors.front().data(), grad.colors.front().data(), 3 * n, opt.color, lr.lr_color);
  return all;
}

void water_step(WaterField& water, const WaterField& grad, OptimizerState& opt, const LogRow& lr, size_t& skipped) {
  std::vector<double> p = water.flatten();
  const std::vector<double> g = grad.flatten();
  // Flat order: sh row-major by basis (first three entries are degree 0), then the perceptron.
  const size_t sh = 3 * kShBasis;
  if (!adam_step(p.data(), g.data(), 3, opt.water_sh0, lr.lr_water_sh0)) ++skipped;
  if (!adam_step(p.data() + 3, g.data() + 3, sh - 3, opt.water_sh_rest, lr.lr_water_sh_rest)) ++skipped;
  if (!adam_step(p.data() + sh, g.data() + sh, p.size() - sh, opt.water_mlp, lr.lr_water_mlp)) ++skipped;
  water.unflatten(p);
}

WaterField frozen_water(const Dataset& ds, std::mt19937_64& rng) {
  if (ds.gt_water) return *ds.gt_water;
  if (ds.gt_uniform_water) {
    const UniformWater& u = *ds.gt_uniform_water;
    return WaterField::uniform(u.ambient, u.beta_d.cwiseMax(1e-12), u.beta_b.cwiseMax(1e-12));
  }
  return init_water(ds, rng);
}

double disparity_variance(const Image& d) {
  double mean = 0, var = 0;
  for (double v : d.data) mean += v;
  mean /= static_cast<double>(d.size());
  for (double v : d.data) var += (v - mean) * (v - mean);
  return var / static_cast<double>(d.size());
}

}  // namespace

TrainResult train(const Dataset& ds, const TrainConfig& cfg_in, const std::string& out_dir, std::ostream* progress) {
  cfg_in.validate();
  TrainConfig cfg = cfg_in;
  if (!cfg.dgo) {
    cfg.weights.lambda_dgt = cfg.weights.lambda_dvm = cfg.weights.lambda_idc = cfg.weights.lambda_dpf = 0.0;
  }
  if (ds.views() < 2) throw ConfigError("training needs at least two views");
  const std::vector<size_t> train_views = ds.train_views();
  if (train_views.empty()) throw ConfigError("dataset has no training views");
  for (size_t v = 0; v < ds.views(); ++v)
    if (ds.disparity[v].empty()) throw ConfigError("view " + std::to_string(v) + " has no pseudo-depth");

  std::mt19937_64 init_rng = substream(cfg.seed, 1);
  std::mt19937_64 order_rng = substream(cfg.seed, 2);
  std::mt19937_64 densify_rng = substream(cfg.seed, 3);

  TrainResult result;
  GaussianCloud cloud;
  if (cfg.freeze == Freeze::Gaussians) {
    if (!ds.gt_cloud) throw ConfigError("freeze = gaussians needs a dataset with a ground-truth cloud");
    cloud = *ds.gt_cloud;
  } else {
    cloud = init_cloud_from_points(ds.points);
  }
  WaterField water = cfg.freeze == Freeze::Water ? frozen_water(ds, init_rng) : init_water(ds, init_rng);

  const double extent = scene_extent(ds.cameras);
  OptimizerState opt;
  opt.resize_cloud(cloud.size());
  opt.water_sh0.resize(3);
  opt.water_sh_rest.resize(3 * (kShBasis - 1));
  opt.water_mlp.resize(water.parameter_count() - 3 * kShBasis);
  DensifyStats stats;
  stats.reset(cloud.size());

  // Per-view caches of everything that does not change during training.
  const size_t V = ds.views();
  std::vector<DirectionFeatures> features(V);
  std::vector<PseudoDepth> guides(V);
  std::vector<bool> idc_ok(V, true);
  for (size_t v : train_views) {
    features[v] = direction_features(pixel_directions(ds.cameras[v]));
    guides[v] = build_masks(ds.disparity[v], cfg.weights.tau_disparity, cfg.weights.tau_edge);
    idc_ok[v] = disparity_variance(ds.disparity[v]) > 1e-12;
  }
  std::vector<std::vector<Splat2D>> frozen_splats(V);
  std::vector<RenderBundle> frozen_bundles(V);
  std::vector<std::array<Image, 3>> frozen_water_images(V);

  std::ofstream log_file;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    result.log_path = (fs::path(out_dir) / "train_log.csv").string();
    log_file.open(result.log_path);
    if (!log_file) throw IoError("cannot write " + result.log_path);
    log_file << log_header() << '\n';
  }

  auto make_checkpoint = [&](int iteration) {
    Checkpoint c;
    c.r_max = ds.r_max;
    c.cloud = cloud;
    c.water = water;
    c.config_echo = config_text(cfg);
    c.seed = cfg.seed;
    c.iteration = static_cast<uint64_t>(iteration);
    return c;
  };

  std::vector<size_t> order;
  size_t order_pos = 0;
  const auto t_start = std::chrono::steady_clock::now();
  for (int it = 1; it <= cfg.iterations; ++it) {
    if (order_pos == order.size()) {
      order = train_views;
      std::shuffle(order.begin(), order.end(), order_rng);
      order_pos = 0;
    }
    const size_t v = order[order_pos++];
    const Camera& cam = ds.cameras[v];
    const int H = cam.height, W = cam.width;
    const double t = cfg.iterations > 0 ? static_cast<double>(it - 1) / cfg.iterations : 0.0;

    LogRow row;
    row.iteration = it;
    row.view = v;
    row.lr_position = exp_decay(cfg.lr_position_init, cfg.lr_position_final, t) * extent;
    row.lr_color = cfg.lr_color;
    row.lr_opacity = cfg.lr_opacity;
    row.lr_scale = cfg.lr_scale;
    row.lr_rotation = cfg.lr_rotation;
    row.lr_water_sh0 = cfg.lr_water_sh0;
    row.lr_water_sh_rest = cfg.lr_water_sh_rest;
    row.lr_water_mlp = exp_decay(cfg.lr_mlp_init, cfg.lr_mlp_final, t);

    // Forward.
    const bool gaussians_frozen = cfg.freeze == Freeze::Gaussians;
    const bool water_frozen = cfg.freeze == Freeze::Water;
    std::vector<Splat2D> live_splats;
    RenderBundle live_bundle;
    if (gaussians_frozen && frozen_bundles[v].J.empty()) {
      frozen_splats[v] = project(cloud, cam);
      frozen_bundles[v] = rasterize(frozen_splats[v], cam, cfg.threads);
    }
    if (!gaussians_frozen) {
      live_splats = project(cloud, cam);
      live_bundle = rasterize(live_splats, cam, cfg.threads);
    }
    const std::vector<Splat2D>& splats = gaussians_frozen ? frozen_splats[v] : live_splats;
    const RenderBundle& bundle = gaussians_frozen ? frozen_bundles[v] : live_bundle;

    WaterEval ev;
    Image A, bd, bb;
    if (water_frozen) {
      if (frozen_water_images[v][0].empty()) {
        const WaterEval e = field_forward(water, features[v]);
        frozen_water_images[v] = {rgb_matrix_to_image(e.A, H, W), rgb_matrix_to_image(e.beta_d, H, W),
                                  rgb_matrix_to_image(e.beta_b, H, W)};
      }
      A = frozen_water_images[v][0];
      bd = frozen_water_images[v][1];
      bb = frozen_water_images[v][2];
    } else {
      ev = field_forward(water, features[v]);
      A = rgb_matrix_to_image(ev.A, H, W);
      bd = rgb_matrix_to_image(ev.beta_d, H, W);
      bb = rgb_matrix_to_image(ev.beta_b, H, W);
    }
    const Image I = compose(bundle.J, bundle.R, A, bd, bb).I;

    LossWeights weights = cfg.weights;
    if (!idc_ok[v]) weights.lambda_idc = 0.0;
    const LossReport loss = total_loss(I, ds.underwater[v], bundle, guides[v], weights);
    row.total = loss.total;
    row.recon = loss.recon;
    row.l1 = loss.l1;
    row.ssim = loss.ssim;
    row.dgt = loss.dgt;
    row.dvm = loss.dvm;
    row.idc = loss.idc;
    row.dpf = loss.dpf;
    row.psnr = psnr(to_srgb(I), to_srgb(ds.underwater[v]));
    row.gaussians = cloud.size();

    if (!std::isfinite(loss.total)) {
      const fs::path dir = out_dir.empty() ? fs::temp_directory_path() : fs::path(out_dir);
      const std::string dump = (dir / "diverged.ckpt").string();
      save_checkpoint(dump, make_checkpoint(it - 1));
      if (log_file) log_file << format_log_row(row) << '\n';
      std::ostringstream msg;
      msg << "non-finite loss at iteration " << it << " (view " << v << ", " << cloud.size()
          << " Gaussians); state written to " << dump;
      throw DivergenceError(msg.str(), dump);
    }

    // Backward.
    const ComposeGrad cg = compose_backward(bundle.J, bundle.R, A, bd, bb, loss.grad_I);
    if (!gaussians_frozen) {
      BundleGrad up = loss.grad_bundle;
      up.J = cg.J;
      up.R = cg.R;
      const std::vector<SplatGrad> sg = rasterize_backward(splats, cam, bundle, up, cfg.threads);
      GaussianCloud grad = cloud.zeros_like();
      project_backward(cloud, cam, splats, sg, grad);
      if (it < cfg.densify_stop) {
        for (size_t j = 0; j < splats.size(); ++j) {
          const size_t idx = static_cast<size_t>(splats[j].source_index);
          const Vec2 ndc(sg[j].abs_mean2d.x() * 0.5 * W, sg[j].abs_mean2d.y() * 0.5 * H);
          stats.grad_accum[idx] += ndc.norm();
          stats.visible[idx] += 1;
        }
      }
      cloud_step(cloud, grad, opt, row, result.skipped_updates);
      cloud.renormalize_rotations();
    }
    if (!water_frozen) {
      const WaterField wg = field_backward(water, ev, image_to_rgb_matrix(cg.A), image_to_rgb_matrix(cg.beta_d),
                                           image_to_rgb_matrix(cg.beta_b));
      water_step(water, wg, opt, row, result.skipped_updates);
    }

    // Density control.
    if (!gaussians_frozen && it < cfg.densify_stop) {
      if (it > cfg.densify_start && it % cfg.densify_interval == 0) {
        const DensifyReport d = densify_and_prune(cloud, stats, opt, cfg, extent, densify_rng);
        if (progress)
          *progress << "iter " << it << ": densify +" << d.cloned << " clone +" << d.split << " split -" << d.pruned
                    << " pruned -> " << cloud.size() << " Gaussians" << std::endl;
      }
      if (cfg.opacity_reset_interval > 0 && it % cfg.opacity_reset_interval == 0) {
        for (double& l : cloud.opacity_logits) l = std::min(l, logit(0.01));
        std::fill(opt.opacity.m.begin(), opt.opacity.m.end(), 0.0);
        std::fill(opt.opacity.v.begin(), opt.opacity.v.end(), 0.0);
      }
    }

    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t_start).count();
    if (log_file) log_file << format_log_row(row) << '\n';
    if (progress && (it % 500 == 0 || it == cfg.iterations))
      *progress << "iter " << it << "/" << cfg.iterations << " loss " << row.total << " psnr " << row.psnr << " ("
                << cloud.size() << " Gaussians, " << std::fixed << std::setprecision(1) << row.wall_ms / 1000.0
                << " s)" << std::defaultfloat << std::setprecision(6) << std::endl;
    result.log.push_back(row);
  }

  result.checkpoint = make_checkpoint(cfg.iterations);
  result.test = evaluate_views(ds, cloud, water, ds.test_views(), cfg.threads);
  if (!out_dir.empty()) {
    result.checkpoint_path = (fs::path(out_dir) / "model.ckpt").string();
    save_checkpoint(result.checkpoint_path, result.checkpoint);
    std::ofstream m(fs::path(out_dir) / "metrics.txt");
    m << std::setprecision(6) << "view psnr_underwater ssim_underwater psnr_clean ssim_clean mean_depth_variance\n";
    for (const ViewMetrics& vm : result.test.views)
      m << vm.view << ' ' << vm.psnr_underwater << ' ' << vm.ssim_underwater << ' ' << vm.psnr_clean << ' '
        << vm.ssim_clean << ' ' << vm.mean_depth_variance << '\n';
    m << "mean " << result.test.psnr_underwater << ' ' << result.test.ssim_underwater << ' '
      << result.test.psnr_clean << ' ' << result.test.ssim_clean << ' ' << result.test.mean_depth_variance << '\n';
  }
  return result;
}

}  // namespace aquags
