#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include "aquags/checkpoint.hpp"
#include "aquags/dataset.hpp"
#include "aquags/errors.hpp"
#include "aquags/losses.hpp"

namespace aquags {

enum class Freeze { None, Water, Gaussians };

Freeze parse_freeze(const std::string& name);
std::string to_string(Freeze f);

struct TrainConfig {
  int iterations = 30000;
  uint64_t seed = 0;
  Freeze freeze = Freeze::None;
  int threads = 1;

  // Learning rates. Position rates are multiplied by the scene extent.
  double lr_position_init = 1.6e-4;
  double lr_position_final = 1.6e-6;
  double lr_color = 2.5e-3;
  double lr_opacity = 0.05;
  double lr_scale = 5e-3;
  double lr_rotation = 1e-3;
  double lr_water_sh0 = 2.5e-3;
  double lr_water_sh_rest = 1.25e-4;
  double lr_mlp_init = 2e-3;
  double lr_mlp_final = 2e-5;

  // Adaptive density control.
  int densify_interval = 100;
  int densify_start = 500;
  int densify_stop = 15000;
  double densify_grad_threshold = 2e-4;
  double prune_opacity = 0.005;
  double split_factor = 1.6;
  double percent_dense = 0.01;
  int opacity_reset_interval = 3000;  // 0 disables
  int max_gaussians = 200000;

  // Depth-guided terms on/off; when off their four weights are forced to zero.
  bool dgo = true;
  LossWeights weights;

  void validate() const;  // throws ConfigError
};

/// Applies one `key = value` entry; unknown keys and bad values throw ConfigError.
void apply_config_entry(TrainConfig& cfg, const std::string& key, const std::string& value);
/// Flat `key = value` text, '#' comments.
void apply_config_text(TrainConfig& cfg, const std::string& text);
void apply_config_file(TrainConfig& cfg, const std::string& path);
/// Every field in `key = value` form; round-trips through apply_config_text.
std::string config_text(const TrainConfig& cfg);

/// log-linear interpolation from init (t = 0) to final (t = 1), clamped.
double exp_decay(double init, double final_value, double t);

/// First and second moments for one parameter group.
struct AdamState {
  std::vector<double> m, v;
  int64_t step = 0;

  void resize(size_t n) {
    m.resize(n, 0.0);
    v.resize(n, 0.0);
  }
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-15;

/// Bias-corrected Adam update in place. Returns false, leaving everything
/// untouched, when any gradient is non-finite.
bool adam_step(double* params, const double* grads, size_t n, AdamState& state, double lr,
               double beta1 = kAdamBeta1, double beta2 = kAdamBeta2, double eps = kAdamEps);

/// Adam moments for every trainable group.
struct OptimizerState {
  AdamState position, rotation, scale, opacity, color;
  AdamState water_sh0, water_sh_rest, water_mlp;

  void resize_cloud(size_t n);
  /// Keeps rows where keep[i] is true, in order, then appends `added` zero rows.
  void remap_cloud(const std::vector<bool>& keep, size_t added);
};

/// Per-Gaussian densification statistics.
struct DensifyStats {
  std::vector<double> grad_accum;  // summed per-view absolute NDC gradient norms
  std::vector<int> visible;        // views in which the Gaussian was projected

  void reset(size_t n) {
    grad_accum.assign(n, 0.0);
    visible.assign(n, 0);
  }
};

struct DensifyReport {
  size_t cloned = 0, split = 0, pruned = 0;
};

/// Clone small / split large Gaussians whose mean accumulated gradient
/// exceeds the threshold, then prune low-opacity ones. Moments are remapped
/// (new rows start at zero) and the statistics are reset.
DensifyReport densify_and_prune(GaussianCloud& cloud, DensifyStats& stats, OptimizerState& opt,
                                const TrainConfig& cfg, double extent, std::mt19937_64& rng);

/// Gaussians from sparse points: isotropic scale from the 3 nearest
/// neighbours, opacity 0.1, identity rotation, color from the point.
GaussianCloud init_cloud_from_points(const std::vector<SparsePoint>& points);

/// Radius of the camera rig: 1.1 x max distance from the mean camera center.
double scene_extent(const std::vector<Camera>& cams);

/// Initial water field for a dataset (mean color of the training views).
WaterField init_water(const Dataset& ds, std::mt19937_64& rng);

/// Everything rendered for one camera.
struct ViewRender {
  std::vector<Splat2D> splats;
  RenderBundle bundle;
  WaterEval water;
  Image A, beta_d, beta_b;
  Image underwater;  // unclamped
};

ViewRender render_view(const GaussianCloud& cloud, const WaterField& water, const Camera& cam, int threads = 1);

/// Loss of one view with every parameter live, and its exact gradients.
struct ViewGradients {
  LossReport loss;
  Image underwater;
  GaussianCloud cloud_grad;
  WaterField water_grad;
  std::vector<Splat2D> splats;
  std::vector<SplatGrad> splat_grads;
};

ViewGradients loss_and_gradients(const GaussianCloud& cloud, const WaterField& water, const Camera& cam,
                                 const Image& target, const PseudoDepth& guide, const LossWeights& weights,
                                 int threads = 1);

struct ViewMetrics {
  size_t view = 0;
  double psnr_underwater = 0, ssim_underwater = 0;
  double psnr_clean = 0, ssim_clean = 0;  // 0 when the dataset has no clean image
  double mean_depth_variance = 0;
};

struct EvalSummary {
  std::vector<ViewMetrics> views;
  double psnr_underwater = 0, ssim_underwater = 0, psnr_clean = 0, ssim_clean = 0, mean_depth_variance = 0;
};

EvalSummary evaluate_views(const Dataset& ds, const GaussianCloud& cloud, const WaterField& water,
                           const std::vector<size_t>& views, int threads = 1);

struct LogRow {
  int iteration = 0;
  size_t view = 0;
  double total = 0, recon = 0, l1 = 0, ssim = 0, dgt = 0, dvm = 0, idc = 0, dpf = 0, psnr = 0;
  double lr_position = 0, lr_color = 0, lr_opacity = 0, lr_scale = 0, lr_rotation = 0;
  double lr_water_sh0 = 0, lr_water_sh_rest = 0, lr_water_mlp = 0;
  size_t gaussians = 0;
  double wall_ms = 0;
};

std::string log_header();
std::string format_log_row(const LogRow& row);

/// Raised when the loss becomes non-finite; `dump_path` holds the state at that point.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& msg, std::string dump)
      : NumericalError(msg), dump_path(std::move(dump)) {}
  std::string dump_path;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LogRow> log;
  EvalSummary test;  // held-out views after training
  size_t skipped_updates = 0;  // Adam groups skipped for non-finite gradients
  std::string checkpoint_path, log_path;
};

/// Runs the optimization. When `out_dir` is non-empty it receives
/// model.ckpt, train_log.csv and metrics.txt. Progress lines go to `progress`.
TrainResult train(const Dataset& ds, const TrainConfig& cfg, const std::string& out_dir,
                  std::ostream* progress = nullptr);

}  // namespace aquags
