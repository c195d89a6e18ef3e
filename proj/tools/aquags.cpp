// Command-line front end: generate, train, render, restore, eval.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "aquags/checkpoint.hpp"
#include "aquags/compositor.hpp"
#include "aquags/errors.hpp"
#include "aquags/metrics.hpp"
#include "aquags/optim.hpp"
#include "aquags/scenegen.hpp"

namespace fs = std::filesystem;
using namespace aquags;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

// "128x160" -> (height, width)
std::pair<int, int> parse_resolution(const std::string& s) {
  int h = 0, w = 0;
  char x = 0, extra = 0;
  std::istringstream is(s);
  if (!(is >> h >> x >> w) || (x != 'x' && x != 'X') || (is >> extra) || h <= 0 || w <= 0)
    throw ConfigError("resolution must look like HxW, e.g. 128x160");
  return {h, w};
}

std::string replace_extension(const std::string& path, const std::string& ext) {
  return fs::path(path).replace_extension(ext).string();
}

struct GenerateArgs {
  std::string recipe = "textured-wall";
  int views = 16;
  std::string resolution = "128x160";
  std::string water = "uniform";
  uint64_t seed = 1;
  std::string out;
};

int run_generate(const GenerateArgs& a) {
  SceneRecipe r;
  r.family = a.recipe;
  r.views = a.views;
  std::tie(r.height, r.width) = parse_resolution(a.resolution);
  r.water = parse_water_kind(a.water);
  r.seed = a.seed;
  const SyntheticScene s = generate(r, a.out);
  std::cout << "wrote " << s.cameras.size() << " views of '" << r.family << "' (" << s.gt_cloud.size()
            << " Gaussians, r_max " << s.r_max << ") to " << a.out << '\n';
  return 0;
}

struct TrainArgs {
  std::string data, config, freeze, out;
  int iters = -1;
  int64_t seed = -1;
  int threads = 1;
  bool quiet = false;
};

int run_train(const TrainArgs& a, const CLI::App& sub) {
  TrainConfig cfg;
  if (!a.config.empty()) apply_config_file(cfg, a.config);
  // Explicit flags win over the config file.
  if (sub.count("--iters")) cfg.iterations = a.iters;
  if (sub.count("--freeze")) cfg.freeze = parse_freeze(a.freeze);
  if (sub.count("--seed")) cfg.seed = static_cast<uint64_t>(a.seed);
  if (sub.count("--threads")) cfg.threads = a.threads;
  cfg.validate();
  const Dataset ds = load_dataset(a.data);
  try {
    const TrainResult r = train(ds, cfg, a.out, a.quiet ? nullptr : &std::cout);
    std::cout << "checkpoint: " << r.checkpoint_path << "\nlog: " << r.log_path << '\n';
    std::cout << std::fixed << std::setprecision(3) << "held-out underwater PSNR " << r.test.psnr_underwater
              << " dB, SSIM " << r.test.ssim_underwater;
    if (r.test.psnr_clean > 0) std::cout << "; clean PSNR " << r.test.psnr_clean << " dB";
    std::cout << '\n';
    if (r.skipped_updates > 0) std::cerr << "warning: " << r.skipped_updates << " updates skipped (non-finite gradient)\n";
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
  return 0;
}

struct RenderArgs {
  std::string ckpt, data, pose_file, mode = "underwater", out;
  int camera_index = -1;
  bool dump = false;
  int threads = 1;
};

int run_render(const RenderArgs& a) {
  Camera cam;
  if (!a.pose_file.empty()) {
    const std::vector<Camera> cams = read_cameras(a.pose_file);
    if (cams.empty()) throw ConfigError("pose file holds no camera");
    cam = cams.front();
  } else {
    if (a.data.empty()) throw ConfigError("--camera-index needs --data to locate cameras.txt");
    const std::vector<Camera> cams = read_cameras((fs::path(a.data) / "cameras.txt").string());
    if (a.camera_index < 0 || static_cast<size_t>(a.camera_index) >= cams.size())
      throw ConfigError("camera index " + std::to_string(a.camera_index) + " out of range (dataset has " +
                        std::to_string(cams.size()) + " cameras)");
    cam = cams[a.camera_index];
  }
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  cam.r_max = ckpt.r_max;
  const ViewRender r = render_view(ckpt.cloud, ckpt.water, cam, a.threads);

  Image raw;
  if (a.mode == "underwater") {
    raw = r.underwater;
    write_png_linear(a.out, raw);
  } else if (a.mode == "clean") {
    raw = r.bundle.J;
    write_png_linear(a.out, raw);
  } else if (a.mode == "depth" || a.mode == "distance") {
    raw = a.mode == "depth" ? r.bundle.D : r.bundle.R;
    const auto [lo, hi] = std::minmax_element(raw.data.begin(), raw.data.end());
    write_png8(a.out, colormap(raw, *lo, *hi));
    write_float_dump(replace_extension(a.out, ".f32"), raw);
  } else if (a.mode == "opacity") {
    raw = r.bundle.o_acc;
    write_png8(a.out, clamp01(raw));
  } else {
    throw ConfigError("unknown render mode '" + a.mode + "' (underwater | clean | depth | distance | opacity)");
  }
  if (a.dump && a.mode != "depth" && a.mode != "distance") write_float_dump(replace_extension(a.out, ".f32"), raw);
  std::cout << "wrote " << a.out << '\n';
  return 0;
}

struct RestoreArgs {
  std::string ckpt, data, out;
  int threads = 1;
};

int run_restore(const RestoreArgs& a) {
  const Checkpoint ckpt = load_checkpoint(a.ckpt);
  const Dataset ds = load_dataset(a.data);
  fs::create_directories(a.out);
  std::ofstream table(fs::path(a.out) / "metrics.txt");
  table << "view psnr ssim\n";
  double sum_psnr = 0, sum_ssim = 0;
  int paired = 0;
  for (size_t v = 0; v < ds.views(); ++v) {
    Camera cam = ds.cameras[v];
    cam.r_max = ckpt.r_max;
    const Restoration r = restore(ckpt, cam, a.threads);
    char name[32];
    std::snprintf(name, sizeof(name), "%03zu_clean", v);
    write_png_linear((fs::path(a.out) / (std::string(name) + ".png")).string(), r.J);
    write_float_dump((fs::path(a.out) / (std::string(name) + ".f32")).string(), r.J);
    if (!ds.clean[v].empty()) {
      const Image p = to_srgb(r.J), g = to_srgb(ds.clean[v]);
      const double ps = psnr(p, g), ss = ssim(p, g);
      table << v << ' ' << ps << ' ' << ss << '\n';
      sum_psnr += ps;
      sum_ssim += ss;
      ++paired;
    }
  }
  std::cout << "restored " << ds.views() << " views to " << a.out << '\n';
  if (paired > 0) {
    table << "mean " << sum_psnr / paired << ' ' << sum_ssim / paired << '\n';
    std::cout << std::fixed << std::setprecision(3) << "mean clean PSNR " << sum_psnr / paired << " dB, SSIM "
              << sum_ssim / paired << '\n';
  }
  return 0;
}

struct EvalArgs {
  std::string pred_dir, gt_dir, charts, out, csv;
};

// Leading digits of a file name ("007_clean.png" -> 7), or -1.
int view_index(const std::string& name) {
  size_t n = 0;
  while (n < name.size() && std::isdigit(static_cast<unsigned char>(name[n]))) ++n;
  return n == 0 ? -1 : std::stoi(name.substr(0, n));
}

int run_eval(const EvalArgs& a) {
  if (a.gt_dir.empty() == a.charts.empty()) throw ConfigError("eval needs exactly one of --gt-dir or --charts");
  std::vector<fs::path> preds;
  for (const auto& e : fs::directory_iterator(a.pred_dir))
    if (e.path().extension() == ".png") preds.push_back(e.path());
  std::sort(preds.begin(), preds.end());
  if (preds.empty()) throw ConfigError("no PNG images in " + a.pred_dir);

  std::ostringstream table;
  std::ofstream csv;
  if (!a.csv.empty()) csv.open(a.csv);
  table << std::fixed << std::setprecision(4);
  if (!a.gt_dir.empty()) {
    if (csv) csv << "image,psnr,ssim\n";
    double sp = 0, ss = 0;
    int n = 0;
    table << "image psnr ssim\n";
    for (const fs::path& p : preds) {
      fs::path g = fs::path(a.gt_dir) / p.filename();
      if (!fs::exists(g)) g = fs::path(a.gt_dir) / "views" / p.filename();
      if (!fs::exists(g)) {
        std::cerr << "warning: no ground truth for " << p.filename() << ", skipped\n";
        continue;
      }
      const Image pi = read_png(p.string()), gi = read_png(g.string());
      const double ps = psnr(pi, gi), s = ssim(pi, gi);
      table << p.filename().string() << ' ' << ps << ' ' << s << '\n';
      if (csv) csv << p.filename().string() << ',' << ps << ',' << s << '\n';
      sp += ps;
      ss += s;
      ++n;
    }
    if (n == 0) throw ConfigError("no prediction had a matching ground-truth image");
    table << "mean " << sp / n << ' ' << ss / n << '\n';
  } else {
    fs::path chart_file = a.charts;
    if (fs::is_directory(chart_file)) chart_file /= "charts.txt";
    const std::vector<ChartPatch> charts = read_charts(chart_file.string());
    const std::vector<Camera> cams = read_cameras((chart_file.parent_path() / "cameras.txt").string());
    if (csv) csv << "image,chart,delta_e00,angular_deg\n";
    std::vector<double> de, ang;
    table << "image delta_e00_mean delta_e00_std angular_mean angular_std\n";
    for (const fs::path& p : preds) {
      const int v = view_index(p.filename().string());
      if (v < 0 || static_cast<size_t>(v) >= cams.size()) {
        std::cerr << "warning: cannot map " << p.filename() << " to a camera, skipped\n";
        continue;
      }
      const ChartReport r = chart_eval(to_linear(read_png(p.string())), charts, cams[v]);
      for (int c : r.excluded) std::cerr << "warning: chart " << c << " not visible in " << p.filename() << '\n';
      if (r.delta_e.empty()) continue;
      table << p.filename().string() << ' ' << r.delta_e_mean << ' ' << r.delta_e_std << ' ' << r.angular_mean
            << ' ' << r.angular_std << '\n';
      for (size_t i = 0; i < r.delta_e.size(); ++i) {
        de.push_back(r.delta_e[i]);
        ang.push_back(r.angular[i]);
        if (csv) csv << p.filename().string() << ',' << i << ',' << r.delta_e[i] << ',' << r.angular[i] << '\n';
      }
    }
    if (de.empty()) throw ConfigError("no chart was visible in any prediction");
    auto mean_std = [](const std::vector<double>& x) {
      double m = 0, s = 0;
      for (double v : x) m += v;
      m /= static_cast<double>(x.size());
      for (double v : x) s += (v - m) * (v - m);
      return std::pair{m, std::sqrt(s / static_cast<double>(x.size()))};
    };
    const auto [dm, ds] = mean_std(de);
    const auto [am, as] = mean_std(ang);
    table << "all " << dm << ' ' << ds << ' ' << am << ' ' << as << '\n';
  }
  std::cout << table.str();
  if (!a.out.empty()) {
    std::ofstream os(a.out);
    if (!os) throw IoError("cannot write " + a.out);
    os << table.str();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Underwater Gaussian splatting: synthetic data, training, rendering and evaluation"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic underwater dataset");
  g->add_option("--recipe", gen.recipe, "textured-wall | terraced-terrain | color-chart-field")->capture_default_str();
  g->add_option("--views", gen.views, "Number of views")->capture_default_str();
  g->add_option("--resolution", gen.resolution, "Image size HxW")->capture_default_str();
  g->add_option("--water", gen.water, "none | uniform | varying")->capture_default_str();
  g->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
  g->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Optimize Gaussians and the water field on a dataset");
  t->add_option("--data", tr.data, "Dataset directory")->required();
  t->add_option("--config", tr.config, "key = value config file (flags win)");
  t->add_option("--iters", tr.iters, "Iterations");
  t->add_option("--freeze", tr.freeze, "none | water | gaussians");
  t->add_option("--seed", tr.seed, "Random seed");
  t->add_option("--threads", tr.threads, "Worker threads for rasterization");
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_flag("--quiet", tr.quiet, "No progress output");

  RenderArgs rd;
  auto* r = app.add_subcommand("render", "Render one view of a checkpoint");
  r->add_option("--ckpt", rd.ckpt, "Checkpoint file")->required();
  auto* idx = r->add_option("--camera-index", rd.camera_index, "Camera index in <data>/cameras.txt");
  auto* pose = r->add_option("--pose-file", rd.pose_file, "File with one camera record");
  idx->excludes(pose);
  r->add_option("--data", rd.data, "Dataset directory (for --camera-index)");
  r->add_option("--mode", rd.mode, "underwater | clean | depth | distance | opacity")->capture_default_str();
  r->add_option("--out", rd.out, "Output PNG")->required();
  r->add_flag("--dump", rd.dump, "Also write a float dump next to the PNG");
  r->add_option("--threads", rd.threads, "Worker threads");

  RestoreArgs rs;
  auto* s = app.add_subcommand("restore", "Render water-free images for every dataset view");
  s->add_option("--ckpt", rs.ckpt, "Checkpoint file")->required();
  s->add_option("--data", rs.data, "Dataset directory")->required();
  s->add_option("--out", rs.out, "Output directory")->required();
  s->add_option("--threads", rs.threads, "Worker threads");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Image metrics (PSNR/SSIM) or color-chart metrics");
  e->add_option("--pred-dir", ev.pred_dir, "Directory of predicted PNGs")->required();
  e->add_option("--gt-dir", ev.gt_dir, "Directory of ground-truth PNGs with matching names");
  e->add_option("--charts", ev.charts, "charts.txt (or a dataset directory holding it and cameras.txt)");
  e->add_option("--out", ev.out, "Write the metrics table here");
  e->add_option("--csv", ev.csv, "Per-image CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kExitUsage;
  }

  try {
    if (*g) return run_generate(gen);
    if (*t) return run_train(tr, *t);
    if (*r) {
      if (rd.pose_file.empty() && !idx->count()) throw ConfigError("render needs --camera-index or --pose-file");
      return run_render(rd);
    }
    if (*s) return run_restore(rs);
    if (*e) return run_eval(ev);
  } catch (const NumericalError& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
