#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <optional>
#include <ostream>
#include <sstream>

#include "progan/config.hpp"
#include "progan/dataio.hpp"
#include "progan/errors.hpp"
#include "progan/metrics.hpp"
#include "progan/trainer.hpp"

namespace progan {

namespace fs = std::filesystem;

namespace {

// Usage and configuration problems map to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string numbered(const std::string& stem, std::size_t i, const std::string& ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_%04zu", i);
  return stem + buf + "." + ext;
}

std::vector<Image> load_directory(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("not a directory: " + dir.string());
  const auto data = Dataset::from_directory(dir);
  if (data.empty()) throw Error("no .pgm or .png images in " + dir.string());
  std::vector<Image> images;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].image.height != data[0].image.height || data[i].image.width != data[0].image.width) {
      throw ShapeError("images in " + dir.string() + " differ in resolution");
    }
    images.push_back(data[i].image);
  }
  return images;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

void write_report(const MetricReport& report, const fs::path& out_dir, const std::string& stem, std::ostream& out) {
  fs::create_directories(out_dir);
  write_text(out_dir / (stem + ".csv"), report.csv_header() + "\n" + report.csv_row() + "\n");
  write_text(out_dir / (stem + ".json"), report.to_json() + "\n");
  out << report.to_json() << "\n";
}

Tensor one_latent(LatentSampler& sampler) { return sampler.sample(1); }

Image render(const Generator& g, const FadeState& fade, const Tensor& z, View view) {
  const std::vector<View> views{view};
  auto img = from_tensor(g.forward(z, views, fade), 0);
  for (auto& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

// Spherical interpolation; falls back to a straight line for (anti)parallel
// endpoints. t = 0 and t = 1 return the endpoints exactly.
Tensor slerp(const Tensor& a, const Tensor& b, double t) {
  if (t <= 0.0) return a;
  if (t >= 1.0) return b;
  const auto x = a.data(), y = b.data();
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += double(x[i]) * y[i];
    na += double(x[i]) * x[i];
    nb += double(y[i]) * y[i];
  }
  const double cosine = std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
  const double theta = std::acos(cosine);
  double wa = 1.0 - t, wb = t;
  if (std::sin(theta) > 1e-6) {
    wa = std::sin((1.0 - t) * theta) / std::sin(theta);
    wb = std::sin(t * theta) / std::sin(theta);
  }
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = static_cast<float>(wa * x[i] + wb * y[i]);
  return Tensor(a.shape(), std::move(out));
}


// Loads the training data named by exactly one of the data keys.
Dataset load_training_data(const Config& c, const fs::path& base, const StagePlan& plan) {
  const auto phantoms = c.integer("phantoms");
  const auto data_dir = c.string("data_dir");
  const auto manifest = c.string("manifest");
  const int sources = int(phantoms.has_value()) + int(data_dir.has_value()) + int(manifest.has_value());
  if (sources != 1) {
    throw UsageError("config must name exactly one data source: phantoms = <count>, data_dir = <dir> or "
                     "manifest = <csv>");
  }
  const auto& top = plan.final();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  if (phantoms) {
    if (*phantoms < 1) throw UsageError("phantoms must be positive");
    PhantomConfig pc;
    pc.height = top.height;
    pc.width = top.width;
    pc.seed = c.unsigned_integer("phantom_seed").value_or(0);
    pc.texture = c.real("phantom_texture").value_or(pc.texture);
    pc.p_calcification = c.real("phantom_calcification").value_or(pc.p_calcification);
    pc.p_marker = c.real("phantom_marker").value_or(pc.p_marker);
    pc.wedge_intensity = c.real("phantom_wedge").value_or(pc.wedge_intensity);
    try {
      pc.validate();
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    return Dataset::phantoms(pc, static_cast<std::size_t>(*phantoms));
  }
  if (manifest) return Dataset::from_manifest(resolve(*manifest), top.height, top.width);
  auto raw = Dataset::from_directory(resolve(*data_dir));
  std::vector<LabeledImage> items;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto item = raw[i];
    item.image = preprocess(item.image, top.height, top.width);
    items.push_back(std::move(item));
  }
  return Dataset(std::move(items));
}

// ------------------------------------------------------------ subcommands

struct Common {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out;
};

int cmd_preprocess(const std::string& input, std::int64_t phantom_count, std::int64_t height, std::int64_t width,
                   std::int64_t fit_h, std::int64_t fit_w, const Common& common, std::ostream& out) {
  if (common.out.empty()) throw UsageError("preprocess needs --out");
  if (input.empty() == (phantom_count == 0)) throw UsageError("preprocess needs exactly one of --input or --phantoms");
  if (height < 1 || width < 1) throw UsageError("target extents must be positive");
  std::vector<LabeledImage> items;
  if (phantom_count > 0) {
    PhantomConfig pc;
    pc.height = fit_h > 0 ? fit_h : height;
    pc.width = fit_w > 0 ? fit_w : width;
    pc.seed = common.seed;
    const auto data = Dataset::phantoms(pc, static_cast<std::size_t>(phantom_count));
    for (std::size_t i = 0; i < data.size(); ++i) items.push_back(data[i]);
  } else {
    const fs::path in(input);
    Dataset data = fs::is_directory(in) ? Dataset::from_directory(in) : Dataset::from_manifest(in, height, width);
    for (std::size_t i = 0; i < data.size(); ++i) {
      auto item = data[i];
      if (item.image.height != height || item.image.width != width) item.image = preprocess(item.image, height, width);
      if (fit_h > 0 && fit_w > 0) item.image = center_fit(item.image, fit_h, fit_w);
      items.push_back(std::move(item));
    }
  }
  const Dataset result(std::move(items));
  result.write(common.out);
  out << "wrote " << result.size() << " images to " << common.out << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& ckpt, const Common& common, std::ostream& out) {
  if (config_path.empty()) throw UsageError("train needs --config");
  auto config = Config::load(config_path);
  if (common.seed_given) config.set("seed", std::to_string(common.seed));
  TrainSchedule schedule;
  try {
    schedule = TrainSchedule::from_config(config);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const auto data = load_training_data(config, fs::path(config_path).parent_path(), schedule.plan);
  std::string out_dir = common.out;
  if (const auto o = config.string("out"); out_dir.empty() && o) out_dir = *o;
  if (out_dir.empty()) throw UsageError("train needs --out or an out key in the config");
  if (const auto unused = config.unused(); !unused.empty()) {
    std::string keys;
    for (const auto& k : unused) keys += (keys.empty() ? "" : ", ") + k;
    throw UsageError("unknown config keys: " + keys);
  }
  Trainer trainer(schedule, data);
  if (!ckpt.empty()) trainer.load_checkpoint(ckpt);
  trainer.run(out_dir);
  out << "trained to " << trainer.progress().images_seen << " images; " << trainer.rows().size()
      << " diagnostics rows; restarts " << trainer.progress().restarts << "\n";
  return kExitOk;
}

int cmd_sample(const std::string& ckpt, std::int64_t count, const std::string& view_text, const std::string& format,
               bool grid, const Common& common, std::ostream& out) {
  if (ckpt.empty()) throw UsageError("sample needs --ckpt");
  if (common.out.empty()) throw UsageError("sample needs --out");
  if (count < 0) throw UsageError("--count must be non-negative");
  if (format != "png" && format != "pgm") throw UsageError("--format must be png or pgm");
  View view;
  try {
    view = parse_view(view_text);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const auto nets = load_checkpoint_nets(ckpt);
  fs::create_directories(common.out);
  LatentSampler latents(nets.plan.latent_dim, nets.prior, common.seed);
  std::vector<Image> images;
  for (std::int64_t i = 0; i < count; ++i) {
    images.push_back(render(nets.generator, nets.fade, one_latent(latents), view));
    save_image(images.back(), fs::path(common.out) / numbered("sample", static_cast<std::size_t>(i), format));
  }
  if (grid && !images.empty()) {
    const std::int64_t cols = 6;
    const std::int64_t rows = (count + cols - 1) / cols;
    save_image(tile(images, rows, cols), fs::path(common.out) / ("grid." + format));
  }
  out << "wrote " << count << " " << view_name(view) << " samples to " << common.out << "\n";
  return kExitOk;
}

int cmd_walk(const std::string& ckpt, std::int64_t frames, std::int64_t waypoints, const std::string& view_text,
             const Common& common, std::ostream& out) {
  if (ckpt.empty()) throw UsageError("walk needs --ckpt");
  if (common.out.empty()) throw UsageError("walk needs --out");
  if (frames < 2) throw UsageError("--frames must be at least 2");
  if (waypoints < 2) throw UsageError("--waypoints must be at least 2");
  View view;
  try {
    view = parse_view(view_text);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const auto nets = load_checkpoint_nets(ckpt);
  fs::create_directories(common.out);
  LatentSampler latents(nets.plan.latent_dim, nets.prior, common.seed);
  std::vector<Tensor> points;
  for (std::int64_t i = 0; i < waypoints; ++i) points.push_back(one_latent(latents));
  const auto segments = static_cast<double>(waypoints - 1);
  for (std::int64_t f = 0; f < frames; ++f) {
    // Position along the path in units of segments; the last frame lands
    // exactly on the final waypoint.
    const double pos = f == frames - 1 ? segments : static_cast<double>(f) * segments / static_cast<double>(frames - 1);
    auto seg = static_cast<std::int64_t>(std::floor(pos));
    seg = std::min<std::int64_t>(seg, waypoints - 2);
    const double t = pos - static_cast<double>(seg);
    const auto z = slerp(points[static_cast<std::size_t>(seg)], points[static_cast<std::size_t>(seg + 1)], t);
    save_image(render(nets.generator, nets.fade, z, view), fs::path(common.out) / numbered("frame", f, "png"));
  }
  out << "wrote " << frames << " frames to " << common.out << "\n";
  return kExitOk;
}

int cmd_eval_swd(const std::vector<std::string>& dirs, const SwdConfig& base, const Common& common,
                 std::ostream& out) {
  if (dirs.size() != 2) throw UsageError("eval-swd needs two image directories");
  if (common.out.empty()) throw UsageError("eval-swd needs --out");
  const auto a = load_directory(dirs[0]);
  const auto b = load_directory(dirs[1]);
  SwdConfig cfg = base;
  cfg.seed = common.seed;
  write_report(swd_multiscale(a, b, cfg), common.out, "swd", out);
  return kExitOk;
}

int cmd_eval_msssim(const std::vector<std::string>& dirs, std::size_t pairs, bool identity, const Common& common,
                    std::ostream& out) {
  if (dirs.size() != 2) throw UsageError("eval-msssim needs two image directories");
  if (common.out.empty()) throw UsageError("eval-msssim needs --out");
  const auto a = load_directory(dirs[0]);
  const auto b = load_directory(dirs[1]);
  Rng rng(common.seed);
  MetricReport report;
  add_diversity(report, msssim_diversity(a, b, rng, pairs, identity ? Pairing::Identity : Pairing::Random));
  write_report(report, common.out, "msssim", out);
  return kExitOk;
}

int cmd_diagnose(const std::string& run, const std::string& ckpt, const Common& common, std::ostream& out) {
  if (run.empty() == ckpt.empty()) throw UsageError("diagnose needs exactly one of --run or --ckpt");
  if (common.out.empty()) throw UsageError("diagnose needs --out");
  const fs::path src = fs::path(run.empty() ? ckpt : run) / "diagnostics.csv";
  std::ifstream in(src);
  if (!in) throw Error("cannot open " + src.string());
  std::string line;
  std::getline(in, line);
  if (line != kDiagnosticsHeader) throw FormatError("unexpected diagnostics header in " + src.string());
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 6) throw FormatError("malformed diagnostics row: " + line);
    rows.push_back(std::move(fields));
  }
  fs::create_directories(common.out);
  // One file per panel of the training diagnostics figure.
  const char* panels[] = {"d_bce", "grad_mag", "label_ce_real", "label_ce_fake"};
  const int columns[] = {2, 3, 4, 5};
  nlohmann::ordered_json summary;
  summary["rows"] = rows.size();
  for (int p = 0; p < 4; ++p) {
    std::string text = std::string("images_seen,") + panels[p] + "\n";
    for (const auto& r : rows) text += r[0] + "," + r[columns[p]] + "\n";
    write_text(fs::path(common.out) / ("panel_" + std::string(panels[p]) + ".csv"), text);
    if (!rows.empty()) {
      summary[panels[p]] = {{"first", std::stod(rows.front()[columns[p]])}, {"last", std::stod(rows.back()[columns[p]])}};
    }
  }
  write_text(fs::path(common.out) / "summary.json", summary.dump(2) + "\n");
  out << summary.dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Progressive GAN training and evaluation for grayscale images", "progan"};
  app.require_subcommand(1);

  Common common;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", common.seed, "Seed for all randomness (default 0)");
    sub->add_option("--out", common.out, "Output directory");
  };

  std::string config, ckpt, input, view = "cc", format = "png", run_dir;
  std::int64_t phantom_count = 0, height = 80, width = 64, fit_h = 64, fit_w = 64;
  std::int64_t count = 30, frames = 60, waypoints = 4;
  std::size_t pairs = 256;
  bool grid = false, identity = false;
  std::vector<std::string> dirs;
  SwdConfig swd;

  auto* pre = app.add_subcommand("preprocess", "Resize and pad images (or write phantoms) into a dataset directory");
  add_common(pre);
  pre->add_option("--input", input, "Image directory or path,view manifest");
  pre->add_option("--phantoms", phantom_count, "Write this many synthetic phantoms instead");
  pre->add_option("--height", height, "Preprocess target height");
  pre->add_option("--width", width, "Preprocess target width");
  pre->add_option("--fit-height", fit_h, "Centre crop/pad height after resizing (0 disables)");
  pre->add_option("--fit-width", fit_w, "Centre crop/pad width after resizing (0 disables)");

  auto* train = app.add_subcommand("train", "Run progressive training from a key=value config");
  add_common(train);
  train->add_option("--config", config, "Run configuration file");
  train->add_option("--ckpt", ckpt, "Resume from this checkpoint directory");

  auto* sample = app.add_subcommand("sample", "Draw samples from a checkpoint");
  add_common(sample);
  sample->add_option("--ckpt", ckpt, "Checkpoint directory");
  sample->add_option("--count", count, "Number of samples");
  sample->add_option("--view", view, "cc or mlo");
  sample->add_option("--format", format, "png or pgm");
  sample->add_flag("--grid", grid, "Also write a 6-column grid");

  auto* walk = app.add_subcommand("walk", "Render a spherical random walk through latent space");
  add_common(walk);
  walk->add_option("--ckpt", ckpt, "Checkpoint directory");
  walk->add_option("--frames", frames, "Number of frames (>= 2)");
  walk->add_option("--waypoints", waypoints, "Number of random waypoints (>= 2)");
  walk->add_option("--view", view, "cc or mlo");

  auto* eval_swd = app.add_subcommand("eval-swd", "Multi-scale sliced Wasserstein distance between two directories");
  add_common(eval_swd);
  eval_swd->add_option("dirs", dirs, "Two image directories")->expected(2);
  eval_swd->add_option("--levels", swd.levels, "Pyramid levels (0 = automatic)");
  eval_swd->add_option("--patch", swd.patch, "Patch size");
  eval_swd->add_option("--patches", swd.patches_per_image, "Patches per image");
  eval_swd->add_option("--projections", swd.projections, "Random projections");

  auto* eval_ms = app.add_subcommand("eval-msssim", "MS-SSIM diversity report for two directories");
  add_common(eval_ms);
  eval_ms->add_option("dirs", dirs, "Two image directories")->expected(2);
  eval_ms->add_option("--pairs", pairs, "Random pairs per mean");
  eval_ms->add_flag("--identity", identity, "Pair image i with image i instead of random pairs");

  auto* diagnose = app.add_subcommand("diagnose", "Export the training diagnostics panels of a run");
  add_common(diagnose);
  diagnose->add_option("--run", run_dir, "Run output directory");
  diagnose->add_option("--ckpt", ckpt, "Checkpoint directory");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "progan: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }
  for (auto* sub : app.get_subcommands())
    if (sub->count("--seed")) common.seed_given = true;

  try {
    if (*pre) return cmd_preprocess(input, phantom_count, height, width, fit_h, fit_w, common, out);
    if (*train) return cmd_train(config, ckpt, common, out);
    if (*sample) return cmd_sample(ckpt, count, view, format, grid, common, out);
    if (*walk) return cmd_walk(ckpt, frames, waypoints, view, common, out);
    if (*eval_swd) return cmd_eval_swd(dirs, swd, common, out);
    if (*eval_ms) return cmd_eval_msssim(dirs, pairs, identity, common, out);
    if (*diagnose) return cmd_diagnose(run_dir, ckpt, common, out);
  } catch (const UsageError& e) {
    err << "progan: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "progan: configuration error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "progan: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace progan
