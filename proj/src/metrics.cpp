#include "progan/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <charconv>

#include "progan/errors.hpp"

namespace progan {

namespace {

struct SsimMeans {
  double ssim = 0.0;  // mean of luminance * contrast-structure
  double cs = 0.0;    // mean of contrast-structure alone
};

std::vector<double> gaussian_window(const SsimConfig& c) {
  std::vector<double> g(static_cast<std::size_t>(c.window));
  const double centre = (c.window - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < c.window; ++i) {
    const double d = i - centre;
    g[i] = std::exp(-d * d / (2.0 * c.sigma * c.sigma));
    total += g[i];
  }
  for (auto& v : g) v /= total;
  return g;
}

// Separable "valid" filtering of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& src, std::int64_t h, std::int64_t w,
                                 const std::vector<double>& g) {
  const auto k = static_cast<std::int64_t>(g.size());
  const auto ow = w - k + 1, oh = h - k + 1;
  std::vector<double> rows(static_cast<std::size_t>(h * ow));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::int64_t i = 0; i < k; ++i) s += g[i] * src[y * w + x + i];
      rows[y * ow + x] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh * ow));
  for (std::int64_t y = 0; y < oh; ++y)
    for (std::int64_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::int64_t i = 0; i < k; ++i) s += g[i] * rows[(y + i) * ow + x];
      out[y * ow + x] = s;
    }
  return out;
}

void require_same_extents(const Image& x, const Image& y, const char* what) {
  if (x.height != y.height || x.width != y.width) {
    throw ShapeError(std::string(what) + ": image extents differ (" + std::to_string(x.height) + "x" +
                     std::to_string(x.width) + " vs " + std::to_string(y.height) + "x" + std::to_string(y.width) + ")");
  }
}

SsimMeans ssim_means(const std::vector<double>& x, const std::vector<double>& y, std::int64_t h, std::int64_t w,
                     const SsimConfig& c) {
  if (h < c.window || w < c.window) {
    throw ShapeError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " is smaller than the " +
                     std::to_string(c.window) + "x" + std::to_string(c.window) + " window");
  }
  const auto g = gaussian_window(c);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = filter_valid(x, h, w, g), my = filter_valid(y, h, w, g);
  const auto fxx = filter_valid(xx, h, w, g), fyy = filter_valid(yy, h, w, g), fxy = filter_valid(xy, h, w, g);
  const double c1 = (c.k1 * c.dynamic_range) * (c.k1 * c.dynamic_range);
  const double c2 = (c.k2 * c.dynamic_range) * (c.k2 * c.dynamic_range);
  SsimMeans m;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double sxx = fxx[i] - mx[i] * mx[i];
    const double syy = fyy[i] - my[i] * my[i];
    const double sxy = fxy[i] - mx[i] * my[i];
    const double lum = (2.0 * mx[i] * my[i] + c1) / (mx[i] * mx[i] + my[i] * my[i] + c1);
    const double cs = (2.0 * sxy + c2) / (sxx + syy + c2);
    m.ssim += lum * cs;
    m.cs += cs;
  }
  m.ssim /= static_cast<double>(mx.size());
  m.cs /= static_cast<double>(mx.size());
  return m;
}

std::vector<double> to_double(const Image& img) { return {img.pixels.begin(), img.pixels.end()}; }

// 2x2 mean pooling; an odd trailing row or column is dropped.
std::vector<double> pool2(const std::vector<double>& src, std::int64_t h, std::int64_t w) {
  const auto oh = h / 2, ow = w / 2;
  std::vector<double> out(static_cast<std::size_t>(oh * ow));
  for (std::int64_t y = 0; y < oh; ++y)
    for (std::int64_t x = 0; x < ow; ++x) {
      const auto i = 2 * y * w + 2 * x;
      out[y * ow + x] = ((src[i] + src[i + 1]) + (src[i + w] + src[i + w + 1])) * 0.25;
    }
  return out;
}

std::vector<double> up2(const std::vector<double>& src, std::int64_t h, std::int64_t w) {
  std::vector<double> out(static_cast<std::size_t>(4 * h * w));
  for (std::int64_t y = 0; y < 2 * h; ++y)
    for (std::int64_t x = 0; x < 2 * w; ++x) out[y * 2 * w + x] = src[(y / 2) * w + x / 2];
  return out;
}

double mean_msssim(std::span<const Image> a, std::span<const Image> b,
                   const std::vector<std::pair<std::size_t, std::size_t>>& pairs, int scales) {
  double total = 0.0;
  for (const auto& [i, j] : pairs) total += ms_ssim(a[i], b[j], scales);
  return total / static_cast<double>(pairs.size());
}

// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

double ssim(const Image& x, const Image& y, const SsimConfig& config) {
  require_same_extents(x, y, "ssim");
  return ssim_means(to_double(x), to_double(y), x.height, x.width, config).ssim;
}

int max_msssim_scales(std::int64_t height, std::int64_t width, const SsimConfig& config) {
  int scales = 0;
  while (scales < 5 && std::min(height, width) >= (std::int64_t{1} << scales) * config.window) ++scales;
  return scales;
}

double ms_ssim(const Image& x, const Image& y, int scales, const SsimConfig& config) {
  require_same_extents(x, y, "ms_ssim");
  if (scales < 1 || scales > 5) throw DomainError("ms_ssim: scale count must be in [1, 5]");
  if (max_msssim_scales(x.height, x.width, config) < scales) {
    throw ShapeError("ms_ssim: " + std::to_string(x.height) + "x" + std::to_string(x.width) + " is too small for " +
                     std::to_string(scales) + " scales (needs " +
                     std::to_string((std::int64_t{1} << (scales - 1)) * config.window) + " per side)");
  }
  double weight_sum = 0.0;
  for (int s = 0; s < scales; ++s) weight_sum += kMsssimWeights[s];

  auto a = to_double(x), b = to_double(y);
  auto h = x.height, w = x.width;
  double result = 1.0;
  for (int s = 0; s < scales; ++s) {
    const auto m = ssim_means(a, b, h, w, config);
    const double weight = kMsssimWeights[s] / weight_sum;
    // The coarsest scale contributes luminance as well.
    const double term = s + 1 == scales ? m.ssim : m.cs;
    result *= std::pow(std::max(term, 0.0), weight);
    if (s + 1 < scales) {
      a = pool2(a, h, w);
      b = pool2(b, h, w);
      h /= 2;
      w /= 2;
    }
  }
  return result;
}

DiversityReport msssim_diversity(std::span<const Image> real, std::span<const Image> fake, Rng& rng,
                                 std::size_t pairs, Pairing pairing, int scales) {
  if (real.size() < 2 || fake.size() < 2) throw ShapeError("msssim_diversity: each set needs at least 2 images");
  const auto h = real[0].height, w = real[0].width;
  for (const auto* set : {&real, &fake})
    for (const auto& img : *set)
      if (img.height != h || img.width != w) throw ShapeError("msssim_diversity: mixed resolutions");
  if (scales == 0) scales = max_msssim_scales(h, w);
  if (scales == 0) throw ShapeError("msssim_diversity: images are smaller than the SSIM window");

  using Pairs = std::vector<std::pair<std::size_t, std::size_t>>;
  Pairs cross, within_real, within_fake;
  if (pairing == Pairing::Identity) {
    const auto n = std::min(real.size(), fake.size());
    for (std::size_t i = 0; i < n; ++i) cross.emplace_back(i, i);
    for (std::size_t i = 0; i < real.size(); ++i) within_real.emplace_back(i, (i + 1) % real.size());
    for (std::size_t i = 0; i < fake.size(); ++i) within_fake.emplace_back(i, (i + 1) % fake.size());
  } else {
    if (pairs == 0) throw DomainError("msssim_diversity: pair count must be positive");
    auto distinct = [&](std::size_t n) {
      const auto i = rng.below(n);
      auto j = rng.below(n - 1);
      if (j >= i) ++j;
      return std::pair<std::size_t, std::size_t>(i, j);
    };
    for (std::size_t p = 0; p < pairs; ++p) cross.emplace_back(rng.below(real.size()), rng.below(fake.size()));
    for (std::size_t p = 0; p < pairs; ++p) within_real.push_back(distinct(real.size()));
    for (std::size_t p = 0; p < pairs; ++p) within_fake.push_back(distinct(fake.size()));
  }
  DiversityReport r;
  r.cross = mean_msssim(real, fake, cross, scales);
  r.within_real = mean_msssim(real, real, within_real, scales);
  r.within_fake = mean_msssim(fake, fake, within_fake, scales);
  return r;
}

Pyramid laplacian_pyramid(const Image& image, int levels) {
  if (levels < 1) throw DomainError("laplacian_pyramid: level count must be positive");
  const std::int64_t factor = std::int64_t{1} << (levels - 1);
  if (image.height % factor || image.width % factor || image.height == 0 || image.width == 0) {
    throw ShapeError("laplacian_pyramid: " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                     " is not divisible by " + std::to_string(factor));
  }
  Pyramid p;
  auto cur = to_double(image);
  auto h = image.height, w = image.width;
  for (int l = 0; l + 1 < levels; ++l) {
    auto low = pool2(cur, h, w);
    const auto up = up2(low, h / 2, w / 2);
    for (std::size_t i = 0; i < cur.size(); ++i) cur[i] -= up[i];
    p.heights.push_back(h);
    p.widths.push_back(w);
    p.levels.push_back(std::move(cur));
    cur = std::move(low);
    h /= 2;
    w /= 2;
  }
  p.heights.push_back(h);
  p.widths.push_back(w);
  p.levels.push_back(std::move(cur));
  return p;
}

Image reconstruct(const Pyramid& pyramid) {
  if (pyramid.levels.empty()) throw ShapeError("reconstruct: empty pyramid");
  auto cur = pyramid.levels.back();
  for (auto l = pyramid.levels.size() - 1; l-- > 0;) {
    const auto up = up2(cur, pyramid.heights[l + 1], pyramid.widths[l + 1]);
    const auto& band = pyramid.levels[l];
    if (band.size() != up.size()) throw ShapeError("reconstruct: inconsistent level extents");
    cur.resize(band.size());
    for (std::size_t i = 0; i < band.size(); ++i) cur[i] = band[i] + up[i];
  }
  Image out(pyramid.heights[0], pyramid.widths[0]);
  for (std::size_t i = 0; i < cur.size(); ++i) out.pixels[i] = static_cast<float>(cur[i]);
  return out;
}

int default_pyramid_levels(std::int64_t height, std::int64_t width, std::int64_t min_size) {
  int levels = 1;
  while (height % 2 == 0 && width % 2 == 0 && std::min(height, width) / 2 >= min_size) {
    height /= 2;
    width /= 2;
    ++levels;
  }
  return levels;
}

PatchDescriptorSet extract_descriptors(std::span<const Pyramid> pyramids, int scale, int patches_per_image, int patch,
                                       Rng& rng, double eps) {
  if (patch < 1) throw DomainError("extract_descriptors: patch size must be positive");
  if (patches_per_image < 1) throw DomainError("extract_descriptors: patches per image must be positive");
  PatchDescriptorSet set;
  set.patch = patch;
  set.scale = scale;
  const auto dim = set.dim();
  set.rows.reserve(pyramids.size() * static_cast<std::size_t>(patches_per_image) * dim);
  std::vector<double> buf(dim);
  for (const auto& p : pyramids) {
    if (scale < 0 || scale >= static_cast<int>(p.levels.size())) {
      throw ShapeError("extract_descriptors: scale " + std::to_string(scale) + " is outside the pyramid");
    }
    const auto h = p.heights[scale], w = p.widths[scale];
    if (h < patch || w < patch) {
      throw ShapeError("extract_descriptors: band " + std::to_string(h) + "x" + std::to_string(w) +
                       " is smaller than the patch");
    }
    const auto& band = p.levels[scale];
    for (int n = 0; n < patches_per_image; ++n) {
      const auto y0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(h - patch + 1)));
      const auto x0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(w - patch + 1)));
      double mean = 0.0;
      for (int dy = 0; dy < patch; ++dy)
        for (int dx = 0; dx < patch; ++dx) {
          const double v = band[(y0 + dy) * w + x0 + dx];
          buf[dy * patch + dx] = v;
          mean += v;
        }
      mean /= static_cast<double>(dim);
      double var = 0.0;
      for (double v : buf) var += (v - mean) * (v - mean);
      const double denom = std::sqrt(var / static_cast<double>(dim)) + eps;
      for (double v : buf) set.rows.push_back(static_cast<float>((v - mean) / denom));
    }
  }
  return set;
}

double sliced_wasserstein_along(const PatchDescriptorSet& a, const PatchDescriptorSet& b,
                                std::span<const std::vector<double>> directions) {
  if (a.rows.empty() || b.rows.empty()) throw ShapeError("sliced_wasserstein: empty descriptor set");
  if (a.dim() != b.dim()) throw ShapeError("sliced_wasserstein: descriptor lengths differ");
  if (a.count() != b.count()) throw ShapeError("sliced_wasserstein: descriptor set sizes differ");
  if (directions.empty()) throw DomainError("sliced_wasserstein: no projection directions");
  const auto n = static_cast<Eigen::Index>(a.count());
  const auto d = static_cast<Eigen::Index>(a.dim());
  using RowMajor = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::MatrixXd ma = Eigen::Map<const RowMajor>(a.rows.data(), n, d).cast<double>();
  const Eigen::MatrixXd mb = Eigen::Map<const RowMajor>(b.rows.data(), n, d).cast<double>();

  // Projections are processed in chunks to bound memory; every direction's
  // distance is reduced in order so the result is deterministic.
  constexpr Eigen::Index kChunk = 64;
  const auto p = static_cast<Eigen::Index>(directions.size());
  double total = 0.0;
  for (Eigen::Index start = 0; start < p; start += kChunk) {
    const auto cols = std::min(kChunk, p - start);
    Eigen::MatrixXd dirs(d, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto& u = directions[static_cast<std::size_t>(start + c)];
      if (static_cast<Eigen::Index>(u.size()) != d) throw ShapeError("sliced_wasserstein: direction length mismatch");
      dirs.col(c) = Eigen::Map<const Eigen::VectorXd>(u.data(), d);
    }
    Eigen::MatrixXd pa = ma * dirs, pb = mb * dirs;
    for (Eigen::Index c = 0; c < cols; ++c) {
      std::sort(pa.col(c).data(), pa.col(c).data() + n);
      std::sort(pb.col(c).data(), pb.col(c).data() + n);
      total += (pa.col(c) - pb.col(c)).cwiseAbs().sum() / static_cast<double>(n);
    }
  }
  return total / static_cast<double>(p);
}

double sliced_wasserstein(const PatchDescriptorSet& a, const PatchDescriptorSet& b, int projections, Rng& rng) {
  if (a.rows.empty() || b.rows.empty()) throw ShapeError("sliced_wasserstein: empty descriptor set");
  if (a.dim() != b.dim()) throw ShapeError("sliced_wasserstein: descriptor lengths differ");
  if (projections < 1) throw DomainError("sliced_wasserstein: projection count must be positive");

  auto subsample = [&](const PatchDescriptorSet& s, std::size_t m) {
    PatchDescriptorSet out;
    out.patch = s.patch;
    out.scale = s.scale;
    auto order = rng.permutation(s.count());
    order.resize(m);
    std::sort(order.begin(), order.end());
    for (auto i : order) out.rows.insert(out.rows.end(), s.rows.begin() + i * s.dim(), s.rows.begin() + (i + 1) * s.dim());
    return out;
  };
  const auto m = std::min(a.count(), b.count());
  const PatchDescriptorSet* pa = &a;
  const PatchDescriptorSet* pb = &b;
  PatchDescriptorSet sa, sb;
  if (a.count() > m) pa = &(sa = subsample(a, m));
  if (b.count() > m) pb = &(sb = subsample(b, m));

  std::vector<std::vector<double>> dirs(static_cast<std::size_t>(projections), std::vector<double>(a.dim()));
  for (auto& u : dirs) {
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& v : u) {
        v = rng.normal();
        norm += v * v;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (auto& v : u) v /= norm;
  }
  return sliced_wasserstein_along(*pa, *pb, dirs);
}

MetricReport swd_multiscale(std::span<const Image> real, std::span<const Image> fake, const SwdConfig& config) {
  if (real.empty() || fake.empty()) throw ShapeError("swd_multiscale: empty image set");
  const auto h = real[0].height, w = real[0].width;
  for (const auto* set : {&real, &fake})
    for (const auto& img : *set)
      if (img.height != h || img.width != w) throw ShapeError("swd_multiscale: mixed resolutions");
  const int levels = config.levels > 0 ? config.levels : default_pyramid_levels(h, w);

  std::vector<Pyramid> pr, pf;
  pr.reserve(real.size());
  pf.reserve(fake.size());
  for (const auto& img : real) pr.push_back(laplacian_pyramid(img, levels));
  for (const auto& img : fake) pf.push_back(laplacian_pyramid(img, levels));

  MetricReport report;
  double total = 0.0;
  for (int s = 0; s < levels; ++s) {
    // Both sets draw patch locations from the same stream, so identical
    // image sets give identical descriptors.
    const auto location_seed = Rng::derive(config.seed, 2 * static_cast<std::uint64_t>(s));
    Rng loc_real(location_seed), loc_fake(location_seed);
    Rng proj(Rng::derive(config.seed, 2 * static_cast<std::uint64_t>(s) + 1));
    const auto dr = extract_descriptors(pr, s, config.patches_per_image, config.patch, loc_real);
    const auto df = extract_descriptors(pf, s, config.patches_per_image, config.patch, loc_fake);
    const double d = sliced_wasserstein(dr, df, config.projections, proj);
    report.swd_per_scale.push_back(d);
    total += d;
  }
  report.swd_mean = total / static_cast<double>(levels);
  return report;
}

void add_diversity(MetricReport& report, const DiversityReport& diversity) {
  report.msssim_cross = diversity.cross;
  report.msssim_within_real = diversity.within_real;
  report.msssim_within_fake = diversity.within_fake;
}

std::string MetricReport::csv_header() const {
  std::string out;
  for (std::size_t i = 0; i < swd_per_scale.size(); ++i) out += "swd_scale_" + std::to_string(i) + ",";
  return out + "swd_mean,msssim_cross,msssim_within_real,msssim_within_fake";
}

std::string MetricReport::csv_row() const {
  std::string out;
  for (double v : swd_per_scale) out += format_double(v) + ",";
  auto field = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
  return out + field(swd_mean) + "," + field(msssim_cross) + "," + field(msssim_within_real) + "," +
         field(msssim_within_fake);
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["swd_per_scale"] = swd_per_scale;
  auto put = [&](const char* key, const std::optional<double>& v) {
    j[key] = v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  put("swd_mean", swd_mean);
  put("msssim_cross", msssim_cross);
  put("msssim_within_real", msssim_within_real);
  put("msssim_within_fake", msssim_within_fake);
  return j.dump(2);
}

MetricReport MetricReport::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metric report: ") + e.what());
  }
  MetricReport r;
  try {
    r.swd_per_scale = j.at("swd_per_scale").get<std::vector<double>>();
    auto get = [&](const char* key) -> std::optional<double> {
      if (!j.contains(key) || j[key].is_null()) return std::nullopt;
      return j[key].get<double>();
    };
    r.swd_mean = get("swd_mean");
    r.msssim_cross = get("msssim_cross");
    r.msssim_within_real = get("msssim_within_real");
    r.msssim_within_fake = get("msssim_within_fake");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metric report: ") + e.what());
  }
  return r;
}

}  // namespace progan
