#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "progan/dataio.hpp"
#include "progan/rng.hpp"

namespace progan {

// ------------------------------------------------------------------------ SSIM

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Mean SSIM over every valid (fully inside) Gaussian window.
double ssim(const Image& x, const Image& y, const SsimConfig& config = {});

inline constexpr double kMsssimWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

/// Multi-scale SSIM with the standard five weights. With fewer scales the
/// leading weights are used, renormalized to sum to one. Negative
/// contrast-structure terms are clamped to 0 before exponentiation. Both
/// extents must be at least 2^(scales-1) * window.
double ms_ssim(const Image& x, const Image& y, int scales = 5, const SsimConfig& config = {});

/// Largest scale count (<= 5) that ms_ssim accepts for these extents.
int max_msssim_scales(std::int64_t height, std::int64_t width, const SsimConfig& config = {});

enum class Pairing { Random, Identity };

struct DiversityReport {
  double cross = 0.0;        // mean MS-SSIM over real/fake pairs
  double within_real = 0.0;  // over pairs of distinct real images
  double within_fake = 0.0;
};

/// Randomized pairing protocol. Random pairing draws `pairs` index pairs per
/// mean; identity pairing compares real[i] with fake[i] and, within a set,
/// item i with item i+1.
DiversityReport msssim_diversity(std::span<const Image> real, std::span<const Image> fake, Rng& rng,
                                 std::size_t pairs = 256, Pairing pairing = Pairing::Random, int scales = 0);

// ------------------------------------------------------------------------- SWD

/// Band-pass levels followed by the low-pass residual, finest first. Stored
/// in double so that synthesis reproduces float input exactly.
struct Pyramid {
  std::vector<std::int64_t> heights;
  std::vector<std::int64_t> widths;
  std::vector<std::vector<double>> levels;
};

Pyramid laplacian_pyramid(const Image& image, int levels);
Image reconstruct(const Pyramid& pyramid);

/// Pyramid depth such that the coarsest level is at least `min_size` on its
/// short side.
int default_pyramid_levels(std::int64_t height, std::int64_t width, std::int64_t min_size = 16);

struct PatchDescriptorSet {
  std::int64_t patch = 7;  // descriptor length is patch * patch
  int scale = 0;
  std::vector<float> rows;  // row-major [count, patch * patch]

  std::size_t dim() const { return static_cast<std::size_t>(patch * patch); }
  std::size_t count() const { return rows.size() / dim(); }
};

inline constexpr double kDescriptorEps = 1e-3;

/// Random k x k patches of one pyramid level of each image, each normalized
/// to zero mean and unit standard deviation ((x - mean) / (std + eps)).
PatchDescriptorSet extract_descriptors(std::span<const Pyramid> pyramids, int scale, int patches_per_image, int patch,
                                       Rng& rng, double eps = kDescriptorEps);

/// Mean over `directions` of the 1-D Wasserstein-1 distance between the
/// projected sets (mean absolute difference of sorted projections). The
/// directions are used as given. Sets must be equally sized.
double sliced_wasserstein_along(const PatchDescriptorSet& a, const PatchDescriptorSet& b,
                                std::span<const std::vector<double>> directions);

/// Random unit directions; the larger set is randomly subsampled to the
/// size of the smaller one first.
double sliced_wasserstein(const PatchDescriptorSet& a, const PatchDescriptorSet& b, int projections, Rng& rng);

struct SwdConfig {
  int levels = 0;  // 0 picks default_pyramid_levels
  int patch = 7;
  int patches_per_image = 128;
  int projections = 512;
  std::uint64_t seed = 0;
};

struct MetricReport {
  std::vector<double> swd_per_scale;
  std::optional<double> swd_mean;
  std::optional<double> msssim_cross;
  std::optional<double> msssim_within_real;
  std::optional<double> msssim_within_fake;

  std::string csv_header() const;
  std::string csv_row() const;
  std::string to_json() const;
  static MetricReport from_json(const std::string& text);
};

/// Multi-scale SWD between two image sets of one resolution.
MetricReport swd_multiscale(std::span<const Image> real, std::span<const Image> fake, const SwdConfig& config);

/// Fills the msssim_* fields of `report`.
void add_diversity(MetricReport& report, const DiversityReport& diversity);

/// Seam for metrics built on learned image features (FID, IS). No extractor
/// ships with the library.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::size_t feature_dim() const = 0;
  /// One row of feature_dim() values per image.
  virtual std::vector<std::vector<double>> extract(std::span<const Image> images) const = 0;
};

}  // namespace progan
