#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "progan/nets.hpp"
#include "progan/rng.hpp"
#include "progan/tensor.hpp"

namespace progan {

/// Single-channel row-major image with values in [0, 1].
struct Image {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::vector<float> pixels;
  /// Quantization of the source file (255 for 8-bit, 65535 for 16-bit PGM);
  /// PGM output reuses it so load/save round-trips exactly.
  std::uint32_t maxval = 255;

  Image() = default;
  Image(std::int64_t h, std::int64_t w, float fill = 0.0f);

  float& at(std::int64_t y, std::int64_t x) { return pixels[static_cast<std::size_t>(y * width + x)]; }
  float at(std::int64_t y, std::int64_t x) const { return pixels[static_cast<std::size_t>(y * width + x)]; }
  bool operator==(const Image&) const = default;
};

struct LabeledImage {
  Image image;
  View view = View::CC;
  std::string source;
};

/// PGM (P5, any maxval up to 65535) or 8-bit grayscale PNG, chosen by the
/// file's magic bytes. Throws FormatError on anything else or on truncation.
Image load_image(const std::filesystem::path& path);
/// Format chosen by extension: .pgm (8 or 16 bit, following image.maxval)
/// or .png (8 bit). Values are clamped to [0, 1] and rounded.
void save_image(const Image& image, const std::filesystem::path& path);

Image pgm_decode(const std::string& bytes);
std::string pgm_encode(const Image& image);

/// Scales by s = max(h / target_h, w / target_w) with area averaging when
/// shrinking and nearest-neighbour replication when enlarging, then pads the
/// short dimension with zeros on the trailing side.
Image preprocess(const Image& image, std::int64_t target_h, std::int64_t target_w);

/// Extents preprocess() resizes to before padding.
std::pair<std::int64_t, std::int64_t> preprocess_extents(std::int64_t h, std::int64_t w, std::int64_t target_h,
                                                         std::int64_t target_w);

/// Centre crop and/or zero pad to the given extents.
Image center_fit(const Image& image, std::int64_t h, std::int64_t w);

/// Exact 2x2 mean pooling (extents must be even).
Image downsample2(const Image& image);

/// Image [1, 1, H, W] tensor and back.
Tensor to_tensor(const Image& image);
Image from_tensor(const Tensor& t, std::int64_t item = 0);

/// Tiles `images` into a rows x cols grid (row-major fill, unused cells zero).
Image tile(std::span<const Image> images, std::int64_t rows, std::int64_t cols);

struct PhantomConfig {
  std::int64_t height = 64;
  std::int64_t width = 64;
  std::uint64_t seed = 0;
  double texture = 0.15;
  double p_calcification = 0.3;
  double p_marker = 0.2;
  double wedge_intensity = 0.35;

  void validate() const;
};

/// Synthetic mammogram: a half-ellipse breast against the left edge on an
/// exactly zero background, filled with smooth band-limited texture. MLO
/// views add a brighter pectoral wedge in the top-left corner. The anatomy
/// depends only on (seed, index); the view only toggles the wedge.
LabeledImage make_phantom(const PhantomConfig& config, std::uint64_t index, View view);

/// Item `index` of the phantom stream: views alternate CC, MLO, CC, ...
LabeledImage phantom(const PhantomConfig& config, std::uint64_t index);

/// Top-left region that lies inside every phantom's breast and inside every
/// MLO wedge: rows [0.1 H, 0.3 H), columns [0, 0.2 W).
double wedge_corner_mean(const Image& image);

/// In-memory collection of labelled images at a common resolution.
class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<LabeledImage> items);

  static Dataset phantoms(const PhantomConfig& config, std::size_t count, std::uint64_t first_index = 0);
  /// CSV manifest with a `path,view` header; relative paths resolve against
  /// the manifest's directory. Every image is preprocessed to target_h x
  /// target_w. Rows for which `exclude` returns true are dropped.
  static Dataset from_manifest(const std::filesystem::path& manifest, std::int64_t target_h, std::int64_t target_w,
                               const std::function<bool(const LabeledImage&)>& exclude = {});
  /// Every .pgm / .png file in a directory (sorted by name), view CC.
  static Dataset from_directory(const std::filesystem::path& dir);

  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  const LabeledImage& operator[](std::size_t i) const { return items_.at(i); }
  std::int64_t height() const;
  std::int64_t width() const;

  /// Stacks items into [N, 1, H, W], each reduced to (h, w) by repeated
  /// exact 2x2 pooling.
  Tensor stack(std::span<const std::size_t> indices, std::int64_t h, std::int64_t w) const;
  Tensor stack_all(std::int64_t h, std::int64_t w) const;

  /// Writes each image as <dir>/img_<index>.pgm plus manifest.csv.
  void write(const std::filesystem::path& dir) const;

 private:
  std::vector<LabeledImage> items_;
};

struct Batch {
  Tensor images;  // [N, 1, h, w]
  std::vector<View> views;
};

/// Deterministic shuffled epochs over a dataset. Epoch e visits items in the
/// order of a permutation seeded by (seed, e), so the iterator's state is
/// just its position.
class DatasetIterator {
 public:
  DatasetIterator(const Dataset& data, std::uint64_t seed);

  Batch next(std::int64_t batch_size, std::int64_t h, std::int64_t w);
  /// Next item index, advancing the stream.
  std::size_t next_index();

  std::uint64_t epoch() const { return epoch_; }
  std::size_t position() const { return position_; }
  void seek(std::uint64_t epoch, std::size_t position);

 private:
  void load_epoch();

  const Dataset* data_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t position_ = 0;
  std::vector<std::size_t> order_;
};

}  // namespace progan
