#include "progan/dataio.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace progan {

namespace fs = std::filesystem;

Image::Image(std::int64_t h, std::int64_t w, float fill) : height(h), width(w) {
  if (h < 0 || w < 0) throw ShapeError("negative image extent");
  pixels.assign(static_cast<std::size_t>(h * w), fill);
}

// ------------------------------------------------------------------------ PGM

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

// Reads one header integer, skipping whitespace and '#' comments.
std::int64_t pgm_header_int(const std::string& s, std::size_t& pos) {
  for (;;) {
    while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    if (pos < s.size() && s[pos] == '#') {
      while (pos < s.size() && s[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  if (pos >= s.size() || !std::isdigit(static_cast<unsigned char>(s[pos]))) {
    throw FormatError("PGM: malformed header");
  }
  std::int64_t v = 0;
  while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) {
    v = v * 10 + (s[pos++] - '0');
    if (v > (std::int64_t{1} << 40)) throw FormatError("PGM: header value too large");
  }
  return v;
}

float quantize_check(float v) { return std::clamp(v, 0.0f, 1.0f); }

}  // namespace

Image pgm_decode(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("not a binary PGM (P5) file");
  std::size_t pos = 2;
  const auto w = pgm_header_int(bytes, pos);
  const auto h = pgm_header_int(bytes, pos);
  const auto maxval = pgm_header_int(bytes, pos);
  if (w <= 0 || h <= 0) throw FormatError("PGM: zero extent");
  if (maxval <= 0 || maxval > 65535) throw FormatError("PGM: maxval must be in [1, 65535]");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("PGM: missing separator after header");
  }
  ++pos;
  const std::size_t bpp = maxval < 256 ? 1 : 2;
  const auto count = static_cast<std::size_t>(w * h);
  if (bytes.size() - pos < count * bpp) throw FormatError("PGM: truncated pixel data");
  Image img(h, w);
  img.maxval = static_cast<std::uint32_t>(maxval);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned v = bpp == 1 ? p[i] : (unsigned{p[2 * i]} << 8) | p[2 * i + 1];
    if (v > static_cast<unsigned>(maxval)) throw FormatError("PGM: sample exceeds maxval");
    img.pixels[i] = static_cast<float>(static_cast<double>(v) / static_cast<double>(maxval));
  }
  return img;
}

std::string pgm_encode(const Image& image) {
  if (image.maxval == 0 || image.maxval > 65535) throw FormatError("PGM: maxval must be in [1, 65535]");
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n" +
                    std::to_string(image.maxval) + "\n";
  const bool wide = image.maxval > 255;
  out.reserve(out.size() + image.pixels.size() * (wide ? 2 : 1));
  for (float v : image.pixels) {
    const auto q = static_cast<unsigned>(std::lround(quantize_check(v) * static_cast<double>(image.maxval)));
    if (wide) out.push_back(static_cast<char>(q >> 8));
    out.push_back(static_cast<char>(q & 0xff));
  }
  return out;
}

// ------------------------------------------------------------------------ PNG

namespace {

Image png_decode(const std::string& bytes) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw FormatError(std::string("PNG: ") + png.message);
  }
  const bool supported = (png.format & (PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_ALPHA | PNG_FORMAT_FLAG_LINEAR)) == 0;
  if (!supported) {
    png_image_free(&png);
    throw FormatError("PNG: only 8-bit grayscale images are supported");
  }
  png.format = PNG_FORMAT_GRAY;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG: ") + png.message);
  }
  Image img(png.height, png.width);
  for (std::size_t i = 0; i < buf.size(); ++i) img.pixels[i] = static_cast<float>(buf[i] / 255.0);
  return img;
}

void png_write(const Image& image, const fs::path& path) {
  std::vector<unsigned char> buf(image.pixels.size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    buf[i] = static_cast<unsigned char>(std::lround(quantize_check(image.pixels[i]) * 255.0));
  }
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw Error("PNG: cannot write " + path.string() + ": " + png.message);
  }
}

std::string lower_extension(const fs::path& path) {
  auto ext = path.extension().string();
  std::ranges::transform(ext, ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext;
}

}  // namespace

Image load_image(const fs::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return pgm_decode(bytes);
  if (bytes.size() >= 8 && static_cast<unsigned char>(bytes[0]) == 0x89 && bytes.compare(1, 3, "PNG") == 0) {
    return png_decode(bytes);
  }
  throw FormatError("unsupported image format: " + path.string());
}

void save_image(const Image& image, const fs::path& path) {
  const auto ext = lower_extension(path);
  if (ext == ".pgm") {
    write_file(path, pgm_encode(image));
  } else if (ext == ".png") {
    png_write(image, path);
  } else {
    throw FormatError("unsupported output extension '" + ext + "' (use .pgm or .png)");
  }
}

// ----------------------------------------------------------------- resampling

namespace {

// Row-stochastic weights mapping n_in samples to n_out by box overlap.
std::vector<std::vector<std::pair<std::int64_t, double>>> area_weights(std::int64_t n_in, std::int64_t n_out) {
  std::vector<std::vector<std::pair<std::int64_t, double>>> rows(static_cast<std::size_t>(n_out));
  const double f = static_cast<double>(n_in) / static_cast<double>(n_out);
  for (std::int64_t i = 0; i < n_out; ++i) {
    const double lo = i * f, hi = (i + 1) * f;
    for (auto j = static_cast<std::int64_t>(std::floor(lo)); j < n_in && j < hi; ++j) {
      const double overlap = std::min(hi, j + 1.0) - std::max(lo, static_cast<double>(j));
      if (overlap > 0) rows[i].push_back({j, overlap / f});
    }
  }
  return rows;
}

std::vector<std::int64_t> nearest_index(std::int64_t n_in, std::int64_t n_out) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n_out));
  for (std::int64_t i = 0; i < n_out; ++i) {
    const auto j = static_cast<std::int64_t>(std::floor((i + 0.5) * static_cast<double>(n_in) / n_out));
    idx[i] = std::min(j, n_in - 1);
  }
  return idx;
}

Image resize_area(const Image& src, std::int64_t h, std::int64_t w) {
  const auto wy = area_weights(src.height, h);
  const auto wx = area_weights(src.width, w);
  std::vector<double> rows(static_cast<std::size_t>(h * src.width), 0.0);
  for (std::int64_t y = 0; y < h; ++y)
    for (const auto& [sy, a] : wy[y])
      for (std::int64_t x = 0; x < src.width; ++x) rows[y * src.width + x] += a * src.at(sy, x);
  Image out(h, w);
  out.maxval = src.maxval;
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (const auto& [sx, a] : wx[x]) acc += a * rows[y * src.width + sx];
      out.at(y, x) = static_cast<float>(acc);
    }
  return out;
}

Image resize_nearest(const Image& src, std::int64_t h, std::int64_t w) {
  const auto iy = nearest_index(src.height, h);
  const auto ix = nearest_index(src.width, w);
  Image out(h, w);
  out.maxval = src.maxval;
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) out.at(y, x) = src.at(iy[y], ix[x]);
  return out;
}

}  // namespace

std::pair<std::int64_t, std::int64_t> preprocess_extents(std::int64_t h, std::int64_t w, std::int64_t target_h,
                                                         std::int64_t target_w) {
  if (h <= 0 || w <= 0) throw ShapeError("preprocess: zero-sized input");
  if (target_h <= 0 || target_w <= 0) throw ShapeError("preprocess: zero-sized target");
  const double sh = static_cast<double>(h) / static_cast<double>(target_h);
  const double sw = static_cast<double>(w) / static_cast<double>(target_w);
  // The axis that defines s lands exactly on its target; the other is rounded.
  if (sh >= sw) {
    const auto rw = std::clamp<std::int64_t>(std::llround(static_cast<double>(w) / sh), 1, target_w);
    return {target_h, rw};
  }
  const auto rh = std::clamp<std::int64_t>(std::llround(static_cast<double>(h) / sw), 1, target_h);
  return {rh, target_w};
}

Image preprocess(const Image& image, std::int64_t target_h, std::int64_t target_w) {
  const auto [rh, rw] = preprocess_extents(image.height, image.width, target_h, target_w);
  const double s = std::max(static_cast<double>(image.height) / target_h, static_cast<double>(image.width) / target_w);
  const Image resized = s > 1.0 ? resize_area(image, rh, rw) : resize_nearest(image, rh, rw);
  Image out(target_h, target_w);
  out.maxval = image.maxval;
  for (std::int64_t y = 0; y < rh; ++y) std::copy_n(&resized.pixels[y * rw], rw, &out.pixels[y * target_w]);
  return out;
}

Image center_fit(const Image& image, std::int64_t h, std::int64_t w) {
  if (h < 0 || w < 0) throw ShapeError("center_fit: negative extent");
  Image out(h, w);
  out.maxval = image.maxval;
  const std::int64_t oy = (image.height - h) / 2, ox = (image.width - w) / 2;  // negative = pad
  for (std::int64_t y = 0; y < h; ++y) {
    const auto sy = y + oy;
    if (sy < 0 || sy >= image.height) continue;
    for (std::int64_t x = 0; x < w; ++x) {
      const auto sx = x + ox;
      if (sx >= 0 && sx < image.width) out.at(y, x) = image.at(sy, sx);
    }
  }
  return out;
}

Image downsample2(const Image& image) {
  if (image.height % 2 || image.width % 2) throw ShapeError("downsample2: odd image extent");
  Image out(image.height / 2, image.width / 2);
  out.maxval = image.maxval;
  for (std::int64_t y = 0; y < out.height; ++y)
    for (std::int64_t x = 0; x < out.width; ++x) {
      const float s0 = image.at(2 * y, 2 * x), s1 = image.at(2 * y, 2 * x + 1);
      const float s2 = image.at(2 * y + 1, 2 * x), s3 = image.at(2 * y + 1, 2 * x + 1);
      out.at(y, x) = ((s0 + s1) + (s2 + s3)) * 0.25f;
    }
  return out;
}

Tensor to_tensor(const Image& image) { return Tensor({1, 1, image.height, image.width}, image.pixels); }

Image from_tensor(const Tensor& t, std::int64_t item) {
  if (t.rank() != 4 || t.dim(1) != 1) throw ShapeError("from_tensor: expected [N,1,H,W], got " + to_string(t.shape()));
  if (item < 0 || item >= t.dim(0)) throw ShapeError("from_tensor: item out of range");
  Image img(t.dim(2), t.dim(3));
  const auto plane = t.dim(2) * t.dim(3);
  std::copy_n(t.data().begin() + item * plane, plane, img.pixels.begin());
  return img;
}

Image tile(std::span<const Image> images, std::int64_t rows, std::int64_t cols) {
  if (images.empty()) throw ShapeError("tile: no images");
  if (static_cast<std::int64_t>(images.size()) > rows * cols) throw ShapeError("tile: grid too small");
  const auto h = images[0].height, w = images[0].width;
  Image out(rows * h, cols * w);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].height != h || images[i].width != w) throw ShapeError("tile: images differ in size");
    const auto r = static_cast<std::int64_t>(i) / cols, c = static_cast<std::int64_t>(i) % cols;
    for (std::int64_t y = 0; y < h; ++y) std::copy_n(&images[i].pixels[y * w], w, &out.pixels[(r * h + y) * out.width + c * w]);
  }
  return out;
}

// -------------------------------------------------------------------- phantoms

void PhantomConfig::validate() const {
  if (height < 8 || width < 8) throw ConfigError("phantom resolution must be at least 8x8");
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string("phantom ") + name + " must be in [0, 1]");
  };
  prob(p_calcification, "calcification probability");
  prob(p_marker, "marker probability");
  prob(wedge_intensity, "wedge intensity");
  if (!(texture >= 0.0 && texture <= 1.0)) throw ConfigError("phantom texture must be in [0, 1]");
}

LabeledImage make_phantom(const PhantomConfig& cfg, std::uint64_t index, View view) {
  cfg.validate();
  Rng rng(Rng::derive(cfg.seed, index));
  const double H = static_cast<double>(cfg.height), W = static_cast<double>(cfg.width);

  // All random draws happen up front so both views share the same anatomy.
  const double a = rng.uniform(0.7, 0.92);   // ellipse semi-axis along x (width units)
  const double b = rng.uniform(0.38, 0.47);  // along y (height units)
  const double cy = 0.5 + rng.uniform(-0.03, 0.03);
  const double density = rng.uniform(0.25, 0.4);
  struct Wave {
    double fx, fy, phase, amp;
  };
  std::vector<Wave> waves(6);
  for (auto& wv : waves) {
    wv.fx = rng.uniform(-5.0, 5.0);
    wv.fy = rng.uniform(-5.0, 5.0);
    wv.phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    wv.amp = rng.uniform(0.5, 1.0);
  }
  const double wedge_u = rng.uniform(0.45, 0.6);  // wedge intercepts
  const double wedge_v = rng.uniform(0.7, 0.9);
  const bool calcs = rng.uniform() < cfg.p_calcification;
  const double calc_u = rng.uniform(0.15, 0.6 * a), calc_v = cy + rng.uniform(-0.5, 0.5) * b;
  const auto n_dots = 3 + static_cast<int>(rng.below(6));
  std::vector<std::pair<double, double>> dots;
  for (int i = 0; i < n_dots; ++i) dots.push_back({calc_u + rng.uniform(-0.05, 0.05), calc_v + rng.uniform(-0.05, 0.05)});
  const double dot_value = rng.uniform(0.92, 1.0);
  const bool marker = rng.uniform() < cfg.p_marker;
  const double marker_u = rng.uniform(0.2, 0.6 * a), marker_v = cy + rng.uniform(-0.4, 0.4) * b;

  double amp_total = 0.0;
  for (const auto& wv : waves) amp_total += wv.amp;
  const double dot_radius = std::max(0.6, 0.008 * W);
  const double marker_radius = std::max(2.0, 0.05 * W);

  LabeledImage out{Image(cfg.height, cfg.width), view, "phantom:" + std::to_string(index)};
  Image& img = out.image;
  for (std::int64_t y = 0; y < cfg.height; ++y) {
    for (std::int64_t x = 0; x < cfg.width; ++x) {
      const double u = (x + 0.5) / W, v = (y + 0.5) / H;
      const double r2 = (u / a) * (u / a) + ((v - cy) / b) * ((v - cy) / b);
      if (r2 >= 1.0) continue;  // background stays exactly 0
      double texture = 0.0;
      for (const auto& wv : waves) {
        texture += wv.amp * std::cos(2.0 * std::numbers::pi * (wv.fx * u + wv.fy * v) + wv.phase);
      }
      // Tissue thins towards the skin line.
      double value = density + 0.35 * std::sqrt(1.0 - r2) + cfg.texture * texture / amp_total;
      value = std::clamp(value, 0.02, 0.95);
      if (view == View::MLO && u / wedge_u + v / wedge_v < 1.0) value = std::min(1.0, value + cfg.wedge_intensity);
      if (calcs) {
        for (const auto& [du, dv] : dots) {
          if (std::hypot((u - du) * W, (v - dv) * H) <= dot_radius) value = std::max(value, dot_value);
        }
      }
      if (marker && std::abs(std::hypot((u - marker_u) * W, (v - marker_v) * H) - marker_radius) < 0.6) {
        value = std::max(value, 0.9);
      }
      img.at(y, x) = static_cast<float>(value);
    }
  }
  return out;
}

LabeledImage phantom(const PhantomConfig& config, std::uint64_t index) {
  return make_phantom(config, index, index % 2 ? View::MLO : View::CC);
}

double wedge_corner_mean(const Image& image) {
  const auto y0 = static_cast<std::int64_t>(0.1 * image.height), y1 = static_cast<std::int64_t>(0.3 * image.height);
  const auto x1 = std::max<std::int64_t>(1, static_cast<std::int64_t>(0.2 * image.width));
  double sum = 0.0;
  std::int64_t count = 0;
  for (std::int64_t y = y0; y < std::max(y1, y0 + 1); ++y)
    for (std::int64_t x = 0; x < x1; ++x) {
      sum += image.at(y, x);
      ++count;
    }
  return sum / static_cast<double>(count);
}

// --------------------------------------------------------------------- dataset

Dataset::Dataset(std::vector<LabeledImage> items) : items_(std::move(items)) {
  for (const auto& it : items_) {
    if (it.image.height != items_[0].image.height || it.image.width != items_[0].image.width) {
      throw ShapeError("dataset images must share one resolution (" + it.source + " differs)");
    }
  }
}

Dataset Dataset::phantoms(const PhantomConfig& config, std::size_t count, std::uint64_t first_index) {
  std::vector<LabeledImage> items;
  items.reserve(count);
  for (std::size_t i = 0; i < count; ++i) items.push_back(phantom(config, first_index + i));
  return Dataset(std::move(items));
}

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace

Dataset Dataset::from_manifest(const fs::path& manifest, std::int64_t target_h, std::int64_t target_w,
                               const std::function<bool(const LabeledImage&)>& exclude) {
  std::ifstream in(manifest);
  if (!in) throw Error("cannot open manifest " + manifest.string());
  std::string line;
  if (!std::getline(in, line) || trim(line) != "path,view") {
    throw FormatError("manifest " + manifest.string() + " must start with the header 'path,view'");
  }
  std::vector<LabeledImage> items;
  for (int row = 2; std::getline(in, line); ++row) {
    line = trim(line);
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw FormatError("manifest row " + std::to_string(row) + ": expected path,view");
    fs::path path = trim(line.substr(0, comma));
    if (path.is_relative()) path = manifest.parent_path() / path;
    LabeledImage item{preprocess(load_image(path), target_h, target_w), parse_view(trim(line.substr(comma + 1))),
                      path.string()};
    if (exclude && exclude(item)) continue;
    items.push_back(std::move(item));
  }
  if (items.empty()) throw Error("manifest " + manifest.string() + " yields no images");
  return Dataset(std::move(items));
}

Dataset Dataset::from_directory(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto ext = lower_extension(entry.path());
    if (entry.is_regular_file() && (ext == ".pgm" || ext == ".png")) files.push_back(entry.path());
  }
  std::ranges::sort(files);
  if (files.empty()) throw Error("no .pgm or .png images in " + dir.string());
  std::vector<LabeledImage> items;
  for (const auto& f : files) items.push_back({load_image(f), View::CC, f.string()});
  return Dataset(std::move(items));
}

std::int64_t Dataset::height() const { return items_.empty() ? 0 : items_[0].image.height; }
std::int64_t Dataset::width() const { return items_.empty() ? 0 : items_[0].image.width; }

Tensor Dataset::stack(std::span<const std::size_t> indices, std::int64_t h, std::int64_t w) const {
  std::int64_t factor = 1;
  while (height() / factor > h) factor *= 2;
  if (height() != h * factor || width() != w * factor) {
    throw ShapeError("dataset resolution " + std::to_string(height()) + "x" + std::to_string(width()) +
                     " is not a power-of-two multiple of " + std::to_string(h) + "x" + std::to_string(w));
  }
  std::vector<float> out;
  out.reserve(indices.size() * static_cast<std::size_t>(h * w));
  for (auto i : indices) {
    Image img = items_.at(i).image;
    while (img.height > h) img = downsample2(img);
    out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  }
  return Tensor({static_cast<std::int64_t>(indices.size()), 1, h, w}, std::move(out));
}

Tensor Dataset::stack_all(std::int64_t h, std::int64_t w) const {
  std::vector<std::size_t> all(items_.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return stack(all, h, w);
}

void Dataset::write(const fs::path& dir) const {
  fs::create_directories(dir);
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw Error("cannot write manifest in " + dir.string());
  manifest << "path,view\n";
  for (std::size_t i = 0; i < items_.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%06zu.pgm", i);
    save_image(items_[i].image, dir / name);
    manifest << name << ',' << view_name(items_[i].view) << '\n';
  }
}

DatasetIterator::DatasetIterator(const Dataset& data, std::uint64_t seed) : data_(&data), seed_(seed) {
  if (data.empty()) throw Error("cannot iterate over an empty dataset");
  load_epoch();
}

void DatasetIterator::load_epoch() { order_ = Rng(Rng::derive(seed_, epoch_)).permutation(data_->size()); }

std::size_t DatasetIterator::next_index() {
  if (position_ == order_.size()) {
    ++epoch_;
    position_ = 0;
    load_epoch();
  }
  return order_[position_++];
}

void DatasetIterator::seek(std::uint64_t epoch, std::size_t position) {
  if (position > data_->size()) throw DomainError("iterator position beyond dataset size");
  epoch_ = epoch;
  position_ = position;
  load_epoch();
}

Batch DatasetIterator::next(std::int64_t batch_size, std::int64_t h, std::int64_t w) {
  if (batch_size <= 0) throw ConfigError("batch size must be positive");
  std::vector<std::size_t> idx(static_cast<std::size_t>(batch_size));
  Batch batch;
  for (auto& i : idx) {
    i = next_index();
    batch.views.push_back((*data_)[i].view);
  }
  batch.images = data_->stack(idx, h, w);
  return batch;
}

}  // namespace progan
