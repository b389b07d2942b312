#include "progan/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>

namespace progan::ops {

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
BasicTensor<T> make(Shape shape, std::vector<T> values, const char* op) {
  for (T v : values) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string(op) + ": non-finite result");
  }
  return BasicTensor<T>(std::move(shape), std::move(values));
}

template <class T>
std::vector<BasicTensor<T>> grads(std::initializer_list<BasicTensor<T>> g) {
  return std::vector<BasicTensor<T>>(g);
}

// Rank-0 broadcasting for binary elementwise ops.
enum class Broadcast { kNone, kLeftScalar, kRightScalar };

template <class T>
Broadcast broadcast_mode(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::kNone;
  if (a.rank() == 0) return Broadcast::kLeftScalar;
  if (b.rank() == 0) return Broadcast::kRightScalar;
  throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                   to_string(b.shape()));
}

template <class T, class F>
BasicTensor<T> binary_values(const BasicTensor<T>& a, const BasicTensor<T>& b, Broadcast mode,
                             const char* op, F f) {
  const auto& shape = mode == Broadcast::kLeftScalar ? b.shape() : a.shape();
  const auto n = static_cast<std::size_t>(numel(shape));
  std::vector<T> out(n);
  const auto av = a.data();
  const auto bv = b.data();
  switch (mode) {
    case Broadcast::kNone:
      for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i]);
      break;
    case Broadcast::kLeftScalar:
      for (std::size_t i = 0; i < n; ++i) out[i] = f(av[0], bv[i]);
      break;
    case Broadcast::kRightScalar:
      for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[0]);
      break;
  }
  return make(shape, std::move(out), op);
}

// Reduces a full-shape gradient back to the operand's shape.
template <class T>
BasicTensor<T> unbroadcast(const BasicTensor<T>& g, const BasicTensor<T>& operand) {
  if (g.shape() == operand.shape()) return g;
  return sum(g);
}

template <class T, class F>
BasicTensor<T> unary_values(const BasicTensor<T>& a, const char* op, F f) {
  const auto av = a.data();
  std::vector<T> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return make(a.shape(), std::move(out), op);
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

struct Axis1Layout {
  std::int64_t outer;  // batch
  std::int64_t channels;
  std::int64_t inner;  // product of trailing extents
};

template <class T>
Axis1Layout axis1_layout(const BasicTensor<T>& a, const char* op) {
  require(a.rank() >= 2, std::string(op) + ": needs rank >= 2, got " + to_string(a.shape()));
  std::int64_t inner = 1;
  for (std::int64_t i = 2; i < a.rank(); ++i) inner *= a.dim(i);
  return {a.dim(0), a.dim(1), inner};
}

}  // namespace

// ---------------------------------------------------------------- elementwise

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const auto mode = broadcast_mode(a, b, "add");
  auto out = binary_values(a, b, mode, "add", [](T x, T y) { return x + y; });
  return detail::record<T>(std::move(out), "add", {&a, &b},
                           [a, b](const BasicTensor<T>& g, std::span<const bool> needs) {
                             return grads<T>({needs[0] ? unbroadcast(g, a) : BasicTensor<T>(),
                                              needs[1] ? unbroadcast(g, b) : BasicTensor<T>()});
                           });
}

template <class T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const auto mode = broadcast_mode(a, b, "sub");
  auto out = binary_values(a, b, mode, "sub", [](T x, T y) { return x - y; });
  return detail::record<T>(std::move(out), "sub", {&a, &b},
                           [a, b](const BasicTensor<T>& g, std::span<const bool> needs) {
                             return grads<T>({needs[0] ? unbroadcast(g, a) : BasicTensor<T>(),
                                              needs[1] ? unbroadcast(scale(g, -1.0), b) : BasicTensor<T>()});
                           });
}

template <class T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const auto mode = broadcast_mode(a, b, "mul");
  auto out = binary_values(a, b, mode, "mul", [](T x, T y) { return x * y; });
  return detail::record<T>(std::move(out), "mul", {&a, &b},
                           [a, b](const BasicTensor<T>& g, std::span<const bool> needs) {
                             return grads<T>({needs[0] ? unbroadcast(mul(g, b), a) : BasicTensor<T>(),
                                              needs[1] ? unbroadcast(mul(g, a), b) : BasicTensor<T>()});
                           });
}

template <class T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const auto mode = broadcast_mode(a, b, "div");
  auto out = binary_values(a, b, mode, "div", [](T x, T y) { return x / y; });
  return detail::record<T>(
      std::move(out), "div", {&a, &b}, [a, b](const BasicTensor<T>& g, std::span<const bool> needs) {
        BasicTensor<T> ga, gb;
        if (needs[0]) ga = unbroadcast(div(g, b), a);
        if (needs[1]) gb = unbroadcast(scale(div(mul(g, a), square(b)), -1.0), b);
        return grads<T>({ga, gb});
      });
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, double factor) {
  const T f = static_cast<T>(factor);
  auto out = unary_values(a, "scale", [f](T x) { return x * f; });
  return detail::record<T>(std::move(out), "scale", {&a},
                           [factor](const BasicTensor<T>& g, std::span<const bool>) {
                             return grads<T>({scale(g, factor)});
                           });
}

template <class T>
BasicTensor<T> add_scalar(const BasicTensor<T>& a, double value) {
  const T v = static_cast<T>(value);
  auto out = unary_values(a, "add_scalar", [v](T x) { return x + v; });
  return detail::record<T>(std::move(out), "add_scalar", {&a},
                           [](const BasicTensor<T>& g, std::span<const bool>) { return grads<T>({g}); });
}

template <class T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& a, double slope) {
  const T s = static_cast<T>(slope);
  auto out = unary_values(a, "leaky_relu", [s](T x) { return x > T(0) ? x : x * s; });
  return detail::record<T>(std::move(out), "leaky_relu", {&a},
                           [a, s](const BasicTensor<T>& g, std::span<const bool>) {
                             // piecewise-constant slope; its own derivative is zero
                             auto mask = unary_values(a, "leaky_relu", [s](T x) { return x > T(0) ? T(1) : s; });
                             return grads<T>({mul(g, mask)});
                           });
}

template <class T>
BasicTensor<T> sigmoid(const BasicTensor<T>& a) {
  auto out = unary_values(a, "sigmoid", [](T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
  });
  return detail::record<T>(std::move(out), "sigmoid", {&a},
                           [a](const BasicTensor<T>& g, std::span<const bool>) {
                             auto s = sigmoid(a);
                             return grads<T>({mul(g, mul(s, add_scalar(scale(s, -1.0), 1.0)))});
                           });
}

template <class T>
BasicTensor<T> log(const BasicTensor<T>& a) {
  for (T x : a.data()) {
    if (!(x > T(0))) throw DomainError("log: input must be strictly positive");
  }
  auto out = unary_values(a, "log", [](T x) { return std::log(x); });
  return detail::record<T>(std::move(out), "log", {&a},
                           [a](const BasicTensor<T>& g, std::span<const bool>) { return grads<T>({div(g, a)}); });
}

template <class T>
BasicTensor<T> square(const BasicTensor<T>& a) {
  auto out = unary_values(a, "square", [](T x) { return x * x; });
  return detail::record<T>(std::move(out), "square", {&a},
                           [a](const BasicTensor<T>& g, std::span<const bool>) {
                             return grads<T>({mul(g, scale(a, 2.0))});
                           });
}

template <class T>
BasicTensor<T> sqrt(const BasicTensor<T>& a) {
  for (T x : a.data()) {
    if (x < T(0)) throw DomainError("sqrt: negative input");
  }
  auto out = unary_values(a, "sqrt", [](T x) { return std::sqrt(x); });
  return detail::record<T>(std::move(out), "sqrt", {&a},
                           [a](const BasicTensor<T>& g, std::span<const bool>) {
                             return grads<T>({div(scale(g, 0.5), sqrt(a))});
                           });
}

// ---------------------------------------------------------------- structure

template <class T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  require(numel(shape) == a.numel(),
          "reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  BasicTensor<T> out(shape, a.to_vector());
  return detail::record<T>(std::move(out), "reshape", {&a},
                           [from = a.shape()](const BasicTensor<T>& g, std::span<const bool>) {
                             return grads<T>({reshape(g, from)});
                           });
}

template <class T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  require(a.rank() == 2, "transpose: needs rank 2, got " + to_string(a.shape()));
  const auto m = a.dim(0), n = a.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * n));
  const auto av = a.data();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  BasicTensor<T> result({n, m}, std::move(out));
  return detail::record<T>(std::move(result), "transpose", {&a},
                           [](const BasicTensor<T>& g, std::span<const bool>) { return grads<T>({transpose(g)}); });
}

template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.dim(1) == b.dim(0),
          "matmul: inner extents differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(static_cast<std::size_t>(m * n));
  Eigen::Map<const RowMat<T>> am(a.data().data(), m, k);
  Eigen::Map<const RowMat<T>> bm(b.data().data(), k, n);
  Eigen::Map<RowMat<T>> om(out.data(), m, n);
  om.noalias() = am * bm;
  auto result = make<T>({m, n}, std::move(out), "matmul");
  return detail::record<T>(std::move(result), "matmul", {&a, &b},
                           [a, b](const BasicTensor<T>& g, std::span<const bool> needs) {
                             BasicTensor<T> ga, gb;
                             if (needs[0]) ga = matmul(g, transpose(b));
                             if (needs[1]) gb = matmul(transpose(a), g);
                             return grads<T>({ga, gb});
                           });
}

// ---------------------------------------------------------------- reductions

template <class T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  double total = 0.0;
  for (T v : a.data()) total += static_cast<double>(v);
  auto out = make<T>({}, {static_cast<T>(total)}, "sum");
  return detail::record<T>(std::move(out), "sum", {&a},
                           [from = a.shape()](const BasicTensor<T>& g, std::span<const bool>) {
                             return grads<T>({expand(g, from)});
                           });
}

template <class T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  require(a.numel() > 0, "mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

template <class T>
BasicTensor<T> expand(const BasicTensor<T>& a, Shape shape) {
  require(a.numel() == 1, "expand: source must hold one element, got " + to_string(a.shape()));
  auto out = BasicTensor<T>::full(shape, a.data()[0]);
  return detail::record<T>(std::move(out), "expand", {&a},
                           [from = a.shape()](const BasicTensor<T>& g, std::span<const bool>) {
                             return grads<T>({reshape(sum(g), from)});
                           });
}

template <class T>
BasicTensor<T> sum_axis0(const BasicTensor<T>& a) {
  require(a.rank() >= 1, "sum_axis0: needs rank >= 1");
  const auto n = a.dim(0);
  const auto inner = n ? a.numel() / n : 0;
  std::vector<double> acc(static_cast<std::size_t>(inner), 0.0);
  const auto av = a.data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < inner; ++j) acc[j] += av[i * inner + j];
  Shape shape = a.shape();
  shape[0] = 1;
  auto out = make<T>(shape, std::vector<T>(acc.begin(), acc.end()), "sum_axis0");
  return detail::record<T>(std::move(out), "sum_axis0", {&a},
                           [n](const BasicTensor<T>& g, std::span<const bool>) {
                             return grads<T>({expand_axis0(g, n)});
                           });
}

template <class T>
BasicTensor<T> expand_axis0(const BasicTensor<T>& a, std::int64_t n) {
  require(a.rank() >= 1 && a.dim(0) == 1, "expand_axis0: leading extent must be 1, got " + to_string(a.shape()));
  const auto av = a.data();
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(n * a.numel()));
  for (std::int64_t i = 0; i < n; ++i) out.insert(out.end(), av.begin(), av.end());
  Shape shape = a.shape();
  shape[0] = n;
  BasicTensor<T> result(shape, std::move(out));
  return detail::record<T>(std::move(result), "expand_axis0", {&a},
                           [](const BasicTensor<T>& g, std::span<const bool>) { return grads<T>({sum_axis0(g)}); });
}

template <class T>
BasicTensor<T> sum_axis1(const BasicTensor<T>& a) {
  const auto [outer, channels, inner] = axis1_layout(a, "sum_axis1");
  std::vector<T> out(static_cast<std::size_t>(outer * inner));
  const auto av = a.data();
  for (std::int64_t n = 0; n < outer; ++n) {
    for (std::int64_t j = 0; j < inner; ++j) {
      double acc = 0.0;
      for (std::int64_t c = 0; c < channels; ++c) acc += av[(n * channels + c) * inner + j];
      out[n * inner + j] = static_cast<T>(acc);
    }
  }
  Shape shape = a.shape();
  shape[1] = 1;
  auto result = make<T>(shape, std::move(out), "sum_axis1");
  return detail::record<T>(std::move(result), "sum_axis1", {&a},
                           [c = channels](const BasicTensor<T>& g, std::span<const bool>) {
                             return grads<T>({expand_axis1(g, c)});
                           });
}

template <class T>
BasicTensor<T> expand_axis1(const BasicTensor<T>& a, std::int64_t channels) {
  const auto layout = axis1_layout(a, "expand_axis1");
  require(layout.channels == 1, "expand_axis1: axis 1 must have extent 1, got " + to_string(a.shape()));
  const auto av = a.data();
  std::vector<T> out(static_cast<std::size_t>(layout.outer * channels * layout.inner));
  for (std::int64_t n = 0; n < layout.outer; ++n)
    for (std::int64_t c = 0; c < channels; ++c)
      std::copy_n(av.begin() + n * layout.inner, layout.inner, out.begin() + (n * channels + c) * layout.inner);
  Shape shape = a.shape();
  shape[1] = channels;
  BasicTensor<T> result(shape, std::move(out));
  return detail::record<T>(std::move(result), "expand_axis1", {&a},
                           [](const BasicTensor<T>& g, std::span<const bool>) { return grads<T>({sum_axis1(g)}); });
}

template <class T>
BasicTensor<T> concat_axis1(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const auto la = axis1_layout(a, "concat_axis1");
  const auto lb = axis1_layout(b, "concat_axis1");
  Shape sa = a.shape(), sb = b.shape();
  sa[1] = sb[1] = 0;
  require(sa == sb, "concat_axis1: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                        " differ outside axis 1");
  const auto c = la.channels + lb.channels;
  std::vector<T> out(static_cast<std::size_t>(la.outer * c * la.inner));
  const auto av = a.data(), bv = b.data();
  const auto chunk_a = la.channels * la.inner, chunk_b = lb.channels * lb.inner;
  for (std::int64_t n = 0; n < la.outer; ++n) {
    std::copy_n(av.begin() + n * chunk_a, chunk_a, out.begin() + n * (chunk_a + chunk_b));
    std::copy_n(bv.begin() + n * chunk_b, chunk_b, out.begin() + n * (chunk_a + chunk_b) + chunk_a);
  }
  Shape shape = a.shape();
  shape[1] = c;
  BasicTensor<T> result(shape, std::move(out));
  return detail::record<T>(std::move(result), "concat_axis1", {&a, &b},
                           [ca = la.channels, c](const BasicTensor<T>& g, std::span<const bool> needs) {
                             BasicTensor<T> ga, gb;
                             if (needs[0]) ga = slice_axis1(g, 0, ca);
                             if (needs[1]) gb = slice_axis1(g, ca, c);
                             return grads<T>({ga, gb});
                           });
}

template <class T>
BasicTensor<T> slice_axis1(const BasicTensor<T>& a, std::int64_t begin, std::int64_t end) {
  const auto l = axis1_layout(a, "slice_axis1");
  require(0 <= begin && begin <= end && end <= l.channels,
          "slice_axis1: range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
              to_string(a.shape()));
  const auto width = end - begin;
  std::vector<T> out(static_cast<std::size_t>(l.outer * width * l.inner));
  const auto av = a.data();
  for (std::int64_t n = 0; n < l.outer; ++n)
    std::copy_n(av.begin() + (n * l.channels + begin) * l.inner, width * l.inner,
                out.begin() + n * width * l.inner);
  Shape shape = a.shape();
  shape[1] = width;
  BasicTensor<T> result(shape, std::move(out));
  return detail::record<T>(std::move(result), "slice_axis1", {&a},
                           [total = l.channels, begin](const BasicTensor<T>& g, std::span<const bool>) {
                             return grads<T>({embed_axis1(g, total, begin)});
                           });
}

template <class T>
BasicTensor<T> embed_axis1(const BasicTensor<T>& a, std::int64_t total, std::int64_t begin) {
  const auto l = axis1_layout(a, "embed_axis1");
  require(begin >= 0 && begin + l.channels <= total, "embed_axis1: slice does not fit");
  std::vector<T> out(static_cast<std::size_t>(l.outer * total * l.inner), T(0));
  const auto av = a.data();
  for (std::int64_t n = 0; n < l.outer; ++n)
    std::copy_n(av.begin() + n * l.channels * l.inner, l.channels * l.inner,
                out.begin() + (n * total + begin) * l.inner);
  Shape shape = a.shape();
  shape[1] = total;
  BasicTensor<T> result(shape, std::move(out));
  return detail::record<T>(std::move(result), "embed_axis1", {&a},
                           [begin, width = l.channels](const BasicTensor<T>& g, std::span<const bool>) {
                             return grads<T>({slice_axis1(g, begin, begin + width)});
                           });
}

template <class T>
BasicTensor<T> expand_channels(const BasicTensor<T>& bias, Shape shape) {
  require(bias.rank() == 1 && shape.size() >= 2 && shape[1] == bias.dim(0),
          "expand_channels: bias " + to_string(bias.shape()) + " does not match " + to_string(shape));
  const auto c = shape[1];
  const auto outer = shape[0];
  const auto inner = c ? numel(shape) / (outer * c) : 0;
  const auto bv = bias.data();
  std::vector<T> out(static_cast<std::size_t>(numel(shape)));
  for (std::int64_t n = 0; n < outer; ++n)
    for (std::int64_t ch = 0; ch < c; ++ch)
      std::fill_n(out.begin() + (n * c + ch) * inner, inner, bv[ch]);
  BasicTensor<T> result(shape, std::move(out));
  return detail::record<T>(std::move(result), "expand_channels", {&bias},
                           [](const BasicTensor<T>& g, std::span<const bool>) { return grads<T>({sum_to_channels(g)}); });
}

template <class T>
BasicTensor<T> sum_to_channels(const BasicTensor<T>& a) {
  const auto l = axis1_layout(a, "sum_to_channels");
  std::vector<double> acc(static_cast<std::size_t>(l.channels), 0.0);
  const auto av = a.data();
  for (std::int64_t n = 0; n < l.outer; ++n)
    for (std::int64_t c = 0; c < l.channels; ++c) {
      const T* p = av.data() + (n * l.channels + c) * l.inner;
      double s = 0.0;
      for (std::int64_t j = 0; j < l.inner; ++j) s += p[j];
      acc[c] += s;
    }
  auto out = make<T>({l.channels}, std::vector<T>(acc.begin(), acc.end()), "sum_to_channels");
  return detail::record<T>(std::move(out), "sum_to_channels", {&a},
                           [from = a.shape()](const BasicTensor<T>& g, std::span<const bool>) {
                             return grads<T>({expand_channels(g, from)});
                           });
}

template <class T>
BasicTensor<T> add_bias(const BasicTensor<T>& a, const BasicTensor<T>& bias) {
  return add(a, expand_channels(bias, a.shape()));
}

// ---------------------------------------------------------------- convolution

namespace {

constexpr std::int64_t kConvChunkColumns = 1024;

// Column matrix [Cin*k*k, N*H*W] so that conv2d is a single GEMM.
template <class T>
std::vector<T> im2col(std::span<const T> x, std::int64_t n_items, std::int64_t channels, std::int64_t h,
                      std::int64_t w, std::int64_t k) {
  const std::int64_t pad = k / 2;
  const std::int64_t plane = h * w;
  const std::int64_t cols = n_items * plane;
  std::vector<T> col(static_cast<std::size_t>(channels * k * k * cols));
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t i = 0; i < k; ++i) {
      for (std::int64_t j = 0; j < k; ++j) {
        T* dst = col.data() + ((c * k + i) * k + j) * cols;
        for (std::int64_t n = 0; n < n_items; ++n) {
          const T* src = x.data() + (n * channels + c) * plane;
          for (std::int64_t y = 0; y < h; ++y) {
            T* row = dst + n * plane + y * w;
            const std::int64_t sy = y + i - pad;
            if (sy < 0 || sy >= h) {
              std::fill_n(row, w, T(0));
              continue;
            }
            const std::int64_t dx = j - pad;
            // Kernels wider than the image can push both bounds outside [0, w].
            const std::int64_t lo = std::clamp<std::int64_t>(-dx, 0, w);
            const std::int64_t hi = std::clamp<std::int64_t>(w - dx, 0, w);
            std::fill_n(row, lo, T(0));
            if (hi > lo) std::copy_n(src + sy * w + lo + dx, hi - lo, row + lo);
            std::fill(row + std::max(lo, hi), row + w, T(0));
          }
        }
      }
    }
  }
  return col;
}

// [N, C, P] <-> [C, N*P]
template <class T>
std::vector<T> batch_to_channel_major(std::span<const T> x, std::int64_t n_items, std::int64_t channels,
                                      std::int64_t plane) {
  std::vector<T> out(x.size());
  for (std::int64_t n = 0; n < n_items; ++n)
    for (std::int64_t c = 0; c < channels; ++c)
      std::copy_n(x.data() + (n * channels + c) * plane, plane, out.data() + (c * n_items + n) * plane);
  return out;
}

template <class T>
std::vector<T> channel_major_to_batch(std::span<const T> x, std::int64_t n_items, std::int64_t channels,
                                      std::int64_t plane) {
  std::vector<T> out(x.size());
  for (std::int64_t c = 0; c < channels; ++c)
    for (std::int64_t n = 0; n < n_items; ++n)
      std::copy_n(x.data() + (c * n_items + n) * plane, plane, out.data() + (n * channels + c) * plane);
  return out;
}

template <class T>
void check_kernel(const BasicTensor<T>& kernel, std::int64_t in_channels, const char* op) {
  require(kernel.rank() == 4, std::string(op) + ": kernel must be rank 4, got " + to_string(kernel.shape()));
  require(kernel.dim(2) == kernel.dim(3) && kernel.dim(2) % 2 == 1,
          std::string(op) + ": kernel must be square with odd extent, got " + to_string(kernel.shape()));
  require(kernel.dim(1) == in_channels, std::string(op) + ": kernel expects " + std::to_string(kernel.dim(1)) +
                                            " input channels, input has " + std::to_string(in_channels));
}

}  // namespace

template <class T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& kernel) {
  require(input.rank() == 4, "conv2d: input must be [N,C,H,W], got " + to_string(input.shape()));
  const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  check_kernel(kernel, c, "conv2d");
  const auto o = kernel.dim(0), k = kernel.dim(2);
  const auto plane = h * w;

  std::vector<T> out_data(static_cast<std::size_t>(n * o * plane));
  Eigen::Map<const RowMat<T>> km(kernel.data().data(), o, c * k * k);
  // Items are processed in chunks so the column buffer stays cache sized.
  const std::int64_t chunk = std::max<std::int64_t>(1, kConvChunkColumns / std::max<std::int64_t>(plane, 1));
  std::vector<T> y;
  for (std::int64_t first = 0; first < n; first += chunk) {
    const auto items = std::min(chunk, n - first);
    const auto x = input.data().subspan(static_cast<std::size_t>(first * c * plane),
                                        static_cast<std::size_t>(items * c * plane));
    const std::vector<T> col = k == 1 ? batch_to_channel_major(x, items, c, plane) : im2col(x, items, c, h, w, k);
    Eigen::Map<const RowMat<T>> cm(col.data(), c * k * k, items * plane);
    T* dst = out_data.data() + first * o * plane;
    if (items == 1) {
      Eigen::Map<RowMat<T>>(dst, o, plane).noalias() = km * cm;
    } else {
      y.resize(static_cast<std::size_t>(o * items * plane));
      Eigen::Map<RowMat<T>>(y.data(), o, items * plane).noalias() = km * cm;
      const auto back = channel_major_to_batch<T>(y, items, o, plane);
      std::copy(back.begin(), back.end(), dst);
    }
  }
  auto out = make<T>({n, o, h, w}, std::move(out_data), "conv2d");

  return detail::record<T>(std::move(out), "conv2d", {&input, &kernel},
                           [input, kernel, k](const BasicTensor<T>& g, std::span<const bool> needs) {
                             BasicTensor<T> gi, gk;
                             if (needs[0]) gi = conv2d(g, flip_transpose(kernel));
                             if (needs[1]) gk = conv2d_kernel_grad(input, g, k);
                             return grads<T>({gi, gk});
                           });
}

template <class T>
BasicTensor<T> conv2d_kernel_grad(const BasicTensor<T>& input, const BasicTensor<T>& grad_out, std::int64_t k) {
  require(input.rank() == 4 && grad_out.rank() == 4 && input.dim(0) == grad_out.dim(0) &&
              input.dim(2) == grad_out.dim(2) && input.dim(3) == grad_out.dim(3),
          "conv2d_kernel_grad: incompatible shapes " + to_string(input.shape()) + " and " +
              to_string(grad_out.shape()));
  require(k % 2 == 1, "conv2d_kernel_grad: kernel extent must be odd");
  const auto n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const auto o = grad_out.dim(1);
  const auto plane = h * w;

  std::vector<T> gk(static_cast<std::size_t>(o * c * k * k), T(0));
  Eigen::Map<RowMat<T>> km(gk.data(), o, c * k * k);
  const std::int64_t chunk = std::max<std::int64_t>(1, kConvChunkColumns / std::max<std::int64_t>(plane, 1));
  for (std::int64_t first = 0; first < n; first += chunk) {
    const auto items = std::min(chunk, n - first);
    const auto x = input.data().subspan(static_cast<std::size_t>(first * c * plane),
                                        static_cast<std::size_t>(items * c * plane));
    const auto g = grad_out.data().subspan(static_cast<std::size_t>(first * o * plane),
                                           static_cast<std::size_t>(items * o * plane));
    const std::vector<T> col = k == 1 ? batch_to_channel_major(x, items, c, plane) : im2col(x, items, c, h, w, k);
    Eigen::Map<const RowMat<T>> cm(col.data(), c * k * k, items * plane);
    if (items == 1) {
      km.noalias() += Eigen::Map<const RowMat<T>>(g.data(), o, plane) * cm.transpose();
    } else {
      const std::vector<T> gy = batch_to_channel_major(g, items, o, plane);
      km.noalias() += Eigen::Map<const RowMat<T>>(gy.data(), o, items * plane) * cm.transpose();
    }
  }
  auto out = make<T>({o, c, k, k}, std::move(gk), "conv2d_kernel_grad");

  return detail::record<T>(std::move(out), "conv2d_kernel_grad", {&input, &grad_out},
                           [input, grad_out](const BasicTensor<T>& g, std::span<const bool> needs) {
                             BasicTensor<T> gi, gg;
                             if (needs[0]) gi = conv2d(grad_out, flip_transpose(g));
                             if (needs[1]) gg = conv2d(input, g);
                             return grads<T>({gi, gg});
                           });
}

template <class T>
BasicTensor<T> flip_transpose(const BasicTensor<T>& kernel) {
  require(kernel.rank() == 4 && kernel.dim(2) == kernel.dim(3),
          "flip_transpose: kernel must be [O,C,k,k], got " + to_string(kernel.shape()));
  const auto o = kernel.dim(0), c = kernel.dim(1), k = kernel.dim(2);
  const auto kv = kernel.data();
  std::vector<T> out(kv.size());
  for (std::int64_t a = 0; a < o; ++a)
    for (std::int64_t b = 0; b < c; ++b)
      for (std::int64_t i = 0; i < k; ++i)
        for (std::int64_t j = 0; j < k; ++j)
          out[((b * o + a) * k + (k - 1 - i)) * k + (k - 1 - j)] = kv[((a * c + b) * k + i) * k + j];
  BasicTensor<T> result({c, o, k, k}, std::move(out));
  return detail::record<T>(std::move(result), "flip_transpose", {&kernel},
                           [](const BasicTensor<T>& g, std::span<const bool>) { return grads<T>({flip_transpose(g)}); });
}

// ---------------------------------------------------------------- resampling

template <class T>
BasicTensor<T> up2(const BasicTensor<T>& a) {
  require(a.rank() >= 2, "up2: needs rank >= 2");
  const auto h = a.dim(-2), w = a.dim(-1);
  const auto planes = h * w != 0 ? a.numel() / (h * w) : 0;
  const auto av = a.data();
  std::vector<T> out(static_cast<std::size_t>(planes * 4 * h * w));
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = av.data() + p * h * w;
    T* dst = out.data() + p * 4 * h * w;
    for (std::int64_t y = 0; y < 2 * h; ++y)
      for (std::int64_t x = 0; x < 2 * w; ++x) dst[y * 2 * w + x] = src[(y / 2) * w + x / 2];
  }
  Shape shape = a.shape();
  shape[shape.size() - 2] *= 2;
  shape[shape.size() - 1] *= 2;
  BasicTensor<T> result(shape, std::move(out));
  return detail::record<T>(std::move(result), "up2", {&a},
                           [](const BasicTensor<T>& g, std::span<const bool>) { return grads<T>({scale(down2(g), 4.0)}); });
}

template <class T>
BasicTensor<T> down2(const BasicTensor<T>& a) {
  require(a.rank() >= 2, "down2: needs rank >= 2");
  const auto h = a.dim(-2), w = a.dim(-1);
  require(h % 2 == 0 && w % 2 == 0, "down2: spatial extents must be even, got " + to_string(a.shape()));
  const auto oh = h / 2, ow = w / 2;
  const auto planes = h * w != 0 ? a.numel() / (h * w) : 0;
  const auto av = a.data();
  std::vector<T> out(static_cast<std::size_t>(planes * oh * ow));
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = av.data() + p * h * w;
    T* dst = out.data() + p * oh * ow;
    for (std::int64_t y = 0; y < oh; ++y)
      for (std::int64_t x = 0; x < ow; ++x) {
        const T* s = src + 2 * y * w + 2 * x;
        dst[y * ow + x] = ((s[0] + s[1]) + (s[w] + s[w + 1])) * T(0.25);
      }
  }
  Shape shape = a.shape();
  shape[shape.size() - 2] = oh;
  shape[shape.size() - 1] = ow;
  BasicTensor<T> result(shape, std::move(out));
  return detail::record<T>(std::move(result), "down2", {&a},
                           [](const BasicTensor<T>& g, std::span<const bool>) { return grads<T>({scale(up2(g), 0.25)}); });
}

// ---------------------------------------------------------------- composites

template <class T>
BasicTensor<T> pixelnorm(const BasicTensor<T>& a, double eps) {
  if (!(eps > 0.0)) throw DomainError("pixelnorm: eps must be positive");
  const auto channels = a.dim(1);
  auto mean_sq = scale(sum_axis1(square(a)), 1.0 / static_cast<double>(channels));
  auto rms = sqrt(add_scalar(mean_sq, eps));
  return div(a, expand_axis1(rms, channels));
}

template <class T>
BasicTensor<T> minibatch_stddev(const BasicTensor<T>& a) {
  require(a.rank() >= 2 && a.dim(0) >= 1, "minibatch_stddev: needs a non-empty batch of rank >= 2");
  const auto n = a.dim(0);
  const double inv_n = 1.0 / static_cast<double>(n);
  auto mu = scale(sum_axis0(a), inv_n);
  auto centered = sub(a, expand_axis0(mu, n));
  auto variance = scale(sum_axis0(square(centered)), inv_n);  // population variance
  auto stddev = sqrt(add_scalar(variance, kStddevEps));
  Shape map_shape = a.shape();
  map_shape[1] = 1;
  return concat_axis1(a, expand(mean(stddev), map_shape));
}

template <class T>
BasicTensor<T> lerp(const BasicTensor<T>& a, const BasicTensor<T>& b, double alpha) {
  return add(scale(a, 1.0 - alpha), scale(b, alpha));
}

template <class T>
BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>& logits, std::span<const int> labels) {
  require(logits.rank() == 2, "softmax_cross_entropy: logits must be [N,K], got " + to_string(logits.shape()));
  const auto n = logits.dim(0), k = logits.dim(1);
  require(static_cast<std::int64_t>(labels.size()) == n, "softmax_cross_entropy: label count differs from batch");
  require(n > 0, "softmax_cross_entropy: empty batch");
  const auto lv = logits.data();
  std::vector<double> probs(static_cast<std::size_t>(n * k));
  double loss = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= k) throw DomainError("softmax_cross_entropy: invalid class id");
    double top = lv[i * k];
    for (std::int64_t j = 1; j < k; ++j) top = std::max(top, static_cast<double>(lv[i * k + j]));
    double z = 0.0;
    for (std::int64_t j = 0; j < k; ++j) z += std::exp(lv[i * k + j] - top);
    for (std::int64_t j = 0; j < k; ++j) probs[i * k + j] = std::exp(lv[i * k + j] - top) / z;
    loss += top + std::log(z) - lv[i * k + labels[i]];
  }
  auto out = make<T>({}, {static_cast<T>(loss / static_cast<double>(n))}, "softmax_cross_entropy");
  std::vector<int> ids(labels.begin(), labels.end());
  return detail::record<T>(
      std::move(out), "softmax_cross_entropy", {&logits},
      [probs = std::move(probs), ids = std::move(ids), n, k](const BasicTensor<T>& g, std::span<const bool>) {
        const double factor = static_cast<double>(g.item()) / static_cast<double>(n);
        std::vector<T> gl(probs.size());
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < k; ++j)
            gl[i * k + j] = static_cast<T>((probs[i * k + j] - (j == ids[i] ? 1.0 : 0.0)) * factor);
        return grads<T>({BasicTensor<T>({n, k}, std::move(gl))});
      },
      /*double_backward=*/false);
}

#define PROGAN_INSTANTIATE_OPS(T)                                                                     \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                          \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                          \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                          \
  template BasicTensor<T> div(const BasicTensor<T>&, const BasicTensor<T>&);                          \
  template BasicTensor<T> scale(const BasicTensor<T>&, double);                                       \
  template BasicTensor<T> add_scalar(const BasicTensor<T>&, double);                                  \
  template BasicTensor<T> leaky_relu(const BasicTensor<T>&, double);                                  \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                             \
  template BasicTensor<T> log(const BasicTensor<T>&);                                                 \
  template BasicTensor<T> square(const BasicTensor<T>&);                                              \
  template BasicTensor<T> sqrt(const BasicTensor<T>&);                                                \
  template BasicTensor<T> reshape(const BasicTensor<T>&, Shape);                                      \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                           \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                       \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                                 \
  template BasicTensor<T> mean(const BasicTensor<T>&);                                                \
  template BasicTensor<T> expand(const BasicTensor<T>&, Shape);                                       \
  template BasicTensor<T> sum_axis0(const BasicTensor<T>&);                                           \
  template BasicTensor<T> expand_axis0(const BasicTensor<T>&, std::int64_t);                          \
  template BasicTensor<T> sum_axis1(const BasicTensor<T>&);                                           \
  template BasicTensor<T> expand_axis1(const BasicTensor<T>&, std::int64_t);                          \
  template BasicTensor<T> concat_axis1(const BasicTensor<T>&, const BasicTensor<T>&);                 \
  template BasicTensor<T> slice_axis1(const BasicTensor<T>&, std::int64_t, std::int64_t);             \
  template BasicTensor<T> embed_axis1(const BasicTensor<T>&, std::int64_t, std::int64_t);             \
  template BasicTensor<T> expand_channels(const BasicTensor<T>&, Shape);                              \
  template BasicTensor<T> sum_to_channels(const BasicTensor<T>&);                                     \
  template BasicTensor<T> add_bias(const BasicTensor<T>&, const BasicTensor<T>&);                     \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&);                       \
  template BasicTensor<T> conv2d_kernel_grad(const BasicTensor<T>&, const BasicTensor<T>&, std::int64_t); \
  template BasicTensor<T> flip_transpose(const BasicTensor<T>&);                                      \
  template BasicTensor<T> up2(const BasicTensor<T>&);                                                 \
  template BasicTensor<T> down2(const BasicTensor<T>&);                                               \
  template BasicTensor<T> pixelnorm(const BasicTensor<T>&, double);                                   \
  template BasicTensor<T> minibatch_stddev(const BasicTensor<T>&);                                    \
  template BasicTensor<T> lerp(const BasicTensor<T>&, const BasicTensor<T>&, double);                 \
  template BasicTensor<T> softmax_cross_entropy(const BasicTensor<T>&, std::span<const int>);

PROGAN_INSTANTIATE_OPS(float)
PROGAN_INSTANTIATE_OPS(double)

#undef PROGAN_INSTANTIATE_OPS

}  // namespace progan::ops
