#include "progan/objectives.hpp"

#include <cmath>

#include "progan/ops.hpp"

namespace progan {

namespace {

template <class T>
void require_probabilities(const BasicTensor<T>& p, const char* what) {
  for (T v : p.data()) {
    if (!(v > T(0) && v < T(1))) {
      throw DomainError(std::string(what) + ": probability " + std::to_string(v) + " is outside (0, 1)");
    }
  }
}

template <class T>
void require_finite(const BasicTensor<T>& x, const char* what) {
  for (T v : x.data()) {
    if (!std::isfinite(v)) throw NonFiniteError(std::string(what) + ": non-finite score");
  }
}

// Numerically stable log(1 + exp(x)).
double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

void GradientPenaltyConfig::validate() const {
  if (!(lambda >= 0.0)) throw ConfigError("gradient penalty lambda must be >= 0");
  if (!(beta > 0.0)) throw ConfigError("gradient penalty beta must be > 0");
}

template <class T>
BasicTensor<T> gan_value(const BasicTensor<T>& d_real, const BasicTensor<T>& d_fake) {
  require_probabilities(d_real, "gan_value");
  require_probabilities(d_fake, "gan_value");
  const auto one_minus_fake = ops::add_scalar(ops::scale(d_fake, -1.0), 1.0);
  return ops::add(ops::mean(ops::log(d_real)), ops::mean(ops::log(one_minus_fake)));
}

template <class T>
BasicTensor<T> g_loss_nonsaturating(const BasicTensor<T>& d_fake) {
  require_probabilities(d_fake, "g_loss_nonsaturating");
  return ops::scale(ops::mean(ops::log(d_fake)), -1.0);
}

template <class T>
WganLosses<T> wgan_losses(const BasicTensor<T>& f_real, const BasicTensor<T>& f_fake) {
  require_finite(f_real, "wgan_losses");
  require_finite(f_fake, "wgan_losses");
  const auto fake = ops::mean(f_fake);
  return {ops::sub(fake, ops::mean(f_real)), ops::scale(fake, -1.0)};
}

template <class T>
BasicTensor<T> drift_penalty(const BasicTensor<T>& f_real, double epsilon) {
  return ops::scale(ops::mean(ops::square(f_real)), epsilon);
}

template <class T>
BasicTensor<T> interpolate(const BasicTensor<T>& x_real, const BasicTensor<T>& x_fake, std::span<const double> gamma) {
  if (x_real.shape() != x_fake.shape() || x_real.rank() < 1) {
    throw ShapeError("interpolate: shapes " + to_string(x_real.shape()) + " and " + to_string(x_fake.shape()) +
                     " differ");
  }
  const auto n = x_real.dim(0);
  if (static_cast<std::int64_t>(gamma.size()) != n) throw ShapeError("interpolate: one gamma per item required");
  const auto per_item = n > 0 ? x_real.numel() / n : 0;
  const auto a = x_real.data();
  const auto b = x_fake.data();
  std::vector<T> out(a.size());
  for (std::int64_t i = 0; i < n; ++i) {
    const double g = gamma[static_cast<std::size_t>(i)];
    if (!(g >= 0.0 && g <= 1.0)) throw DomainError("interpolate: gamma outside [0, 1]");
    for (std::int64_t j = i * per_item; j < (i + 1) * per_item; ++j) {
      out[j] = static_cast<T>(g * a[j] + (1.0 - g) * b[j]);
    }
  }
  return BasicTensor<T>(x_real.shape(), std::move(out));
}

template <class T>
BasicTensor<T> sample_interpolates(const BasicTensor<T>& x_real, const BasicTensor<T>& x_fake, Rng& rng) {
  std::vector<double> gamma(static_cast<std::size_t>(x_real.rank() > 0 ? x_real.dim(0) : 0));
  for (auto& g : gamma) g = rng.uniform();
  return interpolate(x_real, x_fake, std::span<const double>(gamma));
}

template <class T>
PenaltyResult<T> gradient_penalty(Tape<T>& tape, const CriticFn<T>& critic, const BasicTensor<T>& x_hat,
                                  const GradientPenaltyConfig& config) {
  config.validate();
  if (x_hat.rank() < 2 || x_hat.dim(0) < 1) {
    throw ShapeError("gradient_penalty: needs a non-empty batch, got " + to_string(x_hat.shape()));
  }
  const auto n = x_hat.dim(0);
  const auto x = tape.watch(x_hat.detach());
  const auto scores = critic(x);
  if (scores.shape() != Shape{n}) {
    throw ShapeError("gradient_penalty: critic must return [N] scores, got " + to_string(scores.shape()));
  }
  const std::vector<BasicTensor<T>> wrt{x};
  const auto grad = tape.gradient(ops::sum(scores), wrt, /*create_graph=*/true)[0];

  // The tiny offset keeps d|g|/dg finite when a gradient is exactly zero.
  const auto sq = ops::sum_axis1(ops::square(ops::reshape(grad, {n, x_hat.numel() / n})));
  const auto norms = ops::sqrt(ops::add_scalar(sq, 1e-20));
  const auto dev = ops::add_scalar(norms, -config.beta);
  PenaltyResult<T> result;
  result.penalty = ops::scale(ops::mean(ops::square(dev)), config.lambda);
  double total = 0.0;
  for (T v : norms.data()) {
    result.grad_norms.push_back(v);
    total += v;
  }
  result.mean_grad_norm = total / static_cast<double>(n);
  return result;
}

template <class T>
BasicTensor<T> label_ce(const BasicTensor<T>& logits, std::span<const View> views) {
  if (logits.rank() != 2 || logits.dim(1) != kNumViews) {
    throw ShapeError("label_ce: logits must be [N,2], got " + to_string(logits.shape()));
  }
  std::vector<int> ids;
  ids.reserve(views.size());
  for (View v : views) {
    const int id = static_cast<int>(v);
    if (id < 0 || id >= kNumViews) throw DomainError("label_ce: invalid view id " + std::to_string(id));
    ids.push_back(id);
  }
  return ops::softmax_cross_entropy(logits, std::span<const int>(ids));
}

double discriminator_bce(std::span<const float> f_real, std::span<const float> f_fake) {
  if (f_real.empty() || f_fake.empty()) throw ShapeError("discriminator_bce: empty score set");
  // -log sigmoid(x) = softplus(-x); -log(1 - sigmoid(x)) = softplus(x)
  double real = 0.0, fake = 0.0;
  for (float v : f_real) real += softplus(-static_cast<double>(v));
  for (float v : f_fake) fake += softplus(static_cast<double>(v));
  return real / static_cast<double>(f_real.size()) + fake / static_cast<double>(f_fake.size());
}

LatentSampler::LatentSampler(std::int64_t dim, Prior prior, std::uint64_t seed)
    : dim_(dim), prior_(prior), rng_(seed) {
  if (dim <= 0) throw ConfigError("latent dimension must be positive");
}

Tensor LatentSampler::sample(std::int64_t n) {
  if (n < 0) throw ShapeError("negative latent batch size");
  std::vector<float> v(static_cast<std::size_t>(n * dim_));
  for (auto& x : v) x = static_cast<float>(prior_ == Prior::Normal ? rng_.normal() : rng_.uniform(-1.0, 1.0));
  return Tensor({n, dim_}, std::move(v));
}

Prior parse_prior(const std::string& text) {
  if (text == "normal") return Prior::Normal;
  if (text == "uniform") return Prior::Uniform;
  throw ConfigError("unknown latent prior '" + text + "' (expected normal or uniform)");
}

#define PROGAN_INSTANTIATE_OBJECTIVES(T)                                                                   \
  template BasicTensor<T> gan_value(const BasicTensor<T>&, const BasicTensor<T>&);                         \
  template BasicTensor<T> g_loss_nonsaturating(const BasicTensor<T>&);                                     \
  template WganLosses<T> wgan_losses(const BasicTensor<T>&, const BasicTensor<T>&);                        \
  template BasicTensor<T> drift_penalty(const BasicTensor<T>&, double);                                    \
  template BasicTensor<T> interpolate(const BasicTensor<T>&, const BasicTensor<T>&, std::span<const double>); \
  template BasicTensor<T> sample_interpolates(const BasicTensor<T>&, const BasicTensor<T>&, Rng&);         \
  template PenaltyResult<T> gradient_penalty(Tape<T>&, const CriticFn<T>&, const BasicTensor<T>&,          \
                                             const GradientPenaltyConfig&);                                \
  template BasicTensor<T> label_ce(const BasicTensor<T>&, std::span<const View>);

PROGAN_INSTANTIATE_OBJECTIVES(float)
PROGAN_INSTANTIATE_OBJECTIVES(double)

#undef PROGAN_INSTANTIATE_OBJECTIVES

}  // namespace progan
