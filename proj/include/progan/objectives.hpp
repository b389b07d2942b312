#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "progan/nets.hpp"
#include "progan/rng.hpp"
#include "progan/tensor.hpp"

namespace progan {

struct GradientPenaltyConfig {
  double lambda = 10.0;  // penalty weight
  double beta = 1.0;     // target gradient norm

  void validate() const;  // lambda >= 0, beta > 0
};

inline constexpr double kDriftEpsilon = 0.001;

/// Minimax GAN value: mean log d_real + mean log(1 - d_fake). Inputs are
/// probabilities strictly inside (0, 1); DomainError otherwise.
template <class T>
BasicTensor<T> gan_value(const BasicTensor<T>& d_real, const BasicTensor<T>& d_fake);

/// Non-saturating generator loss: -mean log d_fake.
template <class T>
BasicTensor<T> g_loss_nonsaturating(const BasicTensor<T>& d_fake);

template <class T>
struct WganLosses {
  BasicTensor<T> critic;     // mean f_fake - mean f_real
  BasicTensor<T> generator;  // -mean f_fake
};

template <class T>
WganLosses<T> wgan_losses(const BasicTensor<T>& f_real, const BasicTensor<T>& f_fake);

/// epsilon * mean(f_real^2); keeps critic scores from drifting.
template <class T>
BasicTensor<T> drift_penalty(const BasicTensor<T>& f_real, double epsilon = kDriftEpsilon);

/// gamma[i] * x_real[i] + (1 - gamma[i]) * x_fake[i] per batch item, as a
/// constant (detached) tensor.
template <class T>
BasicTensor<T> interpolate(const BasicTensor<T>& x_real, const BasicTensor<T>& x_fake, std::span<const double> gamma);

/// interpolate() with gamma ~ U(0, 1) drawn from `rng`, one per item.
template <class T>
BasicTensor<T> sample_interpolates(const BasicTensor<T>& x_real, const BasicTensor<T>& x_fake, Rng& rng);

/// Maps images [N, ...] to scores [N].
template <class T>
using CriticFn = std::function<BasicTensor<T>(const BasicTensor<T>&)>;

template <class T>
struct PenaltyResult {
  BasicTensor<T> penalty;          // lambda * mean((|grad| - beta)^2), differentiable
  std::vector<double> grad_norms;  // per item
  double mean_grad_norm = 0.0;
};

/// Watches `x_hat` on `tape`, differentiates the critic score with respect to
/// it while recording, and penalizes each item's gradient norm (over all of
/// its pixels) towards beta. The returned penalty is differentiable with
/// respect to whatever the critic reads from the tape.
template <class T>
PenaltyResult<T> gradient_penalty(Tape<T>& tape, const CriticFn<T>& critic, const BasicTensor<T>& x_hat,
                                  const GradientPenaltyConfig& config);

/// Mean softmax cross-entropy of [N, 2] view logits.
template <class T>
BasicTensor<T> label_ce(const BasicTensor<T>& logits, std::span<const View> views);

/// Binary cross-entropy a discriminator would have if its scores were
/// logits: -(mean log sigmoid(f_real) + mean log(1 - sigmoid(f_fake))).
/// Monitored only, never optimized.
double discriminator_bce(std::span<const float> f_real, std::span<const float> f_fake);

enum class Prior { Normal, Uniform };

/// Seedable stream of latent vectors.
class LatentSampler {
 public:
  LatentSampler(std::int64_t dim, Prior prior, std::uint64_t seed);

  std::int64_t dim() const { return dim_; }
  Prior prior() const { return prior_; }
  Rng& rng() { return rng_; }
  const Rng& rng() const { return rng_; }

  /// [n, dim]; uniform draws are on [-1, 1).
  Tensor sample(std::int64_t n);

 private:
  std::int64_t dim_;
  Prior prior_;
  Rng rng_;
};

Prior parse_prior(const std::string& text);

}  // namespace progan
