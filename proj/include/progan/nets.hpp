#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "progan/optim.hpp"
#include "progan/tensor.hpp"

namespace progan {

/// Mammographic view, used as the conditioning label.
enum class View : int { CC = 0, MLO = 1 };

inline constexpr int kNumViews = 2;

View parse_view(const std::string& text);  // "cc" / "mlo", case-insensitive
const char* view_name(View view);

struct Stage {
  std::int64_t height = 0;
  std::int64_t width = 0;
  std::int64_t channels = 0;
};

/// Resolutions and widths of the growing networks, coarsest first.
struct StagePlan {
  std::vector<Stage> stages;
  std::int64_t latent_dim = 128;

  /// Base stage of base_h x base_w, doubled once per extra channel entry.
  static StagePlan doubling(std::int64_t base_h, std::int64_t base_w, std::vector<std::int64_t> channels,
                            std::int64_t latent_dim);
  /// 8x8 up to 64x64 with 128/128/64/32 channels and a 128-d latent.
  static StagePlan desk();

  std::size_t size() const { return stages.size(); }
  const Stage& operator[](std::size_t i) const { return stages.at(i); }
  const Stage& final() const { return stages.back(); }

  /// Throws ConfigError unless every stage doubles the previous one and
  /// channel counts are positive and non-increasing.
  void validate() const;
};

/// Which stage is active and how far its new block has been faded in.
class FadeState {
 public:
  FadeState() = default;
  FadeState(std::size_t stage, double alpha) : stage_(stage) { set_alpha(alpha); }

  std::size_t stage() const { return stage_; }
  double alpha() const { return alpha_; }
  void set_alpha(double alpha);  // clamped to [0, 1]

  bool operator==(const FadeState&) const = default;

 private:
  std::size_t stage_ = 0;
  double alpha_ = 1.0;
};

/// Moves to the next stage with alpha reset to 0. Throws ConfigError at the
/// final stage.
FadeState grow(const StagePlan& plan, FadeState fade);

struct NetOptions {
  bool minibatch_stddev = true;
};

namespace detail {

/// A convolution or dense layer with equalized learning rate: the stored
/// weight is unit-normal at init and multiplied by `gain` at every forward.
struct Layer {
  std::size_t weight = 0;
  std::size_t bias = 0;
  double gain = 1.0;
};

}  // namespace detail

/// Progressive generator. The view label is appended to the normalized
/// latent as a one-hot vector.
///
///   stage 0:  [z | onehot] -> dense -> 4D -> lrelu/pn -> conv3 -> lrelu/pn
///   stage s:  up2 -> conv3 -> lrelu/pn -> conv3 -> lrelu/pn
///   output:   1x1 to-gray of the active stage, blended with up2 of the
///             previous stage's to-gray while fading in.
template <class T>
class BasicGenerator {
 public:
  BasicGenerator(StagePlan plan, std::uint64_t seed);

  const StagePlan& plan() const { return plan_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }

  /// Runtime scale of the named weight (e.g. "g.0.conv.w").
  double gain(const std::string& weight) const;
  void set_gain(const std::string& weight, double gain);

  /// z [N, latent_dim] -> [N, 1, H, W] at the active stage, using the stored
  /// parameter values.
  BasicTensor<T> forward(const BasicTensor<T>& z, std::span<const View> views, const FadeState& fade) const;
  /// Same, with parameter tensors supplied in store order (typically
  /// watched copies from ParameterStore::bind).
  BasicTensor<T> forward(std::span<const BasicTensor<T>> weights, const BasicTensor<T>& z,
                         std::span<const View> views, const FadeState& fade) const;

  template <class U>
  BasicGenerator<U> cast() const {
    BasicGenerator<U> out(plan_, params_.template cast<U>(), layers_, gray_);
    return out;
  }

  // Used by cast() and checkpoint loading.
  BasicGenerator(StagePlan plan, ParameterStore<T> params, std::vector<std::vector<detail::Layer>> layers,
                 std::vector<detail::Layer> gray);

 private:
  template <class U>
  friend class BasicGenerator;

  BasicTensor<T> to_gray(std::span<const BasicTensor<T>> w, const BasicTensor<T>& h, std::size_t stage) const;

  StagePlan plan_;
  ParameterStore<T> params_;
  std::vector<std::vector<detail::Layer>> layers_;  // per stage
  std::vector<detail::Layer> gray_;                 // per stage
};

template <class T>
struct CriticOutput {
  BasicTensor<T> score;   // [N]
  BasicTensor<T> logits;  // [N, 2] view logits
};

/// Progressive critic, mirroring the generator.
///
///   stage s:  conv3 -> lrelu -> conv3 -> lrelu -> down2
///   stage 0:  [minibatch stddev] -> conv3 -> lrelu -> dense -> lrelu
///             -> score head (1) and label head (2)
///   input:    1x1 from-gray of the active stage; while fading in, blended
///             with from-gray of down2(image) at the previous stage.
template <class T>
class BasicCritic {
 public:
  BasicCritic(StagePlan plan, std::uint64_t seed, NetOptions options = {});

  const StagePlan& plan() const { return plan_; }
  const NetOptions& options() const { return options_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }

  double gain(const std::string& weight) const;
  void set_gain(const std::string& weight, double gain);

  CriticOutput<T> forward(const BasicTensor<T>& image, const FadeState& fade) const;
  CriticOutput<T> forward(std::span<const BasicTensor<T>> weights, const BasicTensor<T>& image,
                          const FadeState& fade) const;

  template <class U>
  BasicCritic<U> cast() const {
    return BasicCritic<U>(plan_, options_, params_.template cast<U>(), layers_, gray_);
  }

  BasicCritic(StagePlan plan, NetOptions options, ParameterStore<T> params,
              std::vector<std::vector<detail::Layer>> layers, std::vector<detail::Layer> gray);

 private:
  template <class U>
  friend class BasicCritic;

  BasicTensor<T> from_gray(std::span<const BasicTensor<T>> w, const BasicTensor<T>& image, std::size_t stage) const;

  StagePlan plan_;
  NetOptions options_;
  ParameterStore<T> params_;
  std::vector<std::vector<detail::Layer>> layers_;
  std::vector<detail::Layer> gray_;
};

using Generator = BasicGenerator<float>;
using Critic = BasicCritic<float>;

/// Unit-normal weights with per-layer runtime scale sqrt(2 / fan_in) and
/// zero biases. The two networks draw from independent streams of `seed`.
template <class T = float>
std::pair<BasicGenerator<T>, BasicCritic<T>> init_weights(const StagePlan& plan, std::uint64_t seed,
                                                          NetOptions options = {}) {
  plan.validate();
  return {BasicGenerator<T>(plan, seed), BasicCritic<T>(plan, seed, options)};
}

/// One-hot rows [N, 2] for the given views.
template <class T>
BasicTensor<T> one_hot(std::span<const View> views);

}  // namespace progan
