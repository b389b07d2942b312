#include "progan/nets.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "progan/ops.hpp"
#include "progan/rng.hpp"

namespace progan {

View parse_view(const std::string& text) {
  std::string lower(text);
  std::ranges::transform(lower, lower.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "cc") return View::CC;
  if (lower == "mlo") return View::MLO;
  throw ConfigError("unknown view '" + text + "' (expected cc or mlo)");
}

const char* view_name(View view) {
  switch (view) {
    case View::CC: return "cc";
    case View::MLO: return "mlo";
  }
  throw DomainError("invalid view id " + std::to_string(static_cast<int>(view)));
}

StagePlan StagePlan::doubling(std::int64_t base_h, std::int64_t base_w, std::vector<std::int64_t> channels,
                              std::int64_t latent_dim) {
  StagePlan plan;
  plan.latent_dim = latent_dim;
  std::int64_t h = base_h, w = base_w;
  for (auto c : channels) {
    plan.stages.push_back({h, w, c});
    h *= 2;
    w *= 2;
  }
  plan.validate();
  return plan;
}

StagePlan StagePlan::desk() { return doubling(8, 8, {128, 128, 64, 32}, 128); }

void StagePlan::validate() const {
  if (stages.empty()) throw ConfigError("stage plan has no stages");
  if (latent_dim <= 0) throw ConfigError("latent_dim must be positive");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto& s = stages[i];
    if (s.height <= 0 || s.width <= 0 || s.channels <= 0) {
      throw ConfigError("stage " + std::to_string(i) + " has a zero extent or zero channels");
    }
    if (i == 0) continue;
    const auto& prev = stages[i - 1];
    if (s.height != 2 * prev.height || s.width != 2 * prev.width) {
      throw ConfigError("stage " + std::to_string(i) + " does not double the previous resolution");
    }
    if (s.channels > prev.channels) {
      throw ConfigError("stage " + std::to_string(i) + " has more channels than the previous stage");
    }
  }
}

void FadeState::set_alpha(double alpha) {
  if (std::isnan(alpha)) throw DomainError("fade alpha is NaN");
  alpha_ = std::clamp(alpha, 0.0, 1.0);
}

FadeState grow(const StagePlan& plan, FadeState fade) {
  if (fade.stage() + 1 >= plan.size()) {
    throw ConfigError("cannot grow past the final stage (" + std::to_string(plan.size()) + " stages)");
  }
  return FadeState(fade.stage() + 1, 0.0);
}

template <class T>
BasicTensor<T> one_hot(std::span<const View> views) {
  std::vector<T> v(views.size() * kNumViews, T(0));
  for (std::size_t i = 0; i < views.size(); ++i) {
    const int id = static_cast<int>(views[i]);
    if (id < 0 || id >= kNumViews) throw DomainError("invalid view id " + std::to_string(id));
    v[i * kNumViews + static_cast<std::size_t>(id)] = T(1);
  }
  return BasicTensor<T>({static_cast<std::int64_t>(views.size()), kNumViews}, std::move(v));
}

namespace {

template <class T>
class LayerBuilder {
 public:
  LayerBuilder(ParameterStore<T>& store, Rng& rng) : store_(store), rng_(rng) {}

  detail::Layer conv(const std::string& name, std::int64_t out, std::int64_t in, std::int64_t k) {
    return make(name, {out, in, k, k}, out, in * k * k);
  }
  detail::Layer dense(const std::string& name, std::int64_t in, std::int64_t out, std::int64_t bias_size) {
    return make(name, {in, out}, bias_size, in);
  }

 private:
  detail::Layer make(const std::string& name, Shape shape, std::int64_t bias_size, std::int64_t fan_in) {
    std::vector<T> w(static_cast<std::size_t>(numel(shape)));
    for (auto& x : w) x = static_cast<T>(rng_.normal());
    detail::Layer layer;
    layer.weight = store_.add(name + ".w", BasicTensor<T>(std::move(shape), std::move(w)));
    layer.bias = store_.add(name + ".b", BasicTensor<T>::zeros({bias_size}));
    layer.gain = std::sqrt(2.0 / static_cast<double>(fan_in));
    return layer;
  }

  ParameterStore<T>& store_;
  Rng& rng_;
};

template <class T>
BasicTensor<T> conv(std::span<const BasicTensor<T>> w, const detail::Layer& layer, const BasicTensor<T>& x) {
  return ops::add_bias(ops::conv2d(x, ops::scale(w[layer.weight], layer.gain)), w[layer.bias]);
}

template <class T>
BasicTensor<T> dense(std::span<const BasicTensor<T>> w, const detail::Layer& layer, const BasicTensor<T>& x) {
  return ops::matmul(x, ops::scale(w[layer.weight], layer.gain));
}

template <class T>
BasicTensor<T> lrelu_pn(const BasicTensor<T>& x) {
  return ops::pixelnorm(ops::leaky_relu(x));
}

template <class T>
void check_weights(std::span<const BasicTensor<T>> weights, const ParameterStore<T>& store, const char* net) {
  if (weights.size() != store.size()) {
    throw ShapeError(std::string(net) + ": expected " + std::to_string(store.size()) + " parameter tensors, got " +
                     std::to_string(weights.size()));
  }
}

void check_stage(const StagePlan& plan, const FadeState& fade) {
  if (fade.stage() >= plan.size()) {
    throw ConfigError("fade stage " + std::to_string(fade.stage()) + " is outside a plan of " +
                      std::to_string(plan.size()) + " stages");
  }
}

// Finds the layer owning the named weight; constness follows the arguments.
template <class T, class Layers, class Gray>
auto* locate(const ParameterStore<T>& store, Layers& layers, Gray& gray, const std::string& name) {
  const auto index = store.find(name);
  if (!index) throw ConfigError("unknown weight " + name);
  for (auto& stage : layers)
    for (auto& l : stage)
      if (l.weight == *index) return &l;
  for (auto& l : gray)
    if (l.weight == *index) return &l;
  throw ConfigError(name + " is not a layer weight");
}

}  // namespace

// ------------------------------------------------------------------ generator

template <class T>
BasicGenerator<T>::BasicGenerator(StagePlan plan, std::uint64_t seed) : plan_(std::move(plan)) {
  plan_.validate();
  Rng rng(Rng::derive(seed, 1));
  LayerBuilder<T> build(params_, rng);
  const auto& base = plan_[0];
  layers_.resize(plan_.size());
  layers_[0].push_back(build.dense("g.0.dense", plan_.latent_dim + kNumViews, base.channels * base.height * base.width,
                                   base.channels));
  layers_[0].push_back(build.conv("g.0.conv", base.channels, base.channels, 3));
  for (std::size_t s = 1; s < plan_.size(); ++s) {
    const auto prefix = "g." + std::to_string(s);
    layers_[s].push_back(build.conv(prefix + ".conv1", plan_[s].channels, plan_[s - 1].channels, 3));
    layers_[s].push_back(build.conv(prefix + ".conv2", plan_[s].channels, plan_[s].channels, 3));
  }
  for (std::size_t s = 0; s < plan_.size(); ++s) {
    gray_.push_back(build.conv("g." + std::to_string(s) + ".gray", 1, plan_[s].channels, 1));
  }
}

template <class T>
BasicGenerator<T>::BasicGenerator(StagePlan plan, ParameterStore<T> params,
                                  std::vector<std::vector<detail::Layer>> layers, std::vector<detail::Layer> gray)
    : plan_(std::move(plan)), params_(std::move(params)), layers_(std::move(layers)), gray_(std::move(gray)) {}

template <class T>
double BasicGenerator<T>::gain(const std::string& weight) const {
  return locate(params_, layers_, gray_, weight)->gain;
}

template <class T>
void BasicGenerator<T>::set_gain(const std::string& weight, double gain) {
  locate(params_, layers_, gray_, weight)->gain = gain;
}

template <class T>
BasicTensor<T> BasicGenerator<T>::to_gray(std::span<const BasicTensor<T>> w, const BasicTensor<T>& h,
                                          std::size_t stage) const {
  return conv(w, gray_[stage], h);
}

template <class T>
BasicTensor<T> BasicGenerator<T>::forward(const BasicTensor<T>& z, std::span<const View> views,
                                          const FadeState& fade) const {
  return forward(params_.values(), z, views, fade);
}

template <class T>
BasicTensor<T> BasicGenerator<T>::forward(std::span<const BasicTensor<T>> w, const BasicTensor<T>& z,
                                          std::span<const View> views, const FadeState& fade) const {
  check_weights(w, params_, "generator");
  check_stage(plan_, fade);
  if (z.rank() != 2 || z.dim(1) != plan_.latent_dim) {
    throw ShapeError("generator: latent must be [N," + std::to_string(plan_.latent_dim) + "], got " +
                     to_string(z.shape()));
  }
  const auto n = z.dim(0);
  if (static_cast<std::int64_t>(views.size()) != n) throw ShapeError("generator: one view label per latent required");

  const auto& base = plan_[0];
  const auto x = ops::concat_axis1(ops::pixelnorm(z), one_hot<T>(views));
  auto h = ops::reshape(dense(w, layers_[0][0], x), {n, base.channels, base.height, base.width});
  h = lrelu_pn(ops::add_bias(h, w[layers_[0][0].bias]));
  h = lrelu_pn(conv(w, layers_[0][1], h));

  auto block = [&](std::size_t s, const BasicTensor<T>& in) {
    auto y = lrelu_pn(conv(w, layers_[s][0], ops::up2(in)));
    return lrelu_pn(conv(w, layers_[s][1], y));
  };
  const std::size_t active = fade.stage();
  for (std::size_t s = 1; s < active; ++s) h = block(s, h);
  if (active == 0) return to_gray(w, h, 0);

  // The blend endpoints are returned unblended so that they are bit-exact.
  if (fade.alpha() >= 1.0) return to_gray(w, block(active, h), active);
  auto previous = ops::up2(to_gray(w, h, active - 1));
  if (fade.alpha() <= 0.0) return previous;
  return ops::lerp(previous, to_gray(w, block(active, h), active), fade.alpha());
}

// --------------------------------------------------------------------- critic

template <class T>
BasicCritic<T>::BasicCritic(StagePlan plan, std::uint64_t seed, NetOptions options)
    : plan_(std::move(plan)), options_(options) {
  plan_.validate();
  Rng rng(Rng::derive(seed, 2));
  LayerBuilder<T> build(params_, rng);
  const auto& base = plan_[0];
  layers_.resize(plan_.size());
  const std::int64_t extra = options_.minibatch_stddev ? 1 : 0;
  layers_[0].push_back(build.conv("d.0.conv", base.channels, base.channels + extra, 3));
  layers_[0].push_back(build.dense("d.0.dense", base.channels * base.height * base.width, base.channels,
                                   base.channels));
  layers_[0].push_back(build.dense("d.0.score", base.channels, 1, 1));
  layers_[0].push_back(build.dense("d.0.label", base.channels, kNumViews, kNumViews));
  for (std::size_t s = 1; s < plan_.size(); ++s) {
    const auto prefix = "d." + std::to_string(s);
    layers_[s].push_back(build.conv(prefix + ".conv1", plan_[s].channels, plan_[s].channels, 3));
    layers_[s].push_back(build.conv(prefix + ".conv2", plan_[s - 1].channels, plan_[s].channels, 3));
  }
  for (std::size_t s = 0; s < plan_.size(); ++s) {
    gray_.push_back(build.conv("d." + std::to_string(s) + ".gray", plan_[s].channels, 1, 1));
  }
}

template <class T>
BasicCritic<T>::BasicCritic(StagePlan plan, NetOptions options, ParameterStore<T> params,
                            std::vector<std::vector<detail::Layer>> layers, std::vector<detail::Layer> gray)
    : plan_(std::move(plan)),
      options_(options),
      params_(std::move(params)),
      layers_(std::move(layers)),
      gray_(std::move(gray)) {}

template <class T>
double BasicCritic<T>::gain(const std::string& weight) const {
  return locate(params_, layers_, gray_, weight)->gain;
}

template <class T>
void BasicCritic<T>::set_gain(const std::string& weight, double gain) {
  locate(params_, layers_, gray_, weight)->gain = gain;
}

template <class T>
BasicTensor<T> BasicCritic<T>::from_gray(std::span<const BasicTensor<T>> w, const BasicTensor<T>& image,
                                         std::size_t stage) const {
  return ops::leaky_relu(conv(w, gray_[stage], image));
}

template <class T>
CriticOutput<T> BasicCritic<T>::forward(const BasicTensor<T>& image, const FadeState& fade) const {
  return forward(params_.values(), image, fade);
}

template <class T>
CriticOutput<T> BasicCritic<T>::forward(std::span<const BasicTensor<T>> w, const BasicTensor<T>& image,
                                        const FadeState& fade) const {
  check_weights(w, params_, "critic");
  check_stage(plan_, fade);
  const std::size_t active = fade.stage();
  const auto& res = plan_[active];
  if (image.rank() != 4 || image.dim(1) != 1 || image.dim(2) != res.height || image.dim(3) != res.width) {
    throw ShapeError("critic: stage " + std::to_string(active) + " expects [N,1," + std::to_string(res.height) + "," +
                     std::to_string(res.width) + "], got " + to_string(image.shape()));
  }
  const auto n = image.dim(0);

  auto block = [&](std::size_t s, const BasicTensor<T>& in) {
    auto y = ops::leaky_relu(conv(w, layers_[s][0], in));
    return ops::down2(ops::leaky_relu(conv(w, layers_[s][1], y)));
  };

  BasicTensor<T> h;
  if (active == 0) {
    h = from_gray(w, image, 0);
  } else if (fade.alpha() >= 1.0) {
    h = block(active, from_gray(w, image, active));
  } else if (fade.alpha() <= 0.0) {
    h = from_gray(w, ops::down2(image), active - 1);
  } else {
    h = ops::lerp(from_gray(w, ops::down2(image), active - 1), block(active, from_gray(w, image, active)),
                  fade.alpha());
  }
  for (std::size_t s = active == 0 ? 0 : active - 1; s >= 1; --s) h = block(s, h);

  if (options_.minibatch_stddev) h = ops::minibatch_stddev(h);
  h = ops::leaky_relu(conv(w, layers_[0][0], h));
  const auto& dense_layer = layers_[0][1];
  h = ops::reshape(h, {n, h.numel() / std::max<std::int64_t>(n, 1)});
  h = ops::leaky_relu(ops::add_bias(dense(w, dense_layer, h), w[dense_layer.bias]));
  const auto& score_layer = layers_[0][2];
  const auto& label_layer = layers_[0][3];
  auto score = ops::add_bias(dense(w, score_layer, h), w[score_layer.bias]);
  auto logits = ops::add_bias(dense(w, label_layer, h), w[label_layer.bias]);
  return {ops::reshape(score, {n}), logits};
}

template class BasicGenerator<float>;
template class BasicGenerator<double>;
template class BasicCritic<float>;
template class BasicCritic<double>;
template BasicTensor<float> one_hot<float>(std::span<const View>);
template BasicTensor<double> one_hot<double>(std::span<const View>);

}  // namespace progan
