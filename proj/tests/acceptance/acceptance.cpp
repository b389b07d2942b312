// Acceptance runner: prints one PASS/FAIL line per criterion and exits
// non-zero if any selected criterion fails.

#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <set>
#include <sstream>

#include "progan/dataio.hpp"
#include "progan/metrics.hpp"
#include "progan/nets.hpp"
#include "progan/objectives.hpp"
#include "progan/ops.hpp"
#include "progan/trainer.hpp"
#include "support/gradcheck.hpp"

using namespace progan;
using progan::testing::gradcheck_smooth;
using progan::testing::random_away_from_zero;
using progan::testing::random_normal;
using progan::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;

  // Records a failed check; the first few messages are kept.
  void require(bool ok, const std::string& what) {
    if (ok) return;
    if (pass || detail.size() < 400) detail += (detail.empty() ? "" : "; ") + what;
    pass = false;
  }
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double max_rel_diff(const Tensor64& a, const Tensor64& b) {
  double worst = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double x = a.data()[i], y = b.data()[i];
    worst = std::max(worst, std::abs(x - y) / std::max(1.0, std::abs(y)));
  }
  return worst;
}

std::vector<View> alternating_views(std::int64_t n) {
  std::vector<View> v;
  for (std::int64_t i = 0; i < n; ++i) v.push_back(i % 2 ? View::MLO : View::CC);
  return v;
}

// ------------------------------------------------------------------ 1

Outcome gradient_correctness(int per_op) {
  using V = std::vector<Tensor64>;
  struct Case {
    const char* name;
    progan::testing::Fn64 f;
    std::function<V(Rng&)> inputs;
  };
  auto shape4 = [](Rng& r) {
    return Shape{1 + (std::int64_t)r.below(2), 1 + (std::int64_t)r.below(3), 2 * (1 + (std::int64_t)r.below(2)),
                 2 * (1 + (std::int64_t)r.below(3))};
  };
  const std::vector<Case> cases = {
      {"add", [](const V& a) { return ops::add(a[0], a[1]); },
       [](Rng& r) { return V{random_tensor({3, 4}, r), random_tensor({}, r)}; }},
      {"sub", [](const V& a) { return ops::sub(a[0], a[1]); },
       [](Rng& r) { return V{random_tensor({4}, r), random_tensor({4}, r)}; }},
      {"mul", [](const V& a) { return ops::mul(a[0], a[1]); },
       [](Rng& r) { return V{random_tensor({2, 3}, r), random_tensor({2, 3}, r)}; }},
      {"div", [](const V& a) { return ops::div(a[0], a[1]); },
       [](Rng& r) { return V{random_tensor({6}, r), random_tensor({6}, r, 0.5, 2.0)}; }},
      {"scale", [](const V& a) { return ops::scale(a[0], -1.7); }, [](Rng& r) { return V{random_tensor({4}, r)}; }},
      {"add_scalar", [](const V& a) { return ops::add_scalar(a[0], 0.3); },
       [](Rng& r) { return V{random_tensor({4}, r)}; }},
      {"leaky_relu", [](const V& a) { return ops::leaky_relu(a[0]); },
       [](Rng& r) { return V{random_away_from_zero({10}, r)}; }},
      {"sigmoid", [](const V& a) { return ops::sigmoid(a[0]); },
       [](Rng& r) { return V{random_tensor({8}, r, -4, 4)}; }},
      {"log", [](const V& a) { return ops::log(a[0]); }, [](Rng& r) { return V{random_tensor({8}, r, 0.2, 3)}; }},
      {"square", [](const V& a) { return ops::square(a[0]); }, [](Rng& r) { return V{random_tensor({8}, r)}; }},
      {"sqrt", [](const V& a) { return ops::sqrt(a[0]); }, [](Rng& r) { return V{random_tensor({8}, r, 0.2, 3)}; }},
      {"matmul", [](const V& a) { return ops::matmul(a[0], a[1]); },
       [](Rng& r) { return V{random_tensor({3, 4}, r), random_tensor({4, 2}, r)}; }},
      {"transpose", [](const V& a) { return ops::transpose(a[0]); },
       [](Rng& r) { return V{random_tensor({3, 5}, r)}; }},
      {"reshape", [](const V& a) { return ops::reshape(a[0], {6, 2}); },
       [](Rng& r) { return V{random_tensor({3, 4}, r)}; }},
      {"sum", [](const V& a) { return ops::sum(a[0]); }, [](Rng& r) { return V{random_tensor({3, 4}, r)}; }},
      {"mean", [](const V& a) { return ops::mean(a[0]); }, [](Rng& r) { return V{random_tensor({3, 4}, r)}; }},
      {"expand", [](const V& a) { return ops::expand(a[0], {2, 3}); }, [](Rng& r) { return V{random_tensor({}, r)}; }},
      {"sum_axis0", [](const V& a) { return ops::sum_axis0(a[0]); },
       [](Rng& r) { return V{random_tensor({3, 2, 2}, r)}; }},
      {"expand_axis0", [](const V& a) { return ops::expand_axis0(a[0], 3); },
       [](Rng& r) { return V{random_tensor({1, 2, 2}, r)}; }},
      {"sum_axis1", [](const V& a) { return ops::sum_axis1(a[0]); },
       [](Rng& r) { return V{random_tensor({2, 3, 2, 2}, r)}; }},
      {"expand_axis1", [](const V& a) { return ops::expand_axis1(a[0], 3); },
       [](Rng& r) { return V{random_tensor({2, 1, 2, 2}, r)}; }},
      {"concat_axis1", [](const V& a) { return ops::concat_axis1(a[0], a[1]); },
       [](Rng& r) { return V{random_tensor({2, 3, 2}, r), random_tensor({2, 1, 2}, r)}; }},
      {"slice_axis1", [](const V& a) { return ops::slice_axis1(a[0], 1, 3); },
       [](Rng& r) { return V{random_tensor({2, 4, 3}, r)}; }},
      {"embed_axis1", [](const V& a) { return ops::embed_axis1(a[0], 5, 1); },
       [](Rng& r) { return V{random_tensor({2, 2, 3}, r)}; }},
      {"expand_channels", [](const V& a) { return ops::expand_channels(a[0], {2, 3, 2, 2}); },
       [](Rng& r) { return V{random_tensor({3}, r)}; }},
      {"sum_to_channels", [](const V& a) { return ops::sum_to_channels(a[0]); },
       [](Rng& r) { return V{random_tensor({2, 3, 2, 2}, r)}; }},
      {"add_bias", [](const V& a) { return ops::add_bias(a[0], a[1]); },
       [](Rng& r) { return V{random_tensor({2, 3, 2, 2}, r), random_tensor({3}, r)}; }},
      {"conv2d 3x3", [](const V& a) { return ops::conv2d(a[0], a[1]); },
       [&](Rng& r) { auto s = shape4(r); return V{random_tensor(s, r), random_tensor({2, s[1], 3, 3}, r)}; }},
      {"conv2d 1x1", [](const V& a) { return ops::conv2d(a[0], a[1]); },
       [&](Rng& r) { auto s = shape4(r); return V{random_tensor(s, r), random_tensor({3, s[1], 1, 1}, r)}; }},
      {"conv2d_kernel_grad", [](const V& a) { return ops::conv2d_kernel_grad(a[0], a[1], 3); },
       [](Rng& r) { return V{random_tensor({2, 2, 3, 4}, r), random_tensor({2, 3, 3, 4}, r)}; }},
      {"flip_transpose", [](const V& a) { return ops::flip_transpose(a[0]); },
       [](Rng& r) { return V{random_tensor({2, 3, 3, 3}, r)}; }},
      {"up2", [](const V& a) { return ops::up2(a[0]); }, [&](Rng& r) { return V{random_tensor(shape4(r), r)}; }},
      {"down2", [](const V& a) { return ops::down2(a[0]); }, [&](Rng& r) { return V{random_tensor(shape4(r), r)}; }},
      {"pixelnorm", [](const V& a) { return ops::pixelnorm(a[0]); },
       [&](Rng& r) {
         auto s = shape4(r);
         s[1] += 1;
         return V{random_tensor(s, r)};
       }},
      {"minibatch_stddev", [](const V& a) { return ops::minibatch_stddev(a[0]); },
       [](Rng& r) { return V{random_tensor({3, 2, 2, 2}, r)}; }},
      {"lerp", [](const V& a) { return ops::lerp(a[0], a[1], 0.3); },
       [](Rng& r) { return V{random_tensor({5}, r), random_tensor({5}, r)}; }},
      {"softmax_cross_entropy",
       [](const V& a) {
         const std::vector<int> labels{0, 1, 1};
         return ops::softmax_cross_entropy(a[0], labels);
       },
       [](Rng& r) { return V{random_tensor({3, 2}, r, -2, 2)}; }},
  };

  Outcome out;
  Rng rng(20240);
  int instances = 0;
  double worst = 0.0;
  for (const auto& c : cases) {
    for (int i = 0; i < per_op; ++i) {
      const auto check = gradcheck_smooth(c.f, c.inputs, rng);
      ++instances;
      worst = std::max(worst, check.rel_error);
      out.require(check.smooth, std::string(c.name) + " not smooth at FD scale");
      out.require(check.rel_error < 1e-4, std::string(c.name) + " rel error " + fmt("%.2e", check.rel_error));
    }
  }

  // Full critic forward, fade blend included, with respect to input and weights.
  const auto plan = StagePlan::doubling(2, 2, {3, 2}, 4);
  const auto [g, d] = init_weights<double>(plan, 23);
  const std::size_t n_params = d.params().size();
  auto critic = [&](const V& in) {
    const auto o = d.forward(std::span(in).subspan(1), in[0], FadeState(1, 0.35));
    return ops::concat_axis1(ops::reshape(o.score, {3, 1}), o.logits);
  };
  auto make = [&](Rng& r) {
    V in{random_tensor({3, 1, 4, 4}, r)};
    for (std::size_t i = 0; i < n_params; ++i) in.push_back(random_normal(d.params().value(i).shape(), r, 0.5));
    return in;
  };
  for (int i = 0; i < per_op; ++i) {
    const auto check = gradcheck_smooth(critic, make, rng);
    ++instances;
    worst = std::max(worst, check.rel_error);
    out.require(check.smooth, "critic not smooth at FD scale");
    out.require(check.rel_error < 1e-4, "critic rel error " + fmt("%.2e", check.rel_error));
  }
  out.require(instances >= 100, "only " + std::to_string(instances) + " instances");
  if (out.pass) out.detail = std::to_string(instances) + " instances, worst rel error " + fmt("%.2e", worst);
  return out;
}

// ------------------------------------------------------------------ 2

// f(x) = c_i * sum(x_i) / sqrt(D): the input gradient of item i has norm |c_i|.
template <class T>
CriticFn<T> linear_critic(std::vector<double> c) {
  return [c = std::move(c)](const BasicTensor<T>& x) {
    const auto n = x.dim(0);
    const auto dim = x.numel() / n;
    std::vector<T> w(static_cast<std::size_t>(n * dim));
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < dim; ++j) w[i * dim + j] = static_cast<T>(c[i] / std::sqrt(double(dim)));
    return ops::reshape(ops::sum_axis1(ops::mul(ops::reshape(x, {n, dim}), BasicTensor<T>({n, dim}, w))), {n});
  };
}

Outcome penalty_correctness() {
  Outcome out;
  const GradientPenaltyConfig cfg;
  Rng rng(12);
  const auto x = random_tensor({4, 1, 8, 8}, rng).cast<float>();
  {
    Tape<float> tape;
    const auto r = gradient_penalty<float>(tape, linear_critic<float>({1, 1, 1, 1}), x, cfg);
    out.require(std::abs(r.penalty.item()) < 1e-5, "unit-gradient penalty " + fmt("%.3e", r.penalty.item()));
  }
  for (double c : {0.0, 0.5, 2.0, 3.0}) {
    Tape<double> tape;
    const auto r = gradient_penalty<double>(tape, linear_critic<double>({c, c, c, c}), x.cast<double>(), cfg);
    const double expected = cfg.lambda * (c - 1) * (c - 1);
    out.require(std::abs(r.penalty.item() - expected) < 1e-5, "norm " + fmt("%g", c) + " penalty off");
  }
  {
    Tape<float> tape;
    const auto r = gradient_penalty<float>(tape, linear_critic<float>({2, 2, 2, 2}), x, cfg);
    out.require(std::abs(r.penalty.item() - cfg.lambda) < 1e-5, "float norm 2 penalty off");
  }

  const auto plan = StagePlan::doubling(2, 2, {3, 2}, 4);
  const auto [g, d] = init_weights<double>(plan, 31);
  const std::size_t n_params = d.params().size();
  Rng data_rng(32);
  const auto x_hat = random_tensor({3, 1, 4, 4}, data_rng);
  auto f = [&](const std::vector<Tensor64>& w) {
    auto tape = w[0].requires_grad() ? Tape<double>::attached_to(w[0]) : Tape<double>();
    CriticFn<double> critic = [&](const Tensor64& in) { return d.forward(w, in, FadeState(1, 0.6)).score; };
    return gradient_penalty(tape, critic, x_hat, cfg).penalty;
  };
  auto make = [&](Rng& r) {
    std::vector<Tensor64> w;
    for (std::size_t i = 0; i < n_params; ++i) w.push_back(random_normal(d.params().value(i).shape(), r, 0.5));
    return w;
  };
  Rng check_rng(33);
  double worst = 0.0;
  for (int i = 0; i < 5; ++i) {
    const auto check = gradcheck_smooth(f, make, check_rng);
    worst = std::max(worst, check.rel_error);
    out.require(check.smooth && check.rel_error < 1e-3, "parameter gradient rel error " + fmt("%.2e", check.rel_error));
  }
  if (out.pass) out.detail = "closed forms within 1e-5, parameter gradients worst rel error " + fmt("%.2e", worst);
  return out;
}

// ------------------------------------------------------------------ 3

Outcome loss_values() {
  Outcome out;
  const double ln2 = std::numbers::ln2;
  const auto half = Tensor::full({8}, 0.5f);
  const double v = gan_value(half, half).item();
  out.require(std::abs(v + 2 * ln2) < 1e-6, "minimax value at 0.5 is " + fmt("%.9f", v));
  const double ns = g_loss_nonsaturating(half).item();
  out.require(std::abs(ns - ln2) < 1e-6, "non-saturating loss at 0.5 is " + fmt("%.9f", ns));

  // Exactly representable scores and shifts.
  const Tensor real({4}, {1.5f, -2.0f, 0.25f, 3.0f});
  const Tensor fake({4}, {0.5f, 0.75f, -1.0f, 2.0f});
  const float base = wgan_losses(real, fake).critic.item();
  for (float c : {1.0f, -8.0f, 0.125f, 64.0f, -0.5f}) {
    const float shifted = wgan_losses(ops::add_scalar(real, c), ops::add_scalar(fake, c)).critic.item();
    out.require(shifted == base, "critic loss changed under shift " + fmt("%g", c));
  }
  if (out.pass) out.detail = "minimax " + fmt("%.9f", v) + ", non-saturating " + fmt("%.9f", ns) + ", shift exact";
  return out;
}

// ------------------------------------------------------------------ 4

template <class Net>
void rescale_weights(Net& net, double k) {
  auto& store = net.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (!store.name(i).ends_with(".w")) continue;
    store.set_value(i, ops::scale(store.value(i), k));
    net.set_gain(store.name(i), net.gain(store.name(i)) / k);
  }
}

Outcome progressive_invariants() {
  Outcome out;
  const auto plan = StagePlan::doubling(4, 4, {16, 16, 8, 8}, 16);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto g = init_weights(plan, seed).first;
    Rng rng(seed + 100);
    const auto z = random_normal({4, plan.latent_dim}, rng).cast<float>();
    const auto views = alternating_views(4);
    for (std::size_t s = 1; s < plan.size(); ++s) {
      const auto before = g.forward(z, views, FadeState(s - 1, 1.0));
      const auto grown = g.forward(z, views, grow(plan, FadeState(s - 1, 1.0)));
      out.require(grown.to_vector() == ops::up2(before).to_vector(), "growth changed the generator at stage " +
                                                                         std::to_string(s));
      const auto y0 = g.forward(z, views, FadeState(s, 0.0)).cast<double>();
      const auto y1 = g.forward(z, views, FadeState(s, 1.0)).cast<double>();
      const auto yh = g.forward(z, views, FadeState(s, 0.5)).cast<double>();
      out.require(max_rel_diff(yh, ops::scale(ops::add(y0, y1), 0.5)) < 1e-6, "generator fade not affine");
      for (double alpha : {0.1, 0.37, 0.9}) {
        const auto ya = g.forward(z, views, FadeState(s, alpha)).cast<double>();
        out.require(max_rel_diff(ya, ops::lerp(y0, y1, alpha)) < 1e-6, "generator fade not affine");
      }

    }
  }
  auto [g, d] = init_weights<double>(plan, 9);
  Rng rng(10);
  const auto z = random_normal({3, plan.latent_dim}, rng);
  const auto views = alternating_views(3);
  const auto img = random_tensor({3, 1, 32, 32}, rng);
  const FadeState fade(3, 0.4);
  const auto g_before = g.forward(z, views, fade);
  const auto d_before = d.forward(img, fade);
  rescale_weights(g, 3.7);
  rescale_weights(d, 3.7);
  out.require(max_rel_diff(g.forward(z, views, fade), g_before) < 1e-6, "generator changed under rescaling");
  const auto d_after = d.forward(img, fade);
  out.require(max_rel_diff(d_after.score, d_before.score) < 1e-6, "critic score changed under rescaling");
  out.require(max_rel_diff(d_after.logits, d_before.logits) < 1e-6, "critic logits changed under rescaling");
  if (out.pass) out.detail = "growth bit-exact, fade affine, rescaling invariant";
  return out;
}

// ------------------------------------------------------------------ 5

Image random_image(std::int64_t h, std::int64_t w, Rng& rng) {
  Image img(h, w);
  for (auto& v : img.pixels) v = static_cast<float>(rng.uniform());
  return img;
}

Outcome metric_oracles() {
  Outcome out;
  Rng rng(55);
  for (int i = 0; i < 5; ++i) {
    const auto x = random_image(176, 176, rng);
    out.require(ssim(x, x) == 1.0, "ssim(x, x) != 1");
    out.require(ms_ssim(x, x) == 1.0, "ms_ssim(x, x) != 1");
  }
  // Constant images: no variance, so SSIM is the luminance term alone.
  const double c1 = 0.01 * 0.01, mx = 0.5, my = 0.25;
  const double closed = (2 * mx * my + c1) / (mx * mx + my * my + c1);
  const double s = ssim(Image(32, 32, 0.5f), Image(32, 32, 0.25f));
  out.require(std::abs(s - closed) < 1e-4 && std::abs(s - 0.8001) < 1e-4, "constant SSIM " + fmt("%.6f", s));

  // Single direction: the sorted 1-D Wasserstein-1 distance.
  for (int trial = 0; trial < 5; ++trial) {
    PatchDescriptorSet a, b;
    a.patch = b.patch = 3;
    for (int i = 0; i < 9 * 200; ++i) {
      a.rows.push_back(static_cast<float>(rng.normal()));
      b.rows.push_back(static_cast<float>(rng.normal() * 1.3 + 0.2));
    }
    std::vector<double> dir(9);
    double norm = 0;
    for (auto& v : dir) norm += (v = rng.normal()) * v;
    for (auto& v : dir) v /= std::sqrt(norm);
    std::vector<long double> pa, pb;
    for (std::size_t i = 0; i < a.count(); ++i) {
      long double sa = 0, sb = 0;
      for (std::size_t j = 0; j < 9; ++j) {
        sa += static_cast<long double>(a.rows[i * 9 + j]) * dir[j];
        sb += static_cast<long double>(b.rows[i * 9 + j]) * dir[j];
      }
      pa.push_back(sa);
      pb.push_back(sb);
    }
    std::sort(pa.begin(), pa.end());
    std::sort(pb.begin(), pb.end());
    long double oracle = 0;
    for (std::size_t i = 0; i < pa.size(); ++i) oracle += std::abs(pa[i] - pb[i]);
    oracle /= pa.size();
    const std::vector<std::vector<double>> dirs{dir};
    const double got = sliced_wasserstein_along(a, b, dirs);
    out.require(std::abs(got - static_cast<double>(oracle)) < 1e-6, "single-projection SWD off by " +
                                                                       fmt("%.2e", std::abs(got - double(oracle))));
  }
  for (int trial = 0; trial < 5; ++trial) {
    auto x = random_image(64, 48, rng);
    if (trial == 1)
      for (auto& v : x.pixels) v *= 1e-3f;
    const auto rec = reconstruct(laplacian_pyramid(x, 3));
    out.require(rec.pixels == x.pixels, "pyramid reconstruction not exact");
  }
  const PhantomConfig pc;
  const auto ph = phantom(pc, 3).image;
  out.require(reconstruct(laplacian_pyramid(ph, 4)).pixels == ph.pixels, "phantom pyramid not exact");
  if (out.pass) out.detail = "self-similarity exact, constant SSIM " + fmt("%.6f", s) + ", SWD and pyramid exact";
  return out;
}

// ------------------------------------------------------------------ 6

Outcome preprocess_rule() {
  Outcome out;
  out.require(preprocess_extents(2000, 1500, 1280, 1024) == std::pair<std::int64_t, std::int64_t>{1280, 960},
              "2000x1500 does not resize to 1280x960");
  Image big(2000, 1500, 0.5f);
  for (std::int64_t y = 0; y < 2000; ++y)
    for (std::int64_t x = 0; x < 1500; ++x) big.at(y, x) = 0.25f + 0.5f * static_cast<float>((x + y) % 7) / 7.0f;
  const auto img = preprocess(big, 1280, 1024);
  out.require(img.height == 1280 && img.width == 1024, "output is not 1280x1024");
  bool pad_zero = true, content = true;
  for (std::int64_t y = 0; y < 1280; ++y) {
    for (std::int64_t x = 960; x < 1024; ++x) pad_zero = pad_zero && img.at(y, x) == 0.0f;
    for (std::int64_t x = 0; x < 960; ++x) content = content && img.at(y, x) > 0.0f;
  }
  out.require(pad_zero, "padding is not exactly zero");
  out.require(content, "content region has zeros");

  Rng rng(6);
  for (int trial = 0; trial < 500; ++trial) {
    const auto h = 1 + static_cast<std::int64_t>(rng.below(4000));
    const auto w = 1 + static_cast<std::int64_t>(rng.below(4000));
    const auto th = 1 + static_cast<std::int64_t>(rng.below(2000));
    const auto tw = 1 + static_cast<std::int64_t>(rng.below(2000));
    const auto [rh, rw] = preprocess_extents(h, w, th, tw);
    out.require(rh <= th && rw <= tw && (rh == th || rw == tw), "extents do not fill one side");
    if (rh == th) out.require(std::abs(double(rh) * w / h - rw) <= 1.0, "aspect ratio off by more than 1 px");
    if (rw == tw) out.require(std::abs(double(rw) * h / w - rh) <= 1.0, "aspect ratio off by more than 1 px");
  }
  for (int trial = 0; trial < 20; ++trial) {
    const auto h = 8 + static_cast<std::int64_t>(rng.below(300));
    const auto w = 8 + static_cast<std::int64_t>(rng.below(300));
    const auto p = preprocess(Image(h, w, 1.0f), 80, 64);
    const auto [rh, rw] = preprocess_extents(h, w, 80, 64);
    for (std::int64_t y = 0; y < 80; ++y)
      for (std::int64_t x = 0; x < 64; ++x)
        if (y >= rh || x >= rw) out.require(p.at(y, x) == 0.0f, "padding is not exactly zero");
  }
  if (out.pass) out.detail = "1280x960 padded to 1280x1024, aspect within 1 px, zero padding";
  return out;
}

// ------------------------------------------------------------------ 7, 8, 9

struct BenchOptions {
  int seeds = 10;
  std::int64_t images_per_phase = 5000;
  std::size_t train_images = 10000;
  std::size_t held_out = 256;
  fs::path work;
};

struct SeedResult {
  double init_swd = 0, final_swd = 0, accuracy = 0, ce_fake_early = 0, ce_fake_late = 0;
  std::size_t selected = 0;
  double seconds = 0;
};

TrainSchedule smoke_schedule(std::uint64_t seed, std::int64_t per_phase) {
  TrainSchedule s;
  s.plan = StagePlan::doubling(8, 8, {32, 32, 16}, 32);
  s.stages = {{per_phase, 0, 16}, {per_phase, per_phase, 16}, {per_phase, per_phase, 16}};
  s.n_critic_ramp = {{0, 1}, {1, 1}, {2, 3}};
  s.seed = seed;
  s.log_every = 400;
  s.grid_every = per_phase * 5;
  s.checkpoint_every = per_phase * 5;
  return s;
}

std::vector<SeedResult> run_bench(const BenchOptions& opt, double& noise_swd) {
  PhantomConfig pc;
  pc.height = pc.width = 32;
  pc.seed = 1000;
  const auto train = Dataset::phantoms(pc, opt.train_images, 0);
  const auto held = Dataset::phantoms(pc, opt.held_out, 1'000'000);
  std::vector<Image> eval;
  for (std::size_t i = 0; i < held.size(); ++i) eval.push_back(held[i].image);

  SelectionConfig sc;
  sc.samples = opt.held_out;
  sc.seed = 99;
  std::vector<Image> noise;
  Rng noise_rng(77);
  for (std::size_t i = 0; i < opt.held_out; ++i) noise.push_back(random_image(32, 32, noise_rng));
  SwdConfig swd = sc.swd;
  swd.seed = sc.seed;
  noise_swd = *swd_multiscale(eval, noise, swd).swd_mean;
  std::printf("  uniform noise SWD %.4f\n", noise_swd);
  std::fflush(stdout);

  std::vector<SeedResult> results;
  for (int seed = 0; seed < opt.seeds; ++seed) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto schedule = smoke_schedule(static_cast<std::uint64_t>(seed), opt.images_per_phase);
    const auto dir = opt.work / ("seed_" + std::to_string(seed));
    fs::remove_all(dir);
    Trainer trainer(schedule, train);
    trainer.run(dir);

    SeedResult r;
    const auto ckpts = list_checkpoints(dir);
    const auto init = load_checkpoint_nets(ckpts.front());
    const FadeState top(schedule.plan.size() - 1, 1.0);
    r.init_swd = score_generator(init.generator, top, eval, sc, init.prior);
    const std::vector<fs::path> pair{ckpts.front(), ckpts.back()};
    const auto selection = select_checkpoint(pair, eval, sc);
    r.selected = selection.best;
    r.final_swd = selection.scores[1];
    r.accuracy = label_accuracy(trainer.critic(), trainer.fade(), held);
    const auto& rows = trainer.rows();
    const std::size_t quarter = std::max<std::size_t>(1, rows.size() / 4);
    for (std::size_t i = 0; i < quarter; ++i) {
      r.ce_fake_early += rows[i].label_ce_fake / double(quarter);
      r.ce_fake_late += rows[rows.size() - 1 - i].label_ce_fake / double(quarter);
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("  seed %d: init SWD %.4f final %.4f (ratio %.3f) selected %zu accuracy %.3f label CE fake %.4f -> "
                "%.4f [%.0f s]\n",
                seed, r.init_swd, r.final_swd, r.final_swd / r.init_swd, r.selected, r.accuracy, r.ce_fake_early,
                r.ce_fake_late, r.seconds);
    std::fflush(stdout);
    results.push_back(r);
  }
  return results;
}

Outcome training_quality(const std::vector<SeedResult>& results, double noise_swd) {
  Outcome out;
  int good = 0;
  for (const auto& r : results) good += (r.final_swd < 0.5 * r.init_swd && r.final_swd < noise_swd) ? 1 : 0;
  const int needed = static_cast<int>(std::ceil(0.9 * static_cast<double>(results.size())));
  out.pass = good >= needed;
  out.detail = std::to_string(good) + "/" + std::to_string(results.size()) +
               " seeds reach SWD below half of init and below noise (" + fmt("%.4f", noise_swd) + ")";
  return out;
}

Outcome conditioning(const std::vector<SeedResult>& results) {
  Outcome out;
  int accurate = 0, decreasing = 0;
  double worst_acc = 1.0;
  for (const auto& r : results) {
    accurate += r.accuracy >= 0.9 ? 1 : 0;
    decreasing += r.ce_fake_late < r.ce_fake_early ? 1 : 0;
    worst_acc = std::min(worst_acc, r.accuracy);
  }
  const auto n = static_cast<int>(results.size());
  out.pass = accurate == n && decreasing == n;
  out.detail = std::to_string(accurate) + "/" + std::to_string(n) + " seeds with held-out view accuracy >= 0.9 (min " +
               fmt("%.3f", worst_acc) + "), label CE on fakes falls in " + std::to_string(decreasing) + "/" +
               std::to_string(n);
  return out;
}

Outcome selection(const std::vector<SeedResult>& results) {
  Outcome out;
  int trained = 0;
  for (const auto& r : results) trained += r.selected == 1 ? 1 : 0;
  const auto n = static_cast<int>(results.size());
  out.pass = trained == n;
  out.detail = "trained checkpoint selected in " + std::to_string(trained) + "/" + std::to_string(n) + " trials";
  return out;
}

// ------------------------------------------------------------------ 10

TrainSchedule resume_schedule() {
  TrainSchedule s;
  s.plan = StagePlan::doubling(4, 4, {8, 8, 4}, 8);
  s.stages = {{800, 0, 8}, {800, 800, 8}, {800, 800, 8}};
  s.n_critic_ramp = {{0, 1}, {1, 2}, {2, 2}};
  s.total_images_target = 12000 * 8;
  s.seed = 31;
  s.log_every = 64;
  return s;
}

bool same_weights(const Trainer& a, const Trainer& b) {
  auto equal = [](const auto& x, const auto& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (x.value(i).to_vector() != y.value(i).to_vector()) return false;
    return true;
  };
  return equal(a.generator().params(), b.generator().params()) && equal(a.critic().params(), b.critic().params());
}

std::string csv_of(const Trainer& t) {
  std::string s = std::string(kDiagnosticsHeader) + "\n";
  for (const auto& r : t.rows()) s += to_csv(r) + "\n";
  return s;
}

Outcome determinism(const fs::path& work) {
  Outcome out;
  PhantomConfig pc;
  pc.height = pc.width = 16;
  pc.seed = 8;
  const auto data = Dataset::phantoms(pc, 256);
  const int warmup = 200, further = 1000;

  Trainer a(resume_schedule(), data), b(resume_schedule(), data);
  for (int i = 0; i < warmup; ++i) {
    a.step();
    b.step();
  }
  out.require(csv_of(a) == csv_of(b), "identical seeds gave different diagnostics");
  const auto ckpt = work / "resume_ckpt";
  fs::remove_all(ckpt);
  a.save_checkpoint(ckpt);
  for (int i = 0; i < further; ++i) a.step();

  Trainer resumed(resume_schedule(), data);
  resumed.load_checkpoint(ckpt);
  for (int i = 0; i < further; ++i) resumed.step();
  for (int i = 0; i < further; ++i) b.step();

  out.require(csv_of(a) == csv_of(b), "identical seeds diverged after " + std::to_string(warmup + further) + " steps");
  out.require(csv_of(resumed) == csv_of(a), "resumed diagnostics differ");
  out.require(same_weights(resumed, a), "resumed weights differ");
  out.require(resumed.progress().images_seen == a.progress().images_seen, "resumed image count differs");
  if (out.pass) {
    out.detail = "diagnostics identical across runs; resume equal over " + std::to_string(further) + " steps (" +
                 std::to_string(a.rows().size()) + " rows, stage " + std::to_string(a.fade().stage()) + ")";
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  std::vector<int> only;
  BenchOptions bench;
  bench.work = fs::temp_directory_path() / "progan_acceptance";
  int per_op = 3;
  fs::path report_path;
  app.add_option("--only", only, "Run only these criteria (1-10)");
  app.add_option("--seeds", bench.seeds, "Seeds for the training benchmark");
  app.add_option("--images-per-phase", bench.images_per_phase, "Images shown per phase in the training benchmark");
  app.add_option("--train-images", bench.train_images, "Phantoms in the training split");
  app.add_option("--work-dir", bench.work, "Scratch directory for runs");
  app.add_option("--instances-per-op", per_op, "Gradient-check instances per op");
  app.add_option("--report", report_path, "Also write the criterion lines to this file");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(bench.work);

  const std::set<int> selected(only.begin(), only.end());
  auto wanted = [&](int c) { return selected.empty() || selected.count(c) > 0; };
  int failures = 0;
  std::string lines;
  auto report = [&](int c, const char* name, const Outcome& o) {
    const std::string line = "criterion " + std::to_string(c) + " (" + name + "): " + (o.pass ? "PASS" : "FAIL") +
                             " - " + o.detail + "\n";
    std::fputs(line.c_str(), stdout);
    std::fflush(stdout);
    lines += line;
    failures += o.pass ? 0 : 1;
  };
  auto timed = [&](int c, const char* name, const std::function<Outcome()>& f) {
    if (!wanted(c)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o.require(false, std::string("threw: ") + e.what());
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.detail += " [" + fmt("%.1f", s) + " s]";
    if (c == 1 && s >= 300) o.require(false, "gradient checks took longer than 5 min");
    report(c, name, o);
  };

  timed(1, "gradient correctness", [&] { return gradient_correctness(per_op); });
  timed(2, "gradient penalty", penalty_correctness);
  timed(3, "loss values", loss_values);
  timed(4, "progressive invariants", progressive_invariants);
  timed(5, "metric oracles", metric_oracles);
  timed(6, "preprocess rule", preprocess_rule);
  if (wanted(7) || wanted(8) || wanted(9)) {
    double noise = 0;
    const auto t0 = std::chrono::steady_clock::now();
    const auto results = run_bench(bench, noise);
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::string took = " [benchmark " + fmt("%.0f", s) + " s]";
    lines += "  uniform noise SWD " + fmt("%.4f", noise) + "\n";
    for (std::size_t i = 0; i < results.size(); ++i) {
      const auto& r = results[i];
      lines += "  seed " + std::to_string(i) + ": init SWD " + fmt("%.4f", r.init_swd) + " final " +
               fmt("%.4f", r.final_swd) + " selected " + std::to_string(r.selected) + " accuracy " +
               fmt("%.3f", r.accuracy) + " label CE fake " + fmt("%.4f", r.ce_fake_early) + " -> " +
               fmt("%.4f", r.ce_fake_late) + "\n";
    }
    auto add_time = [&](Outcome o) {
      o.detail += took;
      return o;
    };
    if (wanted(7)) report(7, "desk-scale training", add_time(training_quality(results, noise)));
    if (wanted(8)) report(8, "conditioning", add_time(conditioning(results)));
    if (wanted(9)) report(9, "checkpoint selection", add_time(selection(results)));
  }
  timed(10, "determinism and resume", [&] { return determinism(bench.work); });
  if (!report_path.empty()) std::ofstream(report_path) << lines;
  return failures == 0 ? 0 : 1;
}
