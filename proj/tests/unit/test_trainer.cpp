#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "progan/trainer.hpp"

using namespace progan;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("progan_trainer_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const Dataset& tiny_data() {
  static const Dataset data = [] {
    PhantomConfig cfg;
    cfg.height = cfg.width = 16;
    cfg.seed = 4;
    return Dataset::phantoms(cfg, 64);
  }();
  return data;
}

// 4x4 -> 8x8 -> 16x16 with a handful of channels.
TrainSchedule tiny_schedule(std::uint64_t seed = 1) {
  TrainSchedule s;
  s.plan = StagePlan::doubling(4, 4, {8, 8, 4}, 8);
  s.stages = {{64, 0, 8}, {32, 64, 8}, {64, 32, 4}};
  s.n_critic_ramp = {{0, 1}, {1, 2}, {2, 3}};
  s.seed = seed;
  s.log_every = 32;
  s.grid_every = 128;
  s.checkpoint_every = 96;
  return s;
}

template <class Store>
bool same_values(const Store& a, const Store& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a.value(i).to_vector() != b.value(i).to_vector()) return false;
    if (a.first_moment(i).to_vector() != b.first_moment(i).to_vector()) return false;
    if (a.second_moment(i).to_vector() != b.second_moment(i).to_vector()) return false;
  }
  return a.step() == b.step();
}

bool same_trainer(const Trainer& a, const Trainer& b) {
  return same_values(a.generator().params(), b.generator().params()) &&
         same_values(a.critic().params(), b.critic().params()) && a.progress() == b.progress() && a.rows() == b.rows();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("desk schedule defaults") {
  const auto s = TrainSchedule::desk(7);
  CHECK(s.seed == 7);
  CHECK(s.plan.size() == 4);
  CHECK(s.plan.final().height == 64);
  REQUIRE(s.stages.size() == 4);
  CHECK(s.stages[0].batch_size == 16);
  CHECK(s.stages[1].batch_size == 16);
  CHECK(s.stages[2].batch_size == 8);
  CHECK(s.stages[3].batch_size == 4);
  CHECK(s.learning_rate == 0.0015);
  CHECK(s.n_critic(0) == 1);
  CHECK(s.n_critic(1) == 1);
  CHECK(s.n_critic(2) == 3);
  CHECK(s.n_critic(3) == 5);
  CHECK(s.scheduled_images() == 20000 + 3 * 40000);
  CHECK(s.log_every == 1000);
  CHECK(s.grid_every == 10000);
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("schedule validation") {
  auto s = tiny_schedule();
  CHECK_NOTHROW(s.validate());
  auto bad = s;
  bad.n_critic_ramp = {{0, 1}, {1, 6}};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = s;
  bad.n_critic_ramp = {{0, 3}, {1, 2}};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = s;
  bad.n_critic_ramp = {{1, 1}};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = s;
  bad.stages.pop_back();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = s;
  bad.stages[0].batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = s;
  bad.learning_rate = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("schedule from config") {
  const auto c = Config::parse(
      "# smoke\n"
      "seed = 9\n"
      "channels = 16, 16, 8\n"
      "latent_dim = 12\n"
      "images_stable = 100\n"
      "images_fade = 0, 50, 60\n"
      "batch_size = 4\n"
      "n_critic = 1, 2, 2\n"
      "learning_rate = 0.002\n"
      "prior = uniform\n"
      "minibatch_stddev = off\n"
      "typo_key = 3\n");
  const auto s = TrainSchedule::from_config(c);
  CHECK(s.seed == 9);
  CHECK(s.plan.size() == 3);
  CHECK(s.plan.final().height == 32);
  CHECK(s.plan.latent_dim == 12);
  CHECK(s.stages[2].images_stable == 100);
  CHECK(s.stages[2].images_fade == 60);
  CHECK(s.stages[1].batch_size == 4);
  CHECK(s.n_critic(2) == 2);
  CHECK(s.learning_rate == 0.002);
  CHECK(s.prior == Prior::Uniform);
  CHECK_FALSE(s.net.minibatch_stddev);
  CHECK(c.unused() == std::vector<std::string>{"typo_key"});

  CHECK_THROWS_AS(TrainSchedule::from_config(Config::parse("batch_size = 1, 2\n")), ConfigError);
  CHECK_THROWS_AS(TrainSchedule::from_config(Config::parse("n_critic = 1, 1, 3, 9\n")), ConfigError);
  CHECK_THROWS_AS(TrainSchedule::from_config(Config::parse("learning_rate = fast\n")), ConfigError);
  CHECK_THROWS_AS(Config::parse("no equals sign\n"), ConfigError);
}

TEST_CASE("update ratio follows n_critic") {
  auto s = tiny_schedule();
  s.plan = StagePlan::doubling(4, 4, {8, 8}, 8);
  s.stages = {{10000, 0, 4}, {0, 0, 4}};
  s.n_critic_ramp = {{0, 5}};
  PhantomConfig cfg;
  cfg.height = cfg.width = 8;
  const auto data = Dataset::phantoms(cfg, 16);
  Trainer t(s, data);
  for (int i = 0; i < 10; ++i) t.step();
  CHECK(t.progress().critic_updates == 50);
  CHECK(t.progress().generator_updates == 10);
  CHECK(t.progress().critic_updates + t.progress().generator_updates == 60);
  CHECK(t.progress().images_seen == 200);
}

TEST_CASE("fade ramp reaches exactly 1 and resets only at growth") {
  Trainer t(tiny_schedule(), tiny_data());
  std::vector<FadeState> seen;
  while (!t.done()) {
    t.step();
    // fade() now reports the state the next step will start from.
    seen.push_back(t.fade());
  }
  // stage 1: 64 fade images at 2 x 8 per step
  bool hit_one = false;
  for (std::size_t i = 1; i < seen.size(); ++i) {
    if (seen[i].stage() == seen[i - 1].stage()) {
      CHECK(seen[i].alpha() >= seen[i - 1].alpha());
    } else {
      CHECK(seen[i].stage() == seen[i - 1].stage() + 1);
    }
    if (seen[i].stage() == 1 && seen[i].alpha() == 1.0 && seen[i - 1].alpha() < 1.0) hit_one = true;
  }
  CHECK(hit_one);
  CHECK(t.progress().stage == 2);
  CHECK(t.progress().images_seen >= tiny_schedule().scheduled_images());
}

TEST_CASE("zero fade length never produces alpha below 1") {
  auto s = tiny_schedule();
  s.plan = StagePlan::doubling(4, 4, {8, 8}, 8);
  s.stages = {{32, 0, 8}, {64, 0, 8}};
  s.n_critic_ramp = {{0, 1}};
  PhantomConfig cfg;
  cfg.height = cfg.width = 8;
  const auto data = Dataset::phantoms(cfg, 16);
  Trainer t(s, data);
  while (!t.done()) {
    t.step();
    CHECK(t.fade().alpha() == 1.0);
  }
  CHECK(t.progress().stage == 1);
}

TEST_CASE("identical seeds give bit-identical training") {
  Trainer a(tiny_schedule(3), tiny_data());
  Trainer b(tiny_schedule(3), tiny_data());
  for (int i = 0; i < 12; ++i) {
    a.step();
    b.step();
  }
  CHECK(same_trainer(a, b));
  Trainer c(tiny_schedule(4), tiny_data());
  for (int i = 0; i < 12; ++i) c.step();
  CHECK_FALSE(same_values(a.generator().params(), c.generator().params()));
}

TEST_CASE("resume from a checkpoint is bit-exact") {
  const auto dir = scratch("resume");
  Trainer a(tiny_schedule(5), tiny_data());
  for (int i = 0; i < 9; ++i) a.step();
  a.save_checkpoint(dir / "ckpt");
  for (int i = 0; i < 15; ++i) a.step();

  Trainer b(tiny_schedule(5), tiny_data());
  b.load_checkpoint(dir / "ckpt");
  CHECK(b.progress().images_seen > 0);
  for (int i = 0; i < 15; ++i) b.step();
  CHECK(same_trainer(a, b));

  auto other = tiny_schedule(5);
  other.plan = StagePlan::doubling(4, 4, {8, 8, 8}, 8);
  Trainer c(other, tiny_data());
  CHECK_THROWS_AS(c.load_checkpoint(dir / "ckpt"), ConfigError);
}

TEST_CASE("checkpoint round trip preserves generation") {
  const auto dir = scratch("roundtrip");
  Trainer t(tiny_schedule(6), tiny_data());
  for (int i = 0; i < 14; ++i) t.step();
  t.save_checkpoint(dir / "ckpt");
  const auto nets = load_checkpoint_nets(dir / "ckpt");
  CHECK(nets.fade == t.fade());
  CHECK(nets.images_seen == t.progress().images_seen);
  const auto before = generate_images(t.generator(), t.fade(), 10, 77);
  const auto after = generate_images(nets.generator, nets.fade, 10, 77);
  CHECK(before == after);
}

TEST_CASE("critic batches are never mixed") {
  // With minibatch stddev on, any mixing of real and generated items would
  // change the scores; the monitored BCE must match separate evaluations.
  const auto s = tiny_schedule(8);
  auto [g, c] = init_weights(s.plan, 8, s.net);
  const FadeState fade(1, 0.4);
  DatasetIterator it(tiny_data(), 1);
  const auto real = it.next(8, 8, 8);
  LatentSampler latents(s.plan.latent_dim, Prior::Normal, 2);
  const auto z = latents.sample(8);
  const auto fake = g.forward(z, real.views, fade);
  const double expected = discriminator_bce(c.forward(real.images, fade).score.data(), c.forward(fake, fade).score.data());
  Rng rng(3);
  const auto stats = critic_update(c, g, real, z, fade, {}, {}, rng);
  CHECK(stats.d_bce == expected);
  CHECK(stats.grad_mag > 0.0);
  CHECK(std::isfinite(stats.loss));
}

TEST_CASE("non-finite losses leave the networks untouched") {
  const auto s = tiny_schedule(9);
  auto [g, c] = init_weights(s.plan, 9, s.net);
  const FadeState fade(0, 1.0);
  Batch real{Tensor::full({4, 1, 4, 4}, std::nanf("")), std::vector<View>(4, View::CC)};
  LatentSampler latents(s.plan.latent_dim, Prior::Normal, 2);
  const auto before = c.params();
  Rng rng(1);
  CHECK_THROWS_AS(critic_update(c, g, real, latents.sample(4), fade, {}, {}, rng), NonFiniteError);
  CHECK(same_values(before, c.params()));
}

TEST_CASE("run gives up after repeated non-finite losses") {
  PhantomConfig cfg;
  cfg.height = cfg.width = 16;
  auto items = std::vector<LabeledImage>{phantom(cfg, 0), phantom(cfg, 1)};
  for (auto& item : items) std::fill(item.image.pixels.begin(), item.image.pixels.end(), std::nanf(""));
  const Dataset bad(items);
  auto s = tiny_schedule(2);
  s.max_restarts = 2;
  Trainer t(s, bad);
  CHECK_THROWS_AS(t.run(scratch("nan")), NonFiniteError);
  CHECK(t.progress().restarts == 2);
  CHECK(t.progress().images_seen == 0);
}

TEST_CASE("run writes diagnostics, grids and checkpoints deterministically") {
  const auto d1 = scratch("run1"), d2 = scratch("run2");
  Trainer a(tiny_schedule(11), tiny_data());
  a.run(d1);
  Trainer b(tiny_schedule(11), tiny_data());
  b.run(d2);
  const auto csv = read_file(d1 / "diagnostics.csv");
  CHECK(csv == read_file(d2 / "diagnostics.csv"));
  CHECK(csv.rfind(std::string(kDiagnosticsHeader) + "\n", 0) == 0);
  CHECK(a.rows().size() >= 4);
  for (const auto& r : a.rows()) {
    CHECK(std::isfinite(r.critic_loss));
    CHECK(r.d_bce > 0.0);
    CHECK(r.grad_mag > 0.0);
    CHECK(r.label_ce_real > 0.0);
  }
  const auto ckpts = list_checkpoints(d1);
  REQUIRE(ckpts.size() >= 3);
  CHECK(ckpts.front().filename() == "ckpt_0");
  CHECK(ckpts.back().filename() == "ckpt_" + std::to_string(a.progress().images_seen));
  CHECK(fs::exists(d1 / "samples" / ("grid_" + std::to_string(a.progress().images_seen) + "_cc.png")));
  const auto grid = load_image(d1 / "samples" / ("grid_" + std::to_string(a.progress().images_seen) + "_mlo.png"));
  CHECK(grid.height == 5 * 16);
  CHECK(grid.width == 6 * 16);

  // Resuming from an intermediate checkpoint reproduces the remaining rows.
  Trainer c(tiny_schedule(11), tiny_data());
  c.load_checkpoint(ckpts[1]);
  c.run(scratch("run3"));
  CHECK(c.rows() == a.rows());
  CHECK(same_trainer(a, c));
}

TEST_CASE("checkpoint selection") {
  const auto dir = scratch("select");
  Trainer t(tiny_schedule(12), tiny_data());
  for (int i = 0; i < 6; ++i) t.step();
  t.save_checkpoint(dir / "a");
  fs::copy(dir / "a", dir / "b", fs::copy_options::recursive);

  std::vector<Image> eval;
  for (std::size_t i = 0; i < 16; ++i) eval.push_back(tiny_data()[i].image);
  SelectionConfig cfg;
  cfg.samples = 16;
  cfg.swd.patches_per_image = 16;
  cfg.swd.projections = 32;

  const std::vector<fs::path> single{dir / "a"};
  CHECK(select_checkpoint(single, eval, cfg).best == 0);
  const std::vector<fs::path> tied{dir / "a", dir / "b"};
  const auto r = select_checkpoint(tied, eval, cfg);
  CHECK(r.scores[0] == r.scores[1]);
  CHECK(r.best == 1);
  CHECK_THROWS_AS(select_checkpoint(std::span<const fs::path>(), eval, cfg), ConfigError);
}

TEST_CASE("sampling helpers") {
  const auto s = tiny_schedule(13);
  auto [g, c] = init_weights(s.plan, 13, s.net);
  const FadeState fade(2, 1.0);
  const auto a = generate_images(g, fade, 5, 1);
  const auto b = generate_images(g, fade, 5, 1);
  CHECK(a == b);
  CHECK(a.size() == 5);
  for (const auto& img : a)
    for (float v : img.pixels) CHECK((v >= 0.0f && v <= 1.0f));
  const auto cc = generate_images(g, fade, 2, 1, Prior::Normal, View::CC);
  const auto mlo = generate_images(g, fade, 2, 1, Prior::Normal, View::MLO);
  CHECK(cc[0] == a[0]);
  CHECK(mlo[1] == a[1]);
  CHECK_FALSE(cc[1] == mlo[1]);

  Image small(2, 3);
  for (std::size_t i = 0; i < small.pixels.size(); ++i) small.pixels[i] = static_cast<float>(i);
  const auto big = upsample_nearest(small, 2);
  CHECK(big.height == 4);
  CHECK(big.width == 6);
  CHECK(big.at(3, 5) == small.at(1, 2));
  CHECK(big.at(2, 1) == small.at(1, 0));

  const double acc = label_accuracy(c, fade, tiny_data());
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
}
