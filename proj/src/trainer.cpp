#include "progan/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "progan/errors.hpp"
#include "progan/ops.hpp"
#include "progan/tensor_io.hpp"

namespace progan {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Random stream ids derived from the run seed.
constexpr std::uint64_t kDataStream = 10;
constexpr std::uint64_t kLatentStream = 11;
constexpr std::uint64_t kTrainerStream = 12;
constexpr std::uint64_t kGridStream = 13;

constexpr std::int64_t kGridRows = 5;
constexpr std::int64_t kGridCols = 6;

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class N>
N parse_field(const std::string& text) {
  N value{};
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, value);
  if (res.ec != std::errc() || res.ptr != end) throw FormatError("diagnostics: bad field '" + text + "'");
  return value;
}

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NonFiniteError(std::string(what) + ": non-finite loss");
}

template <class T>
void require_finite_grads(std::span<const BasicTensor<T>> grads, const char* what) {
  for (const auto& g : grads)
    for (T v : g.data())
      if (!std::isfinite(v)) throw NonFiniteError(std::string(what) + ": non-finite gradient");
}

std::vector<View> random_views(std::int64_t n, Rng& rng) {
  std::vector<View> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = static_cast<View>(rng.below(kNumViews));
  return v;
}

std::vector<std::int64_t> broadcast(const std::vector<std::int64_t>& v, std::size_t n, const char* key) {
  if (v.size() == 1) return std::vector<std::int64_t>(n, v[0]);
  if (v.size() != n) {
    throw ConfigError(std::string("config key '") + key + "': expected 1 or " + std::to_string(n) + " values, got " +
                      std::to_string(v.size()));
  }
  return v;
}

const char* prior_name(Prior p) { return p == Prior::Normal ? "normal" : "uniform"; }

json plan_to_json(const StagePlan& plan) {
  json stages = json::array();
  for (const auto& s : plan.stages) stages.push_back({{"height", s.height}, {"width", s.width}, {"channels", s.channels}});
  return {{"stages", stages}, {"latent_dim", plan.latent_dim}};
}

StagePlan plan_from_json(const json& j) {
  StagePlan plan;
  for (const auto& s : j.at("stages"))
    plan.stages.push_back({s.at("height").get<std::int64_t>(), s.at("width").get<std::int64_t>(),
                           s.at("channels").get<std::int64_t>()});
  plan.latent_dim = j.at("latent_dim").get<std::int64_t>();
  plan.validate();
  return plan;
}

bool same_plan(const StagePlan& a, const StagePlan& b) {
  if (a.latent_dim != b.latent_dim || a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].height != b[i].height || a[i].width != b[i].width || a[i].channels != b[i].channels) return false;
  return true;
}

template <class Store>
void save_store(const Store& store, const fs::path& dir) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < store.size(); ++i) {
    save_tensor(dir / (store.name(i) + ".tnsr"), store.value(i));
    save_tensor(dir / (store.name(i) + ".m.tnsr"), store.first_moment(i));
    save_tensor(dir / (store.name(i) + ".v.tnsr"), store.second_moment(i));
  }
}

template <class Store>
void load_store(Store& store, const fs::path& dir, std::int64_t step) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& name = store.name(i);
    store.set_value(i, load_tensor(dir / (name + ".tnsr")));
    auto m = load_tensor(dir / (name + ".m.tnsr"));
    auto v = load_tensor(dir / (name + ".v.tnsr"));
    if (m.shape() != store.value(i).shape() || v.shape() != store.value(i).shape()) {
      throw FormatError("checkpoint: moment shape mismatch for " + name);
    }
    store.set_moments(i, std::move(m), std::move(v));
  }
  store.set_step(step);
}

json read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error("checkpoint: cannot open " + (dir / "manifest.json").string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint manifest: ") + e.what());
  }
}

void write_diagnostics(const fs::path& path, const std::vector<DiagnosticsRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << kDiagnosticsHeader << "\n";
  for (const auto& r : rows) out << to_csv(r) << "\n";
}

std::vector<DiagnosticsRow> read_diagnostics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != kDiagnosticsHeader) throw FormatError("diagnostics: unexpected header in " + path.string());
  std::vector<DiagnosticsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string item;
    while (std::getline(ss, item, ',')) f.push_back(item);
    if (f.size() != 6) throw FormatError("diagnostics: expected 6 fields, got " + std::to_string(f.size()));
    rows.push_back({parse_field<std::int64_t>(f[0]), parse_field<double>(f[1]), parse_field<double>(f[2]),
                    parse_field<double>(f[3]), parse_field<double>(f[4]), parse_field<double>(f[5])});
  }
  return rows;
}

json stats_to_json(const CriticStats& s, std::int64_t count) {
  return {{"loss", s.loss},
          {"d_bce", s.d_bce},
          {"grad_mag", s.grad_mag},
          {"label_ce_real", s.label_ce_real},
          {"label_ce_fake", s.label_ce_fake},
          {"count", count}};
}

}  // namespace

// --------------------------------------------------------------- schedule

TrainSchedule TrainSchedule::desk(std::uint64_t seed) {
  TrainSchedule s;
  s.plan = StagePlan::desk();
  s.stages = {{20000, 20000, 16}, {20000, 20000, 16}, {20000, 20000, 8}, {20000, 20000, 4}};
  s.seed = seed;
  return s;
}

TrainSchedule TrainSchedule::from_config(const Config& c) {
  TrainSchedule s = desk(c.unsigned_integer("seed").value_or(0));
  const auto channels = c.integers("channels");
  const auto base_h = c.integer("base_height"), base_w = c.integer("base_width");
  const auto latent = c.integer("latent_dim");
  if (channels || base_h || base_w || latent) {
    std::vector<std::int64_t> ch;
    if (channels) {
      ch = *channels;
    } else {
      for (const auto& st : s.plan.stages) ch.push_back(st.channels);
    }
    s.plan = StagePlan::doubling(base_h.value_or(8), base_w.value_or(base_h.value_or(8)), ch,
                                 latent.value_or(s.plan.latent_dim));
  }
  const auto n = s.plan.size();
  const TrainSchedule defaults = desk();
  std::vector<PhaseSchedule> stages(n);
  for (std::size_t i = 0; i < n; ++i) stages[i] = i < defaults.stages.size() ? defaults.stages[i] : defaults.stages.back();
  if (const auto v = c.integers("images_stable")) {
    const auto b = broadcast(*v, n, "images_stable");
    for (std::size_t i = 0; i < n; ++i) stages[i].images_stable = b[i];
  }
  if (const auto v = c.integers("images_fade")) {
    const auto b = broadcast(*v, n, "images_fade");
    for (std::size_t i = 0; i < n; ++i) stages[i].images_fade = b[i];
  }
  if (const auto v = c.integers("batch_size")) {
    const auto b = broadcast(*v, n, "batch_size");
    for (std::size_t i = 0; i < n; ++i) stages[i].batch_size = b[i];
  }
  s.stages = stages;
  if (const auto v = c.integers("n_critic")) {
    const auto b = broadcast(*v, n, "n_critic");
    s.n_critic_ramp.clear();
    for (std::size_t i = 0; i < n; ++i) s.n_critic_ramp.emplace_back(i, static_cast<int>(b[i]));
  }
  s.learning_rate = c.real("learning_rate").value_or(s.learning_rate);
  s.total_images_target = c.integer("total_images").value_or(s.total_images_target);
  s.log_every = c.integer("log_every").value_or(s.log_every);
  s.grid_every = c.integer("grid_every").value_or(s.grid_every);
  s.checkpoint_every = c.integer("checkpoint_every").value_or(s.checkpoint_every);
  if (const auto p = c.string("prior")) s.prior = parse_prior(*p);
  s.penalty.lambda = c.real("lambda").value_or(s.penalty.lambda);
  s.penalty.beta = c.real("beta").value_or(s.penalty.beta);
  s.drift = c.real("drift").value_or(s.drift);
  s.label_weight = c.real("label_weight").value_or(s.label_weight);
  s.net.minibatch_stddev = c.boolean("minibatch_stddev").value_or(s.net.minibatch_stddev);
  s.max_restarts = static_cast<int>(c.integer("max_restarts").value_or(s.max_restarts));
  s.validate();
  return s;
}

int TrainSchedule::n_critic(std::size_t stage) const {
  int value = 1;
  for (const auto& [first, n] : n_critic_ramp)
    if (first <= stage) value = n;
  return value;
}

std::int64_t TrainSchedule::scheduled_images() const {
  std::int64_t total = 0;
  for (std::size_t i = 0; i < stages.size(); ++i) total += stages[i].images_stable + (i > 0 ? stages[i].images_fade : 0);
  return total;
}

std::int64_t TrainSchedule::target_images() const {
  return std::max(total_images_target, scheduled_images());
}

void TrainSchedule::validate() const {
  plan.validate();
  if (stages.size() != plan.size()) {
    throw ConfigError("schedule has " + std::to_string(stages.size()) + " phase entries for " +
                      std::to_string(plan.size()) + " stages");
  }
  for (const auto& st : stages) {
    if (st.images_stable < 0 || st.images_fade < 0) throw ConfigError("image counts must be non-negative");
    if (st.batch_size < 1) throw ConfigError("batch size must be positive");
  }
  if (scheduled_images() <= 0 && total_images_target <= 0) throw ConfigError("schedule shows no images");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (n_critic_ramp.empty() || n_critic_ramp.front().first != 0) {
    throw ConfigError("n_critic ramp must start at stage 0");
  }
  for (std::size_t i = 0; i < n_critic_ramp.size(); ++i) {
    const auto [stage, n] = n_critic_ramp[i];
    if (n < 1 || n > 5) throw ConfigError("n_critic values must lie in [1, 5]");
    if (i > 0 && (stage <= n_critic_ramp[i - 1].first || n < n_critic_ramp[i - 1].second)) {
      throw ConfigError("n_critic ramp must be ordered by stage and non-decreasing");
    }
  }
  if (log_every < 1 || grid_every < 1 || checkpoint_every < 1) throw ConfigError("intervals must be positive");
  if (total_images_target < 0) throw ConfigError("total_images must be non-negative");
  if (!(drift >= 0.0) || !(label_weight >= 0.0)) throw ConfigError("loss weights must be non-negative");
  if (max_restarts < 0) throw ConfigError("max_restarts must be non-negative");
  penalty.validate();
}

std::string to_csv(const DiagnosticsRow& r) {
  return std::to_string(r.images_seen) + "," + format_double(r.critic_loss) + "," + format_double(r.d_bce) + "," +
         format_double(r.grad_mag) + "," + format_double(r.label_ce_real) + "," + format_double(r.label_ce_fake);
}

// --------------------------------------------------------------- updates

CriticStats critic_update(Critic& critic, const Generator& generator, const Batch& real, const Tensor& z,
                          const FadeState& fade, const LossWeights& weights, const AdamConfig& adam, Rng& rng) {
  const std::span<const View> views(real.views);
  const auto fake = generator.forward(z, views, fade);

  Tape<float> tape;
  const auto w = critic.params().bind(tape);
  const std::span<const Tensor> ws(w);
  // Separate passes keep every discrimination batch purely real or purely
  // generated, which also keeps the minibatch statistics unmixed.
  const auto out_real = critic.forward(ws, real.images, fade);
  const auto out_fake = critic.forward(ws, fake, fade);
  const auto losses = wgan_losses(out_real.score, out_fake.score);

  const auto x_hat = sample_interpolates(real.images, fake, rng);
  const CriticFn<float> score = [&](const Tensor& x) { return critic.forward(ws, x, fade).score; };
  const auto gp = gradient_penalty(tape, score, x_hat, weights.penalty);

  const auto ce_real = label_ce(out_real.logits, views);
  const auto ce_fake = label_ce(out_fake.logits, views);
  auto total = ops::add(losses.critic, drift_penalty(out_real.score, weights.drift));
  total = ops::add(total, gp.penalty);
  total = ops::add(total, ops::scale(ops::add(ce_real, ce_fake), weights.label_weight));
  require_finite(total.item(), "critic update");

  const auto grads = tape.gradient(total, ws);
  require_finite_grads<float>(grads, "critic update");
  adam_step(critic.params(), std::span<const Tensor>(grads), adam);

  CriticStats s;
  s.loss = total.item();
  s.d_bce = discriminator_bce(out_real.score.data(), out_fake.score.data());
  s.grad_mag = gp.mean_grad_norm;
  s.label_ce_real = ce_real.item();
  s.label_ce_fake = ce_fake.item();
  return s;
}

double generator_update(Generator& generator, const Critic& critic, const Tensor& z, std::span<const View> views,
                        const FadeState& fade, const LossWeights& weights, const AdamConfig& adam) {
  Tape<float> tape;
  const auto w = generator.params().bind(tape);
  const std::span<const Tensor> ws(w);
  const auto fake = generator.forward(ws, z, views, fade);
  const auto out = critic.forward(fake, fade);
  for (float v : out.score.data()) require_finite(v, "generator update");
  const auto loss = ops::add(ops::scale(ops::mean(out.score), -1.0),
                             ops::scale(label_ce(out.logits, views), weights.label_weight));
  require_finite(loss.item(), "generator update");
  const auto grads = tape.gradient(loss, ws);
  require_finite_grads<float>(grads, "generator update");
  adam_step(generator.params(), std::span<const Tensor>(grads), adam);
  return loss.item();
}

// --------------------------------------------------------------- trainer

Trainer::Trainer(TrainSchedule schedule, const Dataset& data)
    : schedule_((schedule.validate(), std::move(schedule))),
      data_(&data),
      adam_{schedule_.learning_rate, 0.0, 0.99, 1e-8},
      weights_{schedule_.penalty, schedule_.drift, schedule_.label_weight},
      generator_(schedule_.plan, schedule_.seed),
      critic_(schedule_.plan, schedule_.seed, schedule_.net),
      iterator_(data, Rng::derive(schedule_.seed, kDataStream)),
      latents_(schedule_.plan.latent_dim, schedule_.prior, Rng::derive(schedule_.seed, kLatentStream)),
      rng_(Rng::derive(schedule_.seed, kTrainerStream)) {
  if (data.empty()) throw ConfigError("training dataset is empty");
  const auto& top = schedule_.plan.final();
  if (data.height() != top.height || data.width() != top.width) {
    throw ShapeError("dataset resolution " + std::to_string(data.height()) + "x" + std::to_string(data.width()) +
                     " does not match the final stage " + std::to_string(top.height) + "x" +
                     std::to_string(top.width));
  }
}

FadeState Trainer::fade() const {
  if (progress_.phase == Phase::Fade) {
    const auto len = schedule_.stages[progress_.stage].images_fade;
    return FadeState(progress_.stage, static_cast<double>(progress_.images_in_phase) / static_cast<double>(len));
  }
  return FadeState(progress_.stage, 1.0);
}

bool Trainer::done() const { return progress_.images_seen >= schedule_.target_images(); }

void Trainer::advance_phase() {
  auto& p = progress_;
  while (true) {
    const auto& st = schedule_.stages[p.stage];
    const auto len = p.phase == Phase::Fade ? st.images_fade : st.images_stable;
    if (p.images_in_phase < len) return;
    if (p.phase == Phase::Fade) {
      p.phase = Phase::Stable;
    } else if (p.stage + 1 < schedule_.plan.size()) {
      ++p.stage;
      p.phase = schedule_.stages[p.stage].images_fade > 0 ? Phase::Fade : Phase::Stable;
    } else {
      return;  // the final stage keeps training until the target
    }
    p.images_in_phase = 0;
  }
}

void Trainer::step() {
  advance_phase();
  const auto fade_state = fade();
  const auto stage = progress_.stage;
  const auto batch = schedule_.stages[stage].batch_size;
  const auto h = schedule_.plan[stage].height, w = schedule_.plan[stage].width;
  const int n_critic = schedule_.n_critic(stage);
  const auto before = progress_.images_seen;

  for (int i = 0; i < n_critic; ++i) {
    const auto real = iterator_.next(batch, h, w);
    const auto z = latents_.sample(batch);
    const auto s = critic_update(critic_, generator_, real, z, fade_state, weights_, adam_, rng_);
    pending_.loss += s.loss;
    pending_.d_bce += s.d_bce;
    pending_.grad_mag += s.grad_mag;
    pending_.label_ce_real += s.label_ce_real;
    pending_.label_ce_fake += s.label_ce_fake;
    ++pending_count_;
    ++progress_.critic_updates;
    progress_.images_seen += batch;
    progress_.images_in_phase += batch;
  }
  const auto views = random_views(batch, rng_);
  const auto z = latents_.sample(batch);
  generator_update(generator_, critic_, z, views, fade_state, weights_, adam_);
  ++progress_.generator_updates;

  if (progress_.images_seen / schedule_.log_every > before / schedule_.log_every) {
    const double n = static_cast<double>(pending_count_);
    rows_.push_back({progress_.images_seen, pending_.loss / n, pending_.d_bce / n, pending_.grad_mag / n,
                     pending_.label_ce_real / n, pending_.label_ce_fake / n});
    pending_ = {};
    pending_count_ = 0;
  }
}

TrainerState Trainer::state() const {
  return {generator_,          critic_,         progress_, iterator_.epoch(), iterator_.position(),
          latents_.rng().state(), rng_.state(), rows_,     pending_,          pending_count_};
}

void Trainer::restore(const TrainerState& s) {
  if (!same_plan(s.generator.plan(), schedule_.plan)) throw ConfigError("restore: network plan differs from schedule");
  generator_ = s.generator;
  critic_ = s.critic;
  progress_ = s.progress;
  iterator_.seek(s.data_epoch, s.data_position);
  latents_.rng().set_state(s.latent_rng);
  rng_.set_state(s.trainer_rng);
  rows_ = s.rows;
  pending_ = s.pending;
  pending_count_ = s.pending_count;
}

void Trainer::reseed_streams() {
  const auto r = static_cast<std::uint64_t>(progress_.restarts);
  latents_.rng() = Rng(Rng::derive(Rng::derive(schedule_.seed, kLatentStream), r));
  rng_ = Rng(Rng::derive(Rng::derive(schedule_.seed, kTrainerStream), r));
}

void Trainer::save_checkpoint(const fs::path& dir) const {
  fs::create_directories(dir);
  const auto f = fade();
  json m;
  m["format"] = "progan-checkpoint-1";
  m["plan"] = plan_to_json(schedule_.plan);
  m["minibatch_stddev"] = schedule_.net.minibatch_stddev;
  m["prior"] = prior_name(schedule_.prior);
  m["seed"] = schedule_.seed;
  m["fade"] = {{"stage", f.stage()}, {"alpha", f.alpha()}};
  m["progress"] = {{"stage", progress_.stage},
                   {"phase", progress_.phase == Phase::Fade ? "fade" : "stable"},
                   {"images_in_phase", progress_.images_in_phase},
                   {"images_seen", progress_.images_seen},
                   {"critic_updates", progress_.critic_updates},
                   {"generator_updates", progress_.generator_updates},
                   {"restarts", progress_.restarts}};
  m["data"] = {{"epoch", iterator_.epoch()}, {"position", iterator_.position()}};
  m["rng"] = {{"latent", latents_.rng().state()}, {"trainer", rng_.state()}};
  m["pending"] = stats_to_json(pending_, pending_count_);
  m["adam_step"] = {{"generator", generator_.params().step()}, {"critic", critic_.params().step()}};
  save_store(generator_.params(), dir / "generator");
  save_store(critic_.params(), dir / "critic");
  write_diagnostics(dir / "diagnostics.csv", rows_);
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint manifest in " + dir.string());
  out << m.dump(2) << "\n";
  if (!out) throw Error("failed writing checkpoint manifest in " + dir.string());
}

void Trainer::load_checkpoint(const fs::path& dir) {
  const auto m = read_manifest(dir);
  try {
    if (!same_plan(plan_from_json(m.at("plan")), schedule_.plan)) {
      throw ConfigError("checkpoint " + dir.string() + " was written for a different network plan");
    }
    if (m.at("minibatch_stddev").get<bool>() != schedule_.net.minibatch_stddev) {
      throw ConfigError("checkpoint " + dir.string() + " differs in the minibatch stddev option");
    }
    const auto& p = m.at("progress");
    Progress prog;
    prog.stage = p.at("stage").get<std::size_t>();
    prog.phase = p.at("phase").get<std::string>() == "fade" ? Phase::Fade : Phase::Stable;
    prog.images_in_phase = p.at("images_in_phase").get<std::int64_t>();
    prog.images_seen = p.at("images_seen").get<std::int64_t>();
    prog.critic_updates = p.at("critic_updates").get<std::int64_t>();
    prog.generator_updates = p.at("generator_updates").get<std::int64_t>();
    prog.restarts = p.at("restarts").get<int>();

    load_store(generator_.params(), dir / "generator", m.at("adam_step").at("generator").get<std::int64_t>());
    load_store(critic_.params(), dir / "critic", m.at("adam_step").at("critic").get<std::int64_t>());
    progress_ = prog;
    iterator_.seek(m.at("data").at("epoch").get<std::uint64_t>(), m.at("data").at("position").get<std::size_t>());
    latents_.rng().set_state(m.at("rng").at("latent").get<std::string>());
    rng_.set_state(m.at("rng").at("trainer").get<std::string>());
    const auto& pend = m.at("pending");
    pending_ = {pend.at("loss").get<double>(), pend.at("d_bce").get<double>(), pend.at("grad_mag").get<double>(),
                pend.at("label_ce_real").get<double>(), pend.at("label_ce_fake").get<double>()};
    pending_count_ = pend.at("count").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw FormatError("checkpoint manifest " + dir.string() + ": " + e.what());
  }
  rows_ = read_diagnostics(dir / "diagnostics.csv");
}

std::vector<std::pair<View, Image>> Trainer::sample_grids() const {
  LatentSampler grid_latents(schedule_.plan.latent_dim, schedule_.prior, Rng::derive(schedule_.seed, kGridStream));
  const auto z = grid_latents.sample(kGridRows * kGridCols);
  std::vector<std::pair<View, Image>> out;
  for (View view : {View::CC, View::MLO}) {
    const std::vector<View> views(static_cast<std::size_t>(kGridRows * kGridCols), view);
    const auto images = generator_.forward(z, views, fade());
    std::vector<Image> tiles;
    for (std::int64_t i = 0; i < images.dim(0); ++i) {
      auto img = from_tensor(images, i);
      for (auto& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
      tiles.push_back(std::move(img));
    }
    out.emplace_back(view, tile(tiles, kGridRows, kGridCols));
  }
  return out;
}

void Trainer::write_outputs(const fs::path& out_dir, std::int64_t previous) {
  const auto now = progress_.images_seen;
  auto crossed = [&](std::int64_t every) { return now / every > previous / every; };
  if (crossed(schedule_.log_every)) write_diagnostics(out_dir / "diagnostics.csv", rows_);
  if (crossed(schedule_.grid_every) || done()) {
    fs::create_directories(out_dir / "samples");
    for (const auto& [view, grid] : sample_grids()) {
      save_image(grid, out_dir / "samples" / ("grid_" + std::to_string(now) + "_" + view_name(view) + ".png"));
    }
  }
  if (crossed(schedule_.checkpoint_every) || done()) save_checkpoint(out_dir / ("ckpt_" + std::to_string(now)));
}

void Trainer::run(const fs::path& out_dir) {
  fs::create_directories(out_dir);
  if (progress_.images_seen == 0 && progress_.critic_updates == 0) {
    save_checkpoint(out_dir / "ckpt_0");
    write_diagnostics(out_dir / "diagnostics.csv", rows_);
  }
  TrainerState last_good = state();
  while (!done()) {
    const auto previous = progress_.images_seen;
    try {
      step();
    } catch (const NonFiniteError&) {
      const int restarts = progress_.restarts + 1;
      if (restarts > schedule_.max_restarts) throw;
      restore(last_good);
      progress_.restarts = restarts;
      reseed_streams();
      write_diagnostics(out_dir / "diagnostics.csv", rows_);
      continue;
    }
    const bool checkpoint = progress_.images_seen / schedule_.checkpoint_every > previous / schedule_.checkpoint_every;
    write_outputs(out_dir, previous);
    if (checkpoint || done()) last_good = state();
  }
  write_diagnostics(out_dir / "diagnostics.csv", rows_);
}

// --------------------------------------------------------------- checkpoints

CheckpointNets load_checkpoint_nets(const fs::path& dir) {
  const auto m = read_manifest(dir);
  try {
    const auto plan = plan_from_json(m.at("plan"));
    NetOptions net;
    net.minibatch_stddev = m.at("minibatch_stddev").get<bool>();
    auto [g, c] = init_weights(plan, 0, net);
    load_store(g.params(), dir / "generator", m.at("adam_step").at("generator").get<std::int64_t>());
    load_store(c.params(), dir / "critic", m.at("adam_step").at("critic").get<std::int64_t>());
    const FadeState fade(m.at("fade").at("stage").get<std::size_t>(), m.at("fade").at("alpha").get<double>());
    if (fade.stage() >= plan.size()) throw FormatError("checkpoint: stage out of range");
    return {plan,
            net,
            fade,
            parse_prior(m.at("prior").get<std::string>()),
            m.at("progress").at("images_seen").get<std::int64_t>(),
            std::move(g),
            std::move(c)};
  } catch (const json::exception& e) {
    throw FormatError("checkpoint manifest " + dir.string() + ": " + e.what());
  }
}

std::vector<fs::path> list_checkpoints(const fs::path& run_dir) {
  std::vector<std::pair<std::int64_t, fs::path>> found;
  if (!fs::is_directory(run_dir)) throw Error("not a directory: " + run_dir.string());
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const auto name = entry.path().filename().string();
    if (!entry.is_directory() || name.rfind("ckpt_", 0) != 0) continue;
    std::int64_t n = 0;
    const auto digits = name.substr(5);
    const auto res = std::from_chars(digits.data(), digits.data() + digits.size(), n);
    if (res.ec != std::errc() || res.ptr != digits.data() + digits.size()) continue;
    found.emplace_back(n, entry.path());
  }
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& [n, p] : found) out.push_back(std::move(p));
  return out;
}

// --------------------------------------------------------------- evaluation

std::vector<Image> generate_images(const Generator& generator, const FadeState& fade, std::size_t count,
                                   std::uint64_t seed, Prior prior, std::optional<View> view) {
  constexpr std::size_t kBatch = 32;
  LatentSampler latents(generator.plan().latent_dim, prior, seed);
  std::vector<Image> out;
  out.reserve(count);
  for (std::size_t first = 0; first < count; first += kBatch) {
    const auto n = std::min(kBatch, count - first);
    std::vector<View> views(n);
    for (std::size_t i = 0; i < n; ++i) views[i] = view ? *view : static_cast<View>((first + i) % 2);
    const auto images = generator.forward(latents.sample(static_cast<std::int64_t>(n)), views, fade);
    for (std::size_t i = 0; i < n; ++i) {
      auto img = from_tensor(images, static_cast<std::int64_t>(i));
      for (auto& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
      out.push_back(std::move(img));
    }
  }
  return out;
}

Image upsample_nearest(const Image& image, std::int64_t factor) {
  if (factor < 1) throw DomainError("upsample_nearest: factor must be positive");
  Image out(image.height * factor, image.width * factor);
  out.maxval = image.maxval;
  for (std::int64_t y = 0; y < out.height; ++y)
    for (std::int64_t x = 0; x < out.width; ++x) out.at(y, x) = image.at(y / factor, x / factor);
  return out;
}

double score_generator(const Generator& generator, const FadeState& fade, std::span<const Image> eval_set,
                       const SelectionConfig& config, Prior prior) {
  if (eval_set.empty()) throw ShapeError("score_generator: empty evaluation set");
  const auto& stage = generator.plan()[fade.stage()];
  const auto eh = eval_set[0].height, ew = eval_set[0].width;
  if (eh % stage.height || ew % stage.width || eh / stage.height != ew / stage.width) {
    throw ShapeError("score_generator: evaluation resolution is not an integer multiple of the stage");
  }
  const auto factor = eh / stage.height;
  auto samples = generate_images(generator, fade, config.samples, config.seed, prior);
  if (factor > 1)
    for (auto& s : samples) s = upsample_nearest(s, factor);
  return *swd_multiscale(eval_set, samples, config.swd).swd_mean;
}

SelectionResult select_checkpoint(std::span<const fs::path> checkpoints, std::span<const Image> eval_set,
                                  const SelectionConfig& config) {
  if (checkpoints.empty()) throw ConfigError("select_checkpoint: no checkpoints");
  SelectionResult r;
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    const auto nets = load_checkpoint_nets(checkpoints[i]);
    const double score = score_generator(nets.generator, nets.fade, eval_set, config, nets.prior);
    r.scores.push_back(score);
    if (score <= r.scores[r.best]) r.best = i;
  }
  return r;
}

double label_accuracy(const Critic& critic, const FadeState& fade, const Dataset& data) {
  if (data.empty()) throw ShapeError("label_accuracy: empty dataset");
  const auto& stage = critic.plan()[fade.stage()];
  constexpr std::size_t kBatch = 64;
  std::size_t correct = 0;
  for (std::size_t first = 0; first < data.size(); first += kBatch) {
    std::vector<std::size_t> idx;
    for (std::size_t i = first; i < std::min(data.size(), first + kBatch); ++i) idx.push_back(i);
    const auto out = critic.forward(data.stack(idx, stage.height, stage.width), fade);
    const auto logits = out.logits.data();
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const int predicted = logits[2 * i + 1] > logits[2 * i] ? 1 : 0;
      if (predicted == static_cast<int>(data[idx[i]].view)) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace progan
