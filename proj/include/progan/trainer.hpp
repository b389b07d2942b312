#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "progan/config.hpp"
#include "progan/dataio.hpp"
#include "progan/metrics.hpp"
#include "progan/nets.hpp"
#include "progan/objectives.hpp"
#include "progan/optim.hpp"

namespace progan {

struct PhaseSchedule {
  std::int64_t images_stable = 20000;
  std::int64_t images_fade = 20000;  // ignored for the first stage
  std::int64_t batch_size = 16;
};

struct TrainSchedule {
  StagePlan plan = StagePlan::desk();
  std::vector<PhaseSchedule> stages;  // one per plan stage
  double learning_rate = 0.0015;
  /// (stage index, n_critic) pairs; a stage uses the last entry at or below it.
  std::vector<std::pair<std::size_t, int>> n_critic_ramp = {{0, 1}, {1, 1}, {2, 3}, {3, 5}};
  /// 0 stops at the end of the last stable phase; a larger value keeps
  /// training the final stage until it is reached.
  std::int64_t total_images_target = 0;
  std::uint64_t seed = 0;

  std::int64_t log_every = 1000;
  std::int64_t grid_every = 10000;
  std::int64_t checkpoint_every = 10000;

  Prior prior = Prior::Normal;
  GradientPenaltyConfig penalty;
  double drift = kDriftEpsilon;
  double label_weight = 1.0;
  NetOptions net;
  int max_restarts = 5;

  /// 8 -> 64 with 20k stable and 20k fade images per stage and batch sizes
  /// 16, 16, 8, 4.
  static TrainSchedule desk(std::uint64_t seed = 0);
  /// Overrides defaults with the keys present in `config`.
  static TrainSchedule from_config(const Config& config);

  int n_critic(std::size_t stage) const;
  /// Images shown when the last stable phase ends.
  std::int64_t scheduled_images() const;
  std::int64_t target_images() const;
  void validate() const;
};

enum class Phase { Fade, Stable };

/// Position in the schedule. Images are counted as real images shown to the
/// critic, one batch per critic update.
struct Progress {
  std::size_t stage = 0;
  Phase phase = Phase::Stable;
  std::int64_t images_in_phase = 0;
  std::int64_t images_seen = 0;
  std::int64_t critic_updates = 0;
  std::int64_t generator_updates = 0;
  int restarts = 0;

  bool operator==(const Progress&) const = default;
};

struct DiagnosticsRow {
  std::int64_t images_seen = 0;
  double critic_loss = 0.0;    // full critic objective
  double d_bce = 0.0;          // monitored BCE of sigmoid(critic scores)
  double grad_mag = 0.0;       // mean interpolate gradient norm
  double label_ce_real = 0.0;
  double label_ce_fake = 0.0;

  bool operator==(const DiagnosticsRow&) const = default;
};

inline constexpr const char* kDiagnosticsHeader = "images_seen,critic_loss,d_bce,grad_mag,label_ce_real,label_ce_fake";
std::string to_csv(const DiagnosticsRow& row);

struct CriticStats {
  double loss = 0.0;
  double d_bce = 0.0;
  double grad_mag = 0.0;
  double label_ce_real = 0.0;
  double label_ce_fake = 0.0;
};

struct LossWeights {
  GradientPenaltyConfig penalty;
  double drift = kDriftEpsilon;
  double label_weight = 1.0;
};

/// One critic update. Real and generated images go through the critic as
/// separate batches; the penalty uses a third batch of interpolates. Throws
/// NonFiniteError, leaving the critic untouched, if the loss or a gradient
/// is not finite.
CriticStats critic_update(Critic& critic, const Generator& generator, const Batch& real, const Tensor& z,
                          const FadeState& fade, const LossWeights& weights, const AdamConfig& adam, Rng& rng);

/// One generator update against the current critic; returns its loss.
double generator_update(Generator& generator, const Critic& critic, const Tensor& z, std::span<const View> views,
                        const FadeState& fade, const LossWeights& weights, const AdamConfig& adam);

/// Everything needed to continue a run bit-exactly.
struct TrainerState {
  Generator generator;
  Critic critic;
  Progress progress;
  std::uint64_t data_epoch = 0;
  std::size_t data_position = 0;
  std::string latent_rng;
  std::string trainer_rng;
  std::vector<DiagnosticsRow> rows;
  // Sums since the last diagnostics row.
  CriticStats pending;
  std::int64_t pending_count = 0;
};

class Trainer {
 public:
  Trainer(TrainSchedule schedule, const Dataset& data);

  const TrainSchedule& schedule() const { return schedule_; }
  const Generator& generator() const { return generator_; }
  const Critic& critic() const { return critic_; }
  const Progress& progress() const { return progress_; }
  const std::vector<DiagnosticsRow>& rows() const { return rows_; }
  FadeState fade() const;
  bool done() const;

  /// n_critic critic updates, each on a fresh real batch and fresh latents,
  /// then one generator update. Emits a diagnostics row whenever a logging
  /// boundary is crossed.
  void step();

  /// Trains until the schedule is complete. Writes diagnostics.csv, sample
  /// grids under samples/ and checkpoints ckpt_<images_seen>/ into out_dir.
  /// A non-finite loss rolls back to the last checkpoint with fresh random
  /// streams. A fresh run also writes ckpt_0 before the first update.
  void run(const std::filesystem::path& out_dir);

  TrainerState state() const;
  void restore(const TrainerState& state);

  void save_checkpoint(const std::filesystem::path& dir) const;
  /// Restores a checkpoint written by save_checkpoint. The schedule must
  /// describe the same networks.
  void load_checkpoint(const std::filesystem::path& dir);

  /// Random 6 x 5 grids, one per view, with latents fixed for the run.
  std::vector<std::pair<View, Image>> sample_grids() const;

 private:
  void advance_phase();
  void reseed_streams();
  void write_outputs(const std::filesystem::path& out_dir, std::int64_t previous_images);

  TrainSchedule schedule_;
  const Dataset* data_;
  AdamConfig adam_;
  LossWeights weights_;
  Generator generator_;
  Critic critic_;
  Progress progress_;
  DatasetIterator iterator_;
  LatentSampler latents_;
  Rng rng_;
  std::vector<DiagnosticsRow> rows_;
  CriticStats pending_;
  std::int64_t pending_count_ = 0;
};

/// Networks and position stored in a checkpoint directory.
struct CheckpointNets {
  StagePlan plan;
  NetOptions net;
  FadeState fade;
  Prior prior = Prior::Normal;
  std::int64_t images_seen = 0;
  Generator generator;
  Critic critic;
};

CheckpointNets load_checkpoint_nets(const std::filesystem::path& dir);

/// Checkpoint directories (ckpt_<n>) under `run_dir`, ordered by n.
std::vector<std::filesystem::path> list_checkpoints(const std::filesystem::path& run_dir);

/// `count` samples clamped to [0, 1]. Views alternate CC, MLO unless one is
/// given. Deterministic in `seed`.
std::vector<Image> generate_images(const Generator& generator, const FadeState& fade, std::size_t count,
                                   std::uint64_t seed, Prior prior = Prior::Normal,
                                   std::optional<View> view = std::nullopt);

/// Nearest-neighbour enlargement by an integer factor.
Image upsample_nearest(const Image& image, std::int64_t factor);

struct SelectionConfig {
  std::size_t samples = 256;
  std::uint64_t seed = 0;
  SwdConfig swd;
};

struct SelectionResult {
  std::size_t best = 0;
  std::vector<double> scores;  // mean SWD per checkpoint
};

/// Scores a generator against `eval_set` by mean multi-scale SWD. Samples
/// below the evaluation resolution are enlarged by nearest neighbour.
double score_generator(const Generator& generator, const FadeState& fade, std::span<const Image> eval_set,
                       const SelectionConfig& config, Prior prior = Prior::Normal);

/// Index of the checkpoint with the lowest mean SWD against `eval_set`;
/// ties go to the later checkpoint.
SelectionResult select_checkpoint(std::span<const std::filesystem::path> checkpoints, std::span<const Image> eval_set,
                                  const SelectionConfig& config);

/// Fraction of `data` whose view the critic's label head predicts correctly
/// at the given fade state (images reduced to the active resolution).
double label_accuracy(const Critic& critic, const FadeState& fade, const Dataset& data);

}  // namespace progan
