#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rlperi/checkpoint.hpp"
#include "rlperi/network.hpp"
#include "rlperi/strategy.hpp"
#include "rlperi/test_state.hpp"
#include "rlperi/zest.hpp"

namespace rlperi {

enum class RewardMode {
  shaping,         // -n + gamma * phi(s') - phi(s)
  num_stimuli,     // -n
  reconstruction,  // phi(s') - phi(s)
};

const char* to_string(RewardMode m);
RewardMode reward_mode_from_string(const std::string& s);

enum class LossForm {
  combined,    // (1/2 [(y - Q_l) + (y - Q_v)])^2 per sample
  per_branch,  // 1/2 [(y - Q_l)^2 + (y - Q_v)^2] per sample
};

struct TrainerConfig {
  NetworkConfig network;
  double gamma = 0.99;
  double learning_rate = 1e-4;
  int batch_size = 2048;
  double epsilon_start = 1.0;
  double epsilon_floor = 0.01;
  double epsilon_decay = 0.999;  // multiplicative, per episode
  int target_refresh_updates = 500;
  std::size_t replay_capacity = 100000;
  int updates_per_episode = 1;
  int episodes = 10000;
  int eval_every_episodes = 200;
  RewardMode reward_mode = RewardMode::shaping;
  LossForm loss_form = LossForm::combined;
  double max_grad_norm = 0.0;  // 0 disables clipping
  double sigma_fos = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
  double epsilon_at(int episode) const;
};

struct Experience {
  std::shared_ptr<const TestState> state;
  int location = 0;
  int stimulus_db = 0;
  double reward = 0.0;
  std::shared_ptr<const TestState> next_state;
  bool terminal = false;
};

/// Bounded FIFO of experiences.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Experience e);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  /// i-th oldest experience still held.
  const Experience& at(std::size_t i) const;

  /// `n` distinct experiences chosen uniformly at random.
  std::vector<const Experience*> sample(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::vector<Experience> items_;
  std::size_t head_ = 0;  // index of the oldest element once full
};

double shaped_reward(int n_stimuli, double phi_before, double phi_after, double gamma, RewardMode mode);

/// r when terminal, else r + gamma/2 * (q_loc_next + q_stim_next).
double target_value(double reward, double gamma, bool terminal, double q_loc_next, double q_stim_next);

/// Double-estimator branched target: actions are selected by `online` on
/// s' (location restricted to locations untested in s') and evaluated by
/// `target`.
double compute_target(const Experience& e, const PolicyNetwork& online, const PolicyNetwork& target, double gamma);

/// Mean per-sample loss for given targets and taken-action Q values.
double batch_loss(std::span<const double> targets, std::span<const double> q_loc_taken,
                  std::span<const double> q_stim_taken, LossForm form = LossForm::combined);

/// Loss of a batch under `online` (inference mode) with targets from
/// compute_target.
double compute_loss(std::span<const Experience* const> batch, const PolicyNetwork& online, const PolicyNetwork& target,
                    double gamma, LossForm form = LossForm::combined);

struct EpisodeResult {
  std::vector<Experience> experiences;
  EpisodeReport report;
};

/// One epsilon-greedy training episode over all 54 locations of `field`.
EpisodeResult run_episode(const VisualField& field, const PolicyNetwork& net, double epsilon, Rng& exploration,
                          std::uint64_t patient_seed, const ZestPrior& prior, const TrainerConfig& cfg,
                          const ZestConfig& zest);

/// One line of the training log.
struct TrainLogRecord {
  int episode = 0;
  int step = 0;  // optimizer updates so far
  double epsilon = 0.0;
  double loss = 0.0;  // mean loss over updates since the previous record
  double val_stimuli = 0.0;
  double val_mse = 0.0;
  std::string to_json() const;
};

struct TrainResult {
  Checkpoint best;
  TrainLogRecord best_record;
  std::vector<TrainLogRecord> log;
  int updates = 0;
};

using TrainLogSink = std::function<void(const TrainLogRecord&)>;

/// Greedy-policy validation metrics: mean stimuli and mean MSE over fields,
/// with patient seeds fixed by `seed` so evaluations are comparable.
std::pair<double, double> validate_policy(const PolicyNetwork& net, std::span<const VisualField> fields,
                                          const ZestPrior& prior, const ZestConfig& zest, double sigma_fos,
                                          std::uint64_t seed);

/// Episodic training with replay and a periodically refreshed target
/// network. Keeps the parameters with the lowest validation MSE (ties
/// broken by fewer stimuli); the initial parameters are evaluated first.
TrainResult train(std::span<const VisualField> train_fields, std::span<const VisualField> val_fields,
                  const ZestPrior& prior, const TrainerConfig& cfg, const ZestConfig& zest,
                  const TrainLogSink& sink = {});

/// One optimizer update; returns the batch loss. Exposed for tests.
class Learner {
 public:
  Learner(const TrainerConfig& cfg, std::uint64_t seed);

  PolicyNetwork& online() { return online_; }
  const PolicyNetwork& online() const { return online_; }
  const PolicyNetwork& target() const { return target_; }
  void sync_target();

  double update(std::span<const Experience* const> batch);
  int updates() const { return updates_; }

 private:
  TrainerConfig cfg_;
  PolicyNetwork online_;
  PolicyNetwork target_;
  Adam adam_;
  Rng dropout_rng_;
  AlignedVector<float> grad_;
  int updates_ = 0;
};

}  // namespace rlperi
