#include "rlperi/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <tuple>
#include <unordered_set>

#include "rlperi/errors.hpp"
#include "rlperi/patient.hpp"

namespace rlperi {

const char* to_string(RewardMode m) {
  switch (m) {
    case RewardMode::shaping: return "shaping";
    case RewardMode::num_stimuli: return "num_stimuli";
    case RewardMode::reconstruction: return "reconstruction";
  }
  return "?";
}

RewardMode reward_mode_from_string(const std::string& s) {
  if (s == "shaping") return RewardMode::shaping;
  if (s == "num_stimuli") return RewardMode::num_stimuli;
  if (s == "reconstruction") return RewardMode::reconstruction;
  throw DomainError("unknown reward mode '" + s + "'");
}

void TrainerConfig::validate() const {
  network.validate();
  if (!(gamma > 0.0 && gamma <= 1.0)) throw DomainError("gamma must lie in (0, 1]");
  if (!(learning_rate > 0.0)) throw DomainError("learning rate must be positive");
  if (batch_size < 1) throw DomainError("batch size must be positive");
  if (!(epsilon_floor >= 0.01 && epsilon_floor <= 1.0)) throw DomainError("epsilon floor must lie in [0.01, 1]");
  if (!(epsilon_start >= epsilon_floor && epsilon_start <= 1.0)) throw DomainError("epsilon start must lie in [floor, 1]");
  if (!(epsilon_decay > 0.0 && epsilon_decay <= 1.0)) throw DomainError("epsilon decay must lie in (0, 1]");
  if (target_refresh_updates < 1) throw DomainError("target refresh period must be positive");
  if (replay_capacity < static_cast<std::size_t>(batch_size)) throw DomainError("replay capacity below batch size");
  if (updates_per_episode < 0 || episodes < 0 || eval_every_episodes < 1) throw DomainError("invalid schedule");
  if (!(max_grad_norm >= 0.0)) throw DomainError("max_grad_norm must be >= 0");
  if (!(sigma_fos > 0.0)) throw DomainError("sigma_fos must be positive");
}

double TrainerConfig::epsilon_at(int episode) const {
  return std::max(epsilon_floor, epsilon_start * std::pow(epsilon_decay, static_cast<double>(episode)));
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw DomainError("replay capacity must be positive");
  items_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(Experience e) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(e));
    return;
  }
  items_[head_] = std::move(e);
  head_ = (head_ + 1) % capacity_;
}

const Experience& ReplayBuffer::at(std::size_t i) const {
  if (i >= items_.size()) throw std::out_of_range("replay index");
  return items_[(head_ + i) % items_.size()];
}

std::vector<const Experience*> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  if (n > items_.size()) throw DomainError("sample larger than replay buffer");
  // Floyd's algorithm: n distinct indices, output order fixed by the rng.
  std::vector<const Experience*> out;
  out.reserve(n);
  std::unordered_set<std::size_t> taken;
  taken.reserve(n * 2);
  const std::size_t size = items_.size();
  for (std::size_t j = size - n; j < size; ++j) {
    std::size_t t = static_cast<std::size_t>(rng.below(j + 1));
    if (!taken.insert(t).second) {
      t = j;
      taken.insert(t);
    }
    out.push_back(&items_[t]);
  }
  return out;
}

double shaped_reward(int n_stimuli, double phi_before, double phi_after, double gamma, RewardMode mode) {
  if (n_stimuli < 1) throw DomainError("a location takes at least one stimulus");
  switch (mode) {
    case RewardMode::shaping: return -static_cast<double>(n_stimuli) + gamma * phi_after - phi_before;
    case RewardMode::num_stimuli: return -static_cast<double>(n_stimuli);
    case RewardMode::reconstruction: return phi_after - phi_before;
  }
  throw DomainError("unknown reward mode");
}

double target_value(double reward, double gamma, bool terminal, double q_loc_next, double q_stim_next) {
  if (terminal) return reward;
  return reward + 0.5 * gamma * (q_loc_next + q_stim_next);
}

namespace {

// Branched double-estimator targets for a batch.
std::vector<double> batch_targets(std::span<const Experience* const> batch, const PolicyNetwork& online,
                                  const PolicyNetwork& target, double gamma) {
  std::vector<double> y(batch.size());
  std::vector<const TestState*> next;
  std::vector<std::size_t> where;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i]->terminal) {
      y[i] = batch[i]->reward;
    } else {
      next.push_back(batch[i]->next_state.get());
      where.push_back(i);
    }
  }
  if (next.empty()) return y;

  const auto in = online.encode(next);
  const auto sel = online.forward(in);
  const auto eval = target.forward(in);
  for (std::size_t k = 0; k < next.size(); ++k) {
    const int col = static_cast<int>(k);
    const auto untested = next[k]->untested();
    const Action a = greedy_from_q<float>(std::span<const float>(sel.q_loc.col(col).data(), kNumLocations),
                                          std::span<const float>(sel.q_stim.col(col).data(), kNumStimuli), untested);
    const Experience& e = *batch[where[k]];
    y[where[k]] = target_value(e.reward, gamma, false, eval.q_loc(a.location, col), eval.q_stim(a.stimulus_db, col));
  }
  return y;
}

}  // namespace

double compute_target(const Experience& e, const PolicyNetwork& online, const PolicyNetwork& target, double gamma) {
  const Experience* p = &e;
  return batch_targets(std::span<const Experience* const>(&p, 1), online, target, gamma).front();
}

double batch_loss(std::span<const double> targets, std::span<const double> q_loc_taken,
                  std::span<const double> q_stim_taken, LossForm form) {
  if (targets.empty()) throw DomainError("empty batch");
  if (q_loc_taken.size() != targets.size() || q_stim_taken.size() != targets.size()) {
    throw DomainError("batch length mismatch");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const double dl = targets[i] - q_loc_taken[i];
    const double dv = targets[i] - q_stim_taken[i];
    if (form == LossForm::combined) {
      const double e = 0.5 * (dl + dv);
      sum += e * e;
    } else {
      sum += 0.5 * (dl * dl + dv * dv);
    }
  }
  return sum / static_cast<double>(targets.size());
}

double compute_loss(std::span<const Experience* const> batch, const PolicyNetwork& online, const PolicyNetwork& target,
                    double gamma, LossForm form) {
  if (batch.empty()) throw DomainError("empty batch");
  const auto y = batch_targets(batch, online, target, gamma);
  std::vector<const TestState*> states;
  for (const auto* e : batch) states.push_back(e->state.get());
  const auto out = online.forward(online.encode(states));
  std::vector<double> ql(batch.size()), qv(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ql[i] = out.q_loc(batch[i]->location, static_cast<int>(i));
    qv[i] = out.q_stim(batch[i]->stimulus_db, static_cast<int>(i));
  }
  return batch_loss(y, ql, qv, form);
}

EpisodeResult run_episode(const VisualField& field, const PolicyNetwork& net, double epsilon, Rng& exploration,
                          std::uint64_t patient_seed, const ZestPrior& prior, const TrainerConfig& cfg,
                          const ZestConfig& zest) {
  FosPatient patient(field, patient_seed, cfg.sigma_fos);
  auto state = std::make_shared<TestState>();

  EpisodeResult result;
  result.experiences.reserve(kNumLocations);
  auto& report = result.report;
  report.order.reserve(kNumLocations);

  for (int step = 0; step < kNumLocations; ++step) {
    const double phi_before = state->potential(field);
    Action a;
    if (exploration.uniform() < epsilon) {
      const auto untested = state->untested();
      a.location = untested[static_cast<std::size_t>(exploration.below(untested.size()))];
      a.stimulus_db = exploration.uniform_int(kMinDb, kMaxDb);
    } else {
      a = greedy_action(net, *state);
    }

    auto next = std::make_shared<TestState>(*state);
    const int loc = a.location;
    const ZestOutcome z = run_zest(
        a.stimulus_db, prior.at(loc), [&](int stimulus) { return patient.respond(loc, stimulus); },
        [&](int stimulus, bool seen) { next->record_response(loc, stimulus, seen); }, zest);
    next->mark_tested(loc, z.estimate);

    const double phi_after = next->potential(field);
    const double r = shaped_reward(z.presentations, phi_before, phi_after, cfg.gamma, cfg.reward_mode);
    report.shaped_return += r;
    report.stimuli_per_location[static_cast<std::size_t>(loc)] = z.presentations;
    report.initial_values[static_cast<std::size_t>(loc)] = a.stimulus_db;
    report.order.push_back(loc);

    result.experiences.push_back({state, loc, a.stimulus_db, r, next, next->terminal()});
    state = std::move(next);
  }

  report.total_stimuli = state->total_presentations();
  std::array<int, kNumLocations> values{};
  for (int l = 0; l < kNumLocations; ++l) values[static_cast<std::size_t>(l)] = state->pred(l);
  report.reconstructed = VisualField(values);
  report.mse = mse(field, report.reconstructed);
  return result;
}

std::string TrainLogRecord::to_json() const {
  nlohmann::json j{{"episode", episode}, {"step", step},         {"epsilon", epsilon},
                   {"loss", loss},       {"val_stimuli", val_stimuli}, {"val_mse", val_mse}};
  return j.dump();
}

std::pair<double, double> validate_policy(const PolicyNetwork& net, std::span<const VisualField> fields,
                                          const ZestPrior& prior, const ZestConfig& zest, double sigma_fos,
                                          std::uint64_t seed) {
  if (fields.empty()) throw DomainError("no validation fields");
  auto strategy = std::make_shared<RlPeriStrategy>(std::shared_ptr<const PolicyNetwork>(&net, [](const PolicyNetwork*) {}));
  auto shared_prior = std::make_shared<const ZestPrior>(prior);
  double stimuli = 0.0;
  double err = 0.0;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    FosPatient patient(fields[i], derive_seed(seed, i), sigma_fos);
    const auto r = run_simulated_test(strategy, shared_prior, zest, patient, 0);
    stimuli += r.total_stimuli;
    err += r.mse;
  }
  const double n = static_cast<double>(fields.size());
  return {stimuli / n, err / n};
}

Learner::Learner(const TrainerConfig& cfg, std::uint64_t seed)
    : cfg_(cfg),
      online_(cfg.network),
      target_(cfg.network),
      adam_(online_.parameters().size(), cfg.learning_rate),
      dropout_rng_(derive_seed(seed, 0xd70u)),
      grad_(online_.parameters().size(), 0.0f) {
  online_.initialize(derive_seed(seed, 0x1a17u));
  sync_target();
}

void Learner::sync_target() { target_.set_parameters(online_.parameters()); }

double Learner::update(std::span<const Experience* const> batch) {
  if (batch.empty()) throw DomainError("empty batch");
  const auto y = batch_targets(batch, online_, target_, cfg_.gamma);

  std::vector<const TestState*> states;
  states.reserve(batch.size());
  for (const auto* e : batch) states.push_back(e->state.get());
  PolicyNetwork::Cache cache;
  const auto out = online_.forward(online_.encode(states), cache, &dropout_rng_);

  const int b = static_cast<int>(batch.size());
  PolicyNetwork::Matrix d_loc = PolicyNetwork::Matrix::Zero(kNumLocations, b);
  PolicyNetwork::Matrix d_stim = PolicyNetwork::Matrix::Zero(kNumStimuli, b);
  double loss = 0.0;
  for (int i = 0; i < b; ++i) {
    const auto& e = *batch[static_cast<std::size_t>(i)];
    const double dl = y[static_cast<std::size_t>(i)] - out.q_loc(e.location, i);
    const double dv = y[static_cast<std::size_t>(i)] - out.q_stim(e.stimulus_db, i);
    if (cfg_.loss_form == LossForm::combined) {
      const double err = 0.5 * (dl + dv);
      loss += err * err;
      d_loc(e.location, i) = static_cast<float>(-err / b);
      d_stim(e.stimulus_db, i) = static_cast<float>(-err / b);
    } else {
      loss += 0.5 * (dl * dl + dv * dv);
      d_loc(e.location, i) = static_cast<float>(-dl / b);
      d_stim(e.stimulus_db, i) = static_cast<float>(-dv / b);
    }
  }
  loss /= b;
  if (!std::isfinite(loss)) {
    throw NumericalError("training diverged: non-finite loss at update " + std::to_string(updates_ + 1));
  }

  std::fill(grad_.begin(), grad_.end(), 0.0f);
  online_.backward(cache, d_loc, d_stim, grad_);
  if (cfg_.max_grad_norm > 0.0) {
    double norm2 = 0.0;
    for (float g : grad_) norm2 += static_cast<double>(g) * g;
    const double norm = std::sqrt(norm2);
    if (norm > cfg_.max_grad_norm) {
      const float scale = static_cast<float>(cfg_.max_grad_norm / norm);
      for (float& g : grad_) g *= scale;
    }
  }
  adam_.step<float>(online_.parameters(), grad_);
  ++updates_;
  if (updates_ % cfg_.target_refresh_updates == 0) sync_target();
  return loss;
}

TrainResult train(std::span<const VisualField> train_fields, std::span<const VisualField> val_fields,
                  const ZestPrior& prior, const TrainerConfig& cfg, const ZestConfig& zest, const TrainLogSink& sink) {
  cfg.validate();
  zest.validate();
  if (train_fields.empty() || val_fields.empty()) throw DomainError("training and validation fields are required");

  Learner learner(cfg, cfg.seed);
  ReplayBuffer replay(cfg.replay_capacity);
  Rng exploration(derive_seed(cfg.seed, 0xe4u));
  Rng sampling(derive_seed(cfg.seed, 0x5au));
  Rng order_rng(derive_seed(cfg.seed, 0x0du));
  const std::uint64_t patient_base = derive_seed(cfg.seed, 0xfa7u);
  const std::uint64_t val_seed = derive_seed(cfg.seed, 0x7a1u);

  TrainResult result;
  double loss_sum = 0.0;
  int loss_count = 0;

  auto evaluate = [&](int episode) {
    TrainLogRecord rec;
    rec.episode = episode;
    rec.step = learner.updates();
    rec.epsilon = cfg.epsilon_at(episode);
    rec.loss = loss_count ? loss_sum / loss_count : 0.0;
    std::tie(rec.val_stimuli, rec.val_mse) =
        validate_policy(learner.online(), val_fields, prior, zest, cfg.sigma_fos, val_seed);
    loss_sum = 0.0;
    loss_count = 0;
    result.log.push_back(rec);
    if (sink) sink(rec);
    const bool first = result.log.size() == 1;
    const bool better = rec.val_mse < result.best_record.val_mse ||
                        (rec.val_mse == result.best_record.val_mse && rec.val_stimuli < result.best_record.val_stimuli);
    if (first || better) {
      result.best_record = rec;
      result.best = Checkpoint::from_network(learner.online(), prior);
    }
  };

  evaluate(0);

  std::vector<std::size_t> order(train_fields.size());
  std::size_t cursor = order.size();
  for (int episode = 0; episode < cfg.episodes; ++episode) {
    if (cursor == order.size()) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      shuffle(order.begin(), order.end(), order_rng);
      cursor = 0;
    }
    const std::size_t field_index = order[cursor++];
    auto ep = run_episode(train_fields[field_index], learner.online(), cfg.epsilon_at(episode), exploration,
                          derive_seed(patient_base, static_cast<std::uint64_t>(episode)), prior, cfg, zest);
    for (auto& e : ep.experiences) replay.push(std::move(e));

    if (replay.size() >= static_cast<std::size_t>(cfg.batch_size)) {
      for (int u = 0; u < cfg.updates_per_episode; ++u) {
        const auto batch = replay.sample(static_cast<std::size_t>(cfg.batch_size), sampling);
        loss_sum += learner.update(batch);
        ++loss_count;
      }
    }
    if ((episode + 1) % cfg.eval_every_episodes == 0 || episode + 1 == cfg.episodes) evaluate(episode + 1);
  }
  result.updates = learner.updates();
  result.best.metadata_json = nlohmann::json{{"episode", result.best_record.episode},
                                             {"step", result.best_record.step},
                                             {"val_stimuli", result.best_record.val_stimuli},
                                             {"val_mse", result.best_record.val_mse},
                                             {"reward_mode", to_string(cfg.reward_mode)},
                                             {"sigma_stop", zest.sigma_stop},
                                             {"seed", cfg.seed}}
                                  .dump();
  return result;
}

}  // namespace rlperi
