#include <doctest.h>

#include <json.hpp>
#include <set>

#include "chain_mdp.hpp"
#include "rlperi/errors.hpp"
#include "rlperi/trainer.hpp"

using namespace rlperi;

namespace {

TrainerConfig tiny_config() {
  TrainerConfig cfg;
  cfg.network.lifted_channels = 8;
  cfg.network.trunk = {16};
  cfg.batch_size = 32;
  cfg.replay_capacity = 1000;
  cfg.learning_rate = 1e-3;
  return cfg;
}

Experience experience_to(std::shared_ptr<const TestState> next, double reward) {
  Experience e;
  e.state = std::make_shared<TestState>();
  e.next_state = std::move(next);
  e.reward = reward;
  e.terminal = e.next_state->terminal();
  return e;
}

}  // namespace

TEST_CASE("shaped reward") {
  CHECK(shaped_reward(5, -2.0, -1.5, 1.0, RewardMode::shaping) == doctest::Approx(-4.5));
  CHECK(shaped_reward(5, -2.0, -1.5, 1.0, RewardMode::num_stimuli) == -5.0);
  CHECK(shaped_reward(5, -2.0, -1.5, 1.0, RewardMode::reconstruction) == doctest::Approx(0.5));
  CHECK(shaped_reward(7, 0.0, 0.0, 0.99, RewardMode::shaping) == shaped_reward(7, 0.0, 0.0, 0.99, RewardMode::num_stimuli));
  CHECK_THROWS_AS(shaped_reward(0, 0.0, 0.0, 1.0, RewardMode::shaping), DomainError);
  CHECK(reward_mode_from_string("reconstruction") == RewardMode::reconstruction);
  CHECK_THROWS_AS(reward_mode_from_string("bonus"), DomainError);
}

TEST_CASE("target value and loss examples") {
  CHECK(target_value(-3.0, 0.99, true, 100.0, 100.0) == -3.0);
  CHECK(target_value(-3.0, 0.99, false, 2.0, 4.0) == doctest::Approx(-0.03).epsilon(1e-12));
  CHECK(target_value(-3.0, 0.0, false, 2.0, 4.0) == -3.0);

  const std::vector<double> y = {1.0, 2.0};
  CHECK(batch_loss(y, y, y) == 0.0);
  const std::vector<double> t1 = {0.0}, ql = {-2.0}, qv = {2.0};
  CHECK(batch_loss(t1, ql, qv) == 0.0);
  CHECK(batch_loss(t1, ql, qv, LossForm::per_branch) == 4.0);
  const std::vector<double> q2 = {-2.0};
  CHECK(batch_loss(t1, q2, q2) == 4.0);
  CHECK_THROWS_AS(batch_loss({}, {}, {}), DomainError);
}

TEST_CASE("compute_target selects with the online network and evaluates with the target network") {
  auto cfg = tiny_config();
  PolicyNetwork online(cfg.network), target(cfg.network);
  online.initialize(1);
  target.initialize(2);

  Rng rng(3);
  auto next = std::make_shared<TestState>();
  for (int i = 0; i < 60; ++i) next->record_response(static_cast<int>(rng.below(54)), static_cast<int>(rng.below(41)), rng.bernoulli(0.5));
  for (int l = 0; l < 20; ++l) next->mark_tested(l, 25);
  const auto e = experience_to(next, -3.0);

  const auto sel = online.forward(online.encode(*next));
  const auto ev = target.forward(target.encode(*next));
  int best_l = -1;
  for (int l = 20; l < kNumLocations; ++l)
    if (best_l < 0 || sel.q_loc(l, 0) > sel.q_loc(best_l, 0)) best_l = l;
  int best_v = 0;
  for (int v = 1; v < kNumStimuli; ++v)
    if (sel.q_stim(v, 0) > sel.q_stim(best_v, 0)) best_v = v;
  const double expected = -3.0 + 0.99 / 2 * (double(ev.q_loc(best_l, 0)) + double(ev.q_stim(best_v, 0)));
  CHECK(compute_target(e, online, target, 0.99) == doctest::Approx(expected).epsilon(1e-6));

  // Swapping the roles changes the answer, so the two networks are not
  // interchangeable.
  CHECK(compute_target(e, target, online, 0.99) != doctest::Approx(expected).epsilon(1e-6));

  CHECK(compute_target(e, online, online, 0.0) == -3.0);

  auto done = std::make_shared<TestState>();
  for (int l = 0; l < kNumLocations; ++l) done->mark_tested(l, 20);
  CHECK(compute_target(experience_to(done, -7.0), online, target, 0.99) == -7.0);
}

TEST_CASE("compute_target ignores Q of tested locations") {
  auto cfg = tiny_config();
  PolicyNetwork online(cfg.network), target(cfg.network);
  online.initialize(5);
  target.initialize(6);
  auto next = std::make_shared<TestState>();
  for (int l = 0; l < kNumLocations; ++l)
    if (l != 31) next->mark_tested(l, 20);
  const auto ev = target.forward(target.encode(*next));
  int best_v = 0;
  const auto sel = online.forward(online.encode(*next));
  for (int v = 1; v < kNumStimuli; ++v)
    if (sel.q_stim(v, 0) > sel.q_stim(best_v, 0)) best_v = v;
  const double expected = 1.0 + 0.5 * (double(ev.q_loc(31, 0)) + double(ev.q_stim(best_v, 0)));
  CHECK(compute_target(experience_to(next, 1.0), online, target, 1.0) == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("replay buffer is a bounded FIFO with distinct samples") {
  ReplayBuffer buf(3);
  for (int i = 0; i < 5; ++i) {
    Experience e;
    e.reward = i;
    buf.push(e);
    CHECK(buf.size() <= 3);
  }
  CHECK(buf.size() == 3);
  CHECK(buf.at(0).reward == 2.0);
  CHECK(buf.at(2).reward == 4.0);
  CHECK_THROWS(buf.at(3));
  Rng rng(1);
  for (int k = 0; k < 50; ++k) {
    const auto s = buf.sample(3, rng);
    std::set<const Experience*> distinct(s.begin(), s.end());
    CHECK(distinct.size() == 3);
  }
  CHECK_THROWS_AS(buf.sample(4, rng), DomainError);
  CHECK_THROWS_AS(ReplayBuffer(0), DomainError);
}

TEST_CASE("replay sampling is roughly uniform") {
  ReplayBuffer buf(10);
  for (int i = 0; i < 10; ++i) {
    Experience e;
    e.reward = i;
    buf.push(e);
  }
  Rng rng(2);
  std::array<int, 10> hits{};
  for (int k = 0; k < 20000; ++k)
    for (const auto* e : buf.sample(3, rng)) ++hits[static_cast<std::size_t>(e->reward)];
  // Each item appears in 3/10 of batches: 6000 expected, sd about 65.
  for (int h : hits) {
    CHECK(h > 5700);
    CHECK(h < 6300);
  }
}

TEST_CASE("epsilon schedule") {
  TrainerConfig cfg;
  CHECK(cfg.epsilon_at(0) == 1.0);
  double prev = 2.0;
  for (int e = 0; e < 20000; e += 7) {
    const double eps = cfg.epsilon_at(e);
    CHECK(eps <= prev);
    CHECK(eps >= 0.01);
    prev = eps;
  }
  CHECK(cfg.epsilon_at(100000) == 0.01);
  cfg.epsilon_floor = 0.001;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  cfg = TrainerConfig{};
  cfg.gamma = 0.0;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
}

TEST_CASE("an episode tests every location once and is reproducible") {
  auto cfg = tiny_config();
  PolicyNetwork net(cfg.network);
  net.initialize(1);
  const auto field = generate_synthetic_fields(1, 8)[0];
  const auto prior = ZestPrior::from_fields(generate_synthetic_fields(200, 1));
  ZestConfig zest;
  for (double eps : {1.0, 0.3, 0.0}) {
    Rng a(5), b(5);
    const auto r1 = run_episode(field, net, eps, a, 77, prior, cfg, zest);
    const auto r2 = run_episode(field, net, eps, b, 77, prior, cfg, zest);
    REQUIRE(r1.experiences.size() == 54u);
    std::set<int> locs;
    int presented = 0;
    for (std::size_t i = 0; i < r1.experiences.size(); ++i) {
      const auto& e = r1.experiences[i];
      CHECK_FALSE(e.state->tested(e.location));
      CHECK(e.next_state->tested(e.location));
      CHECK(e.terminal == (i + 1 == 54));
      locs.insert(e.location);
      presented += e.next_state->total_presentations() - e.state->total_presentations();
      CHECK(e.location == r2.experiences[i].location);
      CHECK(e.stimulus_db == r2.experiences[i].stimulus_db);
      CHECK(e.reward == r2.experiences[i].reward);
    }
    CHECK(locs.size() == 54u);
    CHECK(presented == r1.report.total_stimuli);
    CHECK(r1.report.reconstructed == r2.report.reconstructed);
    CHECK(r1.report.mse == doctest::Approx(mse(field, r1.report.reconstructed)));
  }
}

TEST_CASE("shaping telescopes with gamma = 1") {
  auto cfg = tiny_config();
  cfg.gamma = 1.0;
  PolicyNetwork net(cfg.network);
  net.initialize(2);
  const auto fields = generate_synthetic_fields(10, 4);
  const auto prior = ZestPrior::from_fields(generate_synthetic_fields(200, 1));
  ZestConfig zest;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    auto shaped = cfg;
    auto plain = cfg;
    shaped.reward_mode = RewardMode::shaping;
    plain.reward_mode = RewardMode::num_stimuli;
    Rng a(i), b(i);
    const auto rs = run_episode(fields[i], net, 0.5, a, 100 + i, prior, shaped, zest);
    const auto rp = run_episode(fields[i], net, 0.5, b, 100 + i, prior, plain, zest);
    const double phi_terminal = rs.experiences.back().next_state->potential(fields[i]);
    CHECK(phi_terminal == doctest::Approx(-rs.report.mse));
    CHECK(std::abs(rs.report.shaped_return - (rp.report.shaped_return + phi_terminal)) < 1e-9);
    CHECK(rp.report.shaped_return == -rp.report.total_stimuli);
  }
}

TEST_CASE("potential shaping keeps the tabular greedy policy") {
  const auto best = chain::optimal_policy();
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto plain = chain::q_learning(false, seed);
    const auto shaped = chain::q_learning(true, seed);
    CHECK(plain == shaped);
    CHECK(plain == best);
  }
}

TEST_CASE("learner refreshes the target network on schedule and fits a fixed batch") {
  auto cfg = tiny_config();
  cfg.target_refresh_updates = 5;
  cfg.network.dropout = 0.0;
  Learner learner(cfg, 3);
  std::vector<float> init(learner.online().parameters().begin(), learner.online().parameters().end());
  CHECK(std::equal(init.begin(), init.end(), learner.target().parameters().begin()));

  PolicyNetwork behaviour(cfg.network);
  behaviour.initialize(9);
  const auto prior = ZestPrior::from_fields(generate_synthetic_fields(200, 1));
  Rng rng(4);
  auto ep = run_episode(generate_synthetic_fields(1, 2)[0], behaviour, 1.0, rng, 1, prior, cfg, ZestConfig{});
  // Terminal transitions only, so targets do not move between updates.
  std::vector<const Experience*> batch;
  for (auto& e : ep.experiences) {
    e.terminal = true;
    batch.push_back(&e);
  }
  const double first = learner.update(batch);
  for (int i = 1; i < 4; ++i) learner.update(batch);
  CHECK(std::equal(init.begin(), init.end(), learner.target().parameters().begin()));
  learner.update(batch);
  CHECK(learner.updates() == 5);
  CHECK(std::equal(learner.target().parameters().begin(), learner.target().parameters().end(),
                   learner.online().parameters().begin()));
  double last = first;
  for (int i = 0; i < 300; ++i) last = learner.update(batch);
  CHECK(last < 0.1 * first);
}

TEST_CASE("zero episodes returns the initial parameters") {
  auto cfg = tiny_config();
  cfg.episodes = 0;
  const auto fields = generate_synthetic_fields(10, 3);
  const auto prior = ZestPrior::from_fields(fields);
  const auto result = train(std::span(fields).first(8), std::span(fields).last(2), prior, cfg, ZestConfig{});
  Learner fresh(cfg, cfg.seed);
  CHECK(std::equal(result.best.parameters.begin(), result.best.parameters.end(), fresh.online().parameters().begin()));
  CHECK(result.updates == 0);
  CHECK(result.log.size() == 1u);
}

TEST_CASE("training on one field with a near-deterministic patient reduces stimuli") {
  auto cfg = tiny_config();
  cfg.network.trunk = {32, 16};
  cfg.sigma_fos = 1e-3;
  cfg.episodes = 150;
  cfg.eval_every_episodes = 150;
  cfg.epsilon_decay = 0.97;
  cfg.updates_per_episode = 8;
  cfg.target_refresh_updates = 50;
  cfg.seed = 1;
  const auto field = generate_synthetic_fields(1, 21);
  const auto prior = ZestPrior::from_fields(generate_synthetic_fields(500, 1));
  std::vector<TrainLogRecord> seen;
  const auto result = train(field, field, prior, cfg, ZestConfig{}, [&](const TrainLogRecord& r) { seen.push_back(r); });
  REQUIRE(result.log.size() == 2u);
  CHECK(seen.size() == 2u);
  MESSAGE("stimuli " << result.log.front().val_stimuli << " -> " << result.log.back().val_stimuli);
  CHECK(result.log.back().val_stimuli < result.log.front().val_stimuli);
  for (const auto& r : result.log) CHECK(result.best_record.val_mse <= r.val_mse);
  CHECK(result.updates > 0);
  const auto meta = nlohmann::json::parse(result.best.metadata_json);
  CHECK(meta["reward_mode"] == "shaping");
}

TEST_CASE("all reward and state modes train") {
  const auto fields = generate_synthetic_fields(12, 5);
  const auto prior = ZestPrior::from_fields(fields);
  for (auto mode : {RewardMode::shaping, RewardMode::num_stimuli, RewardMode::reconstruction}) {
    for (auto state : {StateMode::counts3d, StateMode::pred2d}) {
      auto cfg = tiny_config();
      cfg.reward_mode = mode;
      cfg.network.state_mode = state;
      cfg.episodes = 3;
      cfg.updates_per_episode = 2;
      const auto r = train(std::span(fields).first(10), std::span(fields).last(2), prior, cfg, ZestConfig{});
      CHECK(r.updates == 6);
      CHECK(r.best.network.state_mode == state);
    }
  }
}

TEST_CASE("train validates its inputs") {
  auto cfg = tiny_config();
  const auto prior = ZestPrior::uniform();
  std::vector<VisualField> none;
  const auto fields = generate_synthetic_fields(2, 1);
  CHECK_THROWS_AS(train(none, fields, prior, cfg, ZestConfig{}), DomainError);
  CHECK_THROWS_AS(train(fields, none, prior, cfg, ZestConfig{}), DomainError);
}

TEST_CASE("training is bit-reproducible regardless of heap layout") {
  auto cfg = tiny_config();
  cfg.episodes = 12;
  cfg.eval_every_episodes = 12;
  cfg.updates_per_episode = 4;
  const auto fields = generate_synthetic_fields(12, 9);
  const auto prior = ZestPrior::from_fields(fields);
  const auto run = [&] {
    return train(std::span(fields).first(10), std::span(fields).last(2), prior, cfg, ZestConfig{}).log.back();
  };
  const auto base = run();
  // Holding blocks of different sizes shifts where later buffers land, and
  // with them the alignment seen by vectorised reductions.
  for (std::size_t pad : {8u, 16u, 24u, 40u, 72u, 136u}) {
    std::vector<char> hold(pad);
    const auto again = run();
    CHECK(again.loss == base.loss);
    CHECK(again.val_stimuli == base.val_stimuli);
    CHECK(again.val_mse == base.val_mse);
  }
}
