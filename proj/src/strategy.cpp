#include "rlperi/strategy.hpp"

#include <cmath>

#include "rlperi/errors.hpp"

namespace rlperi {

Action RandomStrategy::choose(const TestState& state, Rng& rng) const {
  const auto untested = state.untested();
  if (untested.empty()) throw StateError("no untested locations left");
  Action a;
  a.location = untested[static_cast<std::size_t>(rng.below(untested.size()))];
  a.stimulus_db = rng.uniform_int(kMinDb, kMaxDb);
  return a;
}

Action RasterStrategy::choose(const TestState& state, Rng&) const {
  const auto untested = state.untested();
  if (untested.empty()) throw StateError("no untested locations left");
  return {untested.front(), prior_.mode(untested.front())};
}

Action NeighborStrategy::choose(const TestState& state, Rng&) const {
  const auto untested = state.untested();
  if (untested.empty()) throw StateError("no untested locations left");
  const int loc = untested.front();
  const GridSpec& grid = GridSpec::standard();
  const Cell c = grid.cell(loc);
  int sum = 0;
  int count = 0;
  for (int dr = -1; dr <= 1; ++dr) {
    for (int dc = -1; dc <= 1; ++dc) {
      if (dr == 0 && dc == 0) continue;
      const Cell nb{c.row + dr, c.col + dc};
      if (!grid.valid(nb)) continue;
      const int nl = grid.location_index(nb);
      if (!state.tested(nl)) continue;
      sum += state.pred(nl);
      ++count;
    }
  }
  if (count == 0) return {loc, prior_.mode(loc)};
  const int mean = static_cast<int>(std::lround(static_cast<double>(sum) / count));
  return {loc, mean};
}

Action RlPeriStrategy::choose(const TestState& state, Rng&) const { return greedy_action(*net_, state); }

double mse(const VisualField& truth, const VisualField& recon) {
  double sum = 0.0;
  for (int l = 0; l < kNumLocations; ++l) {
    const double d = truth[l] - recon[l];
    sum += d * d;
  }
  return sum / kNumLocations;
}

PerimetryTest::PerimetryTest(std::shared_ptr<const Strategy> strategy, std::shared_ptr<const ZestPrior> prior,
                             ZestConfig zest, std::uint64_t strategy_seed)
    : strategy_(std::move(strategy)), prior_(std::move(prior)), zest_(zest), rng_(strategy_seed) {
  if (!strategy_ || !prior_) throw DomainError("strategy and prior are required");
  zest_.validate();
  order_.reserve(kNumLocations);
  begin_location();
}

void PerimetryTest::begin_location() {
  const Action a = strategy_->choose(state_, rng_);
  if (state_.tested(a.location)) throw StateError("strategy chose an already tested location");
  if (a.stimulus_db < kMinDb || a.stimulus_db > kMaxDb) throw DomainError("strategy chose a stimulus outside [0, 40]");
  location_ = a.location;
  initial_values_[static_cast<std::size_t>(a.location)] = a.stimulus_db;
  estimator_.emplace(prior_->at(a.location), a.stimulus_db);
}

Proposal PerimetryTest::current() const {
  if (complete()) throw StateError("test is complete");
  Proposal p;
  p.turn = static_cast<int>(transcript_.size()) + 1;
  p.location = location_;
  p.cell = GridSpec::standard().cell(location_);
  p.stimulus_db = estimator_->next_stimulus();
  return p;
}

SubmitOutcome PerimetryTest::submit(bool seen) {
  const Proposal p = current();
  state_.record_response(p.location, p.stimulus_db, seen);
  transcript_.push_back({p.turn, p.location, p.stimulus_db, seen});
  ++stimuli_per_location_[static_cast<std::size_t>(p.location)];

  SubmitOutcome out;
  if (!estimator_->update(seen, p.stimulus_db, zest_)) return out;

  out.location_complete = true;
  out.location = p.location;
  out.estimate = estimator_->estimate();
  state_.mark_tested(p.location, out.estimate);
  order_.push_back(p.location);
  estimator_.reset();
  if (state_.terminal()) {
    out.test_complete = true;
  } else {
    begin_location();
  }
  return out;
}

EpisodeReport PerimetryTest::report(const VisualField* truth) const {
  EpisodeReport r;
  r.total_stimuli = state_.total_presentations();
  std::array<int, kNumLocations> values{};
  for (int l = 0; l < kNumLocations; ++l) values[static_cast<std::size_t>(l)] = state_.tested(l) ? state_.pred(l) : 0;
  r.reconstructed = VisualField(values);
  r.stimuli_per_location = stimuli_per_location_;
  r.order = order_;
  r.initial_values = initial_values_;
  if (truth) r.mse = mse(*truth, r.reconstructed);
  return r;
}

EpisodeReport run_simulated_test(std::shared_ptr<const Strategy> strategy, std::shared_ptr<const ZestPrior> prior,
                                 const ZestConfig& zest, FosPatient& patient, std::uint64_t strategy_seed) {
  PerimetryTest test(std::move(strategy), std::move(prior), zest, strategy_seed);
  while (!test.complete()) {
    const Proposal p = test.current();
    test.submit(patient.respond(p.location, p.stimulus_db));
  }
  return test.report(&patient.field());
}

EpisodeReport replay_transcript(std::shared_ptr<const Strategy> strategy, std::shared_ptr<const ZestPrior> prior,
                                const ZestConfig& zest, std::uint64_t strategy_seed,
                                const std::vector<TranscriptEntry>& transcript) {
  PerimetryTest test(std::move(strategy), std::move(prior), zest, strategy_seed);
  for (const auto& e : transcript) {
    if (test.complete()) throw StateError("transcript continues past the end of the test");
    const Proposal p = test.current();
    if (p.turn != e.turn || p.location != e.location || p.stimulus_db != e.stimulus_db) {
      throw StateError("transcript diverges from replayed proposals at turn " + std::to_string(e.turn));
    }
    test.submit(e.seen);
  }
  return test.report();
}

}  // namespace rlperi
