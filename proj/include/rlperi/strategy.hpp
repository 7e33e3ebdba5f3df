#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rlperi/field.hpp"
#include "rlperi/network.hpp"
#include "rlperi/patient.hpp"
#include "rlperi/rng.hpp"
#include "rlperi/test_state.hpp"
#include "rlperi/zest.hpp"

namespace rlperi {

/// Picks the next location and its initial stimulus. Implementations are
/// immutable; all per-test randomness comes through `rng`.
class Strategy {
 public:
  virtual ~Strategy() = default;
  virtual std::string name() const = 0;
  virtual Action choose(const TestState& state, Rng& rng) const = 0;
};

/// Uniformly random untested location and uniformly random initial value.
class RandomStrategy final : public Strategy {
 public:
  std::string name() const override { return "random"; }
  Action choose(const TestState& state, Rng& rng) const override;
};

/// Locations in index order, initial value = prior mode.
class RasterStrategy final : public Strategy {
 public:
  explicit RasterStrategy(ZestPrior prior) : prior_(std::move(prior)) {}
  std::string name() const override { return "raster"; }
  Action choose(const TestState& state, Rng& rng) const override;

 private:
  ZestPrior prior_;
};

/// Locations in index order, initial value = rounded mean of the estimates
/// of already-tested 8-connected neighbours, prior mode when there are none.
class NeighborStrategy final : public Strategy {
 public:
  explicit NeighborStrategy(ZestPrior prior) : prior_(std::move(prior)) {}
  std::string name() const override { return "neighbor"; }
  Action choose(const TestState& state, Rng& rng) const override;

 private:
  ZestPrior prior_;
};

/// Greedy policy of a trained network.
class RlPeriStrategy final : public Strategy {
 public:
  explicit RlPeriStrategy(std::shared_ptr<const PolicyNetwork> net) : net_(std::move(net)) {}
  std::string name() const override { return "rlperi"; }
  Action choose(const TestState& state, Rng& rng) const override;

 private:
  std::shared_ptr<const PolicyNetwork> net_;
};

/// Outcome of one complete test of 54 locations.
struct EpisodeReport {
  int total_stimuli = 0;
  VisualField reconstructed;
  double mse = 0.0;  // against ground truth, when known
  std::array<int, kNumLocations> stimuli_per_location{};
  std::vector<int> order;  // order[k] = location tested k-th
  std::array<int, kNumLocations> initial_values{};
  double shaped_return = 0.0;  // trainer episodes only
};

/// Mean over the 54 locations of the squared threshold difference.
double mse(const VisualField& truth, const VisualField& recon);

/// One presented stimulus awaiting a response.
struct Proposal {
  int turn = 0;  // 1-based, increases by one per presentation
  int location = 0;
  Cell cell;
  int stimulus_db = 0;
};

struct TranscriptEntry {
  int turn = 0;
  int location = 0;
  int stimulus_db = 0;
  bool seen = false;
};

struct SubmitOutcome {
  bool location_complete = false;
  int location = -1;
  int estimate = -1;
  bool test_complete = false;
};

/// Response-driven perimetry test: the strategy picks (location, initial
/// value), ZEST runs at that location until it stops, and the cycle repeats
/// until all 54 locations carry an estimate. The caller supplies responses
/// one at a time, which lets the same engine serve both simulated patients
/// and live sessions.
class PerimetryTest {
 public:
  PerimetryTest(std::shared_ptr<const Strategy> strategy, std::shared_ptr<const ZestPrior> prior,
                ZestConfig zest, std::uint64_t strategy_seed);

  bool complete() const { return state_.terminal(); }
  /// Throws StateError once the test is complete.
  Proposal current() const;
  SubmitOutcome submit(bool seen);

  const TestState& state() const { return state_; }
  const std::vector<TranscriptEntry>& transcript() const { return transcript_; }
  int total_stimuli() const { return state_.total_presentations(); }

  /// Report of the test so far. Untested locations carry 0 in the
  /// reconstruction; mse is filled when `truth` is given.
  EpisodeReport report(const VisualField* truth = nullptr) const;

 private:
  void begin_location();

  std::shared_ptr<const Strategy> strategy_;
  std::shared_ptr<const ZestPrior> prior_;
  ZestConfig zest_;
  Rng rng_;
  TestState state_;
  std::optional<ZestEstimator> estimator_;
  int location_ = -1;
  std::array<int, kNumLocations> stimuli_per_location_{};
  std::array<int, kNumLocations> initial_values_{};
  std::vector<int> order_;
  std::vector<TranscriptEntry> transcript_;
};

/// Runs a full test against a simulated patient.
EpisodeReport run_simulated_test(std::shared_ptr<const Strategy> strategy, std::shared_ptr<const ZestPrior> prior,
                                 const ZestConfig& zest, FosPatient& patient, std::uint64_t strategy_seed);

/// Replays recorded responses through a fresh test. Throws StateError if
/// the transcript diverges from the proposals the engine makes.
EpisodeReport replay_transcript(std::shared_ptr<const Strategy> strategy, std::shared_ptr<const ZestPrior> prior,
                                const ZestConfig& zest, std::uint64_t strategy_seed,
                                const std::vector<TranscriptEntry>& transcript);

}  // namespace rlperi
