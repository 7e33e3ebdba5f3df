#include <doctest.h>

#include <numeric>
#include <set>

#include "rlperi/errors.hpp"
#include "rlperi/strategy.hpp"

using namespace rlperi;

namespace {

std::shared_ptr<const ZestPrior> histogram_prior() {
  return std::make_shared<const ZestPrior>(ZestPrior::from_fields(generate_synthetic_fields(300, 1)));
}

std::vector<std::shared_ptr<const Strategy>> all_strategies(const std::shared_ptr<const ZestPrior>& prior) {
  NetworkConfig cfg;
  cfg.lifted_channels = 8;
  cfg.trunk = {16};
  auto net = std::make_shared<PolicyNetwork>(cfg);
  net->initialize(3);
  return {std::make_shared<RandomStrategy>(), std::make_shared<RasterStrategy>(*prior),
          std::make_shared<NeighborStrategy>(*prior), std::make_shared<RlPeriStrategy>(net)};
}

}  // namespace

TEST_CASE("mse examples") {
  const auto a = VisualField::filled(20);
  CHECK(mse(a, a) == 0.0);
  CHECK(mse(a, VisualField::filled(21)) == 1.0);
  auto v = a.values();
  v[7] = 23;
  CHECK(mse(a, VisualField(v)) == doctest::Approx(9.0 / 54.0));
}

TEST_CASE("raster and neighbor follow index order") {
  const auto prior = histogram_prior();
  Rng rng(1);
  TestState s;
  RasterStrategy raster(*prior);
  NeighborStrategy neighbor(*prior);
  for (int l = 0; l < kNumLocations; ++l) {
    const auto a = raster.choose(s, rng);
    CHECK(a.location == l);
    CHECK(a.stimulus_db == prior->mode(l));
    CHECK(neighbor.choose(s, rng).location == l);
    s.mark_tested(l, 10 + l % 20);
  }
  CHECK_THROWS_AS(raster.choose(s, rng), StateError);
}

TEST_CASE("neighbor initial value is the rounded mean of tested 8-neighbours") {
  const auto prior = histogram_prior();
  NeighborStrategy neighbor(*prior);
  const auto& g = GridSpec::standard();
  Rng rng(1);
  TestState s;
  CHECK(neighbor.choose(s, rng).stimulus_db == prior->mode(0));
  // Location 0 is (0,3); its neighbours are (0,4), (1,2), (1,3), (1,4).
  s.mark_tested(g.location_index({0, 4}), 20);
  s.mark_tested(g.location_index({1, 3}), 25);
  // (1,5) is not adjacent to (0,3) and must be ignored.
  s.mark_tested(g.location_index({1, 5}), 0);
  CHECK(neighbor.choose(s, rng).stimulus_db == 23);  // 22.5 rounds half away from zero
  s.mark_tested(g.location_index({1, 2}), 30);
  CHECK(neighbor.choose(s, rng).stimulus_db == 25);
}

TEST_CASE("random strategy covers locations and values uniformly") {
  RandomStrategy random;
  Rng rng(8);
  TestState s;
  for (int l = 0; l < 50; ++l) s.mark_tested(l, 0);
  std::array<int, 4> loc_hits{};
  std::array<int, kNumStimuli> val_hits{};
  for (int i = 0; i < 41000; ++i) {
    const auto a = random.choose(s, rng);
    REQUIRE(a.location >= 50);
    ++loc_hits[static_cast<std::size_t>(a.location - 50)];
    ++val_hits[static_cast<std::size_t>(a.stimulus_db)];
  }
  for (int h : loc_hits) CHECK(std::abs(h - 10250) < 500);
  for (int h : val_hits) CHECK(std::abs(h - 1000) < 150);
}

TEST_CASE("every strategy tests all 54 locations exactly once") {
  const auto prior = histogram_prior();
  const auto fields = generate_synthetic_fields(5, 17);
  for (const auto& strategy : all_strategies(prior)) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      FosPatient patient(fields[i], 100 + i);
      const auto r = run_simulated_test(strategy, prior, ZestConfig{}, patient, 7 + i);
      CHECK(r.order.size() == 54u);
      CHECK(std::set<int>(r.order.begin(), r.order.end()).size() == 54u);
      CHECK(std::accumulate(r.stimuli_per_location.begin(), r.stimuli_per_location.end(), 0) == r.total_stimuli);
      for (int n : r.stimuli_per_location) CHECK(n >= 1);
      CHECK(r.mse >= 0.0);
      CHECK(r.mse == doctest::Approx(mse(fields[i], r.reconstructed)));
    }
  }
}

TEST_CASE("perimetry test drives one response at a time") {
  const auto prior = histogram_prior();
  PerimetryTest test(std::make_shared<RasterStrategy>(*prior), prior, ZestConfig{}, 1);
  const auto first = test.current();
  CHECK(first.turn == 1);
  CHECK(first.location == 0);
  CHECK(first.cell == Cell{0, 3});
  CHECK(first.stimulus_db == prior->mode(0));
  CHECK(test.current().turn == 1);  // reading the proposal does not advance

  int turn = 0;
  int locations_done = 0;
  while (!test.complete()) {
    const auto p = test.current();
    CHECK(p.turn == ++turn);
    const auto out = test.submit(p.stimulus_db <= 24);
    if (out.location_complete) {
      ++locations_done;
      CHECK(out.location == p.location);
      CHECK(test.state().pred(p.location) == out.estimate);
    }
    CHECK(out.test_complete == test.complete());
  }
  CHECK(locations_done == 54);
  CHECK(static_cast<int>(test.transcript().size()) == test.total_stimuli());
  CHECK_THROWS_AS(test.current(), StateError);
  CHECK_THROWS_AS(test.submit(true), StateError);
  // Each estimate matches a standalone ZEST run against the same responder.
  const auto r = test.report(nullptr);
  for (int l = 0; l < kNumLocations; ++l) {
    const auto z = run_zest(prior->mode(l), prior->at(l), [](int x) { return x <= 24; }, {}, ZestConfig{});
    CHECK(r.reconstructed[l] == z.estimate);
    CHECK(r.stimuli_per_location[static_cast<std::size_t>(l)] == z.presentations);
  }
}

TEST_CASE("partial report leaves untested locations at zero") {
  const auto prior = histogram_prior();
  PerimetryTest test(std::make_shared<RasterStrategy>(*prior), prior, ZestConfig{}, 1);
  while (!test.state().tested(0)) test.submit(true);
  const auto r = test.report();
  CHECK(r.reconstructed[0] == test.state().pred(0));
  for (int l = 1; l < kNumLocations; ++l) CHECK(r.reconstructed[l] == 0);
  CHECK(r.order == std::vector<int>{0});
}

TEST_CASE("replaying a transcript reproduces the reconstruction") {
  const auto prior = histogram_prior();
  const auto field = generate_synthetic_fields(1, 3)[0];
  for (const auto& strategy : all_strategies(prior)) {
    PerimetryTest live(strategy, prior, ZestConfig{}, 42);
    FosPatient patient(field, 9);
    while (!live.complete()) {
      const auto p = live.current();
      live.submit(patient.respond(p.location, p.stimulus_db));
    }
    const auto replayed = replay_transcript(strategy, prior, ZestConfig{}, 42, live.transcript());
    CHECK(replayed.reconstructed == live.report().reconstructed);
    CHECK(replayed.total_stimuli == live.total_stimuli());

    auto tampered = live.transcript();
    tampered[3].stimulus_db = (tampered[3].stimulus_db + 1) % 41;
    CHECK_THROWS_AS(replay_transcript(strategy, prior, ZestConfig{}, 42, tampered), StateError);
    tampered = live.transcript();
    tampered.push_back({static_cast<int>(tampered.size()) + 1, 0, 0, true});
    CHECK_THROWS_AS(replay_transcript(strategy, prior, ZestConfig{}, 42, tampered), StateError);
  }
}

TEST_CASE("simulated tests are reproducible from their seeds") {
  const auto prior = histogram_prior();
  const auto field = generate_synthetic_fields(1, 5)[0];
  auto strategy = std::make_shared<RandomStrategy>();
  FosPatient p1(field, 3), p2(field, 3);
  const auto a = run_simulated_test(strategy, prior, ZestConfig{}, p1, 11);
  const auto b = run_simulated_test(strategy, prior, ZestConfig{}, p2, 11);
  CHECK(a.order == b.order);
  CHECK(a.reconstructed == b.reconstructed);
  CHECK(a.initial_values == b.initial_values);
}
