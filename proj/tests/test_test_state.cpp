#include <doctest.h>

#include "rlperi/errors.hpp"
#include "rlperi/rng.hpp"
#include "rlperi/test_state.hpp"

using namespace rlperi;

namespace {

long long valid_sum(const TestState::Counts& counts) {
  const auto& g = GridSpec::standard();
  long long s = 0;
  for (int v = 0; v < kNumStimuli; ++v)
    for (int r = 0; r < kGridRows; ++r)
      for (int c = 0; c < kGridCols; ++c)
        if (g.valid(r, c)) s += counts[TestState::offset(v, r, c)];
  return s;
}

bool masked_intact(const TestState& s) {
  const auto& g = GridSpec::standard();
  for (int v = 0; v < kNumStimuli; ++v)
    for (int r = 0; r < kGridRows; ++r)
      for (int c = 0; c < kGridCols; ++c)
        if (!g.valid(r, c) && (s.seen(v, r, c) != kMaskedValue || s.not_seen(v, r, c) != kMaskedValue)) return false;
  return true;
}

}  // namespace

TEST_CASE("fresh state") {
  TestState s;
  CHECK(s.seen_counts().size() == 41u * 72u);
  CHECK(valid_sum(s.seen_counts()) == 0);
  CHECK(valid_sum(s.not_seen_counts()) == 0);
  CHECK(masked_intact(s));
  CHECK(s.seen(17, 0, 0) == -2);
  CHECK(s.not_seen(40, 7, 8) == -2);
  CHECK(s.tested_count() == 0);
  CHECK(s.untested().size() == 54u);
  CHECK(s.potential(VisualField::filled(30)) == 0.0);
  for (int l = 0; l < kNumLocations; ++l) CHECK(s.pred(l) == kUntested);
}

TEST_CASE("record_response increments exactly one count") {
  TestState s;
  const int loc = GridSpec::standard().location_index({3, 4});
  s.record_response(loc, 25, true);
  CHECK(s.seen(25, 3, 4) == 1);
  s.record_response(loc, 25, false);
  s.record_response(loc, 25, false);
  CHECK(s.not_seen(25, 3, 4) == 2);
  CHECK(valid_sum(s.seen_counts()) == 1);
  CHECK(valid_sum(s.not_seen_counts()) == 2);
  CHECK(s.total_presentations() == 3);
  CHECK_THROWS_AS(s.record_response(54, 10, true), DomainError);
  CHECK_THROWS_AS(s.record_response(0, 41, true), DomainError);
  CHECK_THROWS_AS(s.record_response(0, -1, true), DomainError);
}

TEST_CASE("mark_tested and potential") {
  TestState s;
  auto truth = VisualField::filled(30);
  s.mark_tested(5, 28);
  CHECK(s.tested(5));
  CHECK(s.pred(5) == 28);
  CHECK(s.tested_count() == 1);
  CHECK(s.potential(truth) == -4.0);
  s.mark_tested(6, 31);
  CHECK(s.potential(truth) == doctest::Approx(-2.5));
  CHECK_THROWS_AS(s.mark_tested(5, 30), StateError);
  CHECK_THROWS_AS(s.mark_tested(7, 41), DomainError);
}

TEST_CASE("all 54 marked is terminal; perfect predictions give zero potential") {
  TestState s;
  const auto truth = generate_synthetic_fields(1, 3)[0];
  for (int l = 0; l < kNumLocations; ++l) {
    CHECK_FALSE(s.terminal());
    s.mark_tested(l, truth[l]);
  }
  CHECK(s.terminal());
  CHECK(s.untested().empty());
  CHECK(s.potential(truth) == 0.0);
}

TEST_CASE("pred matrix layout") {
  TestState s;
  const auto& g = GridSpec::standard();
  s.mark_tested(g.location_index({3, 0}), 12);
  const auto m = s.pred_matrix();
  CHECK(m[3 * 9 + 0] == 12);
  CHECK(m[0] == kMaskedValue);
  CHECK(m[4 * 9 + 0] == kUntested);
}

TEST_CASE("random interleavings conserve counts and leave the mask alone") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    TestState s;
    const VisualField truth = generate_synthetic_fields(1, static_cast<std::uint64_t>(trial))[0];
    int presented = 0;
    std::vector<int> order(kNumLocations);
    for (int i = 0; i < kNumLocations; ++i) order[static_cast<std::size_t>(i)] = i;
    shuffle(order.begin(), order.end(), rng);
    std::size_t next = 0;
    while (next < order.size()) {
      if (rng.bernoulli(0.3)) {
        const int l = order[next++];
        s.mark_tested(l, static_cast<int>(rng.below(kNumStimuli)));
      } else {
        const int l = static_cast<int>(rng.below(kNumLocations));
        s.record_response(l, static_cast<int>(rng.below(kNumStimuli)), rng.bernoulli(0.5));
        ++presented;
      }
      for (int l = 0; l < kNumLocations; ++l) CHECK(s.tested(l) == (s.pred(l) != kUntested));
      CHECK(s.potential(truth) <= 0.0);
    }
    CHECK(valid_sum(s.seen_counts()) + valid_sum(s.not_seen_counts()) == presented);
    CHECK(s.total_presentations() == presented);
    CHECK(masked_intact(s));
  }
}
