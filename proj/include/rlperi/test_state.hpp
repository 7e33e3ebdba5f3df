#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "rlperi/field.hpp"

namespace rlperi {

/// Value written to every channel of a masked grid cell.
inline constexpr int kMaskedValue = -2;
/// pred entry of a location that has not been tested yet.
inline constexpr int kUntested = -1;

/// MDP state of a perimetry test: per-(stimulus, cell) counts of seen and
/// not-seen responses, plus the threshold estimate of every finished
/// location. Both count tensors are 41 x 8 x 9, stimulus-major.
class TestState {
 public:
  using Counts = std::vector<std::int16_t>;

  TestState();

  void record_response(int location, int stimulus_db, bool seen);
  void mark_tested(int location, int estimate_db);

  /// -(1/k) sum over the k tested locations of (pred - truth)^2; 0 if k = 0.
  double potential(const VisualField& truth) const;

  int seen(int stimulus_db, int row, int col) const { return seen_[offset(stimulus_db, row, col)]; }
  int not_seen(int stimulus_db, int row, int col) const { return not_seen_[offset(stimulus_db, row, col)]; }
  const Counts& seen_counts() const { return seen_; }
  const Counts& not_seen_counts() const { return not_seen_; }

  bool tested(int location) const { return tested_[checked(location)]; }
  int pred(int location) const { return pred_[checked(location)]; }
  int tested_count() const { return tested_count_; }
  bool terminal() const { return tested_count_ == kNumLocations; }
  std::vector<int> untested() const;
  int total_presentations() const { return total_presentations_; }

  /// 8 x 9 row-major matrix: -2 masked, -1 untested, estimate otherwise.
  std::array<int, kGridCells> pred_matrix() const;

  static constexpr std::size_t offset(int stimulus_db, int row, int col) {
    return static_cast<std::size_t>(stimulus_db * kGridCells + row * kGridCols + col);
  }

  friend bool operator==(const TestState&, const TestState&) = default;

 private:
  static std::size_t checked(int location);

  Counts seen_;
  Counts not_seen_;
  std::array<bool, kNumLocations> tested_{};
  std::array<int, kNumLocations> pred_{};
  int tested_count_ = 0;
  int total_presentations_ = 0;
};

}  // namespace rlperi
