#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace rlperi {

inline constexpr int kGridRows = 8;
inline constexpr int kGridCols = 9;
inline constexpr int kGridCells = kGridRows * kGridCols;
inline constexpr int kNumLocations = 54;

inline constexpr int kMinDb = 0;
inline constexpr int kMaxDb = 40;
inline constexpr int kNumStimuli = kMaxDb - kMinDb + 1;

struct Cell {
  int row = 0;
  int col = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

/// Masked 8x9 layout of the 24-2 test pattern. Column 0 holds the nasal
/// step, present only on the two rows adjacent to the horizontal meridian.
///
///     row 0: . . . X X X X . .
///     row 1: . . X X X X X X .
///     row 2: . X X X X X X X X
///     row 3: X X X X X X X X X
///     row 4: X X X X X X X X X
///     row 5: . X X X X X X X X
///     row 6: . . X X X X X X .
///     row 7: . . . X X X X . .
///
/// Locations are indexed row-major over the valid cells.
class GridSpec {
 public:
  GridSpec();

  static const GridSpec& standard();

  int rows() const { return kGridRows; }
  int cols() const { return kGridCols; }
  int num_locations() const { return kNumLocations; }

  bool valid(int row, int col) const;
  bool valid(Cell c) const { return valid(c.row, c.col); }

  /// Location index of a valid cell. Throws DomainError for masked cells.
  int location_index(Cell c) const;
  Cell cell(int location) const;

  /// Flat row-major offset (row * cols + col) of a location.
  int flat(int location) const { return flat_[static_cast<std::size_t>(checked(location))]; }

  /// -1 for masked cells.
  int location_at_flat(int flat_offset) const { return index_[static_cast<std::size_t>(flat_offset)]; }

 private:
  int checked(int location) const;

  std::array<int, kGridCells> index_{};
  std::array<int, kNumLocations> flat_{};
};

/// Mask table, row-major, 1 = valid location.
extern const std::array<std::uint8_t, kGridCells> kMask24_2;

struct StimulusScale {
  double l_max = 10000.0;  // apostilb
  static constexpr int min_db = kMinDb;
  static constexpr int max_db = kMaxDb;
  static constexpr int count = kNumStimuli;
};

/// 10 log10(l_max / l).
double db_from_luminance(double l_max, double luminance);
/// l_max * 10^(-db / 10).
double luminance_from_db(double l_max, double db);

/// Ground-truth or reconstructed sensitivity thresholds, one integer dB
/// value per location.
class VisualField {
 public:
  VisualField() = default;
  explicit VisualField(std::array<int, kNumLocations> values);

  static VisualField filled(int db);

  int operator[](int location) const { return values_[static_cast<std::size_t>(location)]; }
  int at(int location) const;
  const std::array<int, kNumLocations>& values() const { return values_; }

  friend bool operator==(const VisualField&, const VisualField&) = default;

 private:
  std::array<int, kNumLocations> values_{};
};

/// One field per line, 54 comma-separated integers ordered by location index.
std::vector<VisualField> parse_fields(std::istream& in);
std::vector<VisualField> load_fields(const std::filesystem::path& path);
void write_fields(std::ostream& out, std::span<const VisualField> fields);
void save_fields(const std::filesystem::path& path, std::span<const VisualField> fields);

struct DatasetSplit {
  std::vector<VisualField> train;
  std::vector<VisualField> test;
  std::vector<VisualField> validation;
};

/// Seeded shuffle, then train = floor(0.6 n), test = floor((n - train) / 2),
/// rest validation.
DatasetSplit split_dataset(std::span<const VisualField> fields, std::uint64_t seed);

struct SyntheticConfig {
  double center_db = 32.0;
  double falloff_db_per_step = 0.5;
  double jitter_sigma_db = 1.5;
  double p_defect = 0.6;
  int min_cluster = 1;
  int max_cluster = 8;
  double min_depth_db = 5.0;
  double max_depth_db = 30.0;

  void validate() const;
};

/// Healthy hill of vision with radial falloff and per-location jitter, plus
/// (with probability p_defect) one contiguous scotoma depressed by a uniform
/// depth. Values are rounded and clamped to [0, 40].
std::vector<VisualField> generate_synthetic_fields(int n, std::uint64_t seed,
                                                   const SyntheticConfig& config = {});

}  // namespace rlperi
