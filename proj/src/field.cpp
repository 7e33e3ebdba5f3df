#include "rlperi/field.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rlperi/errors.hpp"
#include "rlperi/rng.hpp"

namespace rlperi {

// clang-format off
const std::array<std::uint8_t, kGridCells> kMask24_2 = {
    0, 0, 0, 1, 1, 1, 1, 0, 0,
    0, 0, 1, 1, 1, 1, 1, 1, 0,
    0, 1, 1, 1, 1, 1, 1, 1, 1,
    1, 1, 1, 1, 1, 1, 1, 1, 1,
    1, 1, 1, 1, 1, 1, 1, 1, 1,
    0, 1, 1, 1, 1, 1, 1, 1, 1,
    0, 0, 1, 1, 1, 1, 1, 1, 0,
    0, 0, 0, 1, 1, 1, 1, 0, 0,
};
// clang-format on

GridSpec::GridSpec() {
  int next = 0;
  for (int f = 0; f < kGridCells; ++f) {
    if (kMask24_2[static_cast<std::size_t>(f)]) {
      index_[static_cast<std::size_t>(f)] = next;
      flat_[static_cast<std::size_t>(next)] = f;
      ++next;
    } else {
      index_[static_cast<std::size_t>(f)] = -1;
    }
  }
  if (next != kNumLocations) throw std::logic_error("24-2 mask must hold 54 locations");
}

const GridSpec& GridSpec::standard() {
  static const GridSpec grid;
  return grid;
}

bool GridSpec::valid(int row, int col) const {
  if (row < 0 || row >= kGridRows || col < 0 || col >= kGridCols) return false;
  return index_[static_cast<std::size_t>(row * kGridCols + col)] >= 0;
}

int GridSpec::location_index(Cell c) const {
  if (!valid(c)) {
    throw DomainError("cell (" + std::to_string(c.row) + "," + std::to_string(c.col) +
                      ") is not a 24-2 location");
  }
  return index_[static_cast<std::size_t>(c.row * kGridCols + c.col)];
}

Cell GridSpec::cell(int location) const {
  const int f = flat(location);
  return {f / kGridCols, f % kGridCols};
}

int GridSpec::checked(int location) const {
  if (location < 0 || location >= kNumLocations) {
    throw DomainError("location index " + std::to_string(location) + " out of range");
  }
  return location;
}

double db_from_luminance(double l_max, double luminance) {
  if (!(l_max > 0.0) || !(luminance > 0.0)) throw DomainError("luminance must be positive");
  if (luminance > l_max) throw DomainError("luminance exceeds l_max");
  return 10.0 * std::log10(l_max / luminance);
}

double luminance_from_db(double l_max, double db) {
  if (!(l_max > 0.0)) throw DomainError("l_max must be positive");
  if (!(db >= 0.0)) throw DomainError("dB must be non-negative");
  return l_max * std::pow(10.0, -db / 10.0);
}

VisualField::VisualField(std::array<int, kNumLocations> values) : values_(values) {
  for (int v : values_) {
    if (v < kMinDb || v > kMaxDb) {
      throw DomainError("threshold " + std::to_string(v) + " outside [0, 40] dB");
    }
  }
}

VisualField VisualField::filled(int db) {
  std::array<int, kNumLocations> v{};
  v.fill(db);
  return VisualField(v);
}

int VisualField::at(int location) const {
  if (location < 0 || location >= kNumLocations) {
    throw DomainError("location index " + std::to_string(location) + " out of range");
  }
  return values_[static_cast<std::size_t>(location)];
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

std::vector<VisualField> parse_fields(std::istream& in) {
  std::vector<VisualField> fields;
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    const std::string_view body = trim(line);
    if (body.empty()) continue;

    std::array<int, kNumLocations> values{};
    int col = 0;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = body.find(',', pos);
      const std::string_view token =
          trim(body.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
      ++col;
      const auto where = "row " + std::to_string(row) + ", column " + std::to_string(col);
      if (col > kNumLocations) {
        throw ParseError(where + ": expected 54 columns");
      }
      int value = 0;
      const auto [end, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
      if (token.empty() || ec != std::errc{} || end != token.data() + token.size()) {
        throw ParseError(where + ": not an integer: '" + std::string(token) + "'");
      }
      if (value < kMinDb || value > kMaxDb) {
        throw ParseError(where + ": value " + std::to_string(value) + " outside [0, 40]");
      }
      values[static_cast<std::size_t>(col - 1)] = value;
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (col != kNumLocations) {
      throw ParseError("row " + std::to_string(row) + ": expected 54 columns, found " +
                       std::to_string(col));
    }
    fields.emplace_back(values);
  }
  return fields;
}

std::vector<VisualField> load_fields(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open field file " + path.string());
  return parse_fields(in);
}

void write_fields(std::ostream& out, std::span<const VisualField> fields) {
  for (const auto& f : fields) {
    for (int l = 0; l < kNumLocations; ++l) {
      if (l) out << ',';
      out << f[l];
    }
    out << '\n';
  }
}

void save_fields(const std::filesystem::path& path, std::span<const VisualField> fields) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write field file " + path.string());
  write_fields(out, fields);
}

DatasetSplit split_dataset(std::span<const VisualField> fields, std::uint64_t seed) {
  const std::size_t n = fields.size();
  if (n < 5) throw DomainError("split_dataset needs at least 5 fields");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0x5b1u));
  shuffle(order.begin(), order.end(), rng);

  const std::size_t n_train = n * 6 / 10;
  // The remainder is halved so test and validation differ by at most one.
  const std::size_t n_test = (n - n_train) / 2;

  DatasetSplit split;
  split.train.reserve(n_train);
  split.test.reserve(n_test);
  split.validation.reserve(n - n_train - n_test);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& f = fields[order[i]];
    if (i < n_train) {
      split.train.push_back(f);
    } else if (i < n_train + n_test) {
      split.test.push_back(f);
    } else {
      split.validation.push_back(f);
    }
  }
  return split;
}

void SyntheticConfig::validate() const {
  if (!(jitter_sigma_db >= 0.0)) throw DomainError("jitter sigma must be >= 0");
  if (!(p_defect >= 0.0 && p_defect <= 1.0)) throw DomainError("p_defect must lie in [0, 1]");
  if (min_cluster < 1 || max_cluster < min_cluster || max_cluster > kNumLocations) {
    throw DomainError("invalid scotoma cluster size range");
  }
  if (!(min_depth_db >= 0.0) || max_depth_db < min_depth_db) {
    throw DomainError("invalid scotoma depth range");
  }
}

std::vector<VisualField> generate_synthetic_fields(int n, std::uint64_t seed,
                                                   const SyntheticConfig& config) {
  if (n < 1) throw DomainError("generate_synthetic_fields needs n >= 1");
  config.validate();

  const GridSpec& grid = GridSpec::standard();
  // Fixation sits between the two middle rows and between columns 4 and 5.
  constexpr double kCenterRow = 3.5;
  constexpr double kCenterCol = 4.5;

  std::array<double, kNumLocations> baseline{};
  for (int l = 0; l < kNumLocations; ++l) {
    const Cell c = grid.cell(l);
    const double r = std::hypot(c.row - kCenterRow, c.col - kCenterCol);
    baseline[static_cast<std::size_t>(l)] = config.center_db - config.falloff_db_per_step * r;
  }

  std::vector<VisualField> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    std::array<double, kNumLocations> v = baseline;
    if (config.jitter_sigma_db > 0.0) {
      for (auto& x : v) x += config.jitter_sigma_db * rng.normal();
    }

    if (config.p_defect > 0.0 && rng.uniform() < config.p_defect) {
      const int size = rng.uniform_int(config.min_cluster, config.max_cluster);
      const double depth = config.min_depth_db + (config.max_depth_db - config.min_depth_db) * rng.uniform();

      std::vector<int> cluster{static_cast<int>(rng.below(kNumLocations))};
      std::array<bool, kNumLocations> in_cluster{};
      in_cluster[static_cast<std::size_t>(cluster.front())] = true;
      while (static_cast<int>(cluster.size()) < size) {
        std::vector<int> frontier;
        for (int member : cluster) {
          const Cell c = grid.cell(member);
          constexpr std::array<std::array<int, 2>, 4> kSteps{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};
          for (const auto& s : kSteps) {
            const Cell nb{c.row + s[0], c.col + s[1]};
            if (!grid.valid(nb)) continue;
            const int loc = grid.location_index(nb);
            if (!in_cluster[static_cast<std::size_t>(loc)] &&
                std::find(frontier.begin(), frontier.end(), loc) == frontier.end()) {
              frontier.push_back(loc);
            }
          }
        }
        if (frontier.empty()) break;
        std::sort(frontier.begin(), frontier.end());
        const int pick = frontier[static_cast<std::size_t>(rng.below(frontier.size()))];
        in_cluster[static_cast<std::size_t>(pick)] = true;
        cluster.push_back(pick);
      }
      for (int loc : cluster) v[static_cast<std::size_t>(loc)] -= depth;
    }

    std::array<int, kNumLocations> values{};
    for (int l = 0; l < kNumLocations; ++l) {
      const double x = std::round(v[static_cast<std::size_t>(l)]);
      values[static_cast<std::size_t>(l)] = static_cast<int>(std::clamp(x, 0.0, 40.0));
    }
    out.emplace_back(values);
  }
  return out;
}

}  // namespace rlperi
