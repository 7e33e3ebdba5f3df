#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rlperi/strategy.hpp"

namespace rlperi {

struct SeedSummary {
  std::uint64_t seed = 0;
  double mean_stimuli = 0.0;
  double mean_mse = 0.0;
};

/// Aggregate of one strategy at one stopping criterion over several seeds.
struct RunReport {
  std::string strategy;
  double sigma_stop = 0.0;
  std::vector<SeedSummary> seeds;
  double stimuli_mean = 0.0;
  double stimuli_std = 0.0;  // sample std across seeds, 0 for a single seed
  double mse_mean = 0.0;
  double mse_std = 0.0;
  /// Episodes of the first seed, in field order.
  std::vector<EpisodeReport> first_seed_episodes;
};

struct EvalOptions {
  double sigma_fos = 1.0;
  int threads = 0;  // 0 = hardware concurrency
  bool keep_episodes = false;
};

/// Runs every field once per seed. Patient and strategy streams are derived
/// from (seed, field index), so results do not depend on scheduling.
RunReport evaluate(std::shared_ptr<const Strategy> strategy, std::shared_ptr<const ZestPrior> prior,
                   std::span<const VisualField> fields, const ZestConfig& zest, std::span<const std::uint64_t> seeds,
                   const EvalOptions& options = {});

std::uint64_t patient_seed_for(std::uint64_t seed, std::size_t field_index);
std::uint64_t strategy_seed_for(std::uint64_t seed, std::size_t field_index);

/// Comparison table, one row per report.
std::string render_table_csv(std::span<const RunReport> reports);
std::string render_table_text(std::span<const RunReport> reports);

/// Five 8 x 9 grids for one test: ground truth, reconstruction, initial
/// stimulus, testing order (0 = first), stimuli per location. Masked cells
/// are left blank.
struct FieldPanels {
  std::string truth;
  std::string reconstructed;
  std::string initial;
  std::string sequence;
  std::string counts;
};
FieldPanels render_panels(const VisualField& truth, const EpisodeReport& report);

/// Writes table.csv, table.txt and field_<i>_<panel>.csv for each index in
/// `panel_fields` (taken from each report's first seed).
void render_report(std::span<const RunReport> reports, const std::filesystem::path& out_dir,
                   std::span<const VisualField> fields = {}, std::span<const std::size_t> panel_fields = {});

}  // namespace rlperi
