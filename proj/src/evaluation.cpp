#include "rlperi/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "rlperi/errors.hpp"

namespace rlperi {

std::uint64_t patient_seed_for(std::uint64_t seed, std::size_t field_index) {
  return derive_seed(derive_seed(seed, 0x9a71u), field_index);
}

std::uint64_t strategy_seed_for(std::uint64_t seed, std::size_t field_index) {
  return derive_seed(derive_seed(seed, 0x57a7u), field_index);
}

namespace {

template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads) : std::thread::hardware_concurrency();
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
  mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  sd = 0.0;
  if (xs.size() < 2) return;
  for (double x : xs) sd += (x - mean) * (x - mean);
  sd = std::sqrt(sd / static_cast<double>(xs.size() - 1));
}

}  // namespace

RunReport evaluate(std::shared_ptr<const Strategy> strategy, std::shared_ptr<const ZestPrior> prior,
                   std::span<const VisualField> fields, const ZestConfig& zest, std::span<const std::uint64_t> seeds,
                   const EvalOptions& options) {
  if (fields.empty()) throw DomainError("evaluate needs at least one field");
  if (seeds.empty()) throw DomainError("evaluate needs at least one seed");
  zest.validate();

  RunReport report;
  report.strategy = strategy->name();
  report.sigma_stop = zest.sigma_stop;

  std::vector<double> stimuli_means, mse_means;
  for (std::size_t s = 0; s < seeds.size(); ++s) {
    const std::uint64_t seed = seeds[s];
    std::vector<EpisodeReport> episodes(fields.size());
    parallel_for(fields.size(), options.threads, [&](std::size_t i) {
      FosPatient patient(fields[i], patient_seed_for(seed, i), options.sigma_fos);
      episodes[i] = run_simulated_test(strategy, prior, zest, patient, strategy_seed_for(seed, i));
    });
    SeedSummary summary{seed, 0.0, 0.0};
    for (const auto& e : episodes) {
      summary.mean_stimuli += e.total_stimuli;
      summary.mean_mse += e.mse;
    }
    summary.mean_stimuli /= static_cast<double>(fields.size());
    summary.mean_mse /= static_cast<double>(fields.size());
    report.seeds.push_back(summary);
    stimuli_means.push_back(summary.mean_stimuli);
    mse_means.push_back(summary.mean_mse);
    if (s == 0 && options.keep_episodes) report.first_seed_episodes = std::move(episodes);
  }
  mean_std(stimuli_means, report.stimuli_mean, report.stimuli_std);
  mean_std(mse_means, report.mse_mean, report.mse_std);
  return report;
}

std::string render_table_csv(std::span<const RunReport> reports) {
  std::ostringstream out;
  out << "strategy,sigma_stop,seeds,stimuli_mean,stimuli_std,mse_mean,mse_std\n";
  out << std::setprecision(10);
  for (const auto& r : reports) {
    out << r.strategy << ',' << r.sigma_stop << ',' << r.seeds.size() << ',' << r.stimuli_mean << ','
        << r.stimuli_std << ',' << r.mse_mean << ',' << r.mse_std << '\n';
  }
  return out.str();
}

std::string render_table_text(std::span<const RunReport> reports) {
  std::size_t name_width = 12;
  for (const auto& r : reports) name_width = std::max(name_width, r.strategy.size() + 2);
  const int nw = static_cast<int>(name_width);
  std::ostringstream out;
  out << std::left << std::setw(8) << "sigma" << std::setw(nw) << "strategy" << std::setw(26)
      << "stimuli presented" << "MSE\n";
  out << std::fixed;
  for (const auto& r : reports) {
    std::ostringstream stim, err;
    stim << std::fixed << std::setprecision(2) << r.stimuli_mean << " (" << r.stimuli_std << ")";
    err << std::fixed << std::setprecision(3) << r.mse_mean << " (" << r.mse_std << ")";
    out << std::setw(8) << std::setprecision(1) << r.sigma_stop << std::setw(nw) << r.strategy << std::setw(26)
        << stim.str() << err.str() << '\n';
  }
  return out.str();
}

namespace {

std::string grid_csv(const std::array<int, kNumLocations>& values) {
  const GridSpec& grid = GridSpec::standard();
  std::ostringstream out;
  for (int r = 0; r < kGridRows; ++r) {
    for (int c = 0; c < kGridCols; ++c) {
      if (c) out << ',';
      if (grid.valid(r, c)) out << values[static_cast<std::size_t>(grid.location_index({r, c}))];
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace

FieldPanels render_panels(const VisualField& truth, const EpisodeReport& report) {
  std::array<int, kNumLocations> rank{};
  rank.fill(-1);
  for (std::size_t k = 0; k < report.order.size(); ++k) rank[static_cast<std::size_t>(report.order[k])] = static_cast<int>(k);
  return {grid_csv(truth.values()), grid_csv(report.reconstructed.values()), grid_csv(report.initial_values),
          grid_csv(rank), grid_csv(report.stimuli_per_location)};
}

void render_report(std::span<const RunReport> reports, const std::filesystem::path& out_dir,
                   std::span<const VisualField> fields, std::span<const std::size_t> panel_fields) {
  std::filesystem::create_directories(out_dir);
  auto write = [&](const std::filesystem::path& name, const std::string& text) {
    std::ofstream out(out_dir / name);
    if (!out) throw std::runtime_error("cannot write " + (out_dir / name).string());
    out << text;
  };
  write("table.csv", render_table_csv(reports));
  write("table.txt", render_table_text(reports));
  for (const auto& r : reports) {
    for (std::size_t idx : panel_fields) {
      if (idx >= r.first_seed_episodes.size() || idx >= fields.size()) continue;
      const auto p = render_panels(fields[idx], r.first_seed_episodes[idx]);
      std::ostringstream stem;
      stem << r.strategy << "_sigma" << r.sigma_stop << "_field" << idx << "_";
      write(stem.str() + "truth.csv", p.truth);
      write(stem.str() + "reconstructed.csv", p.reconstructed);
      write(stem.str() + "initial.csv", p.initial);
      write(stem.str() + "sequence.csv", p.sequence);
      write(stem.str() + "counts.csv", p.counts);
    }
  }
}

}  // namespace rlperi
