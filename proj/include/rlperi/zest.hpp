#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <vector>

#include "rlperi/field.hpp"

namespace rlperi {

using Pdf = std::array<double, kNumStimuli>;

/// Which way a response moves the posterior.
///
/// `consistent` matches the patient model: a seen response at x is evidence
/// that the threshold lies above x, so the likelihood is Phi((t - x) / s).
/// `inverted` evaluates `l = resp * (resp - l) + (1 - resp) * l` with
/// l = Phi((t - x) / s), which points the other way. It is kept for auditing
/// and does not converge on simulated patients.
enum class LikelihoodOrientation { consistent, inverted };

struct ZestConfig {
  double sigma_stop = 2.0;
  double sigma_lik = 0.5;
  int max_presentations = 50;
  LikelihoodOrientation orientation = LikelihoodOrientation::consistent;

  void validate() const;
};

/// Per-location prior over candidate thresholds 0..40 dB.
class ZestPrior {
 public:
  /// Flat prior at every location.
  static ZestPrior uniform();
  /// Histogram of training thresholds per location with add-one smoothing.
  static ZestPrior from_fields(std::span<const VisualField> fields);

  const Pdf& at(int location) const;
  const std::array<Pdf, kNumLocations>& pdfs() const { return pdfs_; }

  /// Lowest-index mode of the prior at a location.
  int mode(int location) const;

  void write(std::ostream& out) const;
  static ZestPrior read(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static ZestPrior load(const std::filesystem::path& path);

  explicit ZestPrior(const std::array<Pdf, kNumLocations>& pdfs);

 private:
  std::array<Pdf, kNumLocations> pdfs_{};
};

/// Response likelihood over the 41 candidate thresholds.
Pdf likelihood(bool seen, double presented_db, double sigma_lik,
               LikelihoodOrientation orientation = LikelihoodOrientation::consistent);

/// Index of the largest entry; ties go to the lowest index.
int argmax(std::span<const double> values);

/// sqrt(sum p_i (val_i - mu)^2) over vals = 0..40.
double pdf_stddev(const Pdf& pdf);
double pdf_mean(const Pdf& pdf);

/// Posterior over the threshold at one location. The density is carried in
/// log space and renormalised after every update so long response streaks
/// cannot underflow.
class ZestEstimator {
 public:
  ZestEstimator(const Pdf& prior, int initial_stimulus_db);

  /// Applies one response. Returns true when the location is finished:
  /// either the posterior std fell below sigma_stop or the presentation cap
  /// was reached.
  bool update(bool seen, int presented_db, const ZestConfig& cfg);

  const Pdf& pdf() const { return pdf_; }
  int presentations() const { return presentations_; }
  /// Stimulus to present next: the initial value until the first update,
  /// the posterior mode afterwards.
  int next_stimulus() const { return next_; }
  int estimate() const { return mode(); }
  double stddev() const { return pdf_stddev(pdf_); }
  bool finished() const { return finished_; }

 private:
  int mode() const;

  // Prior and accumulated response evidence are kept apart so that evidence
  // far smaller than the prior's rounding still orders the candidates.
  std::array<double, kNumStimuli> log_prior_{};
  std::array<double, kNumStimuli> log_lik_{};
  Pdf pdf_{};
  int presentations_ = 0;
  int next_ = 0;
  bool finished_ = false;
};

struct ZestOutcome {
  int presentations = 0;
  int estimate = 0;
};

using ResponseFn = std::function<bool(int stimulus_db)>;
using PresentationHook = std::function<void(int stimulus_db, bool seen)>;

/// Runs ZEST at one location until it terminates. `on_presentation` sees
/// every (stimulus, response) pair in order; it may be empty.
ZestOutcome run_zest(int initial_stimulus_db, const Pdf& prior, const ResponseFn& respond,
                     const PresentationHook& on_presentation, const ZestConfig& cfg);

}  // namespace rlperi
