#include "rlperi/zest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "rlperi/errors.hpp"
#include "rlperi/patient.hpp"

namespace rlperi {

void ZestConfig::validate() const {
  if (!(sigma_stop > 0.0)) throw DomainError("sigma_stop must be positive");
  if (!(sigma_lik > 0.0)) throw DomainError("sigma_lik must be positive");
  if (max_presentations < 1) throw DomainError("max_presentations must be >= 1");
}

namespace {

void check_pdf(const Pdf& pdf) {
  double sum = 0.0;
  for (double p : pdf) {
    if (!(p > 0.0) || !std::isfinite(p)) throw DomainError("prior entries must be positive and finite");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw DomainError("prior pdf must sum to 1");
}

// log of the likelihood of one response for candidate threshold t.
double log_lik(bool seen, double t, double presented, double sigma, LikelihoodOrientation o) {
  const double z = (t - presented) / sigma;
  const bool upward = (o == LikelihoodOrientation::consistent) ? seen : !seen;
  return upward ? log_normal_cdf(z) : log_normal_cdf(-z);
}

}  // namespace

ZestPrior::ZestPrior(const std::array<Pdf, kNumLocations>& pdfs) : pdfs_(pdfs) {
  for (const auto& p : pdfs_) check_pdf(p);
}

ZestPrior ZestPrior::uniform() {
  std::array<Pdf, kNumLocations> pdfs{};
  for (auto& p : pdfs) p.fill(1.0 / kNumStimuli);
  return ZestPrior(pdfs);
}

ZestPrior ZestPrior::from_fields(std::span<const VisualField> fields) {
  std::array<Pdf, kNumLocations> pdfs{};
  for (auto& p : pdfs) p.fill(1.0);
  for (const auto& f : fields) {
    for (int l = 0; l < kNumLocations; ++l) pdfs[static_cast<std::size_t>(l)][static_cast<std::size_t>(f[l])] += 1.0;
  }
  const double total = static_cast<double>(fields.size()) + kNumStimuli;
  for (auto& p : pdfs) {
    for (auto& x : p) x /= total;
  }
  return ZestPrior(pdfs);
}

const Pdf& ZestPrior::at(int location) const {
  if (location < 0 || location >= kNumLocations) throw DomainError("location index out of range");
  return pdfs_[static_cast<std::size_t>(location)];
}

int ZestPrior::mode(int location) const { return argmax(at(location)); }

void ZestPrior::write(std::ostream& out) const {
  out << std::setprecision(17);
  for (const auto& p : pdfs_) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (i) out << ',';
      out << p[i];
    }
    out << '\n';
  }
}

ZestPrior ZestPrior::read(std::istream& in) {
  std::array<Pdf, kNumLocations> pdfs{};
  std::string line;
  int row = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    if (row >= kNumLocations) throw ParseError("prior file: more than 54 rows");
    std::istringstream ss(line);
    std::string cell;
    int col = 0;
    while (std::getline(ss, cell, ',')) {
      if (col >= kNumStimuli) {
        throw ParseError("prior file row " + std::to_string(row + 1) + ": more than 41 columns");
      }
      try {
        std::size_t used = 0;
        pdfs[static_cast<std::size_t>(row)][static_cast<std::size_t>(col)] = std::stod(cell, &used);
      } catch (const std::exception&) {
        throw ParseError("prior file row " + std::to_string(row + 1) + ", column " +
                         std::to_string(col + 1) + ": not a number");
      }
      ++col;
    }
    if (col != kNumStimuli) {
      throw ParseError("prior file row " + std::to_string(row + 1) + ": expected 41 columns");
    }
    ++row;
  }
  if (row != kNumLocations) throw ParseError("prior file: expected 54 rows");
  // Text round trip may shift the sum in the last digit.
  for (auto& p : pdfs) {
    double s = 0.0;
    for (double x : p) s += x;
    for (double& x : p) x /= s;
  }
  return ZestPrior(pdfs);
}

void ZestPrior::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write prior file " + path.string());
  write(out);
}

ZestPrior ZestPrior::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open prior file " + path.string());
  return read(in);
}

Pdf likelihood(bool seen, double presented_db, double sigma_lik, LikelihoodOrientation orientation) {
  if (!(presented_db >= kMinDb && presented_db <= kMaxDb)) throw DomainError("stimulus outside [0, 40] dB");
  if (!(sigma_lik > 0.0)) throw DomainError("sigma_lik must be positive");
  Pdf l{};
  for (int t = 0; t < kNumStimuli; ++t) {
    const double z = (t - presented_db) / sigma_lik;
    const double up = normal_cdf(z);
    const bool upward = (orientation == LikelihoodOrientation::consistent) ? seen : !seen;
    l[static_cast<std::size_t>(t)] = upward ? up : 1.0 - up;
  }
  return l;
}

int argmax(std::span<const double> values) {
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

double pdf_mean(const Pdf& pdf) {
  double mu = 0.0;
  for (int i = 0; i < kNumStimuli; ++i) mu += pdf[static_cast<std::size_t>(i)] * i;
  return mu;
}

double pdf_stddev(const Pdf& pdf) {
  const double mu = pdf_mean(pdf);
  double var = 0.0;
  for (int i = 0; i < kNumStimuli; ++i) {
    const double d = i - mu;
    var += pdf[static_cast<std::size_t>(i)] * d * d;
  }
  return std::sqrt(std::max(var, 0.0));
}

ZestEstimator::ZestEstimator(const Pdf& prior, int initial_stimulus_db) : next_(initial_stimulus_db) {
  if (initial_stimulus_db < kMinDb || initial_stimulus_db > kMaxDb) {
    throw DomainError("initial stimulus outside [0, 40] dB");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < prior.size(); ++i) {
    if (!(prior[i] >= 0.0) || !std::isfinite(prior[i])) throw DomainError("prior entries must be finite and >= 0");
    sum += prior[i];
  }
  if (!(sum > 0.0)) throw NumericalError("prior has no mass");
  for (std::size_t i = 0; i < prior.size(); ++i) {
    pdf_[i] = prior[i] / sum;
    log_prior_[i] = prior[i] > 0.0 ? std::log(prior[i] / sum) : -std::numeric_limits<double>::infinity();
  }
}

bool ZestEstimator::update(bool seen, int presented_db, const ZestConfig& cfg) {
  if (finished_) throw StateError("ZEST estimator already terminated");
  if (presented_db < kMinDb || presented_db > kMaxDb) throw DomainError("stimulus outside [0, 40] dB");

  std::array<double, kNumStimuli> lp{};
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < lp.size(); ++t) {
    log_lik_[t] += log_lik(seen, static_cast<double>(t), presented_db, cfg.sigma_lik, cfg.orientation);
    lp[t] = log_prior_[t] + log_lik_[t];
    peak = std::max(peak, lp[t]);
  }
  if (!std::isfinite(peak)) throw NumericalError("ZEST posterior collapsed to zero");

  double sum = 0.0;
  for (std::size_t t = 0; t < lp.size(); ++t) {
    pdf_[t] = std::exp(lp[t] - peak);
    sum += pdf_[t];
  }
  for (double& p : pdf_) p /= sum;

  ++presentations_;
  next_ = mode();
  finished_ = stddev() < cfg.sigma_stop || presentations_ >= cfg.max_presentations;
  return finished_;
}

int ZestEstimator::mode() const {
  std::size_t best = 0;
  while (best + 1 < log_prior_.size() && std::isinf(log_prior_[best])) ++best;
  for (std::size_t i = best + 1; i < log_prior_.size(); ++i) {
    if (std::isinf(log_prior_[i])) continue;
    const double diff = (log_prior_[i] - log_prior_[best]) + (log_lik_[i] - log_lik_[best]);
    if (diff > 0.0) best = i;
  }
  return static_cast<int>(best);
}

ZestOutcome run_zest(int initial_stimulus_db, const Pdf& prior, const ResponseFn& respond,
                     const PresentationHook& on_presentation, const ZestConfig& cfg) {
  cfg.validate();
  ZestEstimator est(prior, initial_stimulus_db);
  bool done = false;
  while (!done) {
    const int stimulus = est.next_stimulus();
    const bool seen = respond(stimulus);
    if (on_presentation) on_presentation(stimulus, seen);
    done = est.update(seen, stimulus, cfg);
  }
  return {est.presentations(), est.estimate()};
}

}  // namespace rlperi
