#pragma once

#include <cstdint>

#include "rlperi/field.hpp"
#include "rlperi/rng.hpp"

namespace rlperi {

/// Standard normal CDF.
double normal_cdf(double z);
/// log of the standard normal CDF, accurate far into the lower tail.
double log_normal_cdf(double z);

/// Simulated patient whose frequency-of-seeing curve at each location is a
/// Gaussian CDF centred on the ground-truth threshold:
///
///     p_seen(x) = Phi((t - x) / sigma_fos)
///
/// Brighter (lower dB) stimuli are more likely to be seen, and the
/// probability is exactly one half at the threshold.
class FosPatient {
 public:
  FosPatient(VisualField field, std::uint64_t seed, double sigma_fos = 1.0);

  double p_seen(int location, double stimulus_db) const;

  /// Draws u ~ U(0, 1) and reports seen iff u <= p_seen.
  bool respond(int location, double stimulus_db);

  const VisualField& field() const { return field_; }
  double sigma_fos() const { return sigma_fos_; }

 private:
  VisualField field_;
  double sigma_fos_;
  Rng rng_;
};

}  // namespace rlperi
