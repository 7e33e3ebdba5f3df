#include "rlperi/patient.hpp"

#include <cmath>
#include <numbers>

#include "rlperi/errors.hpp"

namespace rlperi {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double log_normal_cdf(double z) {
  if (z > 0.0) return std::log1p(-0.5 * std::erfc(z / std::numbers::sqrt2));
  if (z > -30.0) return std::log(normal_cdf(z));
  // Asymptotic tail series: Phi(z) ~ phi(z)/|z| * (1 - 1/z^2 + 3/z^4 - 15/z^6).
  const double z2 = z * z;
  const double series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
  return -0.5 * z2 - std::log(-z) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(series);
}

FosPatient::FosPatient(VisualField field, std::uint64_t seed, double sigma_fos)
    : field_(field), sigma_fos_(sigma_fos), rng_(seed) {
  if (!(sigma_fos > 0.0)) throw DomainError("sigma_fos must be positive");
}

double FosPatient::p_seen(int location, double stimulus_db) const {
  if (!(stimulus_db >= kMinDb && stimulus_db <= kMaxDb)) {
    throw DomainError("stimulus outside [0, 40] dB");
  }
  const int t = field_.at(location);
  return normal_cdf((t - stimulus_db) / sigma_fos_);
}

bool FosPatient::respond(int location, double stimulus_db) {
  const double p = p_seen(location, stimulus_db);
  return rng_.uniform() <= p;
}

}  // namespace rlperi
