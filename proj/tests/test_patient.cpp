#include <doctest.h>

#include <cmath>

#include "rlperi/errors.hpp"
#include "rlperi/patient.hpp"

using namespace rlperi;

namespace {

// Simpson integration of the standard normal density from -12 to z.
double simpson_cdf(double z) {
  const int n = 200000;
  const double a = -12.0;
  const double h = (z - a) / n;
  auto f = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); };
  double s = f(a) + f(z);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

VisualField field_with(int location, int db) {
  std::array<int, kNumLocations> v{};
  v.fill(25);
  v[static_cast<std::size_t>(location)] = db;
  return VisualField(v);
}

}  // namespace

TEST_CASE("normal cdf against numerical integration") {
  for (double z : {-4.0, -2.0, -1.0, -0.3, 0.0, 0.5, 1.0, 2.5}) {
    CHECK(normal_cdf(z) == doctest::Approx(simpson_cdf(z)).epsilon(1e-10));
  }
  // Frozen from the integration oracle above.
  CHECK(normal_cdf(1.0) == doctest::Approx(0.841345).epsilon(1e-6));
  CHECK(normal_cdf(-2.0) == doctest::Approx(0.022750).epsilon(1e-5));
}

TEST_CASE("log normal cdf is finite in the far tail") {
  CHECK(log_normal_cdf(0.0) == doctest::Approx(std::log(0.5)));
  CHECK(log_normal_cdf(-5.0) == doctest::Approx(std::log(normal_cdf(-5.0))).epsilon(1e-9));
  const double far = log_normal_cdf(-60.0);
  CHECK(std::isfinite(far));
  // Leading asymptotic term: -z^2/2 - log(-z sqrt(2 pi)).
  CHECK(far == doctest::Approx(-1800.0 - std::log(60.0 * std::sqrt(2.0 * M_PI))).epsilon(1e-6));
  CHECK(log_normal_cdf(-30.0) < log_normal_cdf(-29.0));
}

TEST_CASE("p_seen examples") {
  FosPatient p(field_with(10, 30), 1);
  CHECK(p.p_seen(10, 30) == 0.5);
  CHECK(p.p_seen(10, 29) == doctest::Approx(0.841345).epsilon(1e-6));
  CHECK(p.p_seen(10, 32) == doctest::Approx(0.022750).epsilon(1e-5));
  CHECK_THROWS_AS(p.p_seen(54, 20), DomainError);
  CHECK_THROWS_AS(p.p_seen(0, 41), DomainError);
  CHECK_THROWS_AS(p.p_seen(0, -1), DomainError);
  CHECK_THROWS_AS(FosPatient(field_with(0, 1), 1, 0.0), DomainError);
}

TEST_CASE("p_seen strictly decreases in stimulus dB") {
  for (int t : {0, 12, 25, 40}) {
    FosPatient p(field_with(7, t), 3);
    for (int x = 0; x < 40; ++x) {
      const double a = p.p_seen(7, x);
      const double b = p.p_seen(7, x + 1);
      // Only compare where double precision can still resolve a difference.
      if (a < 1.0 && a > 0.0) CHECK(a > b);
      CHECK(a >= b);
    }
  }
}

TEST_CASE("extreme stimuli are always or never seen") {
  FosPatient p(field_with(0, 40), 7);
  for (int i = 0; i < 500; ++i) CHECK(p.respond(0, 0));
  FosPatient q(field_with(0, 0), 7);
  for (int i = 0; i < 500; ++i) CHECK_FALSE(q.respond(0, 40));
}

TEST_CASE("calibration at threshold") {
  FosPatient p(field_with(20, 27), 12345);
  int seen = 0;
  for (int i = 0; i < 10000; ++i) seen += p.respond(20, 27) ? 1 : 0;
  CHECK(seen >= 4700);
  CHECK(seen <= 5300);
}

TEST_CASE("responses are reproducible from the seed") {
  FosPatient a(field_with(5, 20), 99);
  FosPatient b(field_with(5, 20), 99);
  FosPatient c(field_with(5, 20), 100);
  int differ = 0;
  for (int i = 0; i < 200; ++i) {
    const int x = 18 + i % 5;
    const bool ra = a.respond(5, x);
    CHECK(ra == b.respond(5, x));
    differ += ra != c.respond(5, x) ? 1 : 0;
  }
  CHECK(differ > 0);
}
