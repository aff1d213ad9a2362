#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "committee/error.hpp"
#include "committee/large_k.hpp"

using namespace committee;

namespace {

constexpr double kPi = std::numbers::pi;

// Unscaled residual with dI_C/dq_a from a central difference of I_C.
double fd_residual(double q_a, double alpha) {
  const double h = 1e-6;
  const double d = (i_c_large_k(2.0 / kPi * (q_a + h)) - i_c_large_k(2.0 / kPi * (q_a - h))) / (2 * h);
  return q_a - 2.0 * alpha * (1.0 - q_a) * d;
}

}  // namespace

TEST_CASE("I_C limits and domain") {
  CHECK(i_c_large_k(0.0) == doctest::Approx(-std::numbers::ln2).epsilon(1e-15));
  CHECK(i_c_large_k(1e-10) == doctest::Approx(-std::numbers::ln2).epsilon(1e-8));
  CHECK(i_c_large_k(1.0 - 1e-13) == 0.0);
  CHECK(std::abs(i_c_large_k(1.0 - 1e-9)) < 1e-3);
  CHECK_THROWS_AS(i_c_large_k(1.0), Error);
  CHECK_THROWS_AS(i_c_large_k(-0.1), Error);
  double last = -1.0;
  for (double g = 0.0; g < 0.999; g += 0.01) {
    const double v = i_c_large_k(g);
    CHECK(v >= -std::numbers::ln2 - 1e-14);
    CHECK(v <= 0.0);
    CHECK(v > last);
    last = v;
  }
}

TEST_CASE("I_C against Monte Carlo") {
  Rng rng(7, 0);
  const double gamma = 0.5, s = std::sqrt(gamma / (1.0 - gamma));
  const int n = 10'000'000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t = s * rng.normal();
    const double v = 2.0 * h_function(t) * log_h_function(t);
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / n;
  const double se = std::sqrt((sum2 / n - mean * mean) / n);
  CHECK(std::abs(i_c_large_k(gamma) - mean) < 1e-3);
  CHECK(std::abs(i_c_large_k(gamma) - mean) < 4.0 * se);
}

TEST_CASE("I_C is continuous where the quadrature switches variables") {
  CHECK(i_c_large_k(0.5 - 1e-12) == doctest::Approx(i_c_large_k(0.5 + 1e-12)).epsilon(1e-10));
  CHECK(i_c_large_k_derivative(0.5 - 1e-12) == doctest::Approx(i_c_large_k_derivative(0.5 + 1e-12)).epsilon(1e-9));
}

TEST_CASE("I_C derivative matches finite differences") {
  CHECK(i_c_large_k_derivative(0.0) == doctest::Approx(1.0 / kPi).epsilon(1e-12));
  CHECK(i_c_large_k_derivative(1e-9) == doctest::Approx(1.0 / kPi).epsilon(1e-6));
  for (double g : {1e-4, 0.05, 0.2, 2.0 / kPi, 0.7, 0.9, 0.99, 0.9999, 1.0 - 1e-6}) {
    const double h = 1e-5 * std::min(g, 1.0 - g);
    const double fd = (i_c_large_k(g + h) - i_c_large_k(g - h)) / (2 * h);
    CHECK(i_c_large_k_derivative(g) == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("large-K generalization error") {
  CHECK(gen_error_large_k(0.0, 0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(gen_error_large_k(1.0, 0.0) == doctest::Approx(0.0).scale(1e-15));
  CHECK_THROWS_AS(gen_error_large_k(0.5, 0.9), Error);
  CHECK_THROWS_AS(gen_error_large_k(-0.1, 0.0), Error);

  // Committee of K = 401 units with q = (q_a / K) 1 1^T; the student's hidden
  // fields are q z* + (I - q^2)^{1/2} u, and eps is the disagreement rate.
  const int k = 401, samples = 40'000;
  const double q_a = 0.5;
  const double shrink = std::sqrt(1.0 - q_a * q_a) - 1.0;
  Rng rng(3, 0);
  std::vector<double> zt(k), u(k);
  int disagree = 0;
  for (int s = 0; s < samples; ++s) {
    double sum_t = 0.0, sum_u = 0.0;
    for (int i = 0; i < k; ++i) {
      zt[i] = rng.normal();
      u[i] = rng.normal();
      sum_t += zt[i];
      sum_u += u[i];
    }
    int vt = 0, vs = 0;
    for (int i = 0; i < k; ++i) {
      const double zs = q_a * sum_t / k + u[i] + shrink * sum_u / k;
      vt += zt[i] > 0 ? 1 : -1;
      vs += zs > 0 ? 1 : -1;
    }
    disagree += (vt > 0) != (vs > 0);
  }
  const double mc = static_cast<double>(disagree) / samples;
  CHECK(gen_error_large_k(0.0, q_a) == doctest::Approx(std::acos(q_a * 2.0 / kPi) / kPi).epsilon(1e-14));
  CHECK(std::abs(mc - gen_error_large_k(0.0, q_a)) < 1e-2);
}

TEST_CASE("unscaled regime") {
  const LargeKBranch zero = solve_unscaled(0.0);
  CHECK(zero.point.q_a == 0.0);
  CHECK(zero.eps_g == doctest::Approx(0.5));
  const LargeKBranch tiny = solve_unscaled(1e-4);
  CHECK(tiny.point.q_a < 1e-3);
  CHECK(tiny.eps_g > 0.499);

  double last = 0.0;
  for (double alpha : {0.1, 0.5, 1.0, 2.0, 5.0, 20.0, 100.0}) {
    const LargeKBranch b = solve_unscaled(alpha);
    CHECK(b.converged);
    CHECK(b.point.q_d == 0.0);
    CHECK(b.point.q_a > last);
    CHECK(b.point.q_a < 1.0);
    last = b.point.q_a;
  }
  CHECK(last > 0.97);

  // Nested dense grids over the finite-difference residual.
  double lo = 0.0, hi = 1.0, best = 0.0;
  for (int level = 0; level < 4; ++level) {
    double best_r = 1e300;
    const int n = 2000;
    for (int i = 0; i <= n; ++i) {
      const double q = lo + (hi - lo) * i / n;
      if (q <= 0.0 || q >= 1.0) continue;
      const double r = std::abs(fd_residual(q, 1.0));
      if (r < best_r) {
        best_r = r;
        best = q;
      }
    }
    const double step = (hi - lo) / n;
    lo = best - 2 * step;
    hi = best + 2 * step;
  }
  CHECK(solve_unscaled(1.0).point.q_a == doctest::Approx(best).epsilon(1e-6));
}

TEST_CASE("scaled regime branches") {
  const auto below = solve_scaled(5.0);
  REQUIRE(below.size() == 1);
  CHECK(below[0].branch == Branch::NonSpecialized);
  CHECK(below[0].point.q_d == 0.0);
  CHECK(below[0].eps_g == doctest::Approx(std::acos(2.0 / kPi) / kPi).epsilon(1e-12));
  CHECK(below[0].eps_g == doctest::Approx(0.28).epsilon(0.01 / 0.28));

  const auto mid = solve_scaled(7.4);
  REQUIRE(mid.size() == 3);  // non-specialized, unstable saddle, stable specialized
  CHECK_FALSE(mid[1].stable);
  CHECK(mid[2].stable);
  CHECK(mid[2].f < mid[0].f);
  CHECK(dominant_scaled(7.4).branch == Branch::NonSpecialized);

  const LargeKBranch top = dominant_scaled(20.0);
  CHECK(top.branch == Branch::Specialized);
  CHECK(std::abs(top.eps_g * 20.0 - 1.25) < 0.15 * 1.25);

  for (const auto& b : solve_scaled(12.0)) {
    CHECK(b.point.q_a + b.point.q_d == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(b.point.chi > 0.0);
    CHECK(b.point.gamma <= 1.0);
  }
}

TEST_CASE("non-specialized point is linearly stable") {
  for (double a : {1.0, 5.0, 7.65, 10.0, 20.0}) CHECK(std::abs(stability_nonspecialized(a)) < 1e-6);
}

TEST_CASE("large-K transitions") {
  const TransitionResult spin = large_k_spinodal(6.0, 8.0, 1e-3);
  const TransitionResult spec = large_k_spec_transition(7.0, 9.0, 1e-3);
  CHECK(std::abs(spin.alpha - 7.17) < 0.15);
  CHECK(std::abs(spec.alpha - 7.65) < 0.15);
  CHECK(spin.alpha < spec.alpha);
  CHECK_THROWS_AS(large_k_spinodal(1.0, 2.0), Error);
}

TEST_CASE("eps_g decays as 1.25 / alpha_bar") {
  for (double a : {30.0, 50.0, 100.0}) {
    const LargeKBranch b = dominant_scaled(a);
    CHECK(b.branch == Branch::Specialized);
    CHECK(b.eps_g * a > 1.1);
    CHECK(b.eps_g * a < 1.4);
  }
}
