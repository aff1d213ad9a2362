#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "committee/error.hpp"
#include "committee/state_evolution.hpp"

using namespace committee;

namespace {

Mat committee_overlap(int k, double q_d, double q_a) {
  return q_d * Mat::Identity(k, k) + (q_a / k) * Mat::Ones(k, k);
}

double max_abs(const Mat& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("alpha = 0 keeps the overlap at zero") {
  const auto prior = PriorModel::gaussian(2);
  const SeStep step = se_step(committee_overlap(2, 0.3, 0.2), 0.0, prior, ChannelModel::committee(2));
  CHECK(max_abs(step.q_hat) == 0.0);
  CHECK(max_abs(step.q_next) < 1e-14);
  const SeFixedPoint fp = se_run(initial_overlap(SeInit::Uninformed, prior), 0.0, prior, ChannelModel::committee(2));
  CHECK(fp.converged);
  CHECK(fp.q00 < 1e-12);
  CHECK(fp.eps_g == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("the perfect point is a fixed point of deterministic channels") {
  for (const auto& prior : {PriorModel::gaussian(2), PriorModel::rademacher(2)}) {
    for (const auto& ch : {ChannelModel::committee(2), ChannelModel::parity()}) {
      const SeStep step = se_step(prior.rho, 1.3, prior, ch);
      CHECK(step.perfect);
      CHECK(max_abs(step.q_next - prior.rho) < 1e-14);
    }
  }
}

TEST_CASE("linear K = 1 channel follows the scalar recursion") {
  const auto prior = PriorModel::gaussian(1);
  const double delta = 1.0, alpha = 2.0;
  const auto ch = ChannelModel::linear(1, delta);
  double q = 0.3;
  Mat qm(1, 1);
  for (int t = 0; t < 5; ++t) {
    qm(0, 0) = q;
    const SeStep step = se_step(qm, alpha, prior, ch);
    const double q_hat = alpha / (delta + 1.0 - q);
    CHECK(step.q_hat(0, 0) == doctest::Approx(q_hat).epsilon(1e-9));
    q = q_hat / (1.0 + q_hat);
    CHECK(step.q_next(0, 0) == doctest::Approx(q).epsilon(1e-9));
  }
  // Closed-form fixed point of q = a / (a + 1 + delta - q) with rho = 1.
  const double b = alpha + 1.0 + delta;
  const double q_star = 0.5 * (b - std::sqrt(b * b - 4.0 * alpha));
  const SeFixedPoint fp = se_run(initial_overlap(SeInit::Uninformed, prior), alpha, prior, ch);
  CHECK(fp.q(0, 0) == doctest::Approx(q_star).epsilon(1e-8));
}

TEST_CASE("se_step preserves the committee-symmetric form") {
  const double qs[][2] = {{0.0, 0.3}, {0.2, 0.1}, {0.5, 0.3}, {0.8, 0.05}, {0.95, 0.0}};
  for (const auto& prior : {PriorModel::gaussian(2), PriorModel::rademacher(2)}) {
    for (const auto& ch : {ChannelModel::committee(2), ChannelModel::parity()}) {
      for (const auto& qa : qs) {
        const SeStep step = se_step(committee_overlap(2, qa[0], qa[1]), 1.7, prior, ch);
        const Mat& n = step.q_next;
        CHECK(std::abs(n(0, 0) - n(1, 1)) < 1e-8);
        CHECK(std::abs(n(0, 1) - n(1, 0)) < 1e-8);
        CHECK(std::abs(step.q_hat(0, 0) - step.q_hat(1, 1)) < 1e-8);
      }
    }
  }
}

TEST_CASE("rho - q stays PSD along trajectories") {
  SeConfig cfg;
  cfg.record_trace = true;
  for (const auto& prior : {PriorModel::gaussian(2), PriorModel::rademacher(2)}) {
    for (const auto& ch : {ChannelModel::committee(2), ChannelModel::parity()}) {
      for (double alpha : {0.7, 1.8, 2.6, 4.0}) {
        for (SeInit init : {SeInit::Uninformed, SeInit::Informed}) {
          const SeFixedPoint fp = se_run(initial_overlap(init, prior, cfg), alpha, prior, ch, cfg);
          CHECK(fp.converged);
          for (const SeTracePoint& p : fp.trace) {
            CHECK(p.min_eig_rho_minus_q >= -1e-12);
            CHECK(p.min_eig_q >= -1e-12);
          }
        }
      }
    }
  }
}

TEST_CASE("q_hat is twice alpha times the gradient of the channel free entropy") {
  const auto prior = PriorModel::gaussian(2);
  const double alpha = 1.4, h = 1e-5;
  for (const auto& ch : {ChannelModel::committee(2), ChannelModel::parity(), ChannelModel::linear(2, 0.3)}) {
    for (const Mat& q : {committee_overlap(2, 0.2, 0.3), committee_overlap(2, 0.6, 0.1)}) {
      const Mat q_hat = channel_overlap_hat(q, alpha, prior.rho, ch);
      for (int i = 0; i < 2; ++i) {
        for (int j = i; j < 2; ++j) {
          Mat e = Mat::Zero(2, 2);
          e(i, j) += 0.5;
          e(j, i) += 0.5;
          if (i == j) e(i, i) = 1.0;
          const double d = (psi_pout(q + h * e, prior.rho, ch) - psi_pout(q - h * e, prior.rho, ch)) / (2 * h);
          CHECK(q_hat(i, j) == doctest::Approx(2.0 * alpha * d).epsilon(1e-3).scale(1e-3));
        }
      }
    }
  }
}

TEST_CASE("fixed points are stationary points of the potential") {
  const double h = 1e-5;
  for (const auto& prior : {PriorModel::gaussian(2), PriorModel::rademacher(2)}) {
    const auto ch = ChannelModel::committee(2);
    const double alpha = prior.kind == PriorKind::Gaussian ? 2.6 : 1.8;
    const SeFixedPoint fp = se_run(initial_overlap(SeInit::Uninformed, prior), alpha, prior, ch);
    REQUIRE(fp.converged);
    REQUIRE(fp.branch == Branch::Specialized);
    REQUIRE(min_eigenvalue(fp.q) > 1e-3);
    const auto f = [&](const Mat& q, const Mat& r) { return free_entropy(q, r, alpha, prior, ch); };
    CHECK(f(fp.q, fp.q_hat) == doctest::Approx(fp.f_rs).epsilon(1e-12));
    for (int i = 0; i < 2; ++i) {
      for (int j = i; j < 2; ++j) {
        Mat e = Mat::Zero(2, 2);
        e(i, j) = e(j, i) = 1.0;
        const double dq = (f(fp.q + h * e, fp.q_hat) - f(fp.q - h * e, fp.q_hat)) / (2 * h);
        const double dr = (f(fp.q, fp.q_hat + h * e) - f(fp.q, fp.q_hat - h * e)) / (2 * h);
        CHECK(std::abs(dq) < 1e-5);
        CHECK(std::abs(dr) < 1e-5);
      }
    }
  }
}

TEST_CASE("perfect branch free entropy") {
  const auto rad = PriorModel::rademacher(2);
  const auto f = perfect_free_entropy(rad, ChannelModel::committee(2));
  REQUIRE(f.has_value());
  CHECK(*f == doctest::Approx(-2.0 * std::numbers::ln2).epsilon(1e-15));
  CHECK_FALSE(perfect_free_entropy(PriorModel::gaussian(2), ChannelModel::committee(2)).has_value());
  CHECK_FALSE(perfect_free_entropy(rad, ChannelModel::linear(2, 0.1)).has_value());

  // Approaching q = rho along the committee-symmetric direction with the
  // conjugate q_hat, the potential tends to -K log 2.
  const auto ch = ChannelModel::committee(2);
  double last_gap = 1.0;
  for (double d : {1e-2, 1e-4, 1e-6, 1e-8}) {
    const Mat q = (1.0 - d) * rad.rho;
    const Mat q_hat = channel_overlap_hat(q, 2.5, rad.rho, ch);
    const double gap = std::abs(free_entropy(q, q_hat, 2.5, rad, ch) - *f);
    CHECK(gap < last_gap);
    last_gap = gap;
  }
  CHECK(last_gap < 1e-3);

  const SeFixedPoint fp = se_run(initial_overlap(SeInit::Informed, rad), 2.5, rad, ch);
  CHECK(fp.branch == Branch::Perfect);
  CHECK(fp.f_rs == *f);
  CHECK(fp.eps_g == doctest::Approx(0.0).scale(1e-12));
}

TEST_CASE("generalization error from overlaps") {
  const auto com = ChannelModel::committee(2);
  const Mat eye = Mat::Identity(2, 2);
  CHECK(gen_error(Mat::Zero(2, 2), eye, com) == doctest::Approx(0.25).epsilon(1e-10));
  CHECK(gen_error(Mat::Zero(2, 2), eye, ChannelModel::parity()) == doctest::Approx(0.5).epsilon(1e-10));
  CHECK(gen_error(eye, eye, com) == doctest::Approx(0.0).scale(1e-12));

  const McEstimate zero = gen_error_k2(0.0, 0.0, 200'000, 5);
  CHECK(std::abs(zero.value - 0.25) < 4.0 * zero.std_error + 1e-12);

  // The Monte Carlo formula and the quadrature agree at interior overlaps.
  for (const auto& qa : {std::pair{0.4, 0.2}, std::pair{0.1, 0.5}, std::pair{0.8, 0.1}}) {
    const McEstimate mc = gen_error_k2(qa.first, qa.second, 1'000'000, 11);
    const double quad = gen_error(committee_overlap(2, qa.first, qa.second), eye, com);
    CHECK(std::abs(mc.value - quad) < 4.0 * mc.std_error);
  }
  CHECK_THROWS_AS(gen_error_k2(1.2, 0.0), Error);
}

TEST_CASE("Gibbs error is twice the Bayes error") {
  const auto prior = PriorModel::gaussian(2);
  for (const auto& ch : {ChannelModel::committee(2), ChannelModel::parity()}) {
    const SeFixedPoint fp = se_run(initial_overlap(SeInit::Uninformed, prior), 3.0, prior, ch);
    const GibbsBayes gb = gibbs_vs_bayes(fp.q, prior.rho, ch, 400'000, 3);
    CHECK(std::abs(gb.ratio - 2.0) < 3.0 * gb.ratio_stderr);
    CHECK(gb.ratio_stderr < 0.05);
    CHECK(std::abs(gb.bayes.value - fp.eps_g) < 4.0 * gb.bayes.std_error);
  }
}

TEST_CASE("dominant branch has the largest free entropy") {
  const auto rad = PriorModel::rademacher(2);
  const auto ch = ChannelModel::committee(2);
  const SePhase below = se_phase(1.5, {SeInit::Uninformed, SeInit::Informed}, rad, ch);
  const SePhase above = se_phase(1.7, {SeInit::Uninformed, SeInit::Informed}, rad, ch);
  for (const SePhase* ph : {&below, &above}) {
    for (const auto& p : ph->points) CHECK(p.second.f_rs <= ph->points[ph->dominant].second.f_rs);
  }
  CHECK(below.points[below.dominant].second.branch == Branch::NonSpecialized);
  CHECK(above.points[above.dominant].second.branch == Branch::Perfect);
}

TEST_CASE("generalization error decreases with alpha") {
  const auto prior = PriorModel::gaussian(2);
  const auto ch = ChannelModel::committee(2);
  double last = 0.25;
  for (double alpha : {0.5, 1.0, 1.5, 2.5, 3.5, 5.0}) {
    const SeFixedPoint fp = se_run(initial_overlap(SeInit::Uninformed, prior), alpha, prior, ch);
    CHECK(fp.eps_g < last);
    last = fp.eps_g;
  }
}

TEST_CASE("transition locators") {
  const auto g = PriorModel::gaussian(2);
  const auto ch = ChannelModel::committee(2);
  CHECK(transition_indicator(TransitionKind::Spec, 1.8, g, ch) < 0.0);
  CHECK(transition_indicator(TransitionKind::Spec, 2.3, g, ch) > 0.0);
  CHECK_THROWS_AS(find_transition(TransitionKind::Spec, 0.5, 1.0, g, ch), Error);
  CHECK_THROWS_AS(find_transition(TransitionKind::IT, 1.0, 3.0, g, ch), Error);
  const TransitionResult r = find_transition(TransitionKind::Spec, 1.5, 2.5, g, ch, 1e-2);
  CHECK(r.hi - r.lo <= 1e-2);
  CHECK(r.alpha > 1.9);
  CHECK(r.alpha < 2.2);
  // Parity: the specialization mode at q = 0 grows by 4 alpha / pi^2.
  const auto par = ChannelModel::parity();
  CHECK(specialization_growth(2.0, g, par) == doctest::Approx(8.0 / (std::numbers::pi * std::numbers::pi)).epsilon(1e-5));
}

TEST_CASE("reruns are bit-identical") {
  const auto prior = PriorModel::rademacher(2);
  const auto ch = ChannelModel::committee(2);
  const SeFixedPoint a = se_run(initial_overlap(SeInit::Uninformed, prior), 1.6, prior, ch);
  const SeFixedPoint b = se_run(initial_overlap(SeInit::Uninformed, prior), 1.6, prior, ch);
  CHECK(a.q == b.q);
  CHECK(a.f_rs == b.f_rs);
  const McEstimate m1 = gen_error_k2(0.3, 0.2, 10'000, 9);
  const McEstimate m2 = gen_error_k2(0.3, 0.2, 10'000, 9);
  CHECK(m1.value == m2.value);
}
