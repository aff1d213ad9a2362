#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "committee/channels.hpp"
#include "committee/error.hpp"

using namespace committee;

namespace {

Mat mat2(double a, double b, double c, double d) {
  Mat m(2, 2);
  m << a, b, c, d;
  return m;
}

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

Mat random_spd(Rng& rng, int k, double floor) {
  Mat a(k, k);
  for (int i = 0; i < k * k; ++i) a.data()[i] = rng.normal();
  return a * a.transpose() / k + floor * Mat::Identity(k, k);
}

const double kLog2 = std::numbers::ln2;

}  // namespace

TEST_CASE("z_out reference values") {
  const auto com = ChannelModel::committee(2);
  const auto par = ChannelModel::parity();
  const Mat eye = Mat::Identity(2, 2);
  CHECK(z_out(1, vec2(0, 0), eye, com) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(z_out(0, vec2(0, 0), eye, com) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(z_out(1, vec2(0, 0), mat2(1, 0.5, 0.5, 1), par) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK_THROWS_AS(z_out(0, vec2(0, 0), eye, par), Error);
  CHECK_THROWS_AS(z_out(2, vec2(0, 0), eye, com), Error);

  // MC label frequencies for the parity example.
  Rng rng(8);
  const int n = 4'000'000;
  const double c = std::sqrt(0.75);
  int plus = 0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    const double y = 0.5 * x + c * rng.normal();
    plus += (x * y > 0);
  }
  CHECK(std::abs(plus / double(n) - 2.0 / 3.0) < 1e-3);
}

TEST_CASE("labels are normalized") {
  Rng rng(1);
  for (auto ch : {ChannelModel::committee(2), ChannelModel::parity(), ChannelModel::committee(1)}) {
    for (int t = 0; t < 100; ++t) {
      const Mat v = random_spd(rng, ch.k, 0.05);
      Vec w(ch.k);
      for (int i = 0; i < ch.k; ++i) w(i) = 1.5 * rng.normal();
      double total = 0;
      for (double y : label_support(ch)) total += z_out(y, w, v, ch);
      CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
    }
  }
  // K = 3 goes through the sampled orthant path; masses still add to one exactly.
  const auto ch3 = ChannelModel::committee(3);
  Vec w3(3);
  w3 << 0.1, -0.3, 0.2;
  double total = 0;
  for (double y : label_support(ch3)) total += z_out(y, w3, Mat::Identity(3, 3), ch3);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("g_out reference values") {
  const auto com = ChannelModel::committee(2);
  const Mat eye = Mat::Identity(2, 2);
  const double s = std::sqrt(2 / std::numbers::pi);
  Vec g = g_out(vec2(0, 0), 1, eye, com);
  CHECK(g(0) == doctest::Approx(s).epsilon(1e-10));
  CHECK(g(1) == doctest::Approx(s).epsilon(1e-10));
  g = g_out(vec2(0, 0), -1, eye, com);
  CHECK(g(0) == doctest::Approx(-s).epsilon(1e-10));
  g = g_out(vec2(10, 10), 1, eye, com);
  CHECK(g.norm() < 1e-6);
  CHECK(dg_out(vec2(10, 10), 1, eye, com).norm() < 1e-6);
  CHECK_THROWS_AS(g_out(vec2(-60, -60), 1, eye, com), Error);
  try {
    g_out(vec2(-60, -60), 1, eye, com);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ImpossibleOutcome);
  }

  // Conditioned-sample MC for y = +1 at the origin.
  Rng rng(4);
  double acc = 0;
  int hits = 0;
  for (int i = 0; i < 10'000'000; ++i) {
    const double x = rng.normal(), y = rng.normal();
    if (x > 0 && y > 0) {
      acc += x;
      ++hits;
    }
  }
  CHECK(std::abs(acc / hits - s) < 1e-3);

  // Z = Phi(w1) Phi(-w2) + Phi(-w1) Phi(w2) is flat along each axis at the
  // origin; only the cross term survives: -2 phi(0)^2 / Z = -2/pi.
  const Mat d0 = dg_out(vec2(0, 0), 0, eye, com);
  CHECK(std::abs(d0(0, 0)) < 1e-12);
  CHECK(std::abs(d0(1, 1)) < 1e-12);
  CHECK(d0(0, 1) == doctest::Approx(-2.0 / std::numbers::pi).epsilon(1e-10));
  CHECK(d0(0, 1) == d0(1, 0));
}

TEST_CASE("score and Hessian match finite differences") {
  Rng rng(21);
  const double h = 1e-5;
  int checked = 0;
  for (auto ch : {ChannelModel::committee(2), ChannelModel::parity(), ChannelModel::linear(2, 0.3)}) {
    for (int t = 0; t < 100; ++t) {
      const Mat v = random_spd(rng, 2, 0.2);
      const Vec w = vec2(rng.normal(), rng.normal());
      double y;
      if (ch.discrete()) {
        const auto sup = label_support(ch);
        y = sup[static_cast<std::size_t>(rng.uniform() * sup.size()) % sup.size()];
      } else {
        y = 1.2 * rng.normal();
      }
      if (z_out(y, w, v, ch) < 1e-6) continue;
      const OutputMoments m = out_moments(y, w, v, ch);
      Mat fd_hess(2, 2);
      for (int i = 0; i < 2; ++i) {
        Vec wp = w, wm = w;
        wp(i) += h;
        wm(i) -= h;
        const double fd = (std::log(z_out(y, wp, v, ch)) - std::log(z_out(y, wm, v, ch))) / (2 * h);
        CHECK(std::abs(fd - m.g(i)) < 1e-4);
        fd_hess.col(i) = (g_out(wp, y, v, ch) - g_out(wm, y, v, ch)) / (2 * h);
      }
      CHECK((fd_hess - m.dg).cwiseAbs().maxCoeff() < 1e-4);
      CHECK(m.dg == m.dg.transpose());
      ++checked;
    }
  }
  CHECK(checked > 250);
}

TEST_CASE("Hessian needs V^{-1} on both sides") {
  // Dropping the right-hand inverse disagrees with finite differences once V != I.
  const auto ch = ChannelModel::committee(2);
  const Mat v = mat2(0.5, 0.2, 0.2, 0.3);
  const Vec w = vec2(0.3, -0.2);
  const double y = 0.0;
  const Vec mean = w;
  const auto orth = all_orthant_partial_moments(mean, v);
  double mass = 0;
  Vec first = Vec::Zero(2);
  Mat second = Mat::Zero(2, 2);
  for (int p : {1, 2}) {
    mass += orth[p].mass;
    first += orth[p].first;
    second += orth[p].second;
  }
  const Mat vi = spd_inverse(v);
  const Vec g = vi * first / mass;
  const Mat one_sided = vi * second / mass - vi - g * g.transpose();
  const Mat two_sided = vi * second / mass * vi - vi - g * g.transpose();
  Mat fd(2, 2);
  const double h = 1e-5;
  for (int i = 0; i < 2; ++i) {
    Vec wp = w, wm = w;
    wp(i) += h;
    wm(i) -= h;
    fd.col(i) = (g_out(wp, y, v, ch) - g_out(wm, y, v, ch)) / (2 * h);
  }
  CHECK((fd - two_sided).cwiseAbs().maxCoeff() < 1e-5);
  CHECK((fd - one_sided).cwiseAbs().maxCoeff() > 1e-2);
}

TEST_CASE("expected score vanishes") {
  Rng rng(33);
  for (auto ch : {ChannelModel::committee(2), ChannelModel::parity()}) {
    for (int t = 0; t < 100; ++t) {
      const Mat v = random_spd(rng, 2, 0.1);
      const Vec w = vec2(rng.normal(), rng.normal());
      Vec total = Vec::Zero(2);
      for (double y : label_support(ch)) {
        if (z_out(y, w, v, ch) < 1e-300) continue;
        const OutputMoments m = out_moments(y, w, v, ch);
        total += m.z * m.g;
      }
      CHECK(total.norm() < 1e-8);
    }
  }
}

TEST_CASE("prior denoisers, Gaussian") {
  const auto prior = PriorModel::gaussian(2);
  const Mat eye = Mat::Identity(2, 2);
  Vec fw = f_w(eye, vec2(0, 0), prior);
  Mat fc = f_c(eye, vec2(0, 0), prior);
  CHECK(fw.norm() < 1e-15);
  CHECK((fc - 0.5 * eye).norm() < 1e-14);
  fw = f_w(eye, vec2(2, 0), prior);
  CHECK(fw(0) == doctest::Approx(1.0));
  CHECK(std::abs(fw(1)) < 1e-15);
  CHECK_THROWS_AS(f_w(mat2(1, 1, 1, 1), vec2(0, 0), prior), Error);

  // Self-normalized importance sampling from the prior, with 3 sigma bounds.
  Rng rng(77);
  const Mat sigma = mat2(0.8, 0.3, 0.3, 1.5);
  const Vec t = vec2(0.7, -1.1);
  const Mat a = spd_inverse(sigma);
  const Vec b = a * t;
  const int n = 2'000'000;
  std::vector<double> wts(n);
  std::vector<Vec> samples(n);
  double wsum = 0;
  for (int i = 0; i < n; ++i) {
    const Vec w = vec2(rng.normal(), rng.normal());
    wts[i] = std::exp(-0.5 * w.dot(a * w) + b.dot(w));
    samples[i] = w;
    wsum += wts[i];
  }
  Vec mean = Vec::Zero(2);
  for (int i = 0; i < n; ++i) mean += wts[i] / wsum * samples[i];
  Mat cov = Mat::Zero(2, 2);
  for (int i = 0; i < n; ++i) cov += wts[i] / wsum * (samples[i] - mean) * (samples[i] - mean).transpose();
  double ess_inv = 0;
  for (int i = 0; i < n; ++i) ess_inv += (wts[i] / wsum) * (wts[i] / wsum);
  const double ess = 1.0 / ess_inv;
  const Vec exact_mean = f_w(sigma, t, prior);
  const Mat exact_cov = f_c(sigma, t, prior);
  for (int i = 0; i < 2; ++i) {
    CHECK(std::abs(mean(i) - exact_mean(i)) < 3 * std::sqrt(exact_cov(i, i) / ess));
    CHECK(std::abs(cov(i, i) - exact_cov(i, i)) < 3 * exact_cov(i, i) * std::sqrt(2.0 / ess));
  }
}

TEST_CASE("prior denoisers, Rademacher") {
  Mat one = Mat::Identity(1, 1);
  Vec zero = Vec::Zero(1);
  const auto p1 = PriorModel::rademacher(1);
  CHECK(std::abs(f_w(one, zero, p1)(0)) < 1e-15);
  CHECK(f_c(one, zero, p1)(0, 0) == doctest::Approx(1.0));
  CHECK(f_w(one, Vec::Ones(1), p1)(0) == doctest::Approx(std::tanh(1.0)).epsilon(1e-14));

  // Brute-force enumeration for a correlated K = 2 case.
  const auto p2 = PriorModel::rademacher(2);
  const Mat sigma = mat2(0.9, 0.4, 0.4, 0.6);
  const Vec t = vec2(0.5, -0.2);
  const Mat a = spd_inverse(sigma);
  double z = 0;
  Vec m = Vec::Zero(2);
  Mat s2 = Mat::Zero(2, 2);
  for (double w1 : {-1.0, 1.0}) {
    for (double w2 : {-1.0, 1.0}) {
      const Vec w = vec2(w1, w2);
      const double p = std::exp(-0.5 * (w - t).dot(a * (w - t)));
      z += p;
      m += p * w;
      s2 += p * w * w.transpose();
    }
  }
  m /= z;
  const Mat c = s2 / z - m * m.transpose();
  CHECK((f_w(sigma, t, p2) - m).norm() < 1e-13);
  CHECK((f_c(sigma, t, p2) - c).norm() < 1e-13);

  // Diagonal Sigma: f_c diagonal equals 1 - f_w^2.
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    const Mat sd = mat2(0.2 + rng.uniform(), 0, 0, 0.2 + rng.uniform());
    const Vec tt = vec2(rng.normal(), rng.normal());
    const Vec fw = f_w(sd, tt, p2);
    const Mat fc = f_c(sd, tt, p2);
    for (int l = 0; l < 2; ++l) CHECK(fc(l, l) == doctest::Approx(1 - fw(l) * fw(l)).epsilon(1e-12));
  }
}

TEST_CASE("prior free entropy") {
  CHECK(std::abs(psi_p0(Mat::Zero(2, 2), PriorModel::gaussian(2))) < 1e-15);
  CHECK(std::abs(psi_p0(Mat::Zero(2, 2), PriorModel::rademacher(2))) < 1e-12);
  CHECK(psi_p0(Mat::Identity(1, 1), PriorModel::gaussian(1)) == doctest::Approx(0.5 * (1 - kLog2)).epsilon(1e-14));

  // Gaussian closed form against a quadrature of log Z over Y0.
  const auto pg = PriorModel::gaussian(mat2(1.0, 0.3, 0.3, 0.8));
  const Mat r = mat2(1.2, 0.4, 0.4, 0.7);
  const Mat r_half = spd_sqrt(r);
  const Mat rho_half = spd_sqrt(pg.rho);
  const TensorRule rule = tensor_rule(gauss_hermite(30), 2);
  double quad = 0;
  for (std::size_t i = 0; i < rule.size(); ++i) {
    for (std::size_t j = 0; j < rule.size(); j += 1) {
      const Vec w0 = rho_half * rule.point(j);
      const Vec b = r * w0 + r_half * rule.point(i);
      quad += rule.weights[i] * rule.weights[j] * prior_posterior(r, b, pg).log_z;
    }
  }
  CHECK(quad == doctest::Approx(psi_p0(r, pg)).epsilon(1e-10));

  // Rademacher large-r asymptote: psi - Tr(r rho)/2 -> -K log 2.
  Mat big = 50.0 * Mat::Identity(1, 1);
  CHECK(std::abs(psi_p0(big, PriorModel::rademacher(1)) - 25.0 + kLog2) < 1e-6);
  Mat big2 = 50.0 * Mat::Identity(2, 2);
  CHECK(std::abs(psi_p0(big2, PriorModel::rademacher(2)) - 50.0 + 2 * kLog2) < 1e-6);
}

TEST_CASE("channel free entropy") {
  const Mat eye = Mat::Identity(2, 2);
  const auto com = ChannelModel::committee(2);
  CHECK(psi_pout(Mat::Zero(2, 2), eye, com) == doctest::Approx(-1.5 * kLog2).epsilon(1e-12));
  CHECK(psi_pout(eye, eye, com) == 0.0);
  CHECK(psi_pout(Mat::Zero(2, 2), eye, ChannelModel::parity()) == doctest::Approx(-kLog2).epsilon(1e-12));
  CHECK_THROWS_AS(psi_pout(1.1 * eye, eye, com), Error);

  // Label entropy from MC label frequencies.
  Rng rng(12);
  int counts[3] = {0, 0, 0};
  const int n = 1'000'000;
  for (int i = 0; i < n; ++i) {
    const double z[2] = {rng.normal(), rng.normal()};
    counts[static_cast<int>(channel_output(z, com)) + 1]++;
  }
  double ent = 0;
  for (int c : counts) ent += c / double(n) * std::log(c / double(n));
  CHECK(std::abs(ent - psi_pout(Mat::Zero(2, 2), eye, com)) < 3e-3);
}

TEST_CASE("gradient of the channel free entropy is PSD") {
  const Mat rho = Mat::Identity(2, 2);
  for (auto ch : {ChannelModel::committee(2), ChannelModel::parity()}) {
    for (const Mat& q : {mat2(0.3, 0.1, 0.1, 0.2), mat2(0.5, -0.2, -0.2, 0.6), mat2(0.2, 0.19, 0.19, 0.2)}) {
      const double h = 1e-4;
      Mat grad(2, 2);
      for (int i = 0; i < 2; ++i) {
        for (int j = i; j < 2; ++j) {
          Mat e = Mat::Zero(2, 2);
          e(i, j) = e(j, i) = (i == j) ? 1.0 : 0.5;
          grad(i, j) = grad(j, i) = (psi_pout(q + h * e, rho, ch) - psi_pout(q - h * e, rho, ch)) / (2 * h);
        }
      }
      CHECK(min_eigenvalue(grad) > -1e-6);
    }
  }
}

TEST_CASE("linear channel depends on q only through its mean entry") {
  const Mat rho = Mat::Identity(2, 2);
  const auto lin = ChannelModel::linear(2, 0.1);
  // Gamma(q) = 1^T q 1 / K = 0.25 for all three.
  const double a = psi_pout(mat2(0.25, 0.0, 0.0, 0.25), rho, lin);
  const double b = psi_pout(mat2(0.4, -0.05, -0.05, 0.2), rho, lin);
  const double c = psi_pout(mat2(0.1, 0.1, 0.1, 0.2), rho, lin);
  CHECK(std::abs(a - b) < 1e-8);
  CHECK(std::abs(a - c) < 1e-8);
  // Quadrature atoms reproduce the closed form.
  const Mat q = mat2(0.3, 0.1, 0.1, 0.2);
  const Mat v = rho - q;
  const Mat q_half = spd_sqrt(q);
  const TensorRule rule = tensor_rule(gauss_hermite(10), 2);
  double acc = 0;
  for (std::size_t i = 0; i < rule.size(); ++i) {
    for (const auto& at : label_atoms(q_half * rule.point(i), v, spd_inverse(v), lin)) {
      acc += rule.weights[i] * at.weight * at.log_z;
    }
  }
  CHECK(acc == doctest::Approx(psi_pout(q, rho, lin)).epsilon(1e-12));
}

TEST_CASE("model validation") {
  CHECK_THROWS_AS(validate_models(PriorModel::gaussian(3), ChannelModel::parity(3)), Error);
  CHECK_THROWS_AS(validate_models(PriorModel::gaussian(2), ChannelModel::committee(3)), Error);
  CHECK_NOTHROW(validate_models(PriorModel::rademacher(2), ChannelModel::parity()));
  const double z[3] = {0.5, -0.1, 0.0};
  CHECK(channel_output(std::span<const double>(z, 2), ChannelModel::committee(2)) == 0.0);
  CHECK(channel_output(std::span<const double>(z, 2), ChannelModel::parity()) == -1.0);
  CHECK(orthant_label(0, ChannelModel::committee(2)) == 1.0);
  CHECK(orthant_label(1, ChannelModel::committee(2)) == 0.0);
  CHECK(orthant_label(3, ChannelModel::committee(2)) == -1.0);
  CHECK(orthant_label(3, ChannelModel::parity()) == 1.0);
}
