#include "committee/large_k.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "committee/error.hpp"

namespace committee {

namespace {

constexpr double kTwoOverPi = 2.0 / std::numbers::pi;
constexpr double kEdge = 1e-12;

// Integrals in x ~ N(0,1) are smooth when the slope s = sqrt(gamma / (1 - gamma))
// is at most 1. Beyond that the integrand is a sharp step in x, so integrate
// over t = x s instead, where H(t) log H(t) decays like a Gaussian on both sides.
const QuadratureRule& x_rule() {
  static const QuadratureRule r = gauss_hermite(160);
  return r;
}

struct TRule {
  std::vector<double> t, w, h_log_h;
};

const TRule& t_rule() {
  static const TRule r = [] {
    const QuadratureRule gl = gauss_legendre(8);
    const double lo = -14.0, width = 0.5;
    const int panels = 56;
    TRule out;
    for (int p = 0; p < panels; ++p) {
      const double a = lo + p * width;
      for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
        const double t = a + 0.5 * width * (gl.nodes[i] + 1.0);
        out.t.push_back(t);
        out.w.push_back(0.5 * width * gl.weights[i]);
        out.h_log_h.push_back(h_function(t) * log_h_function(t));
      }
    }
    return out;
  }();
  return r;
}

void check_gamma(double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0)) {
    throw Error(ErrorCode::Domain, "gamma must lie in [0, 1), got " + std::to_string(gamma));
  }
}

// atanh(erf(t / sqrt 2)) = (log H(-t) - log H(t)) / 2, odd in t.
double half_log_ratio(double t) {
  if (std::abs(t) < 5.0) return std::atanh(std::erf(t / std::numbers::sqrt2));
  return 0.5 * (log_h_function(-t) - log_h_function(t));
}

double one_minus_sq(double q) { return (1.0 - q) * (1.0 + q); }

// 1 / sqrt(1 - q^2) - 1 without cancellation at small q.
double inv_sqrt_minus_one(double q) {
  const double r = std::sqrt(one_minus_sq(q));
  return q * q / ((1.0 + r) * r);
}

double scaled_gamma(double q_d) { return kTwoOverPi * (1.0 - q_d + std::asin(q_d)); }

double scaled_ia(double q_d) {
  return kTwoOverPi * i_c_large_k_derivative(std::min(scaled_gamma(q_d), 1.0 - 2 * kEdge));
}

double scaled_residual(double q_d, double alpha_bar) {
  return q_d - 2.0 * (1.0 - q_d) * inv_sqrt_minus_one(q_d) * alpha_bar * scaled_ia(q_d);
}

double scaled_potential(double q_d, double alpha_bar) {
  return 0.5 * q_d + 0.5 * std::log1p(-q_d) + alpha_bar * i_c_large_k(std::min(scaled_gamma(q_d), 1.0 - 2 * kEdge));
}

template <class F>
double bisect(F&& f, double lo, double hi, double tol) {
  const bool rising = f(hi) > 0.0;
  for (int it = 0; it < 200 && hi - lo > tol; ++it) {
    const double mid = 0.5 * (lo + hi);
    if ((f(mid) > 0.0) == rising) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return 0.5 * (lo + hi);
}

LargeKBranch scaled_branch(double q_d, double alpha_bar, bool stable) {
  LargeKBranch b;
  b.alpha = alpha_bar;
  b.point.q_d = q_d;
  b.point.q_a = 1.0 - q_d;
  b.point.gamma = scaled_gamma(q_d);
  b.point.chi = 1.0 / (2.0 * alpha_bar * scaled_ia(q_d));
  b.f = scaled_potential(q_d, alpha_bar);
  b.eps_g = std::acos(std::min(b.point.gamma, 1.0)) / std::numbers::pi;
  b.branch = q_d > 0.0 ? Branch::Specialized : Branch::NonSpecialized;
  b.stable = stable;
  return b;
}

std::vector<double> scan_grid(const LargeKConfig& cfg) {
  std::vector<double> g;
  for (int i = 1; i <= cfg.grid_points; ++i) g.push_back(0.99 * i / cfg.grid_points);
  for (double u = 2.05; u <= 12.0; u += 0.05) g.push_back(1.0 - std::pow(10.0, -u));
  std::sort(g.begin(), g.end());
  g.erase(std::unique(g.begin(), g.end()), g.end());
  return g;
}

}  // namespace

double gamma_large_k(double q_d, double q_a) {
  if (!(q_d >= 0.0 && q_d <= 1.0)) throw Error(ErrorCode::Domain, "q_d must lie in [0, 1]");
  if (!(q_a + q_d >= -1e-12 && q_a + q_d <= 1.0 + 1e-12)) throw Error(ErrorCode::Domain, "q_a + q_d must lie in [0, 1]");
  return kTwoOverPi * (q_a + std::asin(q_d));
}

double i_c_large_k(double gamma) {
  if (gamma >= 1.0 - kEdge && gamma < 1.0) return 0.0;
  check_gamma(gamma);
  if (gamma == 0.0) return -std::numbers::ln2;
  const double s = std::sqrt(gamma / (1.0 - gamma));
  double acc = 0.0;
  if (s <= 1.0) {
    const QuadratureRule& r = x_rule();
    for (std::size_t i = 0; i < r.nodes.size(); ++i) {
      const double t = r.nodes[i] * s;
      acc += r.weights[i] * h_function(t) * log_h_function(t);
    }
  } else {
    const TRule& r = t_rule();
    for (std::size_t i = 0; i < r.t.size(); ++i) acc += r.w[i] * r.h_log_h[i] * normal_pdf(r.t[i] / s) / s;
  }
  return 2.0 * acc;
}

double i_c_large_k_derivative(double gamma) {
  check_gamma(gamma);
  const double c = 1.0 - gamma;
  if (gamma == 0.0) return 1.0 / std::numbers::pi;
  const double s = std::sqrt(gamma / c);
  if (s <= 1.0) {
    // dI/ds = 2 E[x phi(x s) atanh(erf(x s / sqrt 2))], and ds/dgamma = 1 / (2 s c^2).
    const QuadratureRule& r = x_rule();
    double acc = 0.0;
    for (std::size_t i = 0; i < r.nodes.size(); ++i) {
      const double x = r.nodes[i];
      acc += r.weights[i] * 2.0 * x * normal_pdf(x * s) * half_log_ratio(x * s) / s;
    }
    return acc / (2.0 * c * c);
  }
  const TRule& r = t_rule();
  double acc = 0.0;
  for (std::size_t i = 0; i < r.t.size(); ++i) {
    const double t = r.t[i];
    acc += r.w[i] * 2.0 * r.h_log_h[i] * normal_pdf(t / s) / s * (t * t / (s * s * s) - 1.0 / s);
  }
  return acc / (2.0 * s * c * c);
}

double gen_error_large_k(double q_d, double q_a) {
  const double gamma = gamma_large_k(q_d, q_a);
  if (!(gamma >= -1e-12 && gamma <= 1.0 + 1e-12)) {
    throw Error(ErrorCode::Domain, "gamma outside [0, 1]: " + std::to_string(gamma));
  }
  return std::acos(std::clamp(gamma, 0.0, 1.0)) / std::numbers::pi;
}

LargeKBranch solve_unscaled(double alpha, const LargeKConfig& cfg) {
  if (!(alpha >= 0.0)) throw Error(ErrorCode::Domain, "alpha must be nonnegative");
  const auto residual = [alpha](double q_a) {
    return q_a - 2.0 * alpha * (1.0 - q_a) * kTwoOverPi * i_c_large_k_derivative(kTwoOverPi * q_a);
  };
  const double q_a = alpha == 0.0 ? 0.0 : bisect(residual, 0.0, 1.0, cfg.tol);
  LargeKBranch b;
  b.alpha = alpha;
  b.point.q_a = q_a;
  b.point.gamma = kTwoOverPi * q_a;
  b.f = 0.5 * q_a + 0.5 * std::log1p(-q_a) + alpha * i_c_large_k(b.point.gamma);
  b.eps_g = gen_error_large_k(0.0, q_a);
  b.converged = std::abs(residual(q_a)) < 1e-8;
  return b;
}

std::vector<LargeKBranch> solve_scaled(double alpha_bar, const LargeKConfig& cfg) {
  if (!(alpha_bar > 0.0)) throw Error(ErrorCode::Domain, "alpha_bar must be positive");
  std::vector<LargeKBranch> out{scaled_branch(0.0, alpha_bar, true)};
  const std::vector<double> grid = scan_grid(cfg);
  const auto res = [alpha_bar](double q) { return scaled_residual(q, alpha_bar); };
  double prev_q = grid.front(), prev_r = res(prev_q);
  for (std::size_t i = 1; i < grid.size(); ++i) {
    const double q = grid[i], r = res(q);
    if ((prev_r > 0.0) != (r > 0.0)) {
      const double root = bisect(res, prev_q, q, cfg.tol);
      if (out.back().point.q_d + cfg.merge_tol < root) {
        // Residual rising through zero: the q_d iteration contracts there.
        out.push_back(scaled_branch(root, alpha_bar, r > 0.0));
      }
    }
    prev_q = q;
    prev_r = r;
  }
  return out;
}

LargeKBranch dominant_scaled(double alpha_bar, const LargeKConfig& cfg) {
  const std::vector<LargeKBranch> all = solve_scaled(alpha_bar, cfg);
  LargeKBranch best = all.front();
  for (const LargeKBranch& b : all) {
    if (b.stable && b.f > best.f) best = b;
  }
  return best;
}

double stability_nonspecialized(double alpha_bar) {
  // F(q_d) = 2 alpha_bar (dI_C/dq_d - dI_C/dq_a) at q_a = 1 - q_d, with I_C a function of gamma only.
  const auto f = [alpha_bar](double q_d) {
    const double gamma = kTwoOverPi * (1.0 - q_d + std::asin(q_d));
    const double dgamma = i_c_large_k_derivative(gamma) * kTwoOverPi;
    return 2.0 * alpha_bar * dgamma * (1.0 / std::sqrt(one_minus_sq(q_d)) - 1.0);
  };
  const double h = 1e-4;
  return (f(h) - f(-h)) / (2.0 * h);
}

namespace {

double spinodal_indicator(double alpha_bar, const LargeKConfig& cfg) {
  for (const LargeKBranch& b : solve_scaled(alpha_bar, cfg)) {
    if (b.branch == Branch::Specialized && b.stable) return 1.0;
  }
  return -1.0;
}

double spec_indicator(double alpha_bar, const LargeKConfig& cfg) {
  const std::vector<LargeKBranch> all = solve_scaled(alpha_bar, cfg);
  double best = -std::numeric_limits<double>::infinity();
  for (const LargeKBranch& b : all) {
    if (b.branch == Branch::Specialized && b.stable) best = std::max(best, b.f);
  }
  if (!std::isfinite(best)) return -1.0;
  return best - all.front().f;
}

template <class F>
TransitionResult bisect_alpha(F&& indicator, const char* name, double lo, double hi, double tol) {
  if (!(lo < hi) || !(tol > 0.0)) throw Error(ErrorCode::Config, "invalid bracket");
  TransitionResult res;
  const double f_lo = indicator(lo), f_hi = indicator(hi);
  res.evaluations = 2;
  if ((f_lo > 0.0) == (f_hi > 0.0)) {
    throw Error(ErrorCode::Bracket, std::string(name) + " indicator has the same sign at alpha_bar = " +
                                        std::to_string(lo) + " and " + std::to_string(hi));
  }
  const bool rising = f_hi > 0.0;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    ++res.evaluations;
    if ((indicator(mid) > 0.0) == rising) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  res.lo = lo;
  res.hi = hi;
  res.alpha = 0.5 * (lo + hi);
  return res;
}

}  // namespace

TransitionResult large_k_spinodal(double lo, double hi, double tol, const LargeKConfig& cfg) {
  return bisect_alpha([&](double a) { return spinodal_indicator(a, cfg); }, "spinodal", lo, hi, tol);
}

TransitionResult large_k_spec_transition(double lo, double hi, double tol, const LargeKConfig& cfg) {
  return bisect_alpha([&](double a) { return spec_indicator(a, cfg); }, "spec", lo, hi, tol);
}

}  // namespace committee
