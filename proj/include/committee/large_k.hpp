#pragma once

// K -> infinity limit of the committee machine with a Gaussian prior, under the
// committee-symmetric ansatz q = q_d I + (q_a / K) 1 1^T.

#include <vector>

#include "committee/state_evolution.hpp"

namespace committee {

/// gamma = (2/pi)(q_a + arcsin q_d), the output correlation of the committee.
double gamma_large_k(double q_d, double q_a);

/// I_C(gamma) = 2 int Dx H(x s) log H(x s), s = sqrt(gamma / (1 - gamma)).
/// Throws Domain outside [0, 1); returns 0 within 1e-12 of gamma = 1.
double i_c_large_k(double gamma);

/// dI_C / dgamma by quadrature of the differentiated integrand.
double i_c_large_k_derivative(double gamma);

/// arccos(gamma) / pi. Throws Domain when gamma leaves [0, 1].
double gen_error_large_k(double q_d, double q_a);

struct LargeKPoint {
  double q_d = 0.0;
  double q_a = 0.0;
  double chi = 0.0;  // q_a + q_d = 1 - chi / K in the scaled regime
  double gamma = 0.0;
};

struct LargeKBranch {
  double alpha = 0.0;  // alpha for the unscaled regime, alpha / K for the scaled one
  LargeKPoint point;
  double f = 0.0;      // free entropy per hidden unit (scaled) or per sample size (unscaled)
  double eps_g = 0.0;
  Branch branch = Branch::NonSpecialized;
  bool stable = true;     // local maximum of the potential along q_d
  bool converged = true;
};

struct LargeKConfig {
  double tol = 1e-12;          // bisection tolerance on the overlap
  double merge_tol = 1e-6;     // fixed points closer than this are the same
  int grid_points = 400;       // linear part of the q_d scan, plus a log-spaced tail toward 1
};

/// alpha = O(1): q_d = 0 and q_a = 2 alpha (1 - q_a) dI_C/dq_a.
LargeKBranch solve_unscaled(double alpha, const LargeKConfig& cfg = {});

/// alpha = alpha_bar K: every fixed point of the q_d equation with chi^{-1} = 2 alpha_bar dI_C/dq_a,
/// sorted by q_d. The non-specialized point q_d = 0 is always first.
std::vector<LargeKBranch> solve_scaled(double alpha_bar, const LargeKConfig& cfg = {});

/// The branch with the largest free entropy (ties go to the non-specialized one).
LargeKBranch dominant_scaled(double alpha_bar, const LargeKConfig& cfg = {});

/// dF/dq_d at the non-specialized point, with F the driving term of the q_d iteration.
double stability_nonspecialized(double alpha_bar);

/// Smallest alpha_bar with a stable specialized solution (bisection on [lo, hi]).
TransitionResult large_k_spinodal(double lo, double hi, double tol = 1e-4, const LargeKConfig& cfg = {});

/// alpha_bar where the specialized branch overtakes the non-specialized one.
TransitionResult large_k_spec_transition(double lo, double hi, double tol = 1e-4, const LargeKConfig& cfg = {});

}  // namespace committee
