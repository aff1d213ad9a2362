#pragma once

// Bayes-optimal state evolution, the replica-symmetric potential, branch
// selection, transition locators and generalization error from overlaps.

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "committee/channels.hpp"

namespace committee {

enum class Branch { NonSpecialized, Specialized, Perfect };
enum class SeInit { Uninformed, NonSpecialized, Informed };
enum class TransitionKind { Spec, Spinodal, IT, Perf };

std::string_view to_string(Branch b);
std::string_view to_string(SeInit i);
std::string_view to_string(TransitionKind k);

struct SeConfig {
  ChannelConfig channel;
  double tol = 1e-10;           // ||q^{t+1} - q^t||_F
  int max_iters = 10000;
  double damping = 0.0;
  double perfect_tol = 1e-10;   // lambda_min(rho - q) below this snaps to q = rho
  double perfect_q00 = 1e-4;    // perfect branch when max |rho - q| is below this
  double spec_threshold = 1e-6; // |mean diag - mean off-diag| above this is specialized
  double degenerate_tol = 1e-9; // equal free entropies within this are degenerate
  double init_scale = 1e-6;
  double init_perturbation = 1e-4;
  bool record_trace = false;
};

/// Starting overlap for the canonical initial conditions.
Mat initial_overlap(SeInit init, const PriorModel& prior, const SeConfig& cfg = {});

struct SeStep {
  Mat q_next;
  Mat q_hat;
  bool perfect = false;  // q sits at rho; q_hat is then formally infinite and left at zero
};

/// alpha E_xi sum_y Z g g^T with omega = q^{1/2} xi, V = rho - q.
Mat channel_overlap_hat(const Mat& q, double alpha, const Mat& rho, const ChannelModel& ch,
                        const SeConfig& cfg = {});

/// E[f_w f_w^T] under the prior auxiliary problem with gain q_hat.
Mat prior_overlap(const Mat& q_hat, const PriorModel& prior, const SeConfig& cfg = {});

/// One state-evolution update. Throws Domain when q or rho - q is not PSD.
SeStep se_step(const Mat& q, double alpha, const PriorModel& prior, const ChannelModel& ch,
               const SeConfig& cfg = {});

struct SeTracePoint {
  double residual = 0.0;
  double min_eig_q = 0.0;
  double min_eig_rho_minus_q = 0.0;
};

struct SeFixedPoint {
  Mat q;
  Mat q_hat;
  double alpha = 0.0;
  double q00 = 0.0;
  double q01 = 0.0;
  double f_rs = 0.0;
  double eps_g = 0.0;
  Branch branch = Branch::NonSpecialized;
  int iterations = 0;
  bool converged = false;
  double residual = 0.0;
  std::vector<SeTracePoint> trace;
};

SeFixedPoint se_run(const Mat& q0, double alpha, const PriorModel& prior, const ChannelModel& ch,
                    const SeConfig& cfg = {});

/// f_RS = psi_P0(q_hat) + alpha Psi_Pout(q; rho) - Tr(q_hat q) / 2.
double free_entropy(const Mat& q, const Mat& q_hat, double alpha, const PriorModel& prior,
                    const ChannelModel& ch, const SeConfig& cfg = {});

/// Free entropy of the perfect-learning point for discrete priors with a
/// deterministic channel (-K log 2 for Rademacher); empty otherwise.
std::optional<double> perfect_free_entropy(const PriorModel& prior, const ChannelModel& ch);

Branch classify_branch(const Mat& q, const Mat& rho, const SeConfig& cfg = {});

/// Bayes-optimal generalization error (1/2) E[(<y> - y)^2] by deterministic quadrature.
double gen_error(const Mat& q, const Mat& rho, const ChannelModel& ch, const SeConfig& cfg = {});

struct McEstimate {
  double value = 0.0;
  double std_error = 0.0;
};

/// K = 2 committee with rho = I and q = q_d I + (q_a / 2) 1 1^T, by Monte Carlo
/// on the four-dimensional Gaussian representation of 1/2 - 2 eps.
McEstimate gen_error_k2(double q_d, double q_a, int samples = 1'000'000, std::uint64_t seed = 1);

struct GibbsBayes {
  McEstimate gibbs;
  McEstimate bayes;
  double ratio = 0.0;
  double ratio_stderr = 0.0;
};

/// Monte Carlo Gibbs (independent posterior sample) and Bayes (posterior mean) errors.
GibbsBayes gibbs_vs_bayes(const Mat& q, const Mat& rho, const ChannelModel& ch, int samples = 400'000,
                          std::uint64_t seed = 1, const SeConfig& cfg = {});

/// Fixed points from the requested initial conditions and the dominant one
/// (largest f_RS); `degenerate` is set when the top two are within degenerate_tol.
struct SePhase {
  std::vector<std::pair<SeInit, SeFixedPoint>> points;
  int dominant = 0;
  bool degenerate = false;
};

SePhase se_phase(double alpha, const std::vector<SeInit>& inits, const PriorModel& prior,
                 const ChannelModel& ch, const SeConfig& cfg = {});

/// Growth factor of a specialization perturbation around the non-specialized
/// fixed point; the continuous specialization transition is where it crosses 1.
double specialization_growth(double alpha, const PriorModel& prior, const ChannelModel& ch,
                             const SeConfig& cfg = {});

/// Signed indicator, negative below the transition and positive above it.
double transition_indicator(TransitionKind kind, double alpha, const PriorModel& prior,
                            const ChannelModel& ch, const SeConfig& cfg = {});

struct TransitionResult {
  double alpha = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  int evaluations = 0;
};

/// Bisection on the indicator; throws Bracket when it has the same sign at both ends.
TransitionResult find_transition(TransitionKind kind, double alpha_lo, double alpha_hi,
                                 const PriorModel& prior, const ChannelModel& ch, double tol_alpha = 1e-3,
                                 const SeConfig& cfg = {});

}  // namespace committee
