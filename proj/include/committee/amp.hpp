#pragma once

// Finite-size approximate message passing for the committee machine: teacher
// instances, the AMP iteration with its Onsager memory term, overlaps with the
// teacher and generalization estimates.

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "committee/state_evolution.hpp"

namespace committee {

struct TeacherInstance {
  int n = 0;
  int m = 0;
  int k = 0;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  PriorModel prior;
  ChannelModel channel;
  std::vector<float> x;       // m x n, row-major, i.i.d. N(0, 1)
  Eigen::MatrixXd w_star;     // n x K
  std::vector<double> y;      // m labels
};

/// m = round(alpha n). X, W* and the output noise come from separate streams of `seed`.
TeacherInstance generate_instance(int n, double alpha, const PriorModel& prior, const ChannelModel& ch,
                                  std::uint64_t seed);

enum class AmpInit { Random, Informed };

std::string_view to_string(AmpInit init);

struct AmpConfig {
  ChannelConfig channel;
  double damping = 0.0;          // eta in (1 - eta) new + eta old
  double tol = 1e-7;             // mean_i ||W_i^{t+1} - W_i^t||
  int max_iters = 1000;
  double pd_floor = 1e-12;       // eigenvalue floor for V and Sigma^{-1}
  double init_variance = 1e-2;   // random init W_i ~ N(0, init_variance I)
  double informed_c_scale = 1e-3;  // informed init C_i = informed_c_scale * rho
  bool onsager = true;           // keep the memory term in the omega update
  std::uint64_t init_seed = 0;   // combined with the instance seed for the random init
};

/// Per-unit quantities are packed: vectors as [i * K + a], matrices as [i * K * K + a * K + b].
struct AmpState {
  int n = 0, m = 0, k = 0;
  int iteration = 0;
  std::vector<double> w_hat, c_hat;       // n
  std::vector<double> omega, v;           // m
  std::vector<double> g, dg;              // m
  std::vector<double> sigma, sigma_inv;   // n
  std::vector<double> t;                  // n

  Vec w_hat_at(int i) const;
  Mat c_hat_at(int i) const;
  Eigen::MatrixXd w_hat_matrix() const;   // n x K
};

AmpState amp_init(const TeacherInstance& inst, AmpInit init, const AmpConfig& cfg = {});

struct AmpStepInfo {
  double delta = 0.0;       // mean_i ||W_i^{t+1} - W_i^t||
  int clipped_v = 0;        // eigenvalues raised to pd_floor
  int clipped_sigma = 0;
};

/// One sweep of the four update blocks, followed by damping. Throws
/// ChannelUnderflow when a training label becomes impossible under (omega, V),
/// NonPdCovariance when a covariance cannot be repaired.
AmpStepInfo amp_step(AmpState& state, const TeacherInstance& inst, const AmpConfig& cfg = {});

struct OverlapReport {
  Mat q;               // W_hat^T W* / n, columns permuted to the best matching
  std::vector<int> permutation;  // student unit l is matched to teacher unit permutation[l]
  double q00 = 0.0;
  double q01 = 0.0;
};

/// Alignment maximizes sum_l |q_{l, pi(l)}| over permutations (no sign flips).
OverlapReport measure_overlap(const Eigen::MatrixXd& w_hat, const Eigen::MatrixXd& w_star);

struct AmpTracePoint {
  int iteration = 0;
  double delta = 0.0;
  double q00 = 0.0;
  double q01 = 0.0;
  int clipped = 0;
};

struct RunReport {
  OverlapReport overlap;
  Mat q_self;                 // W_hat^T W_hat / n
  double eps_g_closed = 0.0;  // gen_error at q_self
  McEstimate eps_g_empirical;
  int iterations = 0;
  bool converged = false;
  std::vector<AmpTracePoint> trace;
};

/// Runs until the mean update falls below tol or max_iters. With n_test > 0 also
/// estimates the test error on fresh samples.
std::pair<AmpState, RunReport> amp_run(const TeacherInstance& inst, AmpInit init, const AmpConfig& cfg = {},
                                       int n_test = 0, std::uint64_t test_seed = 1);

struct LabelPrediction {
  double y_hat = 0.0;                 // posterior-mean label
  std::vector<double> labels;         // support (discrete channels only)
  std::vector<double> probabilities;
  bool clipped = false;               // rho - q_amp had negative eigenvalues
};

/// omega = x^T W_hat / sqrt(n), V = rho - q_amp.
LabelPrediction predict_label(std::span<const double> x_new, const AmpState& state, const Mat& q_amp,
                              const PriorModel& prior, const ChannelModel& ch, const ChannelConfig& cfg = {});

LabelPrediction predict_from_field(const Vec& omega, const Mat& v, const ChannelModel& ch,
                                   const ChannelConfig& cfg = {});

/// (1/2) mean (y_hat - y)^2 over n_test fresh inputs. The teacher and student
/// fields of a fresh Gaussian input are jointly Gaussian with the Gram matrix of
/// [W*, W_hat] / n, so they are sampled in that 2K-dimensional space.
McEstimate empirical_gen_error(const AmpState& state, const TeacherInstance& inst, const Mat& q_amp, int n_test,
                               std::uint64_t seed, const ChannelConfig& cfg = {});

}  // namespace committee
