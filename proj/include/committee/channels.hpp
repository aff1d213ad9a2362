#pragma once

// Weight priors and output channels together with their denoisers and the
// free entropies of the two scalar-like auxiliary inference problems.

#include <string_view>
#include <vector>

#include "committee/numerics.hpp"

namespace committee {

enum class PriorKind { Gaussian, Rademacher };
enum class ChannelKind { CommitteeSign, Parity, Linear };

std::string_view to_string(PriorKind kind);
std::string_view to_string(ChannelKind kind);

struct PriorModel {
  PriorKind kind = PriorKind::Gaussian;
  int k = 2;
  Mat rho;  // second moment E[W W^T]

  static PriorModel gaussian(int k);
  static PriorModel gaussian(const Mat& rho);
  static PriorModel rademacher(int k);
};

struct ChannelModel {
  ChannelKind kind = ChannelKind::CommitteeSign;
  int k = 2;
  double delta = 0.0;  // Gaussian output noise, linear channel only

  static ChannelModel committee(int k);
  static ChannelModel parity(int k = 2);
  static ChannelModel linear(int k, double delta = 0.0);

  bool discrete() const { return kind != ChannelKind::Linear; }
};

/// Throws Config when the pair is inconsistent (dimensions, parity with K != 2, ...).
void validate_models(const PriorModel& prior, const ChannelModel& ch);

/// Noiseless output for a pre-activation vector (sign(0) = 0 convention).
double channel_output(std::span<const double> z, const ChannelModel& ch);

/// Possible labels of a discrete channel in increasing order.
std::vector<double> label_support(const ChannelModel& ch);

/// Label assigned to every point of orthant `pattern` (see all_sign_patterns).
double orthant_label(int pattern, const ChannelModel& ch);

struct ChannelConfig {
  NumericsConfig numerics;
  int gh_nodes = 40;            // Gauss-Hermite nodes per dimension
  double sharp_width = 0.35;    // relative orthant-edge width below which composite rules are used
};

/// Normalization Z(y; omega, V) and its first two omega-derivatives for one label.
struct OutputMoments {
  double z = 0.0;  // probability (discrete) or density (linear)
  Vec g;           // d log Z / d omega
  Mat dg;          // d g / d omega, symmetric
};

double z_out(double y, const Vec& omega, const Mat& v, const ChannelModel& ch,
             const ChannelConfig& cfg = {});

/// Throws ImpossibleOutcome when Z underflows, UnsupportedLabel for labels
/// outside the support of a discrete channel.
OutputMoments out_moments(double y, const Vec& omega, const Mat& v, const ChannelModel& ch,
                          const ChannelConfig& cfg = {});

Vec g_out(const Vec& omega, double y, const Mat& v, const ChannelModel& ch, const ChannelConfig& cfg = {});
Mat dg_out(const Vec& omega, double y, const Mat& v, const ChannelModel& ch, const ChannelConfig& cfg = {});

/// One term of an expectation over labels y ~ Z(.; omega, V): sum_j weight_j F(y_j).
/// For discrete channels weight = Z(y); for the linear channel the terms are
/// Gauss-Hermite nodes of the label density and weight is the node weight.
struct LabelAtom {
  double y = 0.0;
  double weight = 0.0;
  double log_z = 0.0;
  Vec e1;  // V^{-1} E[(z - omega) 1_y], so g = e1 / Z for discrete labels
  Vec g;
};

std::vector<LabelAtom> label_atoms(const Vec& omega, const Mat& v, const Mat& v_inv,
                                   const ChannelModel& ch, const ChannelConfig& cfg = {});

/// Nodes for E F(omega), omega ~ N(0, q), when F is smooth except across the
/// coordinate hyperplanes where it changes over a width sqrt(V_ii). Only one of
/// each mirror pair {omega, -omega} is returned, so F must be even.
/// Wide edges use a tensor Gauss-Hermite rule in xi = q^{-1/2} omega; sharp
/// edges (K <= 2) switch to composite Gauss-Legendre panels graded toward the
/// hyperplanes, in omega coordinates.
struct OmegaNode {
  Vec omega;
  double weight = 0.0;
};

std::vector<OmegaNode> omega_quadrature(const Mat& q, const Mat& v, const ChannelConfig& cfg = {});

/// Posterior over W under Q0(W) ~ P0(W) exp(-W^T A W / 2 + B^T W),
/// i.e. natural parameters A = Sigma^{-1}, B = Sigma^{-1} T.
struct PriorPosterior {
  Vec mean;
  Mat cov;
  double log_z = 0.0;
};

PriorPosterior prior_posterior(const Mat& a, const Vec& b, const PriorModel& prior);

Vec f_w(const Mat& sigma, const Vec& t, const PriorModel& prior);
Mat f_c(const Mat& sigma, const Vec& t, const PriorModel& prior);

/// E log Z_P0 for Y0 = r^{1/2} W0 + Z0.
double psi_p0(const Mat& r, const PriorModel& prior, const ChannelConfig& cfg = {});

/// E log Z_Pout for omega = q^{1/2} xi, V = rho - q. Throws Domain when rho - q
/// is not PSD.
double psi_pout(const Mat& q, const Mat& rho, const ChannelModel& ch, const ChannelConfig& cfg = {});

}  // namespace committee
