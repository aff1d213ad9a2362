#pragma once

// Numerical kernels shared by every other module: Gaussian special functions,
// Gauss-Hermite rules, symmetric-matrix helpers, seeded random streams and
// Gaussian orthant probabilities / truncated moments.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace committee {

/// Largest number of hidden units supported by the small-matrix types.
inline constexpr int kMaxK = 16;

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxK, kMaxK>;
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxK, 1>;

struct NumericsConfig {
  double psd_tol = 1e-8;         // eigenvalues below -psd_tol are rejected
  double singular_tol = 1e-14;   // 1 - r^2 (or relative eigenvalue) below this is singular
  double zero_mass = 1e-300;     // orthant masses below this count as impossible
  int mc_samples = 100000;       // per evaluation, K >= 3 only
  std::uint64_t mc_seed = 0x5eed'c0de'2018ULL;
};

// ---------------------------------------------------------------------------
// Scalar Gaussian functions

double normal_pdf(double x);
/// P(Z <= x).
double normal_cdf(double x);
/// Upper tail H(x) = P(Z > x) = erfc(x / sqrt 2) / 2.
double h_function(double x);
/// log H(x), accurate far into the upper tail.
double log_h_function(double x);

/// P(X > h, Y > k) for a standard bivariate normal with correlation r.
/// Uses the Gauss-Legendre reduction of Drezner-Wesolowsky as refined by Genz.
double bivariate_upper(double h, double k, double r);

// ---------------------------------------------------------------------------
// Symmetric matrices

Mat symmetrize(const Mat& m);
double min_eigenvalue(const Mat& m);
bool is_psd(const Mat& m, double tol = 1e-10);
/// Symmetrizes and raises every eigenvalue below `floor` to `floor`.
/// Returns the number of eigenvalues that were moved through `clipped` if non-null.
Mat clip_eigenvalues(const Mat& m, double floor, int* clipped = nullptr);
/// Principal square root. Throws NonPsd when an eigenvalue is below -psd_tol.
Mat spd_sqrt(const Mat& m, double psd_tol = 1e-8);
/// Inverse of a symmetric positive definite matrix; throws SingularCovariance.
Mat spd_inverse(const Mat& m, double singular_tol = 1e-14);

// ---------------------------------------------------------------------------
// Quadrature

/// Nodes and weights for integrals against the standard normal measure.
struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// n-point Gauss-Hermite rule for N(0,1); exact for polynomials of degree <= 2n-1.
QuadratureRule gauss_hermite(int n_nodes);

/// n-point Gauss-Legendre rule on [-1, 1] (unit weight function).
QuadratureRule gauss_legendre(int n_nodes);

/// Tensor-product rule for N(0, I_dim), stored point-major.
struct TensorRule {
  int dim = 0;
  std::vector<double> points;  // size() * dim entries
  std::vector<double> weights;

  std::size_t size() const { return weights.size(); }
  Eigen::Map<const Eigen::VectorXd> point(std::size_t i) const {
    return {points.data() + i * static_cast<std::size_t>(dim), dim};
  }
};

TensorRule tensor_rule(const QuadratureRule& rule, int dim);

// ---------------------------------------------------------------------------
// Random numbers

/// Seeded generator. Equal (seed, stream) pairs always give the same sequence.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::uint64_t next_u64() { return engine_(); }

  /// Independent generator derived from the same seed.
  Rng substream(std::uint64_t stream) const { return Rng(seed_, stream); }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

// ---------------------------------------------------------------------------
// Gaussian orthants

/// Orthant sign pattern: entry l is +1 for {z_l > 0} and -1 for {z_l < 0}.
using Signs = std::span<const int>;

/// Unnormalized moments over an orthant O of z ~ N(mean, cov):
/// mass = P(O), first = E[(z - mean) 1_O], second = E[(z - mean)(z - mean)^T 1_O].
struct PartialMoments {
  double mass = 0.0;
  Vec first;
  Mat second;
};

/// Conditioned moments of (z - mean) given z in the orthant.
struct TruncatedMoments {
  double mass = 0.0;
  Vec first;
  Mat second;
};

/// Analytic for K <= 2; antithetic Monte Carlo seeded from cfg for K >= 3.
PartialMoments orthant_partial_moments(const Vec& mean, const Mat& cov, Signs signs,
                                       const NumericsConfig& cfg = {});

double mvn_orthant_prob(const Vec& mean, const Mat& cov, Signs signs,
                        const NumericsConfig& cfg = {});

/// Throws ZeroMass when the orthant probability is below cfg.zero_mass.
TruncatedMoments mvn_truncated_moments(const Vec& mean, const Mat& cov, Signs signs,
                                       const NumericsConfig& cfg = {});

/// Partial moments of every orthant, indexed like all_sign_patterns. For K >= 3 a
/// single antithetic sample set is shared by all orthants.
std::vector<PartialMoments> all_orthant_partial_moments(const Vec& mean, const Mat& cov,
                                                        const NumericsConfig& cfg = {});

/// All 2^K sign patterns, pattern p has sign -1 at bit l when bit l of p is set.
std::vector<std::vector<int>> all_sign_patterns(int k);

}  // namespace committee
