#include "committee/numerics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "committee/error.hpp"

namespace committee {

namespace {

constexpr double kInvSqrt2Pi = 0.3989422804014326779399461;
constexpr double kTwoPi = 2.0 * std::numbers::pi;

}  // namespace

double normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double h_function(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

double log_h_function(double x) {
  if (x < 25.0) return std::log(h_function(x));
  // Asymptotic expansion of the Mills ratio.
  const double inv2 = 1.0 / (x * x);
  const double series = 1.0 - inv2 + 3.0 * inv2 * inv2 - 15.0 * inv2 * inv2 * inv2;
  return -0.5 * x * x - std::log(x) - 0.5 * std::log(kTwoPi) + std::log(series);
}

double bivariate_upper(double h, double k, double r) {
  if (std::isinf(h) && h > 0) return 0.0;
  if (std::isinf(k) && k > 0) return 0.0;
  if (std::isinf(h)) return std::isinf(k) ? 1.0 : h_function(k);
  if (std::isinf(k)) return h_function(h);
  if (r == 0.0) return h_function(h) * h_function(k);

  // Half-rules; the full rule is x -> 1 -+ x with repeated weights.
  static constexpr std::array<double, 3> w6 = {0.1713244923791705, 0.3607615730481384,
                                               0.4679139345726904};
  static constexpr std::array<double, 3> x6 = {0.9324695142031522, 0.6612093864662647,
                                               0.2386191860831970};
  static constexpr std::array<double, 6> w12 = {0.04717533638651177, 0.1069393259953183,
                                                0.1600783285433464,  0.2031674267230659,
                                                0.2334925365383547,  0.2491470458134029};
  static constexpr std::array<double, 6> x12 = {0.9815606342467191, 0.9041172563704750,
                                                0.7699026741943050, 0.5873179542866171,
                                                0.3678314989981802, 0.1252334085114692};
  static constexpr std::array<double, 10> w20 = {
      0.01761400713915212, 0.04060142980038694, 0.06267204833410906, 0.08327674157670475,
      0.1019301198172404,  0.1181945319615184,  0.1316886384491766,  0.1420961093183821,
      0.1491729864726037,  0.1527533871307259};
  static constexpr std::array<double, 10> x20 = {
      0.9931285991850949, 0.9639719272779138, 0.9122344282513259, 0.8391169718222188,
      0.7463319064601508, 0.6360536807265150, 0.5108670019508271, 0.3737060887154196,
      0.2277858511416451, 0.07652652113349733};

  std::span<const double> w, x;
  const double ar = std::abs(r);
  if (ar < 0.3) {
    w = w6;
    x = x6;
  } else if (ar < 0.75) {
    w = w12;
    x = x12;
  } else {
    w = w20;
    x = x20;
  }

  double hk = h * k;
  double bvn = 0.0;
  if (ar < 0.925) {
    const double hs = 0.5 * (h * h + k * k);
    const double asr = 0.5 * std::asin(r);
    for (std::size_t i = 0; i < w.size(); ++i) {
      for (double sgn : {-1.0, 1.0}) {
        const double sn = std::sin(asr * (1.0 + sgn * x[i]));
        bvn += w[i] * std::exp((sn * hk - hs) / (1.0 - sn * sn));
      }
    }
    return std::clamp(bvn * asr / kTwoPi + h_function(h) * h_function(k), 0.0, 1.0);
  }

  if (r < 0.0) {
    k = -k;
    hk = -hk;
  }
  if (ar < 1.0) {
    const double as = (1.0 - r) * (1.0 + r);
    double a = std::sqrt(as);
    const double bs = (h - k) * (h - k);
    const double c = (4.0 - hk) / 8.0;
    const double d = (12.0 - hk) / 80.0;
    double asr = -0.5 * (bs / as + hk);
    if (asr > -100.0) bvn = a * std::exp(asr) * (1.0 - c * (bs - as) * (1.0 - d * bs) / 3.0 + c * d * as * as);
    if (hk > -100.0) {
      const double b = std::sqrt(bs);
      const double sp = std::sqrt(kTwoPi) * normal_cdf(-b / a);
      bvn -= std::exp(-0.5 * hk) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
    }
    a *= 0.5;
    double acc = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      for (double sgn : {-1.0, 1.0}) {
        const double xi = a * (1.0 + sgn * x[i]);
        const double xs = xi * xi;
        const double asr_i = -0.5 * (bs / xs + hk);
        if (asr_i <= -100.0) continue;
        const double sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
        const double rs = std::sqrt(1.0 - xs);
        const double ep = std::exp(-0.5 * hk * xs / ((1.0 + rs) * (1.0 + rs))) / rs;
        acc += w[i] * std::exp(asr_i) * (sp - ep);
      }
    }
    bvn = (a * acc - bvn) / kTwoPi;
  }
  if (r > 0.0) {
    bvn += normal_cdf(-std::max(h, k));
  } else if (h >= k) {
    bvn = -bvn;
  } else {
    const double l = h < 0.0 ? normal_cdf(k) - normal_cdf(h) : normal_cdf(-h) - normal_cdf(-k);
    bvn = l - bvn;
  }
  return std::clamp(bvn, 0.0, 1.0);
}

// ---------------------------------------------------------------------------

Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

double min_eigenvalue(const Mat& m) {
  if (m.size() == 0) return 0.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

bool is_psd(const Mat& m, double tol) { return min_eigenvalue(m) >= -tol; }

Mat clip_eigenvalues(const Mat& m, double floor, int* clipped) {
  // Small matrices already above the floor skip the eigensolver.
  if (m.rows() <= 2 && m.allFinite()) {
    const Mat sym = symmetrize(m);
    double lo = sym(0, 0);
    if (m.rows() == 2) {
      const double mean = 0.5 * (sym(0, 0) + sym(1, 1)), half = 0.5 * (sym(0, 0) - sym(1, 1));
      lo = mean - std::hypot(half, sym(0, 1));
    }
    if (lo >= floor) {
      if (clipped != nullptr) *clipped = 0;
      return sym;
    }
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m));
  Vec ev = es.eigenvalues();
  int count = 0;
  for (int i = 0; i < ev.size(); ++i) {
    if (ev(i) < floor) {
      ev(i) = floor;
      ++count;
    }
  }
  if (clipped != nullptr) *clipped = count;
  if (count == 0) return symmetrize(m);
  return symmetrize(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
}

Mat spd_sqrt(const Mat& m, double psd_tol) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m));
  Vec ev = es.eigenvalues();
  for (int i = 0; i < ev.size(); ++i) {
    if (ev(i) < -psd_tol) throw Error(ErrorCode::NonPsd, "eigenvalue " + std::to_string(ev(i)));
    ev(i) = std::sqrt(std::max(ev(i), 0.0));
  }
  return symmetrize(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
}

Mat spd_inverse(const Mat& m, double singular_tol) {
  const int k = static_cast<int>(m.rows());
  if (k == 1) {
    if (!(m(0, 0) > singular_tol)) throw Error(ErrorCode::SingularCovariance, "1x1 matrix not positive");
    Mat out(1, 1);
    out(0, 0) = 1.0 / m(0, 0);
    return out;
  }
  if (k == 2) {
    const double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    const double scale = std::max(std::abs(m(0, 0) * m(1, 1)), 1e-300);
    if (!(m(0, 0) > 0.0) || !(det > singular_tol * scale)) {
      throw Error(ErrorCode::SingularCovariance, "2x2 matrix not positive definite");
    }
    Mat out(2, 2);
    out << m(1, 1) / det, -m(0, 1) / det, -m(1, 0) / det, m(0, 0) / det;
    return symmetrize(out);
  }
  Eigen::LLT<Mat> llt(symmetrize(m));
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularCovariance, "Cholesky failed");
  const Vec diag = llt.matrixL().toDenseMatrix().diagonal();
  if (diag.minCoeff() * diag.minCoeff() < singular_tol * diag.maxCoeff() * diag.maxCoeff()) {
    throw Error(ErrorCode::SingularCovariance, "ill-conditioned matrix");
  }
  return symmetrize(llt.solve(Mat::Identity(k, k)));
}

// ---------------------------------------------------------------------------

QuadratureRule gauss_hermite(int n_nodes) {
  if (n_nodes < 1 || n_nodes > 400) throw Error(ErrorCode::Domain, "gauss_hermite node count out of range");
  QuadratureRule rule;
  rule.nodes.resize(n_nodes);
  rule.weights.resize(n_nodes);
  if (n_nodes == 1) {
    rule.nodes[0] = 0.0;
    rule.weights[0] = 1.0;
    return rule;
  }
  // Golub-Welsch on the Jacobi matrix of the probabilists' Hermite polynomials.
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n_nodes);
  Eigen::VectorXd sub(n_nodes - 1);
  for (int i = 0; i < n_nodes - 1; ++i) sub(i) = std::sqrt(static_cast<double>(i + 1));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
  for (int i = 0; i < n_nodes; ++i) {
    rule.nodes[i] = es.eigenvalues()(i);
    const double v0 = es.eigenvectors()(0, i);
    rule.weights[i] = v0 * v0;
  }
  // Enforce exact symmetry about zero, then renormalize.
  for (int i = 0; i < n_nodes / 2; ++i) {
    const int j = n_nodes - 1 - i;
    const double x = 0.5 * (rule.nodes[j] - rule.nodes[i]);
    const double w = 0.5 * (rule.weights[i] + rule.weights[j]);
    rule.nodes[i] = -x;
    rule.nodes[j] = x;
    rule.weights[i] = rule.weights[j] = w;
  }
  if (n_nodes % 2 == 1) rule.nodes[n_nodes / 2] = 0.0;
  double total = 0.0;
  for (double w : rule.weights) total += w;
  for (double& w : rule.weights) w /= total;
  return rule;
}

QuadratureRule gauss_legendre(int n_nodes) {
  if (n_nodes < 1 || n_nodes > 400) throw Error(ErrorCode::Domain, "gauss_legendre node count out of range");
  QuadratureRule rule;
  if (n_nodes == 1) {
    rule.nodes = {0.0};
    rule.weights = {2.0};
    return rule;
  }
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n_nodes);
  Eigen::VectorXd sub(n_nodes - 1);
  for (int i = 1; i < n_nodes; ++i) sub(i - 1) = i / std::sqrt(4.0 * i * i - 1.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
  for (int i = 0; i < n_nodes; ++i) {
    rule.nodes.push_back(es.eigenvalues()(i));
    const double v0 = es.eigenvectors()(0, i);
    rule.weights.push_back(2.0 * v0 * v0);
  }
  return rule;
}

TensorRule tensor_rule(const QuadratureRule& rule, int dim) {
  TensorRule out;
  out.dim = dim;
  const std::size_t n = rule.nodes.size();
  std::size_t total = 1;
  for (int d = 0; d < dim; ++d) total *= n;
  out.points.resize(total * static_cast<std::size_t>(dim));
  out.weights.resize(total);
  std::vector<std::size_t> idx(static_cast<std::size_t>(dim), 0);
  for (std::size_t p = 0; p < total; ++p) {
    double w = 1.0;
    for (int d = 0; d < dim; ++d) {
      out.points[p * dim + d] = rule.nodes[idx[d]];
      w *= rule.weights[idx[d]];
    }
    out.weights[p] = w;
    for (int d = dim - 1; d >= 0; --d) {
      if (++idx[d] < n) break;
      idx[d] = 0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  engine_.seed(seq);
}

// ---------------------------------------------------------------------------

namespace {

PartialMoments univariate_moments(double mean, double var, int sign) {
  const double sd = std::sqrt(var);
  const double a = -sign * mean / sd;
  const double mass = h_function(a);
  const double dens = normal_pdf(a);
  PartialMoments out;
  out.mass = mass;
  out.first = Vec::Constant(1, sign * sd * dens);
  out.second = Mat::Constant(1, 1, var * (mass + a * dens));
  return out;
}

PartialMoments bivariate_moments(const Vec& mean, const Mat& cov, Signs s, const NumericsConfig& cfg) {
  const double s1 = std::sqrt(cov(0, 0));
  const double s2 = std::sqrt(cov(1, 1));
  if (!(s1 > 0.0) || !(s2 > 0.0)) throw Error(ErrorCode::SingularCovariance, "zero variance");
  const double r = s[0] * s[1] * cov(0, 1) / (s1 * s2);
  const double one_minus = (1.0 - r) * (1.0 + r);
  if (!(one_minus > cfg.singular_tol)) throw Error(ErrorCode::SingularCovariance, "|correlation| = 1");
  const double c = std::sqrt(one_minus);
  const double a1 = -s[0] * mean(0) / s1;
  const double a2 = -s[1] * mean(1) / s2;

  const double mass = bivariate_upper(a1, a2, r);
  const double phi1 = normal_pdf(a1);
  const double phi2 = normal_pdf(a2);
  const double c1 = (a2 - r * a1) / c;
  const double c2 = (a1 - r * a2) / c;
  const double q1 = h_function(c1);
  const double q2 = h_function(c2);
  // Stein's lemma applied to the indicator of {u > a}: E[u 1] = R d, E[u u^T 1] = R (P + M).
  const double d1 = phi1 * q1;
  const double d2 = phi2 * q2;
  Eigen::Matrix2d rm;
  rm << 1.0, r, r, 1.0;
  Eigen::Matrix2d m;
  m(0, 0) = a1 * d1;
  m(0, 1) = phi1 * (r * a1 * q1 + c * normal_pdf(c1));
  m(1, 1) = a2 * d2;
  m(1, 0) = phi2 * (r * a2 * q2 + c * normal_pdf(c2));
  const Eigen::Vector2d eu = rm * Eigen::Vector2d(d1, d2);
  Eigen::Matrix2d euu = rm * (mass * Eigen::Matrix2d::Identity() + m);
  euu = 0.5 * (euu + euu.transpose()).eval();

  const Eigen::Vector2d dscale(s[0] * s1, s[1] * s2);
  PartialMoments out;
  out.mass = mass;
  out.first = Vec(2);
  out.first << dscale(0) * eu(0), dscale(1) * eu(1);
  out.second = Mat(2, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) out.second(i, j) = dscale(i) * dscale(j) * euu(i, j);
  return out;
}

PartialMoments monte_carlo_moments(const Vec& mean, const Mat& cov, Signs s, const NumericsConfig& cfg) {
  const int k = static_cast<int>(mean.size());
  Eigen::LLT<Mat> llt(symmetrize(cov));
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularCovariance, "Cholesky failed");
  const Mat l = llt.matrixL();
  Rng rng(cfg.mc_seed, 0);
  PartialMoments out;
  out.first = Vec::Zero(k);
  out.second = Mat::Zero(k, k);
  const int pairs = std::max(1, cfg.mc_samples / 2);
  Vec eps(k);
  auto accumulate = [&](const Vec& dz) {
    for (int i = 0; i < k; ++i) {
      if (s[i] * (mean(i) + dz(i)) <= 0.0) return;
    }
    out.mass += 1.0;
    out.first += dz;
    out.second += dz * dz.transpose();
  };
  for (int p = 0; p < pairs; ++p) {
    for (int i = 0; i < k; ++i) eps(i) = rng.normal();
    const Vec dz = l * eps;
    accumulate(dz);
    accumulate(-dz);
  }
  const double n = 2.0 * pairs;
  out.mass /= n;
  out.first /= n;
  out.second /= n;
  return out;
}

void check_orthant_args(const Vec& mean, const Mat& cov, Signs signs) {
  const auto k = mean.size();
  if (k < 1 || cov.rows() != k || cov.cols() != k || static_cast<Eigen::Index>(signs.size()) != k) {
    throw Error(ErrorCode::Domain, "orthant argument dimensions disagree");
  }
  for (int s : signs) {
    if (s != 1 && s != -1) throw Error(ErrorCode::Domain, "orthant signs must be +1 or -1");
  }
}

}  // namespace

PartialMoments orthant_partial_moments(const Vec& mean, const Mat& cov, Signs signs,
                                       const NumericsConfig& cfg) {
  check_orthant_args(mean, cov, signs);
  switch (mean.size()) {
    case 1:
      if (!(cov(0, 0) > 0.0)) throw Error(ErrorCode::SingularCovariance, "zero variance");
      return univariate_moments(mean(0), cov(0, 0), signs[0]);
    case 2:
      return bivariate_moments(mean, cov, signs, cfg);
    default:
      return monte_carlo_moments(mean, cov, signs, cfg);
  }
}

double mvn_orthant_prob(const Vec& mean, const Mat& cov, Signs signs, const NumericsConfig& cfg) {
  check_orthant_args(mean, cov, signs);
  if (mean.size() == 2) {
    const double s1 = std::sqrt(cov(0, 0));
    const double s2 = std::sqrt(cov(1, 1));
    const double r = signs[0] * signs[1] * cov(0, 1) / (s1 * s2);
    if (!((1.0 - r) * (1.0 + r) > cfg.singular_tol)) {
      throw Error(ErrorCode::SingularCovariance, "|correlation| = 1");
    }
    if (mean(0) == 0.0 && mean(1) == 0.0) return 0.25 + std::asin(r) / kTwoPi;
    return bivariate_upper(-signs[0] * mean(0) / s1, -signs[1] * mean(1) / s2, r);
  }
  return orthant_partial_moments(mean, cov, signs, cfg).mass;
}

TruncatedMoments mvn_truncated_moments(const Vec& mean, const Mat& cov, Signs signs,
                                       const NumericsConfig& cfg) {
  const PartialMoments pm = orthant_partial_moments(mean, cov, signs, cfg);
  if (!(pm.mass >= cfg.zero_mass)) throw Error(ErrorCode::ZeroMass, "orthant has no probability mass");
  TruncatedMoments out;
  out.mass = pm.mass;
  out.first = pm.first / pm.mass;
  out.second = symmetrize(pm.second / pm.mass);
  return out;
}

std::vector<PartialMoments> all_orthant_partial_moments(const Vec& mean, const Mat& cov,
                                                        const NumericsConfig& cfg) {
  const int k = static_cast<int>(mean.size());
  if (k < 1 || k > kMaxK || cov.rows() != k || cov.cols() != k) {
    throw Error(ErrorCode::Domain, "orthant argument dimensions disagree");
  }
  const std::size_t count = std::size_t{1} << k;
  std::vector<PartialMoments> out(count);
  if (k <= 2) {
    const auto patterns = all_sign_patterns(k);
    for (std::size_t p = 0; p < count; ++p) out[p] = orthant_partial_moments(mean, cov, patterns[p], cfg);
    return out;
  }
  Eigen::LLT<Mat> llt(symmetrize(cov));
  if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularCovariance, "Cholesky failed");
  const Mat l = llt.matrixL();
  for (auto& pm : out) {
    pm.first = Vec::Zero(k);
    pm.second = Mat::Zero(k, k);
  }
  Rng rng(cfg.mc_seed, 0);
  const int pairs = std::max(1, cfg.mc_samples / 2);
  Vec eps(k);
  auto accumulate = [&](const Vec& dz) {
    std::size_t p = 0;
    for (int i = 0; i < k; ++i) {
      if (mean(i) + dz(i) < 0.0) p |= std::size_t{1} << i;
    }
    out[p].mass += 1.0;
    out[p].first += dz;
    out[p].second += dz * dz.transpose();
  };
  for (int s = 0; s < pairs; ++s) {
    for (int i = 0; i < k; ++i) eps(i) = rng.normal();
    const Vec dz = l * eps;
    accumulate(dz);
    accumulate(-dz);
  }
  const double n = 2.0 * pairs;
  for (auto& pm : out) {
    pm.mass /= n;
    pm.first /= n;
    pm.second /= n;
  }
  return out;
}

std::vector<std::vector<int>> all_sign_patterns(int k) {
  std::vector<std::vector<int>> out(std::size_t{1} << k, std::vector<int>(static_cast<std::size_t>(k)));
  for (std::size_t p = 0; p < out.size(); ++p) {
    for (int l = 0; l < k; ++l) out[p][l] = ((p >> l) & 1U) ? -1 : 1;
  }
  return out;
}

}  // namespace committee
