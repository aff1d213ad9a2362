#include "committee/channels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "committee/error.hpp"

namespace committee {

std::string_view to_string(PriorKind kind) {
  return kind == PriorKind::Gaussian ? "gaussian" : "rademacher";
}

std::string_view to_string(ChannelKind kind) {
  switch (kind) {
    case ChannelKind::CommitteeSign: return "committee";
    case ChannelKind::Parity: return "parity";
    case ChannelKind::Linear: return "linear";
  }
  return "unknown";
}

PriorModel PriorModel::gaussian(int k) { return gaussian(Mat::Identity(k, k)); }

PriorModel PriorModel::gaussian(const Mat& rho) {
  PriorModel p;
  p.kind = PriorKind::Gaussian;
  p.k = static_cast<int>(rho.rows());
  p.rho = symmetrize(rho);
  return p;
}

PriorModel PriorModel::rademacher(int k) {
  PriorModel p;
  p.kind = PriorKind::Rademacher;
  p.k = k;
  p.rho = Mat::Identity(k, k);
  return p;
}

ChannelModel ChannelModel::committee(int k) { return {ChannelKind::CommitteeSign, k, 0.0}; }
ChannelModel ChannelModel::parity(int k) { return {ChannelKind::Parity, k, 0.0}; }
ChannelModel ChannelModel::linear(int k, double delta) { return {ChannelKind::Linear, k, delta}; }

void validate_models(const PriorModel& prior, const ChannelModel& ch) {
  if (prior.k < 1 || prior.k > kMaxK) throw Error(ErrorCode::Config, "K must be in [1, 16]");
  if (prior.k != ch.k) throw Error(ErrorCode::Config, "prior and channel disagree on K");
  if (prior.rho.rows() != prior.k || prior.rho.cols() != prior.k) {
    throw Error(ErrorCode::Config, "rho has the wrong shape");
  }
  if (!(min_eigenvalue(prior.rho) > 0.0)) throw Error(ErrorCode::Config, "rho must be positive definite");
  if (ch.kind == ChannelKind::Parity && ch.k != 2) throw Error(ErrorCode::Config, "parity requires K=2");
  if (!(ch.delta >= 0.0)) throw Error(ErrorCode::Config, "noise must be nonnegative");
  if (ch.delta > 0.0 && ch.kind != ChannelKind::Linear) {
    throw Error(ErrorCode::Config, "output noise is only supported for the linear channel");
  }
}

namespace {

int sign_of(double x) { return (x > 0.0) - (x < 0.0); }

Vec linear_direction(int k) { return Vec::Constant(k, 1.0 / std::sqrt(static_cast<double>(k))); }

void require_discrete_label(double y, const ChannelModel& ch) {
  const auto support = label_support(ch);
  if (std::find(support.begin(), support.end(), y) == support.end()) {
    throw Error(ErrorCode::UnsupportedLabel, "label " + std::to_string(y) + " is not produced by the channel");
  }
}

int reduced_nodes(int nodes, int dim) {
  int n = nodes;
  while (n > 2 && std::pow(static_cast<double>(n), dim) > 2.0e5) --n;
  return n;
}

// Regularizes a PSD matrix so that orthant kernels see a strictly PD covariance.
Mat floor_covariance(const Mat& v, double psd_tol) {
  const double mn = min_eigenvalue(v);
  if (mn < -psd_tol) throw Error(ErrorCode::Domain, "covariance has eigenvalue " + std::to_string(mn));
  const double floor = 1e-10 * std::max(1.0, v.trace() / static_cast<double>(v.rows()));
  if (mn >= floor) return symmetrize(v);
  return clip_eigenvalues(v, floor);
}

}  // namespace

double channel_output(std::span<const double> z, const ChannelModel& ch) {
  switch (ch.kind) {
    case ChannelKind::CommitteeSign: {
      int s = 0;
      for (double v : z) s += sign_of(v);
      return sign_of(static_cast<double>(s));
    }
    case ChannelKind::Parity: {
      int s = 1;
      for (double v : z) s *= sign_of(v);
      return s;
    }
    case ChannelKind::Linear: {
      double s = 0.0;
      for (double v : z) s += v;
      return s / std::sqrt(static_cast<double>(z.size()));
    }
  }
  return 0.0;
}

std::vector<double> label_support(const ChannelModel& ch) {
  switch (ch.kind) {
    case ChannelKind::CommitteeSign:
      if (ch.k % 2 == 0) return {-1.0, 0.0, 1.0};
      return {-1.0, 1.0};
    case ChannelKind::Parity:
      return {-1.0, 1.0};
    case ChannelKind::Linear:
      return {};
  }
  return {};
}

double orthant_label(int pattern, const ChannelModel& ch) {
  const int neg = std::popcount(static_cast<unsigned>(pattern));
  switch (ch.kind) {
    case ChannelKind::CommitteeSign:
      return sign_of(static_cast<double>(ch.k - 2 * neg));
    case ChannelKind::Parity:
      return (neg % 2 == 0) ? 1.0 : -1.0;
    case ChannelKind::Linear:
      break;
  }
  throw Error(ErrorCode::UnsupportedLabel, "linear channel has no orthant labels");
}

namespace {

struct DiscreteSums {
  double mass = 0.0;
  Vec first;
  Mat second;
};

DiscreteSums discrete_sums(double y, const Vec& omega, const Mat& v, const ChannelModel& ch,
                           const ChannelConfig& cfg) {
  require_discrete_label(y, ch);
  const int k = static_cast<int>(omega.size());
  DiscreteSums s{0.0, Vec::Zero(k), Mat::Zero(k, k)};
  auto add = [&s](const PartialMoments& pm) {
    s.mass += pm.mass;
    s.first += pm.first;
    s.second += pm.second;
  };
  if (k <= 2) {
    // Orthants are independent closed forms here; skip the ones with other labels.
    const auto patterns = all_sign_patterns(k);
    for (std::size_t p = 0; p < patterns.size(); ++p) {
      if (orthant_label(static_cast<int>(p), ch) == y) add(orthant_partial_moments(omega, v, patterns[p], cfg.numerics));
    }
    return s;
  }
  const auto orthants = all_orthant_partial_moments(omega, v, cfg.numerics);
  for (std::size_t p = 0; p < orthants.size(); ++p) {
    if (orthant_label(static_cast<int>(p), ch) == y) add(orthants[p]);
  }
  return s;
}

void check_shapes(const Vec& omega, const Mat& v, const ChannelModel& ch) {
  if (omega.size() != ch.k || v.rows() != ch.k || v.cols() != ch.k) {
    throw Error(ErrorCode::Domain, "omega / V shape does not match K");
  }
}

}  // namespace

double z_out(double y, const Vec& omega, const Mat& v, const ChannelModel& ch, const ChannelConfig& cfg) {
  check_shapes(omega, v, ch);
  if (ch.kind == ChannelKind::Linear) {
    const Vec a = linear_direction(ch.k);
    const double s2 = a.dot(v * a) + ch.delta;
    if (!(s2 > 0.0)) throw Error(ErrorCode::SingularCovariance, "zero output variance");
    const double d = y - a.dot(omega);
    return std::exp(-0.5 * d * d / s2) / std::sqrt(2.0 * std::numbers::pi * s2);
  }
  return discrete_sums(y, omega, v, ch, cfg).mass;
}

OutputMoments out_moments(double y, const Vec& omega, const Mat& v, const ChannelModel& ch,
                          const ChannelConfig& cfg) {
  check_shapes(omega, v, ch);
  OutputMoments out;
  if (ch.kind == ChannelKind::Linear) {
    const Vec a = linear_direction(ch.k);
    const double s2 = a.dot(v * a) + ch.delta;
    if (!(s2 > 0.0)) throw Error(ErrorCode::SingularCovariance, "zero output variance");
    const double d = y - a.dot(omega);
    out.z = std::exp(-0.5 * d * d / s2) / std::sqrt(2.0 * std::numbers::pi * s2);
    out.g = a * (d / s2);
    out.dg = -(a * a.transpose()) / s2;
    return out;
  }
  const DiscreteSums s = discrete_sums(y, omega, v, ch, cfg);
  if (!(s.mass >= cfg.numerics.zero_mass)) {
    throw Error(ErrorCode::ImpossibleOutcome, "Z_out underflows for label " + std::to_string(y));
  }
  const Mat v_inv = spd_inverse(v, cfg.numerics.singular_tol);
  out.z = s.mass;
  out.g = v_inv * s.first / s.mass;
  out.dg = symmetrize(v_inv * (s.second / s.mass) * v_inv - v_inv - out.g * out.g.transpose());
  return out;
}

Vec g_out(const Vec& omega, double y, const Mat& v, const ChannelModel& ch, const ChannelConfig& cfg) {
  return out_moments(y, omega, v, ch, cfg).g;
}

Mat dg_out(const Vec& omega, double y, const Mat& v, const ChannelModel& ch, const ChannelConfig& cfg) {
  return out_moments(y, omega, v, ch, cfg).dg;
}

std::vector<LabelAtom> label_atoms(const Vec& omega, const Mat& v, const Mat& v_inv,
                                   const ChannelModel& ch, const ChannelConfig& cfg) {
  std::vector<LabelAtom> atoms;
  const int k = static_cast<int>(omega.size());
  if (ch.kind == ChannelKind::Linear) {
    const Vec a = linear_direction(k);
    const double s2 = a.dot(v * a) + ch.delta;
    if (!(s2 > 0.0)) throw Error(ErrorCode::SingularCovariance, "zero output variance");
    const double s = std::sqrt(s2);
    const double mean = a.dot(omega);
    // log Z and g are polynomials of degree <= 2 in the node, so a few nodes are exact.
    const QuadratureRule rule = gauss_hermite(4);
    for (std::size_t j = 0; j < rule.nodes.size(); ++j) {
      const double eta = rule.nodes[j];
      LabelAtom at;
      at.y = mean + s * eta;
      at.weight = rule.weights[j];
      at.log_z = -0.5 * std::log(2.0 * std::numbers::pi * s2) - 0.5 * eta * eta;
      at.g = a * (eta / s);
      at.e1 = at.g * std::exp(at.log_z);
      atoms.push_back(std::move(at));
    }
    return atoms;
  }
  const auto orthants = all_orthant_partial_moments(omega, v, cfg.numerics);
  const auto support = label_support(ch);
  for (double y : support) {
    double mass = 0.0;
    Vec first = Vec::Zero(k);
    for (std::size_t p = 0; p < orthants.size(); ++p) {
      if (orthant_label(static_cast<int>(p), ch) != y) continue;
      mass += orthants[p].mass;
      first += orthants[p].first;
    }
    if (!(mass >= cfg.numerics.zero_mass)) continue;
    LabelAtom at;
    at.y = y;
    at.weight = mass;
    at.log_z = std::log(mass);
    at.e1 = v_inv * first;
    at.g = at.e1 / mass;
    atoms.push_back(std::move(at));
  }
  return atoms;
}

// ---------------------------------------------------------------------------

PriorPosterior prior_posterior(const Mat& a, const Vec& b, const PriorModel& prior) {
  const int k = prior.k;
  if (a.rows() != k || b.size() != k) throw Error(ErrorCode::Domain, "natural parameters have the wrong shape");
  PriorPosterior out;
  if (prior.kind == PriorKind::Gaussian) {
    const Mat rho_inv = spd_inverse(prior.rho);
    const Mat precision = symmetrize(rho_inv + a);
    Eigen::LLT<Mat> llt(precision);
    if (llt.info() != Eigen::Success) throw Error(ErrorCode::SingularSigma, "posterior precision not PD");
    out.cov = symmetrize(llt.solve(Mat::Identity(k, k)));
    out.mean = out.cov * b;
    // det(I + rho A) = det(rho) det(rho^{-1} + A).
    Eigen::LLT<Mat> rho_llt(prior.rho);
    double logdet = 0.0;
    for (int i = 0; i < k; ++i) {
      logdet += 2.0 * std::log(llt.matrixL()(i, i)) + 2.0 * std::log(rho_llt.matrixL()(i, i));
    }
    out.log_z = -0.5 * logdet + 0.5 * b.dot(out.mean);
    return out;
  }

  const std::size_t states = std::size_t{1} << k;
  std::vector<double> logits(states);
  Vec w(k);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < states; ++s) {
    for (int l = 0; l < k; ++l) w(l) = ((s >> l) & 1U) ? -1.0 : 1.0;
    logits[s] = -0.5 * w.dot(a * w) + b.dot(w);
    mx = std::max(mx, logits[s]);
  }
  double total = 0.0;
  out.mean = Vec::Zero(k);
  Mat second = Mat::Zero(k, k);
  for (std::size_t s = 0; s < states; ++s) {
    for (int l = 0; l < k; ++l) w(l) = ((s >> l) & 1U) ? -1.0 : 1.0;
    const double p = std::exp(logits[s] - mx);
    total += p;
    out.mean += p * w;
    second += p * (w * w.transpose());
  }
  out.mean /= total;
  out.cov = symmetrize(second / total - out.mean * out.mean.transpose());
  out.log_z = mx + std::log(total) - k * std::numbers::ln2;
  return out;
}

namespace {

Mat sigma_inverse(const Mat& sigma) {
  try {
    return spd_inverse(sigma);
  } catch (const Error&) {
    throw Error(ErrorCode::SingularSigma, "Sigma is not invertible");
  }
}

}  // namespace

Vec f_w(const Mat& sigma, const Vec& t, const PriorModel& prior) {
  const Mat a = sigma_inverse(sigma);
  return prior_posterior(a, a * t, prior).mean;
}

Mat f_c(const Mat& sigma, const Vec& t, const PriorModel& prior) {
  const Mat a = sigma_inverse(sigma);
  return prior_posterior(a, a * t, prior).cov;
}

double psi_p0(const Mat& r, const PriorModel& prior, const ChannelConfig& cfg) {
  const int k = prior.k;
  if (r.rows() != k || r.cols() != k) throw Error(ErrorCode::Domain, "r has the wrong shape");
  const Mat rs = symmetrize(r);
  if (prior.kind == PriorKind::Gaussian) {
    const Mat rho_half = spd_sqrt(prior.rho);
    Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(rho_half * rs * rho_half), Eigen::EigenvaluesOnly);
    double out = 0.0;
    for (int i = 0; i < k; ++i) {
      const double ev = std::max(es.eigenvalues()(i), 0.0);
      out += 0.5 * ev - 0.5 * std::log1p(ev);
    }
    return out;
  }
  const Mat r_half = spd_sqrt(rs, cfg.numerics.psd_tol);
  const TensorRule rule = tensor_rule(gauss_hermite(reduced_nodes(cfg.gh_nodes, k)), k);
  const std::size_t states = std::size_t{1} << k;
  const double w0_weight = 1.0 / static_cast<double>(states);
  double acc = 0.0;
  Vec w0(k);
  for (std::size_t s = 0; s < states; ++s) {
    for (int l = 0; l < k; ++l) w0(l) = ((s >> l) & 1U) ? -1.0 : 1.0;
    const Vec base = rs * w0;
    for (std::size_t i = 0; i < rule.size(); ++i) {
      const Vec b = base + r_half * rule.point(i);
      acc += w0_weight * rule.weights[i] * prior_posterior(rs, b, prior).log_z;
    }
  }
  return acc;
}

double psi_pout(const Mat& q, const Mat& rho, const ChannelModel& ch, const ChannelConfig& cfg) {
  const int k = ch.k;
  if (q.rows() != k || rho.rows() != k) throw Error(ErrorCode::Domain, "q / rho shape does not match K");
  const Mat v = symmetrize(rho - q);
  const double v_min = min_eigenvalue(v);
  if (v_min < -cfg.numerics.psd_tol) {
    throw Error(ErrorCode::Domain, "rho - q has eigenvalue " + std::to_string(v_min));
  }
  if (ch.kind == ChannelKind::Linear) {
    const Vec a = linear_direction(k);
    const double s2 = a.dot(v * a) + ch.delta;
    if (!(s2 > 0.0)) throw Error(ErrorCode::Domain, "linear channel without noise at q = rho");
    return -0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * s2);
  }
  // Deterministic channel at q = rho: every Z is 0 or 1.
  if (v.norm() <= 1e-12 * std::max(1.0, rho.norm())) return 0.0;

  const Mat vf = floor_covariance(v, cfg.numerics.psd_tol);
  const auto support = label_support(ch);
  double acc = 0.0;
  for (const OmegaNode& node : omega_quadrature(q, vf, cfg)) {
    const auto orthants = all_orthant_partial_moments(node.omega, vf, cfg.numerics);
    for (double y : support) {
      double mass = 0.0;
      for (std::size_t p = 0; p < orthants.size(); ++p) {
        if (orthant_label(static_cast<int>(p), ch) == y) mass += orthants[p].mass;
      }
      if (mass > cfg.numerics.zero_mass) acc += node.weight * mass * std::log(mass);
    }
  }
  return acc;
}

// ---------------------------------------------------------------------------

namespace {

struct Panel1d {
  std::vector<double> nodes;
  std::vector<double> weights;  // include the standard normal density
};

const QuadratureRule& legendre(int n) {
  static const QuadratureRule r4 = gauss_legendre(4);
  static const QuadratureRule r6 = gauss_legendre(6);
  return n == 4 ? r4 : r6;
}

// Rule for the standard normal measure on the half line x > 0, graded toward 0
// on the scale w. The full rule is its mirror image plus itself.
Panel1d graded_half_rule(double w) {
  static constexpr double kEdge[] = {0.5, 1.0, 2.0, 3.0, 4.5, 6.5, 9.0};
  constexpr double kTail = 9.0;
  std::vector<double> breaks = {0.0};
  std::size_t graded = 0;
  for (double t : kEdge) {
    if (t * w >= kTail) break;
    breaks.push_back(t * w);
    ++graded;
  }
  const double x = breaks.back();
  const int outer = static_cast<int>(std::ceil((kTail - x) / 1.5));
  for (int i = 1; i <= outer; ++i) breaks.push_back(x + (kTail - x) * i / outer);
  Panel1d out;
  for (std::size_t b = 0; b + 1 < breaks.size(); ++b) {
    const QuadratureRule& gl = legendre(b < graded ? 4 : 6);
    const double half = 0.5 * (breaks[b + 1] - breaks[b]);
    const double mid = 0.5 * (breaks[b + 1] + breaks[b]);
    for (std::size_t i = 0; i < gl.nodes.size(); ++i) {
      const double t = mid + half * gl.nodes[i];
      out.nodes.push_back(t);
      out.weights.push_back(half * gl.weights[i] * normal_pdf(t));
    }
  }
  return out;
}

}  // namespace

std::vector<OmegaNode> omega_quadrature(const Mat& q, const Mat& v, const ChannelConfig& cfg) {
  const int k = static_cast<int>(q.rows());
  double width = std::numeric_limits<double>::infinity();
  for (int i = 0; i < k; ++i) {
    if (q(i, i) > 0.0) width = std::min(width, std::sqrt(std::max(v(i, i), 0.0) / q(i, i)));
  }
  std::vector<OmegaNode> out;
  if (k <= 2 && width < cfg.sharp_width) {
    // Product of graded rules on each axis, reweighted from the product of the
    // marginals to the joint N(0, q) density.
    const Vec sd = q.diagonal().cwiseSqrt();
    std::vector<Panel1d> axes;
    for (int i = 0; i < k; ++i) {
      const Panel1d half = graded_half_rule(std::sqrt(std::max(v(i, i), 0.0) / q(i, i)));
      Panel1d full;
      for (std::size_t j = half.nodes.size(); j-- > 0;) {
        full.nodes.push_back(-half.nodes[j]);
        full.weights.push_back(half.weights[j]);
      }
      full.nodes.insert(full.nodes.end(), half.nodes.begin(), half.nodes.end());
      full.weights.insert(full.weights.end(), half.weights.begin(), half.weights.end());
      axes.push_back(std::move(full));
    }
    if (k == 1) {
      const auto& a = axes[0];
      for (std::size_t j = a.nodes.size() / 2; j < a.nodes.size(); ++j) {
        Vec om(1);
        om(0) = sd(0) * a.nodes[j];
        out.push_back({om, 2.0 * a.weights[j]});
      }
      return out;
    }
    const double r = q(0, 1) / (sd(0) * sd(1));
    if (!(std::abs(r) < 0.999)) throw Error(ErrorCode::Domain, "sharp-edge quadrature needs a well-conditioned q");
    const double c2 = 1.0 - r * r;
    const double norm = 1.0 / std::sqrt(c2);
    const auto& a = axes[0];
    const auto& b = axes[1];
    const std::size_t nb = b.nodes.size();
    const std::size_t total = a.nodes.size() * nb;
    for (std::size_t p = total / 2; p < total; ++p) {
      const double x = a.nodes[p / nb], y = b.nodes[p % nb];
      // Joint density over the product of marginals for correlation r.
      const double ratio = norm * std::exp(-(r * r * (x * x + y * y) - 2.0 * r * x * y) / (2.0 * c2));
      Vec om(2);
      om << sd(0) * x, sd(1) * y;
      out.push_back({om, 2.0 * a.weights[p / nb] * b.weights[p % nb] * ratio});
    }
    return out;
  }
  const Mat q_half = spd_sqrt(q, cfg.numerics.psd_tol);
  const TensorRule rule = tensor_rule(gauss_hermite(reduced_nodes(cfg.gh_nodes, k)), k);
  const std::size_t size = rule.size();
  for (std::size_t p = 0; p < (size + 1) / 2; ++p) {
    const bool centre = (2 * p + 1 == size);
    out.push_back({q_half * rule.point(p), centre ? rule.weights[p] : 2.0 * rule.weights[p]});
  }
  return out;
}

}  // namespace committee
