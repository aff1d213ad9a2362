#include "committee/state_evolution.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numbers>

#include "committee/error.hpp"

namespace committee {

std::string_view to_string(Branch b) {
  switch (b) {
    case Branch::NonSpecialized: return "non-specialized";
    case Branch::Specialized: return "specialized";
    case Branch::Perfect: return "perfect";
  }
  return "unknown";
}

std::string_view to_string(SeInit i) {
  switch (i) {
    case SeInit::Uninformed: return "uninformed";
    case SeInit::NonSpecialized: return "nonspecialized";
    case SeInit::Informed: return "informed";
  }
  return "unknown";
}

std::string_view to_string(TransitionKind k) {
  switch (k) {
    case TransitionKind::Spec: return "spec";
    case TransitionKind::Spinodal: return "spinodal";
    case TransitionKind::IT: return "it";
    case TransitionKind::Perf: return "perf";
  }
  return "unknown";
}

namespace {

struct Node {
  Vec xi;
  double w;
};

const std::vector<Node>& full_grid(int nodes, int dim) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, std::vector<Node>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find({nodes, dim});
  if (it != cache.end()) return it->second;
  int n = nodes;
  while (n > 2 && std::pow(static_cast<double>(n), dim) > 2.0e5) --n;
  const TensorRule rule = tensor_rule(gauss_hermite(n), dim);
  std::vector<Node> out;
  for (std::size_t p = 0; p < rule.size(); ++p) out.push_back({Vec(rule.point(p)), rule.weights[p]});
  return cache.emplace(std::pair{nodes, dim}, std::move(out)).first->second;
}

double max_eigenvalue(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m), Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

Mat floor_covariance(const Mat& v) {
  const double floor = 1e-10 * std::max(1.0, v.trace() / static_cast<double>(v.rows()));
  if (min_eigenvalue(v) >= floor) return symmetrize(v);
  return clip_eigenvalues(v, floor);
}

void check_overlap(const Mat& q, const Mat& rho, double tol) {
  if (q.rows() != rho.rows() || q.cols() != rho.cols()) throw Error(ErrorCode::Domain, "q has the wrong shape");
  const double mq = min_eigenvalue(q);
  if (mq < -tol) throw Error(ErrorCode::Domain, "q has eigenvalue " + std::to_string(mq));
  const double mv = min_eigenvalue(rho - q);
  if (mv < -tol) throw Error(ErrorCode::Domain, "rho - q has eigenvalue " + std::to_string(mv));
}

bool at_perfect_point(const Mat& q, const Mat& rho, const ChannelModel& ch, const SeConfig& cfg) {
  return ch.discrete() && max_eigenvalue(rho - q) < cfg.perfect_tol;
}

// Project onto {q : q PSD, rho - q PSD}.
Mat project_overlap(const Mat& q, const Mat& rho) {
  Mat out = clip_eigenvalues(q, 0.0);
  if (min_eigenvalue(rho - out) < 0.0) out = rho - clip_eigenvalues(rho - out, 0.0);
  return symmetrize(out);
}

double mean_diag(const Mat& q) { return q.diagonal().mean(); }

double mean_offdiag(const Mat& q) {
  const int k = static_cast<int>(q.rows());
  if (k < 2) return 0.0;
  return (q.sum() - q.trace()) / (k * (k - 1));
}

}  // namespace

Mat initial_overlap(SeInit init, const PriorModel& prior, const SeConfig& cfg) {
  const int k = prior.k;
  switch (init) {
    case SeInit::Uninformed:
      return cfg.init_scale * Mat::Ones(k, k) + cfg.init_perturbation * Mat::Identity(k, k);
    case SeInit::NonSpecialized:
      return cfg.init_scale * Mat::Ones(k, k);
    case SeInit::Informed:
      return (1.0 - cfg.init_scale) * prior.rho;
  }
  return Mat::Zero(k, k);
}

Mat channel_overlap_hat(const Mat& q, double alpha, const Mat& rho, const ChannelModel& ch,
                        const SeConfig& cfg) {
  const int k = static_cast<int>(q.rows());
  if (alpha == 0.0) return Mat::Zero(k, k);
  check_overlap(q, rho, cfg.channel.numerics.psd_tol);
  const Mat v = floor_covariance(rho - q);
  const Mat v_inv = spd_inverse(v, 0.0);
  Mat acc = Mat::Zero(k, k);
  for (const OmegaNode& node : omega_quadrature(q, v, cfg.channel)) {
    for (const LabelAtom& at : label_atoms(node.omega, v, v_inv, ch, cfg.channel)) {
      acc += (node.weight * at.weight) * (at.g * at.g.transpose());
    }
  }
  return symmetrize(alpha * acc);
}

Mat prior_overlap(const Mat& q_hat, const PriorModel& prior, const SeConfig& cfg) {
  const int k = prior.k;
  const Mat qh = symmetrize(q_hat);
  if (prior.kind == PriorKind::Gaussian) {
    const Mat post = spd_inverse(symmetrize(spd_inverse(prior.rho) + qh), 0.0);
    return symmetrize(prior.rho - post);
  }
  // Rademacher: (W0, xi) -> (-W0, -xi) flips f_w, so half of the W0 states suffice.
  const Mat qh_half = spd_sqrt(qh, cfg.channel.numerics.psd_tol);
  const std::size_t states = std::size_t{1} << k;
  const double w0_weight = 2.0 / static_cast<double>(states);
  Mat acc = Mat::Zero(k, k);
  Vec w0(k);
  for (std::size_t s = 0; s < states / 2; ++s) {
    for (int l = 0; l < k; ++l) w0(l) = ((s >> l) & 1U) ? -1.0 : 1.0;
    const Vec base = qh * w0;
    for (const Node& node : full_grid(cfg.channel.gh_nodes, k)) {
      const Vec m = prior_posterior(qh, base + qh_half * node.xi, prior).mean;
      acc += (w0_weight * node.w) * (m * m.transpose());
    }
  }
  return symmetrize(acc);
}

SeStep se_step(const Mat& q, double alpha, const PriorModel& prior, const ChannelModel& ch,
               const SeConfig& cfg) {
  if (q.rows() != prior.k || q.cols() != prior.k) throw Error(ErrorCode::Domain, "q has the wrong shape");
  check_overlap(q, prior.rho, cfg.channel.numerics.psd_tol);
  SeStep out;
  if (at_perfect_point(q, prior.rho, ch, cfg)) {
    out.q_next = prior.rho;
    out.q_hat = Mat::Zero(prior.k, prior.k);
    out.perfect = true;
    return out;
  }
  out.q_hat = clip_eigenvalues(channel_overlap_hat(q, alpha, prior.rho, ch, cfg), 0.0);
  Mat next = project_overlap(prior_overlap(out.q_hat, prior, cfg), prior.rho);
  if (cfg.damping > 0.0) next = (1.0 - cfg.damping) * next + cfg.damping * q;
  out.q_next = symmetrize(next);
  return out;
}

std::optional<double> perfect_free_entropy(const PriorModel& prior, const ChannelModel& ch) {
  if (prior.kind == PriorKind::Rademacher && ch.discrete()) return -prior.k * std::numbers::ln2;
  return std::nullopt;
}

double free_entropy(const Mat& q, const Mat& q_hat, double alpha, const PriorModel& prior,
                    const ChannelModel& ch, const SeConfig& cfg) {
  check_overlap(q, prior.rho, cfg.channel.numerics.psd_tol);
  if (at_perfect_point(q, prior.rho, ch, cfg)) {
    if (auto f = perfect_free_entropy(prior, ch)) return *f;
    throw Error(ErrorCode::Domain, "free entropy diverges at q = rho for this prior");
  }
  const double psi_out = alpha == 0.0 ? 0.0 : alpha * psi_pout(q, prior.rho, ch, cfg.channel);
  return psi_p0(q_hat, prior, cfg.channel) + psi_out - 0.5 * (q_hat * q).trace();
}

Branch classify_branch(const Mat& q, const Mat& rho, const SeConfig& cfg) {
  if ((rho - q).cwiseAbs().maxCoeff() < cfg.perfect_q00) return Branch::Perfect;
  if (q.rows() >= 2 && std::abs(mean_diag(q) - mean_offdiag(q)) > cfg.spec_threshold) {
    return Branch::Specialized;
  }
  return Branch::NonSpecialized;
}

double gen_error(const Mat& q, const Mat& rho, const ChannelModel& ch, const SeConfig& cfg) {
  const int k = static_cast<int>(q.rows());
  check_overlap(q, rho, cfg.channel.numerics.psd_tol);
  if (ch.kind == ChannelKind::Linear) {
    const Vec a = Vec::Constant(k, 1.0 / std::sqrt(static_cast<double>(k)));
    return 0.5 * (a.dot((rho - q) * a) + ch.delta);
  }
  if (at_perfect_point(q, rho, ch, cfg)) return 0.0;
  auto mean_label = [&](const Vec& omega, const Mat& v, const Mat& v_inv) {
    double m = 0.0;
    for (const LabelAtom& at : label_atoms(omega, v, v_inv, ch, cfg.channel)) m += at.y * at.weight;
    return m;
  };
  auto second_label = [&](const Mat& v, const Mat& v_inv) {
    double m = 0.0;
    for (const LabelAtom& at : label_atoms(Vec::Zero(k), v, v_inv, ch, cfg.channel)) m += at.y * at.y * at.weight;
    return m;
  };
  const Mat rho_f = floor_covariance(rho);
  const double ey2 = second_label(rho_f, spd_inverse(rho_f, 0.0));
  const Mat v = floor_covariance(rho - q);
  const Mat v_inv = spd_inverse(v, 0.0);
  double acc = 0.0;
  for (const OmegaNode& node : omega_quadrature(q, v, cfg.channel)) {
    const double m = mean_label(node.omega, v, v_inv);
    acc += node.weight * m * m;
  }
  return std::max(0.0, 0.5 * (ey2 - acc));
}

SeFixedPoint se_run(const Mat& q0, double alpha, const PriorModel& prior, const ChannelModel& ch,
                    const SeConfig& cfg) {
  validate_models(prior, ch);
  if (!(alpha >= 0.0)) throw Error(ErrorCode::Domain, "alpha must be nonnegative");
  SeFixedPoint fp;
  fp.alpha = alpha;
  Mat q = project_overlap(q0, prior.rho);
  check_overlap(q0, prior.rho, cfg.channel.numerics.psd_tol);
  Mat q_hat = Mat::Zero(prior.k, prior.k);
  bool perfect = false;
  for (int t = 0; t < cfg.max_iters; ++t) {
    const SeStep step = se_step(q, alpha, prior, ch, cfg);
    const double residual = (step.q_next - q).norm();
    q = step.q_next;
    q_hat = step.q_hat;
    perfect = step.perfect;
    fp.iterations = t + 1;
    fp.residual = residual;
    if (cfg.record_trace) {
      fp.trace.push_back({residual, min_eigenvalue(q), min_eigenvalue(prior.rho - q)});
    }
    if (!(residual == residual)) throw Error(ErrorCode::Domain, "state evolution produced NaN");
    if (residual < cfg.tol) {
      fp.converged = true;
      break;
    }
  }
  if (!perfect && at_perfect_point(q, prior.rho, ch, cfg)) perfect = true;
  if (perfect) q = prior.rho;
  fp.q = q;
  fp.q_hat = perfect ? Mat::Zero(prior.k, prior.k) : q_hat;
  if (!perfect && fp.converged) {
    // Report the q_hat conjugate to the final q.
    fp.q_hat = clip_eigenvalues(channel_overlap_hat(q, alpha, prior.rho, ch, cfg), 0.0);
  }
  fp.q00 = mean_diag(q);
  fp.q01 = mean_offdiag(q);
  fp.branch = perfect ? Branch::Perfect : classify_branch(q, prior.rho, cfg);
  if (perfect) {
    const auto f = perfect_free_entropy(prior, ch);
    fp.f_rs = f ? *f : std::numeric_limits<double>::infinity();
  } else {
    fp.f_rs = free_entropy(q, fp.q_hat, alpha, prior, ch, cfg);
  }
  fp.eps_g = gen_error(q, prior.rho, ch, cfg);
  return fp;
}

SePhase se_phase(double alpha, const std::vector<SeInit>& inits, const PriorModel& prior,
                 const ChannelModel& ch, const SeConfig& cfg) {
  if (inits.empty()) throw Error(ErrorCode::Config, "at least one initialization is required");
  SePhase phase;
  for (SeInit init : inits) {
    phase.points.emplace_back(init, se_run(initial_overlap(init, prior, cfg), alpha, prior, ch, cfg));
  }
  // Earlier initializations win ties within degenerate_tol.
  int best = 0;
  for (int i = 1; i < static_cast<int>(phase.points.size()); ++i) {
    if (phase.points[i].second.f_rs > phase.points[best].second.f_rs + cfg.degenerate_tol) best = i;
  }
  phase.dominant = best;
  for (int i = 0; i < static_cast<int>(phase.points.size()); ++i) {
    if (i == best) continue;
    const SeFixedPoint& a = phase.points[i].second;
    const SeFixedPoint& b = phase.points[best].second;
    const bool same_point = (a.q - b.q).norm() < 1e-6;
    if (!same_point && std::abs(a.f_rs - b.f_rs) < cfg.degenerate_tol) phase.degenerate = true;
  }
  return phase;
}

namespace {

// Iterates within the subspace q = c 1 1^T. Channels for which that subspace is
// unstable (parity) would otherwise drift to the specialized branch.
Mat nonspecialized_fixed_point(double alpha, const PriorModel& prior, const ChannelModel& ch,
                               const SeConfig& cfg) {
  const int k = prior.k;
  Mat q = initial_overlap(SeInit::NonSpecialized, prior, cfg);
  for (int t = 0; t < cfg.max_iters; ++t) {
    const SeStep step = se_step(q, alpha, prior, ch, cfg);
    if (step.perfect) return prior.rho;
    const double c = step.q_next.sum() / (k * k);
    const Mat next = c * Mat::Ones(k, k);
    const double residual = (next - q).norm();
    q = next;
    if (residual < cfg.tol) break;
  }
  return q;
}

}  // namespace

double specialization_growth(double alpha, const PriorModel& prior, const ChannelModel& ch,
                             const SeConfig& cfg) {
  if (prior.k < 2) throw Error(ErrorCode::Domain, "specialization needs K >= 2");
  validate_models(prior, ch);
  const Mat base_q = nonspecialized_fixed_point(alpha, prior, ch, cfg);
  if (at_perfect_point(base_q, prior.rho, ch, cfg)) return 0.0;
  const Mat base = se_step(base_q, alpha, prior, ch, cfg).q_next;
  const double eps = 1e-6;
  // The perturbation must keep rho - q PSD; shrink the non-specialized part if needed.
  Mat q_pert = base_q + eps * Mat::Identity(prior.k, prior.k);
  if (min_eigenvalue(prior.rho - q_pert) < 0.0) q_pert = base_q * (1.0 - 2 * eps) + eps * Mat::Identity(prior.k, prior.k);
  const Mat dq = q_pert - base_q;
  const Mat moved = se_step(q_pert, alpha, prior, ch, cfg).q_next;
  const Mat dnext = moved - base;
  const double in_spec = mean_diag(dq) - mean_offdiag(dq);
  const double out_spec = mean_diag(dnext) - mean_offdiag(dnext);
  return out_spec / in_spec;
}

double transition_indicator(TransitionKind kind, double alpha, const PriorModel& prior,
                            const ChannelModel& ch, const SeConfig& cfg) {
  switch (kind) {
    case TransitionKind::Spec:
      return specialization_growth(alpha, prior, ch, cfg) - 1.0;
    case TransitionKind::Spinodal: {
      const SeFixedPoint fp = se_run(initial_overlap(SeInit::Informed, prior, cfg), alpha, prior, ch, cfg);
      return fp.branch == Branch::NonSpecialized ? -1.0 : 1.0;
    }
    case TransitionKind::IT: {
      const auto f_perfect = perfect_free_entropy(prior, ch);
      if (!f_perfect) throw Error(ErrorCode::Config, "IT transition needs a prior with a finite perfect point");
      const SeFixedPoint fp = se_run(initial_overlap(SeInit::Uninformed, prior, cfg), alpha, prior, ch, cfg);
      if (fp.branch == Branch::Perfect) return 1.0;
      return *f_perfect - fp.f_rs;
    }
    case TransitionKind::Perf: {
      const SeFixedPoint fp = se_run(initial_overlap(SeInit::Uninformed, prior, cfg), alpha, prior, ch, cfg);
      return fp.branch == Branch::Perfect ? 1.0 : -1.0;
    }
  }
  return 0.0;
}

TransitionResult find_transition(TransitionKind kind, double alpha_lo, double alpha_hi,
                                 const PriorModel& prior, const ChannelModel& ch, double tol_alpha,
                                 const SeConfig& cfg) {
  validate_models(prior, ch);
  if (!(alpha_lo < alpha_hi) || !(tol_alpha > 0.0)) throw Error(ErrorCode::Config, "invalid bracket");
  TransitionResult res;
  double lo = alpha_lo, hi = alpha_hi;
  const double f_lo = transition_indicator(kind, lo, prior, ch, cfg);
  const double f_hi = transition_indicator(kind, hi, prior, ch, cfg);
  res.evaluations = 2;
  if ((f_lo > 0.0) == (f_hi > 0.0)) {
    throw Error(ErrorCode::Bracket, std::string(to_string(kind)) + " indicator has the same sign at alpha = " +
                                        std::to_string(lo) + " and " + std::to_string(hi));
  }
  const bool rising = f_hi > 0.0;
  while (hi - lo > tol_alpha) {
    const double mid = 0.5 * (lo + hi);
    const double f = transition_indicator(kind, mid, prior, ch, cfg);
    ++res.evaluations;
    if ((f > 0.0) == rising) {
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

// ---------------------------------------------------------------------------

McEstimate gen_error_k2(double q_d, double q_a, int samples, std::uint64_t seed) {
  if (q_d < 0.0 || q_d > 1.0 || q_a + q_d < 0.0 || q_a + q_d > 1.0 + 1e-12) {
    throw Error(ErrorCode::Domain, "committee overlap outside its domain");
  }
  Mat q = q_d * Mat::Identity(2, 2) + 0.5 * q_a * Mat::Ones(2, 2);
  // (x, x') jointly Gaussian with unit marginals and cross-covariance q.
  const Mat resid = clip_eigenvalues(Mat::Identity(2, 2) - q * q, 0.0);
  const Mat l = spd_sqrt(resid);
  const ChannelModel ch = ChannelModel::committee(2);
  Rng rng(seed, 0x4d);
  double sum = 0.0, sum2 = 0.0;
  Vec x(2), u(2);
  for (int s = 0; s < samples; ++s) {
    x << rng.normal(), rng.normal();
    u << rng.normal(), rng.normal();
    const Vec xp = q * x + l * u;
    const double prod = channel_output(std::span<const double>(x.data(), 2), ch) *
                        channel_output(std::span<const double>(xp.data(), 2), ch);
    sum += prod;
    sum2 += prod * prod;
  }
  const double mean = sum / samples;
  const double var = std::max(0.0, sum2 / samples - mean * mean);
  // E[y^2] = 1/2 for the K = 2 committee, so eps = (1/2 - E[y y']) / 2.
  return {0.5 * (0.5 - mean), 0.5 * std::sqrt(var / samples)};
}

GibbsBayes gibbs_vs_bayes(const Mat& q, const Mat& rho, const ChannelModel& ch, int samples, std::uint64_t seed,
                          const SeConfig& cfg) {
  check_overlap(q, rho, cfg.channel.numerics.psd_tol);
  const int k = static_cast<int>(q.rows());
  const Mat q_half = spd_sqrt(q, cfg.channel.numerics.psd_tol);
  const Mat v = symmetrize(rho - q);
  const Mat v_half = spd_sqrt(v, cfg.channel.numerics.psd_tol);
  const bool degenerate = ch.discrete() && max_eigenvalue(v) < cfg.perfect_tol;
  const Mat vf = floor_covariance(v);
  const Mat v_inv = spd_inverse(vf, 0.0);
  Rng rng(seed, 0x6b);
  Vec xi(k), u1(k), u2(k);
  std::vector<double> zt(k), zs(k);
  double sg = 0, sg2 = 0, sb = 0, sb2 = 0, sgb = 0;
  for (int s = 0; s < samples; ++s) {
    for (int i = 0; i < k; ++i) {
      xi(i) = rng.normal();
      u1(i) = rng.normal();
      u2(i) = rng.normal();
    }
    const Vec omega = q_half * xi;
    const Vec teacher = omega + v_half * u1;
    const Vec student = omega + v_half * u2;
    double y = channel_output(std::span<const double>(teacher.data(), k), ch);
    double ys = channel_output(std::span<const double>(student.data(), k), ch);
    if (ch.kind == ChannelKind::Linear && ch.delta > 0.0) {
      y += std::sqrt(ch.delta) * rng.normal();
      ys += std::sqrt(ch.delta) * rng.normal();
    }
    double mean_y;
    if (degenerate) {
      mean_y = y;
    } else if (ch.kind == ChannelKind::Linear) {
      mean_y = omega.sum() / std::sqrt(static_cast<double>(k));
    } else {
      mean_y = 0.0;
      for (const LabelAtom& at : label_atoms(omega, vf, v_inv, ch, cfg.channel)) mean_y += at.y * at.weight;
    }
    const double eg = 0.5 * (ys - y) * (ys - y);
    const double eb = 0.5 * (mean_y - y) * (mean_y - y);
    sg += eg;
    sg2 += eg * eg;
    sb += eb;
    sb2 += eb * eb;
    sgb += eg * eb;
  }
  const double n = samples;
  GibbsBayes out;
  const double mg = sg / n, mb = sb / n;
  const double vg = std::max(0.0, sg2 / n - mg * mg);
  const double vb = std::max(0.0, sb2 / n - mb * mb);
  const double cgb = sgb / n - mg * mb;
  out.gibbs = {mg, std::sqrt(vg / n)};
  out.bayes = {mb, std::sqrt(vb / n)};
  if (mb > 0.0) {
    out.ratio = mg / mb;
    // Delta method for the ratio of two correlated means.
    const double var_ratio = (vg / (mb * mb) - 2.0 * mg * cgb / (mb * mb * mb) + mg * mg * vb / (mb * mb * mb * mb)) / n;
    out.ratio_stderr = std::sqrt(std::max(0.0, var_ratio));
  }
  return out;
}

}  // namespace committee
