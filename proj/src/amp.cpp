#include "committee/amp.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "committee/error.hpp"

namespace committee {

std::string_view to_string(AmpInit init) {
  switch (init) {
    case AmpInit::Random: return "random";
    case AmpInit::Informed: return "informed";
  }
  return "unknown";
}

TeacherInstance generate_instance(int n, double alpha, const PriorModel& prior, const ChannelModel& ch,
                                  std::uint64_t seed) {
  validate_models(prior, ch);
  if (n < 10) throw Error(ErrorCode::Config, "n must be at least 10");
  if (!(alpha >= 0.0)) throw Error(ErrorCode::Config, "alpha must be nonnegative");
  TeacherInstance inst;
  inst.n = n;
  inst.k = prior.k;
  inst.alpha = alpha;
  inst.m = static_cast<int>(std::llround(alpha * n));
  inst.seed = seed;
  inst.prior = prior;
  inst.channel = ch;
  const int k = prior.k, m = inst.m;

  Rng w_rng(seed, 1), x_rng(seed, 2), noise_rng(seed, 3);
  inst.w_star.resize(n, k);
  if (prior.kind == PriorKind::Rademacher) {
    for (int i = 0; i < n; ++i) {
      for (int l = 0; l < k; ++l) inst.w_star(i, l) = (w_rng.next_u64() >> 63) ? 1.0 : -1.0;
    }
  } else {
    const Mat root = spd_sqrt(prior.rho);
    Vec u(k);
    for (int i = 0; i < n; ++i) {
      for (int l = 0; l < k; ++l) u(l) = w_rng.normal();
      inst.w_star.row(i) = (root * u).transpose();
    }
  }

  inst.x.resize(static_cast<std::size_t>(m) * n);
  for (float& v : inst.x) v = static_cast<float>(x_rng.normal());

  inst.y.resize(m);
  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
  std::vector<double> z(k);
  for (int mu = 0; mu < m; ++mu) {
    std::fill(z.begin(), z.end(), 0.0);
    const float* row = inst.x.data() + static_cast<std::size_t>(mu) * n;
    for (int i = 0; i < n; ++i) {
      for (int l = 0; l < k; ++l) z[l] += row[i] * inst.w_star(i, l);
    }
    for (double& v : z) v *= inv_sqrt_n;
    double y = channel_output(z, ch);
    if (ch.kind == ChannelKind::Linear && ch.delta > 0.0) y += std::sqrt(ch.delta) * noise_rng.normal();
    inst.y[mu] = y;
  }
  return inst;
}

// ---------------------------------------------------------------------------

Vec AmpState::w_hat_at(int i) const {
  Vec w(k);
  for (int a = 0; a < k; ++a) w(a) = w_hat[static_cast<std::size_t>(i) * k + a];
  return w;
}

Mat AmpState::c_hat_at(int i) const {
  Mat c(k, k);
  const std::size_t base = static_cast<std::size_t>(i) * k * k;
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) c(a, b) = c_hat[base + a * k + b];
  }
  return c;
}

Eigen::MatrixXd AmpState::w_hat_matrix() const {
  Eigen::MatrixXd w(n, k);
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < k; ++a) w(i, a) = w_hat[static_cast<std::size_t>(i) * k + a];
  }
  return w;
}

namespace {

void put_mat(std::vector<double>& dst, int idx, const Mat& m) {
  const int k = static_cast<int>(m.rows());
  const std::size_t base = static_cast<std::size_t>(idx) * k * k;
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) dst[base + a * k + b] = m(a, b);
  }
}

Mat get_mat(const std::vector<double>& src, int idx, int k) {
  Mat m(k, k);
  const std::size_t base = static_cast<std::size_t>(idx) * k * k;
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) m(a, b) = src[base + a * k + b];
  }
  return m;
}

bool all_finite(const Mat& m) { return m.allFinite(); }

// Sigma^{-1} C Sigma, evaluated in the eigenbasis of Sigma^{-1}, where entry
// (a, b) is C'_ab lambda_a / lambda_b. A clipped eigenvalue makes the ratio as
// large as 1 / pd_floor, so cross terms of C at rounding level are zeroed first.
Mat memory_matrix(const Mat& sigma_inv, const Mat& c) {
  const int k = static_cast<int>(c.rows());
  if (k == 1) return c;
  const Eigen::SelfAdjointEigenSolver<Mat> es(sigma_inv);
  const Mat& u = es.eigenvectors();
  const Vec& lam = es.eigenvalues();
  Mat cp = u.transpose() * c * u;
  constexpr double kRounding = 64 * std::numeric_limits<double>::epsilon();
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) {
      if (a != b && std::abs(cp(a, b)) <= kRounding * (std::abs(cp(a, a)) + std::abs(cp(b, b)))) cp(a, b) = 0.0;
      cp(a, b) *= lam(a) / lam(b);
    }
  }
  return u * cp * u.transpose();
}

// Fused kernels over groups of rows of X. A group is read once for the forward
// fields and once more, while still in L2, for the accumulations over samples.
// Columns are processed in tiles so that feature and accumulator tiles stay in
// L1 across the rows of a group. Every lane sums its columns in index order and
// lanes are combined in a fixed order, so results do not depend on the tiling.
using v8d = double __attribute__((vector_size(64)));
using v8f = float __attribute__((vector_size(32)));
constexpr int kLanes = 8;
constexpr int kGroup = 32;
constexpr int kTile = 256;

inline v8d load_x(const float* p) {
  v8f f;
  std::memcpy(&f, p, sizeof f);
  return __builtin_convertvector(f, v8d);
}

inline v8d load_d(const double* p) {
  v8d v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline void store_d(double* p, v8d v) { std::memcpy(p, &v, sizeof v); }

inline double lane_sum(v8d v) {
  double s = 0.0;
  for (int l = 0; l < kLanes; ++l) s += v[l];
  return s;
}

// acc[r][f] += x_ri feat_f(i) for f < NL, x_ri^2 feat_f(i) otherwise, over i in [i0, i1).
template <int NL, int NS, int R>
void forward_tile(const float* const* rows, const double* const* feat, int i0, int i1, v8d (*acc_io)[NL + NS]) {
  constexpr int nf = NL + NS;
  v8d acc[R][nf];
  for (int r = 0; r < R; ++r) {
    for (int f = 0; f < nf; ++f) acc[r][f] = acc_io[r][f];
  }
  for (int i = i0; i < i1; i += kLanes) {
    v8d x[R];
    for (int r = 0; r < R; ++r) x[r] = load_x(rows[r] + i);
    for (int f = 0; f < NL; ++f) {
      const v8d w = load_d(feat[f] + i);
      for (int r = 0; r < R; ++r) acc[r][f] += x[r] * w;
    }
    // squared in place to keep 3 x 9 accumulators within the register file
    for (int r = 0; r < R; ++r) x[r] *= x[r];
    for (int f = NL; f < nf; ++f) {
      const v8d w = load_d(feat[f] + i);
      for (int r = 0; r < R; ++r) acc[r][f] += x[r] * w;
    }
  }
  for (int r = 0; r < R; ++r) {
    for (int f = 0; f < nf; ++f) acc_io[r][f] = acc[r][f];
  }
}

// acc_f(i) += sum_r x_ri coef[r][f] for f < NL, x_ri^2 coef[r][f] otherwise, over i in [i0, i1).
template <int NL, int NS, int R>
void backward_tile(const float* const* rows, const double (*coef)[NL + NS], int i0, int i1, double* const* acc) {
  constexpr int nf = NL + NS;
  for (int i = i0; i < i1; i += kLanes) {
    v8d x[R], x2[R];
    for (int r = 0; r < R; ++r) {
      x[r] = load_x(rows[r] + i);
      x2[r] = x[r] * x[r];
    }
    for (int f = 0; f < nf; ++f) {
      v8d a = load_d(acc[f] + i);
      for (int r = 0; r < R; ++r) a += (f < NL ? x[r] : x2[r]) * coef[r][f];
      store_d(acc[f] + i, a);
    }
  }
}

// Forward fields of `count` rows: vector tiles, then lane sums, then the scalar tail.
template <int NL, int NS, int R>
void forward_group(const float* const* rows, int count, const double* const* feat, int n, double (*out)[NL + NS]) {
  constexpr int nf = NL + NS;
  v8d acc[kGroup][nf] = {};
  const int vec_end = n - n % kLanes;
  for (int i0 = 0; i0 < vec_end; i0 += kTile) {
    const int i1 = std::min(i0 + kTile, vec_end);
    int r0 = 0;
    for (; r0 + R <= count; r0 += R) forward_tile<NL, NS, R>(rows + r0, feat, i0, i1, acc + r0);
    for (; r0 < count; ++r0) forward_tile<NL, NS, 1>(rows + r0, feat, i0, i1, acc + r0);
  }
  for (int r = 0; r < count; ++r) {
    for (int f = 0; f < nf; ++f) {
      double s = lane_sum(acc[r][f]);
      for (int i = vec_end; i < n; ++i) {
        const double x = rows[r][i];
        s += (f < NL ? x : x * x) * feat[f][i];
      }
      out[r][f] = s;
    }
  }
}

template <int NL, int NS, int R>
void backward_group(const float* const* rows, int count, const double (*coef)[NL + NS], int n, double* const* acc) {
  constexpr int nf = NL + NS;
  const int vec_end = n - n % kLanes;
  for (int i0 = 0; i0 < vec_end; i0 += kTile) {
    const int i1 = std::min(i0 + kTile, vec_end);
    int r0 = 0;
    for (; r0 + R <= count; r0 += R) backward_tile<NL, NS, R>(rows + r0, coef + r0, i0, i1, acc);
    for (; r0 < count; ++r0) backward_tile<NL, NS, 1>(rows + r0, coef + r0, i0, i1, acc);
  }
  for (int i = vec_end; i < n; ++i) {
    for (int f = 0; f < nf; ++f) {
      double a = acc[f][i];
      for (int r = 0; r < count; ++r) {
        const double x = rows[r][i];
        a += (f < NL ? x : x * x) * coef[r][f];
      }
      acc[f][i] = a;
    }
  }
}

// Forward features: W (K), Sigma^{-1} C Sigma (K^2), upper C (K(K+1)/2).
// Backward features: g / sqrt(n) (K), -dg / n upper (K(K+1)/2).
template <int K>
AmpStepInfo sweep_rows(AmpState& s, const TeacherInstance& inst, const AmpConfig& cfg,
                       const std::vector<std::vector<double>>& fwd_feat, std::vector<std::vector<double>>& bwd_acc) {
  constexpr int kk = K * K, kc = K * (K + 1) / 2;
  constexpr int nf = K + kk + kc, nb = K + kc;
  constexpr int rf = nf <= 6 ? 4 : (nf <= 12 ? 3 : 1);
  constexpr int rb = nb <= 8 ? 8 : 2;
  const int n = s.n, m = s.m;
  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
  const double inv_n = 1.0 / n;
  AmpStepInfo info;

  const double* feat[nf];
  for (int f = 0; f < nf; ++f) feat[f] = fwd_feat[f].data();
  double* acc[nb];
  for (int f = 0; f < nb; ++f) acc[f] = bwd_acc[f].data();

  double fields[kGroup][nf];
  double coef[kGroup][nb];
  const float* rows[kGroup];
  Vec omega(K);
  Mat v(K, K);
  for (int start = 0; start < m; start += kGroup) {
    const int count = std::min(kGroup, m - start);
    for (int r = 0; r < count; ++r) rows[r] = inst.x.data() + static_cast<std::size_t>(start + r) * n;
    forward_group<K, kk + kc, rf>(rows, count, feat, n, fields);
    for (int r = 0; r < count; ++r) {
      const int mu = start + r;
      const double* g_old = s.g.data() + static_cast<std::size_t>(mu) * K;
      for (int a = 0; a < K; ++a) {
        double corr = 0.0;
        for (int b = 0; b < K; ++b) corr += fields[r][K + a * K + b] * g_old[b];
        omega(a) = fields[r][a] * inv_sqrt_n - corr * inv_n;
      }
      int j = K + kk;
      for (int a = 0; a < K; ++a) {
        for (int b = a; b < K; ++b, ++j) v(a, b) = v(b, a) = fields[r][j] * inv_n;
      }
      int clipped = 0;
      v = clip_eigenvalues(v, cfg.pd_floor, &clipped);
      if (!all_finite(v)) throw Error(ErrorCode::NonPdCovariance, "V is not finite at row " + std::to_string(mu));
      info.clipped_v += clipped;

      OutputMoments om;
      try {
        om = out_moments(inst.y[mu], omega, v, inst.channel, cfg.channel);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::ImpossibleOutcome) throw;
        throw Error(ErrorCode::ChannelUnderflow, "label " + std::to_string(inst.y[mu]) + " at row " +
                                                     std::to_string(mu) + " has vanishing likelihood");
      }
      for (int a = 0; a < K; ++a) {
        s.omega[static_cast<std::size_t>(mu) * K + a] = omega(a);
        s.g[static_cast<std::size_t>(mu) * K + a] = om.g(a);
        coef[r][a] = om.g(a) * inv_sqrt_n;
      }
      put_mat(s.v, mu, v);
      put_mat(s.dg, mu, om.dg);
      j = K;
      for (int a = 0; a < K; ++a) {
        for (int b = a; b < K; ++b, ++j) coef[r][j] = -om.dg(a, b) * inv_n;
      }
    }

    backward_group<K, kc, rb>(rows, count, coef, n, acc);
  }
  return info;
}

template <int K>
AmpStepInfo sweep_fixed(AmpState& s, const TeacherInstance& inst, const AmpConfig& cfg, Eigen::MatrixXd& b_acc,
                        Eigen::MatrixXd& a_acc) {
  constexpr int kk = K * K, kc = K * (K + 1) / 2;
  const int n = s.n;
  std::vector<std::vector<double>> fwd(K + kk + kc, std::vector<double>(n));
  for (int i = 0; i < n; ++i) {
    const Mat c = get_mat(s.c_hat, i, K);
    Mat onsager = Mat::Zero(K, K);
    if (cfg.onsager) onsager = memory_matrix(get_mat(s.sigma_inv, i, K), c);
    for (int a = 0; a < K; ++a) fwd[a][i] = s.w_hat[static_cast<std::size_t>(i) * K + a];
    for (int a = 0; a < K; ++a) {
      for (int b = 0; b < K; ++b) fwd[K + a * K + b][i] = onsager(a, b);
    }
    int j = K + kk;
    for (int a = 0; a < K; ++a) {
      for (int b = a; b < K; ++b, ++j) fwd[j][i] = c(a, b);
    }
  }
  std::vector<std::vector<double>> bwd(K + kc, std::vector<double>(n, 0.0));
  const AmpStepInfo info = sweep_rows<K>(s, inst, cfg, fwd, bwd);
  b_acc.resize(n, K);
  a_acc.resize(n, kc);
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < K; ++a) b_acc(i, a) = bwd[a][i];
    for (int j = 0; j < kc; ++j) a_acc(i, j) = bwd[K + j][i];
  }
  return info;
}

// Plain loops for larger committees.
AmpStepInfo sweep_generic(AmpState& s, const TeacherInstance& inst, const AmpConfig& cfg, Eigen::MatrixXd& b_acc,
                          Eigen::MatrixXd& a_acc) {
  const int k = s.k, n = s.n, m = s.m;
  const int kk = k * k, kc = k * (k + 1) / 2;
  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
  const double inv_n = 1.0 / n;
  AmpStepInfo info;
  Eigen::MatrixXd w_in(n, k), sq_in(n, kk + kc);
  for (int i = 0; i < n; ++i) {
    const Mat c = get_mat(s.c_hat, i, k);
    Mat onsager = Mat::Zero(k, k);
    if (cfg.onsager) onsager = memory_matrix(get_mat(s.sigma_inv, i, k), c);
    for (int a = 0; a < k; ++a) w_in(i, a) = s.w_hat[static_cast<std::size_t>(i) * k + a];
    for (int a = 0; a < k; ++a) {
      for (int b = 0; b < k; ++b) sq_in(i, a * k + b) = onsager(a, b);
    }
    int j = kk;
    for (int a = 0; a < k; ++a) {
      for (int b = a; b < k; ++b, ++j) sq_in(i, j) = c(a, b);
    }
  }
  b_acc = Eigen::MatrixXd::Zero(n, k);
  a_acc = Eigen::MatrixXd::Zero(n, kc);
  Eigen::VectorXd lin(k), sq(kk + kc);
  Vec omega(k);
  Mat v(k, k);
  for (int mu = 0; mu < m; ++mu) {
    const float* row = inst.x.data() + static_cast<std::size_t>(mu) * n;
    lin.setZero();
    sq.setZero();
    for (int i = 0; i < n; ++i) {
      const double x = row[i];
      lin += x * w_in.row(i).transpose();
      sq += (x * x) * sq_in.row(i).transpose();
    }
    const double* g_old = s.g.data() + static_cast<std::size_t>(mu) * k;
    for (int a = 0; a < k; ++a) {
      double corr = 0.0;
      for (int b = 0; b < k; ++b) corr += sq(a * k + b) * g_old[b];
      omega(a) = lin(a) * inv_sqrt_n - corr * inv_n;
    }
    int j = kk;
    for (int a = 0; a < k; ++a) {
      for (int b = a; b < k; ++b, ++j) v(a, b) = v(b, a) = sq(j) * inv_n;
    }
    int clipped = 0;
    v = clip_eigenvalues(v, cfg.pd_floor, &clipped);
    if (!all_finite(v)) throw Error(ErrorCode::NonPdCovariance, "V is not finite at row " + std::to_string(mu));
    info.clipped_v += clipped;
    OutputMoments om;
    try {
      om = out_moments(inst.y[mu], omega, v, inst.channel, cfg.channel);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ImpossibleOutcome) throw;
      throw Error(ErrorCode::ChannelUnderflow, "label " + std::to_string(inst.y[mu]) + " at row " +
                                                   std::to_string(mu) + " has vanishing likelihood");
    }
    for (int a = 0; a < k; ++a) {
      s.omega[static_cast<std::size_t>(mu) * k + a] = omega(a);
      s.g[static_cast<std::size_t>(mu) * k + a] = om.g(a);
    }
    put_mat(s.v, mu, v);
    put_mat(s.dg, mu, om.dg);
    for (int i = 0; i < n; ++i) {
      const double x = row[i];
      for (int a = 0; a < k; ++a) b_acc(i, a) += x * om.g(a) * inv_sqrt_n;
      j = 0;
      for (int a = 0; a < k; ++a) {
        for (int b = a; b < k; ++b, ++j) a_acc(i, j) -= x * x * om.dg(a, b) * inv_n;
      }
    }
  }
  return info;
}

AmpStepInfo sweep(AmpState& s, const TeacherInstance& inst, const AmpConfig& cfg) {
  const int k = s.k, n = s.n;
  Eigen::MatrixXd b_acc, a_acc;
  AmpStepInfo info;
  switch (k) {
    case 1: info = sweep_fixed<1>(s, inst, cfg, b_acc, a_acc); break;
    case 2: info = sweep_fixed<2>(s, inst, cfg, b_acc, a_acc); break;
    case 3: info = sweep_fixed<3>(s, inst, cfg, b_acc, a_acc); break;
    default: info = sweep_generic(s, inst, cfg, b_acc, a_acc); break;
  }

  // Prior side: natural parameters A = Sigma^{-1}, B = Sigma^{-1} T.
  const double eta = cfg.damping;
  double delta = 0.0;
  Mat a_mat(k, k);
  Vec b_vec(k);
  for (int i = 0; i < n; ++i) {
    int j = 0;
    for (int a = 0; a < k; ++a) {
      for (int b = a; b < k; ++b, ++j) a_mat(a, b) = a_mat(b, a) = a_acc(i, j);
    }
    int clipped = 0;
    a_mat = clip_eigenvalues(a_mat, cfg.pd_floor, &clipped);
    info.clipped_sigma += clipped;
    if (!all_finite(a_mat)) {
      throw Error(ErrorCode::NonPdCovariance, "Sigma^{-1} is not finite at unit " + std::to_string(i));
    }
    const Vec w_old = s.w_hat_at(i);
    for (int a = 0; a < k; ++a) b_vec(a) = b_acc(i, a);
    b_vec += a_mat * w_old;
    const Mat sigma = spd_inverse(a_mat, 0.0);
    const PriorPosterior post = prior_posterior(a_mat, b_vec, inst.prior);
    const Vec t = sigma * b_vec;
    const Vec w_new = (1.0 - eta) * post.mean + eta * w_old;
    const Mat c_new = (1.0 - eta) * post.cov + eta * s.c_hat_at(i);
    for (int a = 0; a < k; ++a) {
      s.w_hat[static_cast<std::size_t>(i) * k + a] = w_new(a);
      s.t[static_cast<std::size_t>(i) * k + a] = t(a);
    }
    put_mat(s.c_hat, i, c_new);
    put_mat(s.sigma, i, sigma);
    put_mat(s.sigma_inv, i, a_mat);
    delta += (w_new - w_old).norm();
  }
  info.delta = delta / n;
  return info;
}

AmpStepInfo no_data_step(AmpState& s, const TeacherInstance& inst, const AmpConfig& cfg) {
  // Without factors the marginals are the prior ones.
  AmpStepInfo info;
  const int k = s.k;
  double delta = 0.0;
  for (int i = 0; i < s.n; ++i) {
    const Vec w_old = s.w_hat_at(i);
    const Vec w_new = cfg.damping * w_old;
    for (int a = 0; a < k; ++a) s.w_hat[static_cast<std::size_t>(i) * k + a] = w_new(a);
    put_mat(s.c_hat, i, (1.0 - cfg.damping) * inst.prior.rho + cfg.damping * s.c_hat_at(i));
    delta += (w_new - w_old).norm();
  }
  info.delta = delta / std::max(s.n, 1);
  return info;
}

// Minimum-cost assignment (Hungarian algorithm with potentials), cost is n x n.
std::vector<int> hungarian(const Eigen::MatrixXd& cost) {
  const int n = static_cast<int>(cost.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assign(n);
  for (int j = 1; j <= n; ++j) assign[p[j] - 1] = j - 1;
  return assign;
}

// Keeps q and rho - q PSD so that overlap-based formulas stay in their domain.
Mat project_to_domain(const Mat& q, const Mat& rho) {
  Mat p = clip_eigenvalues(symmetrize(q), 0.0);
  return rho - clip_eigenvalues(symmetrize(rho - p), 0.0);
}

}  // namespace

AmpState amp_init(const TeacherInstance& inst, AmpInit init, const AmpConfig& cfg) {
  AmpState s;
  s.n = inst.n;
  s.m = inst.m;
  s.k = inst.k;
  const int k = inst.k;
  const auto n = static_cast<std::size_t>(inst.n), m = static_cast<std::size_t>(inst.m);
  const auto kk = static_cast<std::size_t>(k) * k;
  s.w_hat.assign(n * k, 0.0);
  s.c_hat.assign(n * kk, 0.0);
  s.omega.assign(m * k, 0.0);
  s.v.assign(m * kk, 0.0);
  s.g.assign(m * k, 0.0);
  s.dg.assign(m * kk, 0.0);
  s.sigma.assign(n * kk, 0.0);
  s.sigma_inv.assign(n * kk, 0.0);
  s.t.assign(n * k, 0.0);
  const Mat eye = Mat::Identity(k, k);
  Rng rng(inst.seed ^ (cfg.init_seed * 0x9e3779b97f4a7c15ULL), 4);
  const double sd = std::sqrt(cfg.init_variance);
  for (int i = 0; i < inst.n; ++i) {
    for (int a = 0; a < k; ++a) {
      s.w_hat[static_cast<std::size_t>(i) * k + a] = init == AmpInit::Informed ? inst.w_star(i, a) : sd * rng.normal();
    }
    put_mat(s.c_hat, i, init == AmpInit::Informed ? Mat(cfg.informed_c_scale * inst.prior.rho) : inst.prior.rho);
    put_mat(s.sigma, i, eye);
    put_mat(s.sigma_inv, i, eye);
  }
  return s;
}

AmpStepInfo amp_step(AmpState& state, const TeacherInstance& inst, const AmpConfig& cfg) {
  if (!(cfg.damping >= 0.0 && cfg.damping < 1.0)) throw Error(ErrorCode::Config, "damping must lie in [0, 1)");
  if (state.n != inst.n || state.m != inst.m || state.k != inst.k) {
    throw Error(ErrorCode::Config, "AMP state does not match the instance");
  }
  AmpStepInfo info;
  if (inst.m == 0) {
    info = no_data_step(state, inst, cfg);
  } else {
    info = sweep(state, inst, cfg);
  }
  ++state.iteration;
  return info;
}

OverlapReport measure_overlap(const Eigen::MatrixXd& w_hat, const Eigen::MatrixXd& w_star) {
  if (w_hat.rows() != w_star.rows() || w_hat.cols() != w_star.cols() || w_hat.rows() == 0) {
    throw Error(ErrorCode::Config, "overlap needs matching non-empty weight matrices");
  }
  const int k = static_cast<int>(w_hat.cols());
  const Eigen::MatrixXd raw = w_hat.transpose() * w_star / static_cast<double>(w_hat.rows());
  OverlapReport r;
  r.permutation = hungarian(-raw.cwiseAbs());
  // Column b of q is teacher unit permutation[b], so matched pairs sit on the diagonal.
  r.q.resize(k, k);
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) r.q(a, b) = raw(a, r.permutation[b]);
  }
  r.q00 = r.q.diagonal().mean();
  r.q01 = k > 1 ? (r.q.sum() - r.q.diagonal().sum()) / (k * (k - 1.0)) : 0.0;
  return r;
}

LabelPrediction predict_from_field(const Vec& omega, const Mat& v, const ChannelModel& ch, const ChannelConfig& cfg) {
  LabelPrediction p;
  const int k = static_cast<int>(omega.size());
  if (ch.kind == ChannelKind::Linear) {
    p.y_hat = omega.sum() / std::sqrt(static_cast<double>(k));
    return p;
  }
  p.labels = label_support(ch);
  const double top = v.size() ? Eigen::SelfAdjointEigenSolver<Mat>(v, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff() : 0.0;
  if (top < 1e-12) {
    const double y = channel_output(std::span<const double>(omega.data(), k), ch);
    for (double l : p.labels) p.probabilities.push_back(l == y ? 1.0 : 0.0);
    p.y_hat = y;
    return p;
  }
  double total = 0.0;
  for (double l : p.labels) {
    const double z = z_out(l, omega, v, ch, cfg);
    p.probabilities.push_back(z);
    total += z;
  }
  for (std::size_t j = 0; j < p.labels.size(); ++j) {
    p.probabilities[j] /= total;
    p.y_hat += p.labels[j] * p.probabilities[j];
  }
  return p;
}

LabelPrediction predict_label(std::span<const double> x_new, const AmpState& state, const Mat& q_amp,
                              const PriorModel& prior, const ChannelModel& ch, const ChannelConfig& cfg) {
  if (static_cast<int>(x_new.size()) != state.n) throw Error(ErrorCode::Config, "input has the wrong dimension");
  const int k = state.k;
  Vec omega = Vec::Zero(k);
  for (int i = 0; i < state.n; ++i) {
    for (int a = 0; a < k; ++a) omega(a) += x_new[i] * state.w_hat[static_cast<std::size_t>(i) * k + a];
  }
  omega /= std::sqrt(static_cast<double>(state.n));
  int clipped = 0;
  const Mat v = clip_eigenvalues(symmetrize(prior.rho - q_amp), 0.0, &clipped);
  LabelPrediction p = predict_from_field(omega, v, ch, cfg);
  p.clipped = clipped > 0;
  return p;
}

McEstimate empirical_gen_error(const AmpState& state, const TeacherInstance& inst, const Mat& q_amp, int n_test,
                               std::uint64_t seed, const ChannelConfig& cfg) {
  if (n_test < 1) throw Error(ErrorCode::Config, "n_test must be positive");
  const int k = inst.k;
  Eigen::MatrixXd both(inst.n, 2 * k);
  both.leftCols(k) = inst.w_star;
  both.rightCols(k) = state.w_hat_matrix();
  const Eigen::MatrixXd gram = both.transpose() * both / static_cast<double>(inst.n);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
  const Eigen::MatrixXd root =
      es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  const Mat v = clip_eigenvalues(symmetrize(inst.prior.rho - q_amp), 0.0);
  Rng rng(seed, 5);
  Eigen::VectorXd u(2 * k);
  Vec omega(k);
  std::vector<double> z_star(k);
  double sum = 0.0, sum2 = 0.0;
  for (int s = 0; s < n_test; ++s) {
    for (int a = 0; a < 2 * k; ++a) u(a) = rng.normal();
    const Eigen::VectorXd fields = root * u;
    for (int a = 0; a < k; ++a) {
      z_star[a] = fields(a);
      omega(a) = fields(k + a);
    }
    double y = channel_output(z_star, inst.channel);
    if (inst.channel.kind == ChannelKind::Linear && inst.channel.delta > 0.0) {
      y += std::sqrt(inst.channel.delta) * rng.normal();
    }
    const double err = predict_from_field(omega, v, inst.channel, cfg).y_hat - y;
    const double e = 0.5 * err * err;
    sum += e;
    sum2 += e * e;
  }
  const double mean = sum / n_test;
  return {mean, std::sqrt(std::max(0.0, sum2 / n_test - mean * mean) / n_test)};
}

std::pair<AmpState, RunReport> amp_run(const TeacherInstance& inst, AmpInit init, const AmpConfig& cfg, int n_test,
                                       std::uint64_t test_seed) {
  if (!(cfg.tol > 0.0)) throw Error(ErrorCode::Config, "tol must be positive");
  if (cfg.max_iters < 1) throw Error(ErrorCode::Config, "max_iters must be positive");
  AmpState state = amp_init(inst, init, cfg);
  RunReport rep;
  for (int t = 0; t < cfg.max_iters; ++t) {
    const AmpStepInfo info = amp_step(state, inst, cfg);
    const OverlapReport ov = measure_overlap(state.w_hat_matrix(), inst.w_star);
    rep.trace.push_back({state.iteration, info.delta, ov.q00, ov.q01, info.clipped_v + info.clipped_sigma});
    rep.iterations = state.iteration;
    if (!std::isfinite(info.delta)) throw Error(ErrorCode::NonPdCovariance, "AMP diverged");
    if (info.delta < cfg.tol) {
      rep.converged = true;
      break;
    }
  }
  const Eigen::MatrixXd w = state.w_hat_matrix();
  rep.overlap = measure_overlap(w, inst.w_star);
  rep.q_self = Mat(w.transpose() * w / static_cast<double>(inst.n));
  const Mat q_pred = project_to_domain(rep.q_self, inst.prior.rho);
  SeConfig se_cfg;
  se_cfg.channel = cfg.channel;
  rep.eps_g_closed = gen_error(q_pred, inst.prior.rho, inst.channel, se_cfg);
  if (n_test > 0) rep.eps_g_empirical = empirical_gen_error(state, inst, q_pred, n_test, test_seed, cfg.channel);
  return {std::move(state), std::move(rep)};
}

}  // namespace committee
