// Spatial-augmentation CPD channel estimator.
//
// Pipeline: augment (re-index sub-bands into the spatial modes so a small
// array still yields an identifiable CP model) -> complex CP-ALS with a rank
// sweep -> per-component parameter extraction (phase-slope delay, elevation
// then azimuth by 1-D search) -> least-squares gains on the raw tensor ->
// energy pruning.
//
// Identifiable domain: toa in [0, 1/df), azimuth in [-pi/2, pi/2] (a planar
// array cannot tell front from back), elevation in [-pi/2, pi/2].
#pragma once

#include "sidelink/core.hpp"
#include "sidelink/scene.hpp"
#include "sidelink/waveform.hpp"

#include <boost/math/tools/minima.hpp>

#include <algorithm>
#include <numeric>
#include <optional>
#include <vector>

namespace sidelink {

struct SaConfig {
  int aug_x = 2;
  int aug_z = 2;
  int max_rank = 6;
  // ALS on near-collinear components crawls through long swamps; a loose
  // stop there makes the rank sweep prefer an over-ranked fit.
  int als_max_iters = 5000;
  double als_tol = 1e-14;
  double angle_grid_step = deg2rad(0.5);
  int restarts = 5;
  /// Rank sweep stops once adding a component improves the relative residual
  /// by less than this fraction.
  double rank_improvement = 0.05;
  /// Paths whose |gain|^2 is below this many dB above the LS gain variance
  /// N0 / (n_z n_x S) are pruned.
  double energy_floor_db = 12.0;
  /// Paths more than this many dB below the strongest estimate are pruned.
  double dynamic_range_db = 20.0;
  /// Polish the phase-slope delay with a 1-D periodogram search on the
  /// frequency factor.
  bool refine_toa = true;

  int freq_length(int subcarriers) const { return subcarriers - aug_z - aug_x; }

  void validate(int subcarriers) const {
    if (aug_x < 0 || aug_z < 0) throw InvalidInput("augmentation orders must be >= 0");
    if (freq_length(subcarriers) < 2)
      throw InvalidInput("spatial augmentation leaves fewer than two subcarriers");
    if (max_rank < 1) throw InvalidInput("max_rank must be >= 1");
    if (als_max_iters < 1 || restarts < 1) throw InvalidInput("ALS iterations/restarts must be >= 1");
    if (!(angle_grid_step > 0.0)) throw InvalidInput("angle grid step must be positive");
    if (!(dynamic_range_db > 0.0)) throw InvalidInput("dynamic range must be positive");
  }
};

// ---------------------------------------------------------------------------
// Spatial augmentation

/// Augmented tensor stored as a (P*Q) x V matrix, row p + P*q.
///   p = iz*(aug_z+1) + u,  q = ix*(aug_x+1) + w,  entry = Y[iz, ix, u + w + v].
struct AugmentedTensor {
  int rows_z = 0;  // P = n_z (aug_z + 1)
  int rows_x = 0;  // Q = n_x (aug_x + 1)
  int freq = 0;    // V = S - aug_z - aug_x
  int aug_z = 0;
  int aug_x = 0;
  CMat mat;

  cplx operator()(int p, int q, int v) const { return mat(p + rows_z * q, v); }

  /// Source entry (iz, ix, k) of augmented entry (p, q, v).
  std::array<int, 3> source(int p, int q, int v) const {
    const int iz = p / (aug_z + 1), u = p % (aug_z + 1);
    const int ix = q / (aug_x + 1), w = q % (aug_x + 1);
    return {iz, ix, u + w + v};
  }
};

inline AugmentedTensor augment(const ObservationTensor& y, const SaConfig& cfg) {
  cfg.validate(y.subcarriers);
  AugmentedTensor a;
  a.aug_z = cfg.aug_z;
  a.aug_x = cfg.aug_x;
  a.rows_z = y.n_z * (cfg.aug_z + 1);
  a.rows_x = y.n_x * (cfg.aug_x + 1);
  a.freq = cfg.freq_length(y.subcarriers);
  a.mat.resize(Eigen::Index(a.rows_z) * a.rows_x, a.freq);
  for (int v = 0; v < a.freq; ++v)
    for (int q = 0; q < a.rows_x; ++q)
      for (int p = 0; p < a.rows_z; ++p) {
        const auto [iz, ix, k] = a.source(p, q, v);
        a.mat(p + a.rows_z * q, v) = y(iz, ix, k);
      }
  return a;
}

/// Recovers the original tensor from its augmentation.
inline ObservationTensor deaugment(const AugmentedTensor& a) {
  const int nz = a.rows_z / (a.aug_z + 1);
  const int nx = a.rows_x / (a.aug_x + 1);
  ObservationTensor y(nz, nx, a.freq + a.aug_z + a.aug_x);
  for (int v = 0; v < a.freq; ++v)
    for (int q = 0; q < a.rows_x; ++q)
      for (int p = 0; p < a.rows_z; ++p) {
        const auto [iz, ix, k] = a.source(p, q, v);
        y(iz, ix, k) = a(p, q, v);
      }
  return y;
}

// ---------------------------------------------------------------------------
// CP-ALS

struct CpdFactors {
  CMat z;     // P x R
  CMat x;     // Q x R
  CMat freq;  // V x R

  int rank() const { return int(z.cols()); }
};

struct CpdResult {
  CpdFactors factors;
  double residual = 1.0;  // ||Y - Yhat||_F / ||Y||_F
  int iterations = 0;
  int restarts_run = 0;
  bool regularized = false;  // a Gram matrix needed the ridge
  bool monotone = true;      // residual never increased within a run
  std::vector<double> history;  // per-iteration residual of the returned run
};

namespace detail {

/// Solves X * G^T = M for X, with G Hermitian PSD. Ill-conditioned G gets a
/// ridge of 1e-10 * trace(G) / R on the diagonal.
inline CMat solve_gram(const CMat& gram, const CMat& m, bool& regularized) {
  const Eigen::Index r = gram.rows();
  Eigen::SelfAdjointEigenSolver<CMat> eig(gram, Eigen::EigenvaluesOnly);
  const double lmax = eig.eigenvalues().maxCoeff();
  const double lmin = eig.eigenvalues().minCoeff();
  CMat g = gram;
  if (!(lmax > 0.0) || lmin < 1e-12 * lmax) {
    const double trace = std::max(gram.trace().real(), 1e-300);
    g.diagonal().array() += 1e-10 * trace / double(r);
    regularized = true;
  }
  return g.ldlt().solve(m.transpose()).transpose();
}

inline CMat random_factor(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  CMat f(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) f(i, j) = rng.complex_normal(1.0);
  return f;
}

/// Leading `cols` eigenvectors of a Gram matrix; random columns beyond its size.
inline CMat leading_subspace(const CMat& gram, Eigen::Index cols, Rng& rng) {
  Eigen::SelfAdjointEigenSolver<CMat> eig(gram);
  const Eigen::Index n = gram.rows();
  CMat f = random_factor(n, cols, rng);
  for (Eigen::Index j = 0; j < std::min(cols, n); ++j) f.col(j) = eig.eigenvectors().col(n - 1 - j);
  return f;
}

struct AlsRun {
  CpdFactors f;
  double residual = 1.0;
  int iterations = 0;
  bool regularized = false;
  bool monotone = true;
  std::vector<double> history;
};

/// ALS sweeps on a (P*Q) x L unfolding `mat` from the given start.
inline AlsRun als_run(const CMat& mat, int P, int Q, double norm2, CMat A, CMat B, CMat C,
                      const SaConfig& cfg, double floor2 = 0.0) {
  // Energy of the full tensor outside the span of `mat` (compression loss).
  const double outside2 = std::max(norm2 - mat.squaredNorm(), 0.0);
  const Eigen::Index R = A.cols();
  AlsRun run;
  double prev = std::numeric_limits<double>::infinity();
  CMat T(Eigen::Index(P) * Q, R), M1(P, R), M2(Q, R), KR(Eigen::Index(P) * Q, R);
  auto khatri_rao = [&](const CMat& a, const CMat& b, CMat& out) {
    for (Eigen::Index r = 0; r < R; ++r)
      for (int q = 0; q < Q; ++q) out.col(r).segment(Eigen::Index(P) * q, P) = a.col(r) * b(q, r);
  };
  CMat A0, B0, C0, KRs(Eigen::Index(P) * Q, R);
  for (int it = 0; it < cfg.als_max_iters; ++it) {
    A0 = A;
    B0 = B;
    C0 = C;
    // Mode 1 and 2 share the contraction with conj(C).
    T.noalias() = mat * C.conjugate();
    for (Eigen::Index r = 0; r < R; ++r)
      for (int p = 0; p < P; ++p) {
        cplx s = 0.0;
        for (int q = 0; q < Q; ++q) s += std::conj(B(q, r)) * T(p + P * q, r);
        M1(p, r) = s;
      }
    const CMat gc = C.adjoint() * C;
    A = solve_gram((B.adjoint() * B).cwiseProduct(gc), M1, run.regularized);
    for (Eigen::Index r = 0; r < R; ++r)
      for (int q = 0; q < Q; ++q) {
        cplx s = 0.0;
        for (int p = 0; p < P; ++p) s += std::conj(A(p, r)) * T(p + P * q, r);
        M2(q, r) = s;
      }
    const CMat ga = A.adjoint() * A;
    B = solve_gram(ga.cwiseProduct(gc), M2, run.regularized);
    khatri_rao(A, B, KR);
    const CMat M3 = mat.transpose() * KR.conjugate();
    const CMat gb = B.adjoint() * B;
    C = solve_gram(ga.cwiseProduct(gb), M3, run.regularized);

    // ||Y - Yhat||^2 = ||Y||^2 - 2 Re<Yhat, Y> + ||Yhat||^2; recomputed
    // explicitly once cancellation would dominate.
    const cplx cross = C.conjugate().cwiseProduct(M3).sum();
    const double model2 = ga.cwiseProduct(gb).cwiseProduct(C.adjoint() * C).sum().real();
    double res2 = norm2 - 2.0 * cross.real() + model2;
    if (res2 < 1e-8 * norm2) res2 = outside2 + (mat - KR * C.transpose()).squaredNorm();
    double res = std::sqrt(std::max(res2, 0.0) / norm2);

    // Unit-norm spatial columns; scale lives in the frequency factor.
    for (Eigen::Index r = 0; r < R; ++r) {
      const double na = A.col(r).norm(), nb = B.col(r).norm();
      if (na > 0.0 && nb > 0.0) {
        A.col(r) /= na;
        B.col(r) /= nb;
        C.col(r) *= na * nb;
      }
    }

    // Extrapolate along the last sweep's step (step length it^(1/3)) and keep
    // the result only if it fits better. Pulls ALS out of swamps where two
    // components are nearly collinear.
    if (it >= 2 && R > 1) {
      const double step = std::cbrt(double(it + 1));
      CMat As = A0 + step * (A - A0), Bs = B0 + step * (B - B0), Cs = C0 + step * (C - C0);
      khatri_rao(As, Bs, KRs);
      const double rs = std::sqrt((outside2 + (mat - KRs * Cs.transpose()).squaredNorm()) / norm2);
      if (rs < res) {
        for (Eigen::Index r = 0; r < R; ++r) {
          const double na = As.col(r).norm(), nb = Bs.col(r).norm();
          if (na > 0.0 && nb > 0.0) {
            As.col(r) /= na;
            Bs.col(r) /= nb;
            Cs.col(r) *= na * nb;
          }
        }
        A = std::move(As);
        B = std::move(Bs);
        C = std::move(Cs);
        res = rs;
      }
    }

    run.history.push_back(res);
    run.iterations = it + 1;
    if (res > prev * (1.0 + 1e-9) + 1e-13) run.monotone = false;
    const bool converged = res < 1e-13 || res * res * norm2 <= floor2 ||
                           (it > 0 && (prev - res) <= cfg.als_tol * prev);
    prev = res;
    if (converged) break;
  }
  run.f = {std::move(A), std::move(B), std::move(C)};
  run.residual = prev;
  return run;
}

}  // namespace detail

/// Row-space compression of the frequency mode. The (P*Q) x V unfolding has
/// rank <= P*Q, so for V > P*Q it is stored as core * basis^H, with core =
/// W S from the eigendecomposition mat mat^H = W S^2 W^H and basis =
/// mat^H W S^-1. Every ALS frequency update lies in that row space, so ALS on
/// the core gives the same iterates as on the full tensor. Directions whose
/// eigenvalue is below 1e-13 of the largest are Gram round-off and are dropped.
struct FrequencyCompression {
  bool active = false;
  CMat core;     // (P*Q) x L
  CMat lift;     // (P*Q) x L, W S^-1: basis = mat^H lift
};

inline FrequencyCompression compress_frequency(const AugmentedTensor& t) {
  FrequencyCompression c;
  const Eigen::Index PQ = Eigen::Index(t.rows_z) * t.rows_x;
  if (t.freq <= PQ) return c;
  CMat gram(PQ, PQ);
  gram.noalias() = t.mat * t.mat.adjoint();
  Eigen::SelfAdjointEigenSolver<CMat> eig(gram);
  const RVec& ev = eig.eigenvalues();  // ascending
  const double top = std::max(ev[PQ - 1], 0.0);
  if (!(top > 0.0)) return c;
  Eigen::Index keep = 0;
  while (keep < PQ && ev[PQ - 1 - keep] > 1e-13 * top) ++keep;
  c.active = true;
  c.core.resize(PQ, keep);
  c.lift.resize(PQ, keep);
  for (Eigen::Index j = 0; j < keep; ++j) {
    const double sv = std::sqrt(ev[PQ - 1 - j]);
    c.core.col(j) = eig.eigenvectors().col(PQ - 1 - j) * sv;
    c.lift.col(j) = eig.eigenvectors().col(PQ - 1 - j) / sv;
  }
  return c;
}

/// Rank-R complex CPD of the augmented tensor by alternating least squares.
/// The first start is the leading singular subspaces of the mode-1/mode-2
/// unfoldings; the remaining `cfg.restarts - 1` starts are random. Restarts
/// end early once the fit reaches the noise floor `noise_variance` per entry.
/// `comp` must come from compress_frequency(t).
inline CpdResult cpd_als(const AugmentedTensor& t, const FrequencyCompression& comp, int rank,
                         const SaConfig& cfg, std::uint64_t seed, double noise_variance = 0.0) {
  if (rank < 1 || rank > cfg.max_rank) throw InvalidInput("CPD rank outside [1, max_rank]");
  const double norm2 = t.mat.squaredNorm();
  CpdResult out;
  if (!(norm2 > 0.0)) {
    out.factors = {CMat::Zero(t.rows_z, rank), CMat::Zero(t.rows_x, rank),
                   CMat::Zero(t.freq, rank)};
    out.residual = 0.0;
    return out;
  }
  const double floor2 = noise_variance * double(t.mat.size());
  Rng rng(seed);
  const int P = t.rows_z, Q = t.rows_x;
  const bool compress = comp.active;
  const CMat& mat = compress ? comp.core : t.mat;
  for (int start = 0; start < cfg.restarts; ++start) {
    CMat A, B;
    if (start == 0) {
      // Mode-1 / mode-2 Gram matrices of the unfoldings.
      CMat g1 = CMat::Zero(P, P), g2 = CMat::Zero(Q, Q);
      for (Eigen::Index v = 0; v < mat.cols(); ++v) {
        const auto slab = mat.col(v).reshaped(P, Q);
        g1.noalias() += slab * slab.adjoint();
        g2.noalias() += slab.transpose() * slab.conjugate();
      }
      A = detail::leading_subspace(g1, rank, rng);
      B = detail::leading_subspace(g2, rank, rng);
    } else {
      A = detail::random_factor(P, rank, rng);
      B = detail::random_factor(Q, rank, rng);
    }
    CMat C;
    if (start == 0) {
      CMat kr(Eigen::Index(P) * Q, rank);
      for (Eigen::Index r = 0; r < rank; ++r)
        for (int q = 0; q < Q; ++q) kr.col(r).segment(Eigen::Index(P) * q, P) = A.col(r) * B(q, r);
      bool ridge = false;
      C = detail::solve_gram((A.adjoint() * A).cwiseProduct(B.adjoint() * B),
                             mat.transpose() * kr.conjugate(), ridge);
    } else {
      C = detail::random_factor(mat.cols(), rank, rng);
    }
    auto run = detail::als_run(mat, P, Q, norm2, std::move(A), std::move(B), std::move(C), cfg,
                               floor2);
    if (compress) {
      // Back to the full frequency mode, C = conj(basis) Cc with basis =
      // mat^H lift, and the residual recomputed there: residuals from norm
      // differences are only good to sqrt(eps).
      run.f.freq = t.mat.transpose() * (comp.lift.conjugate() * run.f.freq);
      CMat kr(Eigen::Index(P) * Q, rank);
      for (Eigen::Index r = 0; r < rank; ++r)
        for (int q = 0; q < Q; ++q)
          kr.col(r).segment(Eigen::Index(P) * q, P) = run.f.z.col(r) * run.f.x(q, r);
      run.residual = std::sqrt((t.mat - kr * run.f.freq.transpose()).squaredNorm() / norm2);
    }
    out.regularized = out.regularized || run.regularized;
    out.monotone = out.monotone && run.monotone;
    out.restarts_run = start + 1;
    if (start == 0 || run.residual < out.residual) {
      out.factors = std::move(run.f);
      out.residual = run.residual;
      out.iterations = run.iterations;
      out.history = std::move(run.history);
    }
    if (out.residual < 1e-10 || out.residual * out.residual * norm2 <= floor2) break;
  }
  return out;
}

inline CpdResult cpd_als(const AugmentedTensor& t, int rank, const SaConfig& cfg,
                         std::uint64_t seed, double noise_variance = 0.0) {
  return cpd_als(t, compress_frequency(t), rank, cfg, seed, noise_variance);
}

// ---------------------------------------------------------------------------
// Parameter extraction

struct PathEstimateSet {
  std::vector<PathParams> paths;  // sorted by toa
  std::vector<double> energy;     // |gain|^2 per path
  std::vector<bool> at_boundary;  // angle search peaked at a grid edge
  int rank_used = 0;
  double residual = 1.0;
  bool regularized = false;

  std::size_t size() const { return paths.size(); }
  bool empty() const { return paths.empty(); }
};

namespace detail {

/// |d_V(toa)^H f|^2 for the first f.size() subcarriers.
inline double delay_match(const CVec& f, double df, double toa) {
  const cplx step = std::polar(1.0, kTwoPi * df * toa);  // conj of the steering phase
  cplx ph = 1.0, acc = 0.0;
  for (Eigen::Index k = 0; k < f.size(); ++k) {
    acc += ph * f[k];
    ph *= step;
  }
  return std::norm(acc);
}

/// Brent maximisation of `score` on [lo, hi]. The search runs on [0, 1]:
/// Brent's absolute tolerance is in units of the argument, which for delays in
/// seconds would be nanoseconds.
template <typename F>
double maximize_1d(F&& score, double lo, double hi) {
  const double w = hi - lo;
  auto r = boost::math::tools::brent_find_minima([&](double t) { return -score(lo + w * t); },
                                                 0.0, 1.0, 30);
  return lo + w * r.first;
}

struct GridPeak {
  double arg;
  bool boundary;
};

/// Coarse grid over [lo, hi] followed by a local refinement around the best
/// node. A maximum on an edge node is clamped there and flagged.
template <typename F>
GridPeak grid_search(F&& score, double lo, double hi, double step) {
  const int n = std::max(2, int(std::ceil((hi - lo) / step)) + 1);
  const double h = (hi - lo) / (n - 1);
  int best = 0;
  double best_val = -1.0;
  for (int i = 0; i < n; ++i) {
    const double v = score(lo + i * h);
    if (v > best_val) {
      best_val = v;
      best = i;
    }
  }
  if (best == 0 || best == n - 1) {
    const double edge = lo + best * h;
    const double inner = best == 0 ? lo + h : hi - h;
    const double refined = maximize_1d(score, std::min(edge, inner), std::max(edge, inner));
    const bool at_edge = std::abs(refined - edge) < 1e-6 * h;
    return {at_edge ? edge : refined, at_edge};
  }
  const double c = lo + best * h;
  return {maximize_1d(score, c - h, c + h), false};
}

}  // namespace detail

/// Delay of a frequency-domain steering estimate from the averaged lag-one
/// conjugate product, mapped to [0, 1/df).
inline double phase_slope_toa(const CVec& f, double df) {
  if (f.size() < 2) throw InvalidInput("phase slope needs at least two samples");
  const cplx acc = f.head(f.size() - 1).dot(f.tail(f.size() - 1));  // sum conj(f_k) f_{k+1}
  double phase = -std::arg(acc);
  if (phase < 0.0) phase += kTwoPi;
  if (phase >= kTwoPi) phase -= kTwoPi;
  return phase / (kTwoPi * df);
}

/// Phase-slope delay, optionally polished by maximising |d(toa)^H f|^2 within
/// half a resolution cell of the phase-slope value.
inline double estimate_toa(const CVec& f, double df, bool refine) {
  const double coarse = phase_slope_toa(f, df);
  if (!refine) return coarse;
  const double half_cell = 0.5 / (double(f.size()) * df);
  return detail::maximize_1d([&](double tau) { return detail::delay_match(f, df, tau); },
                             coarse - half_cell, coarse + half_cell);
}

inline std::vector<cplx> fit_gains(const ObservationTensor& y, const ArrayConfig& array,
                                   const OfdmConfig& ofdm, const std::vector<PathParams>& paths) {
  if (paths.empty()) return {};
  CMat basis(y.data.size(), Eigen::Index(paths.size()));
  for (std::size_t i = 0; i < paths.size(); ++i)
    basis.col(Eigen::Index(i)) =
        path_response(array, ofdm, paths[i].toa, paths[i].aoa_az, paths[i].aoa_el);
  CMat gram = basis.adjoint() * basis;
  const double trace = gram.trace().real();
  gram.diagonal().array() += 1e-12 * trace / double(paths.size());
  const CVec g = gram.ldlt().solve(basis.adjoint() * y.data);
  return {g.data(), g.data() + g.size()};
}

/// Turns CPD factor triplets into path estimates. `y` is the unaugmented
/// tensor the gains are fitted on.
inline PathEstimateSet extract_params(const CpdFactors& factors, const ObservationTensor& y,
                                      const ArrayConfig& array, const OfdmConfig& ofdm,
                                      const SaConfig& cfg) {
  const double df = ofdm.subcarrier_spacing;
  const double kz = kTwoPi / array.wavelength * array.d_z;
  const double kx = kTwoPi / array.wavelength * array.d_x;
  std::vector<PathParams> found;
  std::vector<bool> edge;
  for (int r = 0; r < factors.rank(); ++r) {
    const CVec f = factors.freq.col(r);
    if (!(f.norm() > 0.0)) continue;
    PathParams p;
    p.toa = estimate_toa(f, df, cfg.refine_toa);

    const CVec dz = delay_steering(df, p.toa, cfg.aug_z + 1);
    const CVec dx = delay_steering(df, p.toa, cfg.aug_x + 1);
    const CVec az_hat = factors.z.col(r);
    const CVec ax_hat = factors.x.col(r);

    auto score_el = [&](double el) {
      cplx acc = 0.0;
      for (int n = 0; n < array.n_z; ++n) {
        const cplx a = std::polar(1.0, kz * n * std::sin(el));
        for (int u = 0; u <= cfg.aug_z; ++u) acc += std::conj(az_hat[n * (cfg.aug_z + 1) + u]) * a * dz[u];
      }
      return std::norm(acc);
    };
    // A single element along an axis carries no angle information; the angle
    // is reported as 0.
    const auto el = array.n_z > 1
                        ? detail::grid_search(score_el, -kPi / 2, kPi / 2, cfg.angle_grid_step)
                        : detail::GridPeak{0.0, false};
    p.aoa_el = el.arg;

    const double cos_el = std::cos(p.aoa_el);
    auto score_az = [&](double az) {
      cplx acc = 0.0;
      for (int n = 0; n < array.n_x; ++n) {
        const cplx a = std::polar(1.0, kx * n * cos_el * std::sin(az));
        for (int w = 0; w <= cfg.aug_x; ++w) acc += std::conj(ax_hat[n * (cfg.aug_x + 1) + w]) * a * dx[w];
      }
      return std::norm(acc);
    };
    const auto az = array.n_x > 1
                        ? detail::grid_search(score_az, -kPi / 2, kPi / 2, cfg.angle_grid_step)
                        : detail::GridPeak{0.0, false};
    p.aoa_az = wrap_angle(az.arg);
    found.push_back(p);
    edge.push_back(el.boundary || az.boundary);
  }

  // Least-squares gains, then drop the weakest path below the floor and refit
  // until every survivor clears it.
  const double noise_floor =
      std::pow(10.0, cfg.energy_floor_db / 10.0) * y.noise_variance / double(y.data.size());
  const double relative = std::pow(10.0, -cfg.dynamic_range_db / 10.0);
  std::vector<cplx> gains = fit_gains(y, array, ofdm, found);
  while (!found.empty()) {
    std::size_t weakest = 0, strongest = 0;
    for (std::size_t i = 1; i < gains.size(); ++i) {
      if (std::norm(gains[i]) < std::norm(gains[weakest])) weakest = i;
      if (std::norm(gains[i]) > std::norm(gains[strongest])) strongest = i;
    }
    const double floor = std::max(noise_floor, relative * std::norm(gains[strongest]));
    if (std::norm(gains[weakest]) >= floor && std::norm(gains[weakest]) > 0.0) break;
    found.erase(found.begin() + std::ptrdiff_t(weakest));
    edge.erase(edge.begin() + std::ptrdiff_t(weakest));
    gains = fit_gains(y, array, ofdm, found);
  }

  std::vector<std::size_t> order(found.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return found[a].toa < found[b].toa;
  });
  PathEstimateSet out;
  out.rank_used = factors.rank();
  for (std::size_t i : order) {
    PathParams p = found[i];
    p.gain = gains[i];
    out.paths.push_back(p);
    out.energy.push_back(std::norm(gains[i]));
    out.at_boundary.push_back(edge[i]);
  }
  return out;
}

/// Full estimator: augment, sweep the CPD rank, extract.
///
/// Rank selection: starting from the empty model (relative residual 1), the
/// rank is increased while each extra component lowers the relative residual
/// by at least `cfg.rank_improvement` of its previous value; the last rank
/// that did so is used. The sweep also stops once the fit reaches the noise
/// floor.
inline PathEstimateSet estimate(const ObservationTensor& y, const ArrayConfig& array,
                                const OfdmConfig& ofdm, const SaConfig& cfg, std::uint64_t seed) {
  if (y.n_z != array.n_z || y.n_x != array.n_x || y.subcarriers != ofdm.subcarriers)
    throw InvalidInput("tensor dimensions do not match the array/OFDM configuration");
  const AugmentedTensor aug = augment(y, cfg);
  const double norm2 = aug.mat.squaredNorm();
  const double floor2 = y.noise_variance * double(aug.mat.size());

  std::optional<CpdResult> chosen;
  double prev = 1.0;
  if (norm2 > floor2 && norm2 > 0.0) {
    const FrequencyCompression comp = compress_frequency(aug);
    for (int r = 1; r <= cfg.max_rank; ++r) {
      CpdResult cpd =
          cpd_als(aug, comp, r, cfg, splitmix64(seed + std::uint64_t(r)), y.noise_variance);
      if (prev - cpd.residual < cfg.rank_improvement * prev) break;
      prev = cpd.residual;
      chosen = std::move(cpd);
      if (prev < 1e-10 || prev * prev * norm2 <= floor2) break;
    }
  }
  if (!chosen) {
    PathEstimateSet empty;
    empty.residual = 1.0;
    return empty;
  }
  PathEstimateSet out = extract_params(chosen->factors, y, array, ofdm, cfg);
  out.residual = chosen->residual;
  out.regularized = chosen->regularized;
  return out;
}

/// Single-antenna array used for the CRU side of the exchange.
inline ArrayConfig single_antenna(double wavelength) {
  return ArrayConfig::half_wavelength(1, 1, wavelength);
}

/// Delay-only estimation on a single-antenna frequency response: the same
/// augmentation + CPD pipeline on a 1 x 1 array. Angles come back as 0.
inline PathEstimateSet estimate_delays_1d(const ObservationTensor& y, const OfdmConfig& ofdm,
                                          const SaConfig& cfg, std::uint64_t seed) {
  if (y.n_z != 1 || y.n_x != 1) throw InvalidInput("delay-only estimation needs a 1 x 1 tensor");
  return estimate(y, single_antenna(ofdm.wavelength()), ofdm, cfg, seed);
}

}  // namespace sidelink
