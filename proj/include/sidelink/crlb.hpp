// Fisher information of the channel parameters, error covariance lower
// bounds (ECLB) and their position-domain mapping.
//
// Parameter vector, per path l in the order given (path 0 is the LoS):
//   [tau_l, az_l, el_l, Re rho_l, Im rho_l]
// so the parameters of interest (tau_0, az_0, el_0) always come first and
// everything after them is nuisance.
#pragma once

#include "sidelink/chest.hpp"
#include "sidelink/core.hpp"
#include "sidelink/scene.hpp"
#include "sidelink/waveform.hpp"

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sidelink {

inline constexpr int kParamsPerPath = 5;
inline constexpr int kEtaDim = 3;

/// How the two RTT links are combined.
enum class LinkCombination {
  kSum,      // independent observations: F = F_rsu + F_cru
  kAverage,  // F = (F_rsu + F_cru) / 2
};

struct FimMatrix {
  RMat matrix;
  double noise_variance = 0.0;
};

namespace detail {

/// Columns d mu / d xi for the RSU-side tensor model, vec layout of
/// path_response.
inline CMat tensor_jacobian(std::span<const PathParams> paths, const ArrayConfig& array,
                            const OfdmConfig& ofdm) {
  const int S = ofdm.subcarriers;
  const Eigen::Index n = Eigen::Index(array.n_z) * array.n_x * S;
  CMat J(n, Eigen::Index(kParamsPerPath * paths.size()));
  const double kx = kTwoPi / array.wavelength * array.d_x;
  const double kz = kTwoPi / array.wavelength * array.d_z;
  for (std::size_t l = 0; l < paths.size(); ++l) {
    const PathParams& p = paths[l];
    const CVec d = delay_steering(ofdm, p.toa);
    const CVec ax = steering_x(array, p.aoa_az, p.aoa_el);
    const CVec az = steering_z(array, p.aoa_az, p.aoa_el);
    CVec dd(S), dax_az(array.n_x), dax_el(array.n_x), daz_el(array.n_z);
    for (int k = 0; k < S; ++k) dd[k] = -kJ * (kTwoPi * ofdm.subcarrier_spacing * k) * d[k];
    for (int i = 0; i < array.n_x; ++i) {
      dax_az[i] = kJ * (kx * i * std::cos(p.aoa_el) * std::cos(p.aoa_az)) * ax[i];
      dax_el[i] = kJ * (-kx * i * std::sin(p.aoa_el) * std::sin(p.aoa_az)) * ax[i];
    }
    for (int i = 0; i < array.n_z; ++i) daz_el[i] = kJ * (kz * i * std::cos(p.aoa_el)) * az[i];

    const CVec base = kron(d, kron(ax, az));
    const Eigen::Index c = Eigen::Index(kParamsPerPath * l);
    J.col(c) = p.gain * kron(dd, kron(ax, az));
    J.col(c + 1) = p.gain * kron(d, kron(dax_az, az));
    J.col(c + 2) = p.gain * kron(d, CVec(kron(dax_el, az) + kron(ax, daz_el)));
    J.col(c + 3) = base;
    J.col(c + 4) = kJ * base;
  }
  return J;
}

/// Columns for the single-antenna CRU-side model; angle columns are zero.
inline CMat single_antenna_jacobian(std::span<const PathParams> paths, const OfdmConfig& ofdm) {
  const int S = ofdm.subcarriers;
  CMat J = CMat::Zero(S, Eigen::Index(kParamsPerPath * paths.size()));
  for (std::size_t l = 0; l < paths.size(); ++l) {
    const PathParams& p = paths[l];
    const CVec d = delay_steering(ofdm, p.toa);
    const Eigen::Index c = Eigen::Index(kParamsPerPath * l);
    for (int k = 0; k < S; ++k)
      J(k, c) = p.gain * (-kJ * (kTwoPi * ofdm.subcarrier_spacing * k)) * d[k];
    J.col(c + 3) = d;
    J.col(c + 4) = kJ * d;
  }
  return J;
}

inline RMat fisher_from_jacobian(const CMat& J, double noise_variance) {
  RMat F = (2.0 / noise_variance) * (J.adjoint() * J).real();
  return 0.5 * (F + F.transpose());
}

}  // namespace detail

/// Analytic Jacobian of the noiseless RSU-side tensor model, exposed for
/// testing against finite differences.
inline CMat model_jacobian(std::span<const PathParams> paths, const ArrayConfig& array,
                           const OfdmConfig& ofdm) {
  return detail::tensor_jacobian(paths, array, ofdm);
}

/// Noiseless RSU-side model for a parameter vector laid out as documented at
/// the top of this file (finite-difference oracle input).
inline CVec model_response(const RVec& xi, const ArrayConfig& array, const OfdmConfig& ofdm) {
  if (xi.size() % kParamsPerPath != 0) throw InvalidInput("parameter vector length must be 5L");
  CVec mu = CVec::Zero(Eigen::Index(array.n_z) * array.n_x * ofdm.subcarriers);
  for (Eigen::Index c = 0; c < xi.size(); c += kParamsPerPath)
    mu += cplx(xi[c + 3], xi[c + 4]) * path_response(array, ofdm, xi[c], xi[c + 1], xi[c + 2]);
  return mu;
}

inline RVec pack_params(std::span<const PathParams> paths) {
  RVec xi(Eigen::Index(kParamsPerPath * paths.size()));
  for (std::size_t l = 0; l < paths.size(); ++l) {
    const Eigen::Index c = Eigen::Index(kParamsPerPath * l);
    xi[c] = paths[l].toa;
    xi[c + 1] = paths[l].aoa_az;
    xi[c + 2] = paths[l].aoa_el;
    xi[c + 3] = paths[l].gain.real();
    xi[c + 4] = paths[l].gain.imag();
  }
  return xi;
}

/// RSU-side FIM (2/N0) Re{J^H J} of the tensor observation.
inline FimMatrix fim_rsu(std::span<const PathParams> paths, const ArrayConfig& array,
                         const OfdmConfig& ofdm, double noise_variance) {
  if (paths.empty()) throw InvalidInput("FIM needs at least one path");
  if (!(noise_variance > 0.0)) throw InvalidInput("noise variance must be positive");
  return {detail::fisher_from_jacobian(detail::tensor_jacobian(paths, array, ofdm), noise_variance),
          noise_variance};
}

/// CRU-side FIM of the single-antenna frequency response; informs delays
/// and gains only.
inline FimMatrix fim_cru(std::span<const PathParams> paths, const OfdmConfig& ofdm,
                         double noise_variance) {
  if (paths.empty()) throw InvalidInput("FIM needs at least one path");
  if (!(noise_variance > 0.0)) throw InvalidInput("noise variance must be positive");
  return {detail::fisher_from_jacobian(detail::single_antenna_jacobian(paths, ofdm), noise_variance),
          noise_variance};
}

/// Delay variance bound [s^2] of a single path seen by the single-antenna CRU:
/// the (toa, Re, Im) block of the CRU-side FIM inverted.
inline double cru_delay_crb(const PathParams& path, const OfdmConfig& ofdm, double noise_variance) {
  const RMat F = fim_cru(std::span<const PathParams>(&path, 1), ofdm, noise_variance).matrix;
  Mat3 G;
  const int idx[3] = {0, 3, 4};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) G(i, j) = F(idx[i], idx[j]);
  const Eigen::LDLT<Mat3> ldlt(G);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || !(G(0, 0) > 0.0))
    throw UnobservableError("CRU delay FIM is singular", RVec::Unit(3, 0), 0);
  return ldlt.solve(Vec3::UnitX())[0];
}

/// Total FIM of both RTT links.
inline FimMatrix fim(std::span<const PathParams> paths, const ArrayConfig& array,
                     const OfdmConfig& ofdm, double noise_variance,
                     LinkCombination links = LinkCombination::kSum) {
  FimMatrix f = fim_rsu(paths, array, ofdm, noise_variance);
  f.matrix += fim_cru(paths, ofdm, noise_variance).matrix;
  if (links == LinkCombination::kAverage) f.matrix *= 0.5;
  return f;
}

inline FimMatrix fim(std::span<const PathParams> paths, const ArrayConfig& array,
                     const OfdmConfig& ofdm, LinkCombination links = LinkCombination::kSum) {
  return fim(paths, array, ofdm, ofdm.effective_noise_variance(), links);
}

/// Top-left `dim_eta` block of the inverse FIM.
///
/// The matrix is Jacobi-scaled (unit diagonal) before the rank check so that
/// seconds, radians and gain units do not dominate each other. A scaled
/// eigenvalue below 1e-12 * trace marks the FIM rank deficient; the error
/// carries the corresponding direction in the original parameter order.
/// Otherwise a ridge of 1e-12 * trace (scaled) is added before inversion.
inline RMat eclb(const FimMatrix& f, int dim_eta = kEtaDim) {
  const RMat& F = f.matrix;
  const Eigen::Index n = F.rows();
  if (n == 0 || F.cols() != n) throw InvalidInput("FIM must be square and non-empty");
  if (dim_eta < 1 || dim_eta > n) throw InvalidInput("dim_eta outside [1, dim(FIM)]");
  RVec scale(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = F(i, i);
    scale[i] = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (scale[i] == 0.0) {
      RVec dir = RVec::Zero(n);
      dir[i] = 1.0;
      throw UnobservableError("FIM has no information on parameter " + std::to_string(i), dir,
                              int(n) - 1);
    }
  }
  RMat Fs = scale.asDiagonal() * F * scale.asDiagonal();
  Fs = 0.5 * (Fs + Fs.transpose());
  Eigen::SelfAdjointEigenSolver<RMat> eig(Fs);
  const double trace = Fs.trace();
  const double tol = 1e-12 * trace;
  int rank = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (eig.eigenvalues()[i] > tol) ++rank;
  if (rank < n) {
    RVec dir = scale.asDiagonal() * eig.eigenvectors().col(0);
    dir.normalize();
    throw UnobservableError("FIM is rank deficient (rank " + std::to_string(rank) + " of " +
                                std::to_string(n) + ")",
                            dir, rank);
  }
  Fs.diagonal().array() += tol;
  const RMat inv = Fs.ldlt().solve(RMat::Identity(n, n));
  RMat out = scale.head(dim_eta).asDiagonal() * inv.topLeftCorner(dim_eta, dim_eta) *
             scale.head(dim_eta).asDiagonal();
  return 0.5 * (out + out.transpose());
}

// ---------------------------------------------------------------------------
// Position domain

/// Variance given to the vertical position in the 2-D operating mode [m^2].
inline constexpr double kPinnedZVariance = 1e-4;

/// J_pos * bound * J_pos^T with J_pos the back-projection Jacobian at the LoS
/// geometry of `cru_position`. With `planar`, the vertical row/column is
/// replaced by the pinned variance.
inline Mat3 position_eclb(const Mat3& channel_bound, const RsuState& rsu, const Vec3& cru_position,
                          bool planar = true) {
  const LosGeometry g = los_geometry(rsu, cru_position);
  const Mat3 J = back_projection_jacobian(rsu, g.toa, g.aoa_az, g.aoa_el);
  Mat3 cov = J * channel_bound * J.transpose();
  cov = 0.5 * (cov + cov.transpose());
  if (planar) {
    cov.row(2).setZero();
    cov.col(2).setZero();
    cov(2, 2) = kPinnedZVariance;
  }
  return cov;
}

// ---------------------------------------------------------------------------
// Estimated bounds

enum class EeclbVariant { kLos, kNlos };

inline const char* to_string(EeclbVariant v) {
  return v == EeclbVariant::kLos ? "EECLB-LOS" : "EECLB-NLOS";
}

struct Eeclb {
  Mat3 position_cov = Mat3::Zero();  // [m^2]
  Mat3 channel_cov = Mat3::Zero();   // (toa [s], az [rad], el [rad])
  EeclbVariant variant = EeclbVariant::kLos;
  std::vector<std::size_t> paths_used;  // indices into the estimate set, LoS first
};

/// Half-power beamwidths (two-sided) of a broadside uniform linear array.
inline double half_power_beamwidth(int elements, double spacing, double wavelength) {
  if (elements <= 1) return kPi;
  return 0.886 * wavelength / (elements * spacing);
}

/// Whether `other` falls in the resolution cell of `los`: closer than one
/// delay bin, or within half the 3 dB beamwidth in azimuth or elevation.
inline bool in_resolution_cell(const PathParams& los, const PathParams& other,
                               const ArrayConfig& array, const OfdmConfig& ofdm) {
  const double dtau = std::abs(other.toa - los.toa);
  if (dtau < ofdm.delay_resolution()) return true;
  const double hx = half_power_beamwidth(array.n_x, array.d_x, array.wavelength);
  const double hz = half_power_beamwidth(array.n_z, array.d_z, array.wavelength);
  if (std::abs(wrap_angle(other.aoa_az - los.aoa_az)) < 0.5 * hx) return true;
  if (std::abs(other.aoa_el - los.aoa_el) < 0.5 * hz) return true;
  return false;
}

/// EECLB from estimated paths, with the predicted position standing in for
/// the true one in the position mapping.
inline Eeclb eeclb(const PathEstimateSet& estimates, std::size_t los_index,
                   const Vec3& predicted_position, const RsuState& rsu, EeclbVariant variant,
                   const ArrayConfig& array, const OfdmConfig& ofdm, double noise_variance,
                   LinkCombination links = LinkCombination::kSum, bool planar = true) {
  if (los_index >= estimates.size()) throw InvalidInput("no LoS estimate: no bound available");
  Eeclb out;
  out.variant = variant;
  std::vector<PathParams> used{estimates.paths[los_index]};
  out.paths_used.push_back(los_index);
  if (variant == EeclbVariant::kNlos) {
    for (std::size_t i = 0; i < estimates.size(); ++i) {
      if (i == los_index) continue;
      if (in_resolution_cell(estimates.paths[los_index], estimates.paths[i], array, ofdm)) {
        used.push_back(estimates.paths[i]);
        out.paths_used.push_back(i);
      }
    }
  }
  out.channel_cov = eclb(fim(used, array, ofdm, noise_variance, links));
  out.position_cov = position_eclb(out.channel_cov, rsu, predicted_position, planar);
  return out;
}

}  // namespace sidelink
