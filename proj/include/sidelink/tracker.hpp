// Kalman filter over the CRU state [x, y, z, vx, vy, vz], the range-angle gate
// used for LoS identification, back-projected position measurements and the
// benchmark covariance tables.
#pragma once

#include "sidelink/chest.hpp"
#include "sidelink/core.hpp"
#include "sidelink/crlb.hpp"
#include "sidelink/scene.hpp"

#include <limits>
#include <optional>
#include <vector>

namespace sidelink {

struct GaussianState {
  Vec6 mean = Vec6::Zero();
  Mat6 cov = Mat6::Identity();

  Vec3 position() const { return mean.head<3>(); }
  Mat3 position_cov() const { return cov.topLeftCorner<3, 3>(); }
};

/// Where a measurement covariance came from.
enum class CovarianceSource { kEeclbLos, kEeclbNlos, kMseStep, kMseAverage };

struct PosMeasurement {
  Vec3 z = Vec3::Zero();  // [m]
  Mat3 R = Mat3::Identity();
  std::size_t source_path_index = 0;
  CovarianceSource source = CovarianceSource::kEeclbLos;
};

/// H = [I3, 0].
inline Eigen::Matrix<double, 3, 6> measurement_matrix() {
  Eigen::Matrix<double, 3, 6> H = Eigen::Matrix<double, 3, 6>::Zero();
  H.leftCols<3>().setIdentity();
  return H;
}

inline GaussianState predict(const GaussianState& s, const MotionModel& model, int substeps) {
  if (substeps < 1) throw InvalidInput("predict needs at least one substep");
  const Mat6 gqg = model.process_covariance();
  GaussianState out = s;
  for (int i = 0; i < substeps; ++i) {
    out.mean = model.F * out.mean;
    out.cov = model.F * out.cov * model.F.transpose() + gqg;
  }
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

inline GaussianState update(const GaussianState& s, const PosMeasurement& meas) {
  const auto H = measurement_matrix();
  const Vec3 innovation = meas.z - H * s.mean;
  const Mat3 S = H * s.cov * H.transpose() + meas.R;
  const Eigen::LDLT<Mat3> ldlt(S);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw InvalidInput("innovation covariance is not positive definite");
  const Eigen::Matrix<double, 6, 3> K = ldlt.solve(H * s.cov).transpose();
  GaussianState out;
  out.mean = s.mean + K * innovation;
  out.cov = s.cov - K * S * K.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

// ---------------------------------------------------------------------------
// Gate

/// Chi-square 3-DoF, 99% quantile.
inline constexpr double kDefaultGateBeta = 11.34;

/// Range-angle gate around the LoS triple of the predicted position. The
/// quadratic form is evaluated with the delay expressed in meters; seconds
/// and radians in one form are badly conditioned.
struct Gate {
  Vec3 center = Vec3::Zero();  // (toa [s], az [rad], el [rad])
  Mat3 U = Mat3::Identity();   // covariance of center, same units
  double beta = kDefaultGateBeta;

  double distance2(const Vec3& q) const {
    const Vec3 scale(kSpeedOfLight, 1.0, 1.0);
    Vec3 d = q - center;
    d[1] = wrap_angle(d[1]);
    const Vec3 ds = scale.cwiseProduct(d);
    const Mat3 Us = scale.asDiagonal() * U * scale.asDiagonal();
    return ds.dot(Us.ldlt().solve(ds));
  }
  bool contains(const Vec3& q) const { return distance2(q) <= beta; }
};

/// Gate spread that places a candidate half a resolution cell (delay bin,
/// 3 dB beamwidth) from the centre on the boundary along each axis. Paths
/// that close to the LoS are not separable by the channel estimator, so a
/// gate narrower than this only rejects the biased LoS estimate itself.
inline Mat3 resolution_floor(const ArrayConfig& array, const OfdmConfig& ofdm,
                             double beta = kDefaultGateBeta) {
  const Vec3 half(0.5 * ofdm.delay_resolution(),
                  0.5 * half_power_beamwidth(array.n_x, array.d_x, array.wavelength),
                  0.5 * half_power_beamwidth(array.n_z, array.d_z, array.wavelength));
  return (half.array().square() / beta).matrix().asDiagonal();
}

/// q = LoS triple of the predicted position, U = M P_pos M^T (+ floor).
inline Gate build_gate(const GaussianState& pred, const RsuState& rsu,
                       double beta = kDefaultGateBeta, const Mat3& floor = Mat3::Zero()) {
  if (!(beta > 0.0)) throw InvalidInput("gate threshold must be positive");
  const Vec3 p = pred.position();
  const LosGeometry g = los_geometry(rsu, p);
  const Mat3 M = los_jacobian(rsu, p);
  Gate gate;
  gate.center = Vec3(g.toa, g.aoa_az, g.aoa_el);
  gate.U = M * pred.position_cov() * M.transpose() + floor;
  gate.U = 0.5 * (gate.U + gate.U.transpose());
  gate.beta = beta;
  return gate;
}

inline Vec3 path_triple(const PathParams& p) { return Vec3(p.toa, p.aoa_az, p.aoa_el); }

/// With a gate: the in-gate estimate whose ToA is closest to the gate
/// centre, none if the gate is empty. Without: the shortest-ToA estimate.
inline std::optional<std::size_t> identify_los(const PathEstimateSet& estimates,
                                               const std::optional<Gate>& gate) {
  std::optional<std::size_t> best;
  double best_key = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < estimates.size(); ++i) {
    const PathParams& p = estimates.paths[i];
    double key;
    if (gate) {
      if (!gate->contains(path_triple(p))) continue;
      key = std::abs(p.toa - gate->center[0]);
    } else {
      key = p.toa;
    }
    if (key < best_key) {
      best_key = key;
      best = i;
    }
  }
  return best;
}

/// z = x_RSU + range * R u(az, el) from the LoS estimate. Returns none for a
/// degenerate (non-positive) range.
inline std::optional<PosMeasurement> make_measurement(const PathEstimateSet& estimates,
                                                      std::size_t los_index, double rtt_range_m,
                                                      const RsuState& rsu, const Mat3& R,
                                                      CovarianceSource source) {
  if (los_index >= estimates.size()) throw InvalidInput("LoS index out of range");
  if (!(rtt_range_m > 0.0)) return std::nullopt;
  const PathParams& p = estimates.paths[los_index];
  PosMeasurement m;
  m.z = back_project(rsu, rtt_range_m, p.aoa_az, p.aoa_el);
  m.R = R;
  m.source_path_index = los_index;
  m.source = source;
  return m;
}

// ---------------------------------------------------------------------------
// Benchmark covariance tables

/// Position MSE matrices E[e e^T] of snapshot measurements, per step and
/// averaged over the trajectory. Bias is included (these are MSEs, not
/// centred covariances).
struct MseTable {
  std::vector<Mat3> per_step;
  Mat3 average = Mat3::Zero();
  std::vector<int> counts;

  bool empty() const { return per_step.empty(); }
};

/// `errors[step]` holds the snapshot errors z - x observed at that step over
/// all runs. Steps with fewer than two samples borrow the trajectory average.
/// With `planar`, the vertical row/column is replaced by the pinned variance;
/// with `scalar`, each matrix becomes (mean horizontal variance) * I.
inline MseTable build_mse_table(const std::vector<std::vector<Vec3>>& errors, bool planar = true,
                                bool scalar = false) {
  MseTable t;
  t.per_step.assign(errors.size(), Mat3::Zero());
  t.counts.assign(errors.size(), 0);
  Mat3 total = Mat3::Zero();
  long n_total = 0;
  for (std::size_t k = 0; k < errors.size(); ++k) {
    for (const Vec3& e : errors[k]) {
      t.per_step[k] += e * e.transpose();
      total += e * e.transpose();
    }
    t.counts[k] = int(errors[k].size());
    n_total += long(errors[k].size());
    if (!errors[k].empty()) t.per_step[k] /= double(errors[k].size());
  }
  if (n_total == 0) throw InvalidInput("no snapshot errors: MSE tables unavailable");
  t.average = total / double(n_total);
  auto shape = [&](Mat3& m) {
    if (scalar) {
      const double v = 0.5 * (m(0, 0) + m(1, 1));
      m = Mat3::Identity() * v;
    }
    if (planar) {
      m.row(2).setZero();
      m.col(2).setZero();
      m(2, 2) = kPinnedZVariance;
    }
    // A floor keeps R SPD at steps where the samples are degenerate.
    m.diagonal().array() = m.diagonal().array().max(kPinnedZVariance);
  };
  shape(t.average);
  for (std::size_t k = 0; k < errors.size(); ++k) {
    if (t.counts[k] < 2) t.per_step[k] = t.average;
    else shape(t.per_step[k]);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Prior

struct PriorConfig {
  Vec6 std_dev = (Vec6() << 5.0, 5.0, 0.01, 1.0, 1.0, 0.01).finished();
  /// Velocity guess added to the true initial position to form the prior
  /// centre; the vertical velocity is 0.
  double nominal_speed = 14.0;  // [m/s] along +y

  Mat6 covariance() const { return std_dev.array().square().matrix().asDiagonal(); }
};

/// Prior for one run: centred at (true initial position, [0, v, 0]) and
/// offset by a draw from the prior itself, so that the truth is a sample of
/// the prior the filter assumes.
inline GaussianState draw_prior(const Vec3& true_position, const PriorConfig& cfg, Rng& rng) {
  GaussianState s;
  s.mean << true_position, 0.0, cfg.nominal_speed, 0.0;
  for (int i = 0; i < 6; ++i) s.mean[i] += cfg.std_dev[i] * rng.normal();
  s.cov = cfg.covariance();
  return s;
}

}  // namespace sidelink
