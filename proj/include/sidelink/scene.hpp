// Scene geometry, RSU/CRU states, constant-velocity motion and image-method
// multipath synthesis.
//
// Angle convention (RSU local frame): azimuth is measured from the local
// x-axis counter-clockwise in the local xy-plane, elevation from the local
// xy-plane toward +z. The local frame is obtained from the global one by the
// RSU Euler angles, applied as R = Rz(yaw) * Ry(pitch) * Rx(roll)
// (local -> global).
#pragma once

#include "sidelink/core.hpp"

#include <algorithm>
#include <array>
#include <optional>
#include <vector>

namespace sidelink {

struct RsuState {
  Vec3 position = Vec3(0.0, 0.0, 10.0);
  /// Roll, pitch, yaw [rad]. The default points the array broadside
  /// straight down and turns it 45 degrees about that axis, so the whole
  /// lane lies in the front half-space away from the array endfire.
  Vec3 orientation = Vec3(deg2rad(45.0), deg2rad(90.0), 0.0);

  /// Local-to-global rotation.
  Mat3 rotation() const {
    using Eigen::AngleAxisd;
    return (AngleAxisd(orientation.z(), Vec3::UnitZ()) *
            AngleAxisd(orientation.y(), Vec3::UnitY()) *
            AngleAxisd(orientation.x(), Vec3::UnitX()))
        .toRotationMatrix();
  }

  void validate() const {
    for (int i = 0; i < 3; ++i) {
      if (!(orientation[i] > -kPi && orientation[i] <= kPi))
        throw InvalidInput("RSU orientation angles must lie in (-pi, pi]");
    }
    if (!position.allFinite()) throw InvalidInput("RSU position must be finite");
  }
};

struct CruState {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();

  Vec6 stacked() const {
    Vec6 s;
    s << position, velocity;
    return s;
  }
  static CruState from_stacked(const Vec6& s) { return {s.head<3>(), s.tail<3>()}; }
};

/// Discrete constant-velocity model driven by 2-D acceleration noise on the
/// horizontal axes. The vertical rows of G are zero (2-D operating context).
struct MotionModel {
  double period = 0.01;   // T [s]
  double sigma_a = 0.1;   // [m/s^2]
  Mat6 F = Mat6::Identity();
  Mat62 G = Mat62::Zero();
  Mat2 Q = Mat2::Zero();

  static MotionModel constant_velocity(double period, double sigma_a) {
    if (!(period > 0.0)) throw InvalidInput("motion period must be positive");
    if (!(sigma_a >= 0.0)) throw InvalidInput("sigma_a must be non-negative");
    MotionModel m;
    m.period = period;
    m.sigma_a = sigma_a;
    m.F.topRightCorner<3, 3>() = period * Mat3::Identity();
    const double half_t2 = 0.5 * period * period;
    m.G(0, 0) = half_t2;
    m.G(1, 1) = half_t2;
    m.G(3, 0) = period;
    m.G(4, 1) = period;
    m.Q = sigma_a * sigma_a * Mat2::Identity();
    return m;
  }

  Mat6 process_covariance() const { return G * Q * G.transpose(); }
};

/// Propagates the CRU one motion period. The vertical position and velocity
/// are held fixed.
inline CruState propagate(const CruState& state, const MotionModel& model,
                          const std::optional<Vec2>& noise_draw = std::nullopt) {
  Vec6 s = model.F * state.stacked();
  if (noise_draw) s += model.G * (*noise_draw);
  CruState out = CruState::from_stacked(s);
  out.position.z() = state.position.z();
  out.velocity.z() = state.velocity.z();
  return out;
}

// ---------------------------------------------------------------------------
// Buildings

struct Box {
  Vec3 center;
  Vec3 extents;  // full side lengths

  Vec3 lo() const { return center - 0.5 * extents; }
  Vec3 hi() const { return center + 0.5 * extents; }
  bool contains(const Vec3& p) const {
    return (p.array() > lo().array()).all() && (p.array() < hi().array()).all();
  }
};

/// True if the open segment (a, b) passes through the interior of `box`.
/// A segment that only touches the box surface (e.g. starts on a wall it
/// reflected from) does not count.
inline bool segment_intersects_box(const Vec3& a, const Vec3& b, const Box& box) {
  constexpr double kEps = 1e-9;
  const Vec3 d = b - a;
  const Vec3 lo = box.lo();
  const Vec3 hi = box.hi();
  double t0 = 0.0;
  double t1 = 1.0;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-15) {
      if (a[i] <= lo[i] + kEps || a[i] >= hi[i] - kEps) return false;
      continue;
    }
    double ta = (lo[i] - a[i]) / d[i];
    double tb = (hi[i] - a[i]) / d[i];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return t1 - t0 > kEps;
}

struct SceneGeometry {
  std::vector<Box> buildings;
  cplx wall_reflection = std::polar(0.6, kPi);
  cplx ground_reflection = std::polar(0.7, kPi);

  /// Four 50 x 50 x 30 m blocks centred at (+-45, +-45, 15) m.
  static SceneGeometry intersection() {
    SceneGeometry g;
    for (double sx : {-1.0, 1.0})
      for (double sy : {-1.0, 1.0})
        g.buildings.push_back({Vec3(45.0 * sx, 45.0 * sy, 15.0), Vec3(50.0, 50.0, 30.0)});
    return g;
  }

  void validate() const {
    for (cplx r : {wall_reflection, ground_reflection}) {
      const double m = std::abs(r);
      if (!(m > 0.0 && m <= 1.0))
        throw InvalidInput("reflection coefficient magnitude must lie in (0, 1]");
    }
    for (std::size_t i = 0; i < buildings.size(); ++i) {
      if ((buildings[i].extents.array() <= 0.0).any())
        throw InvalidInput("building extents must be positive");
      for (std::size_t j = i + 1; j < buildings.size(); ++j) {
        const bool overlap = (buildings[i].lo().array() < buildings[j].hi().array()).all() &&
                             (buildings[j].lo().array() < buildings[i].hi().array()).all();
        if (overlap) throw InvalidInput("buildings must not overlap");
      }
    }
  }

  bool blocked(const Vec3& a, const Vec3& b) const {
    return std::any_of(buildings.begin(), buildings.end(),
                       [&](const Box& box) { return segment_intersects_box(a, b, box); });
  }
};

struct PathParams {
  cplx gain{0.0, 0.0};
  double toa = 0.0;     // [s]
  double aoa_az = 0.0;  // [rad], (-pi, pi]
  double aoa_el = 0.0;  // [rad], [-pi/2, pi/2]
  int bounce_count = 0;
  bool is_los = false;
};

// ---------------------------------------------------------------------------
// LoS geometry and its inverse

struct LosGeometry {
  double toa = 0.0;
  double aoa_az = 0.0;
  double aoa_el = 0.0;
};

/// Unit vector in the RSU local frame for a given (azimuth, elevation).
inline Vec3 local_direction(double az, double el) {
  return Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
}

/// (azimuth, elevation) in the RSU local frame of a global direction.
inline std::pair<double, double> local_angles(const RsuState& rsu, const Vec3& global_dir) {
  const Vec3 u = rsu.rotation().transpose() * global_dir.normalized();
  double az = std::atan2(u.y(), u.x());
  if (az <= -kPi) az = kPi;
  const double el = std::asin(std::clamp(u.z(), -1.0, 1.0));
  return {az, el};
}

/// Deterministic LoS (one-way delay, azimuth, elevation) from a CRU position.
/// Clock bias is not included.
inline LosGeometry los_geometry(const RsuState& rsu, const Vec3& cru_position) {
  const Vec3 delta = cru_position - rsu.position;
  const double d = delta.norm();
  if (!(d > 1e-9)) throw InvalidInput("CRU position coincides with the RSU");
  auto [az, el] = local_angles(rsu, delta);
  return {d / kSpeedOfLight, az, el};
}

/// Inverse of los_geometry for a range in meters.
inline Vec3 back_project(const RsuState& rsu, double range_m, double az, double el) {
  return rsu.position + range_m * (rsu.rotation() * local_direction(az, el));
}

/// d(toa, az, el) / d(position), evaluated at `cru_position`.
inline Mat3 los_jacobian(const RsuState& rsu, const Vec3& cru_position) {
  const Mat3 rot = rsu.rotation();
  const Vec3 l = rot.transpose() * (cru_position - rsu.position);
  const double rho2 = l.x() * l.x() + l.y() * l.y();
  const double rho = std::sqrt(rho2);
  const double d2 = l.squaredNorm();
  const double d = std::sqrt(d2);
  if (!(d > 1e-9)) throw InvalidInput("CRU position coincides with the RSU");
  Mat3 local;
  local.row(0) = l.transpose() / (kSpeedOfLight * d);
  if (rho > 1e-12) {
    local.row(1) << -l.y() / rho2, l.x() / rho2, 0.0;
    local.row(2) << -l.x() * l.z() / (d2 * rho), -l.y() * l.z() / (d2 * rho), rho / d2;
  } else {
    // Straight above/below the array: azimuth is undefined.
    local.row(1).setZero();
    local.row(2) << 0.0, 0.0, 1.0 / d;
  }
  return local * rot.transpose();
}

/// d(position) / d(toa, az, el) of the back-projection x = x_RSU + c*toa*u(az, el).
inline Mat3 back_projection_jacobian(const RsuState& rsu, double toa, double az, double el) {
  const double range = kSpeedOfLight * toa;
  Mat3 local;
  local.col(0) = kSpeedOfLight * local_direction(az, el);
  local.col(1) = range * Vec3(-std::cos(el) * std::sin(az), std::cos(el) * std::cos(az), 0.0);
  local.col(2) = range * Vec3(-std::sin(el) * std::cos(az), -std::sin(el) * std::sin(az),
                              std::cos(el));
  return rsu.rotation() * local;
}

// ---------------------------------------------------------------------------
// Image-method multipath

namespace detail {

struct Wall {
  int axis;       // 0: plane x = offset, 1: plane y = offset
  double offset;
  double normal;  // +1 or -1 along `axis`, pointing out of the building
  const Box* box;
};

inline std::vector<Wall> vertical_walls(const std::vector<Box>& buildings) {
  std::vector<Wall> walls;
  for (const Box& b : buildings) {
    for (int axis = 0; axis < 2; ++axis) {
      walls.push_back({axis, b.lo()[axis], -1.0, &b});
      walls.push_back({axis, b.hi()[axis], +1.0, &b});
    }
  }
  return walls;
}

inline cplx path_gain(double length, double wavelength, cplx reflection, int bounces) {
  cplx g = wavelength / (4.0 * kPi * length) * std::exp(-kJ * (kTwoPi * length / wavelength));
  for (int i = 0; i < bounces; ++i) g *= reflection;
  return g;
}

}  // namespace detail

/// Number of building walls that face the RSU (upper bound on wall bounces).
inline int walls_facing(const SceneGeometry& geometry, const RsuState& rsu) {
  int n = 0;
  for (const auto& w : detail::vertical_walls(geometry.buildings))
    if ((rsu.position[w.axis] - w.offset) * w.normal > 0.0) ++n;
  return n;
}

/// LoS (when unblocked), ground bounce and one single-bounce path per RSU-facing
/// wall, every leg visibility-checked. Sorted by ToA (LoS first when present).
inline std::vector<PathParams> generate_paths(const SceneGeometry& geometry, const RsuState& rsu,
                                              const CruState& cru, double wavelength) {
  if (!(wavelength > 0.0)) throw InvalidInput("wavelength must be positive");
  const Vec3& rx = rsu.position;
  const Vec3& ux = cru.position;
  for (const Box& b : geometry.buildings)
    if (b.contains(ux)) throw InvalidInput("CRU position lies inside a building");
  if ((rx - ux).norm() < 1e-9) throw InvalidInput("CRU position coincides with the RSU");

  std::vector<PathParams> paths;
  auto add = [&](const Vec3& apparent_source, double length, cplx refl, int bounces) {
    PathParams p;
    p.gain = detail::path_gain(length, wavelength, refl, bounces);
    p.toa = length / kSpeedOfLight;
    std::tie(p.aoa_az, p.aoa_el) = local_angles(rsu, apparent_source - rx);
    p.bounce_count = bounces;
    p.is_los = bounces == 0;
    paths.push_back(p);
  };

  if (!geometry.blocked(rx, ux)) add(ux, (ux - rx).norm(), cplx{1.0, 0.0}, 0);

  // Ground plane z = 0.
  if (rx.z() > 0.0 && ux.z() > 0.0) {
    const Vec3 image(ux.x(), ux.y(), -ux.z());
    const double t = rx.z() / (rx.z() - image.z());
    const Vec3 hit = rx + t * (image - rx);
    if (!geometry.blocked(rx, hit) && !geometry.blocked(hit, ux))
      add(image, (image - rx).norm(), geometry.ground_reflection, 1);
  }

  for (const auto& w : detail::vertical_walls(geometry.buildings)) {
    const double side_rsu = (rx[w.axis] - w.offset) * w.normal;
    const double side_cru = (ux[w.axis] - w.offset) * w.normal;
    if (side_rsu <= 0.0 || side_cru <= 0.0) continue;
    Vec3 image = ux;
    image[w.axis] = 2.0 * w.offset - ux[w.axis];
    const double t = (w.offset - rx[w.axis]) / (image[w.axis] - rx[w.axis]);
    const Vec3 hit = rx + t * (image - rx);
    const int other = 1 - w.axis;
    const Vec3 lo = w.box->lo();
    const Vec3 hi = w.box->hi();
    if (hit[other] < lo[other] || hit[other] > hi[other] || hit.z() < lo.z() || hit.z() > hi.z())
      continue;
    if (geometry.blocked(rx, hit) || geometry.blocked(hit, ux)) continue;
    add(image, (image - rx).norm(), geometry.wall_reflection, 1);
  }

  std::stable_sort(paths.begin(), paths.end(),
                   [](const PathParams& a, const PathParams& b) { return a.toa < b.toa; });
  return paths;
}

}  // namespace sidelink
