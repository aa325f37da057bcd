// Shared vocabulary for the sidelink tracking library: linear-algebra aliases,
// physical constants, the exception hierarchy and the seeded random streams.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace sidelink {

using cplx = std::complex<double>;
using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat6 = Eigen::Matrix<double, 6, 6>;
using Mat62 = Eigen::Matrix<double, 6, 2>;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using RVec = Eigen::VectorXd;
using RMat = Eigen::MatrixXd;

inline constexpr double kSpeedOfLight = 299'792'458.0;  // m/s
inline constexpr double kPi = std::numbers::pi;
inline constexpr double kTwoPi = 2.0 * std::numbers::pi;
inline constexpr cplx kJ{0.0, 1.0};

inline constexpr double deg2rad(double deg) { return deg * kPi / 180.0; }
inline constexpr double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  double w = std::remainder(a, kTwoPi);
  if (w <= -kPi) w += kTwoPi;
  return w;
}

// ---------------------------------------------------------------------------
// Errors

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A precondition on an input was violated (bad geometry, bad dimensions).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// Configuration could not be parsed or failed validation.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure; the message always names the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A Fisher information matrix is rank deficient. `direction` is the
/// eigenvector of the smallest eigenvalue in the original parameter order.
class UnobservableError : public Error {
 public:
  UnobservableError(const std::string& what, RVec direction, int rank)
      : Error(what), direction_(std::move(direction)), rank_(rank) {}
  const RVec& direction() const { return direction_; }
  int rank() const { return rank_; }

 private:
  RVec direction_;
  int rank_;
};

// ---------------------------------------------------------------------------
// Random streams
//
// Every random draw in a campaign comes from a stream keyed by
// (campaign seed, run, step, purpose). Keys are mixed with splitmix64 so a
// single step can be replayed without replaying anything before it.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

enum class Stream : std::uint64_t {
  kTensorNoise = 1,
  kCpdRestarts = 2,
  kCruToa = 3,
  kClockBias = 4,
  kTruthProcess = 5,
  kPrior = 6,
  kBootstrap = 7,
};

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t run, std::uint64_t step,
                                 Stream stream) {
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ (run * 0xD1B54A32D192ED03ULL));
  h = splitmix64(h ^ (step * 0x8CB92BA72F3D8DD7ULL));
  return splitmix64(h ^ static_cast<std::uint64_t>(stream));
}

/// mt19937_64 with portable uniform/normal transforms. The standard
/// distributions are implementation defined, which would break cross-platform
/// replay of a campaign.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in (0, 1); never returns 0.
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double phi = kTwoPi * uniform();
    spare_ = r * std::sin(phi);
    has_spare_ = true;
    return r * std::cos(phi);
  }

  /// Circularly-symmetric complex Gaussian with E|z|^2 = variance.
  cplx complex_normal(double variance) {
    const double s = std::sqrt(0.5 * variance);
    const double re = normal();
    const double im = normal();
    return {s * re, s * im};
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace sidelink
