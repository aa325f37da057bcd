// Array and OFDM configuration, steering vectors, observation-tensor synthesis
// and round-trip-time ranging.
//
// Noise bookkeeping. Pilots are constant modulus and are wiped off before N_OFDM
// symbols are integrated coherently, so the tensor entries are
//
//   Y[z, x, k] = sum_i gain_i * a_z[z] * a_x[x] * d[k] + N[z, x, k]
//
// with the path gain normalised by the per-subcarrier transmit amplitude and
// N circularly-symmetric Gaussian with per-entry variance
//
//   N0_eff = (psd * df * NF) / (N_OFDM * P_tx / S)
//
// where psd = 10^((noise_psd_dBm - 30)/10) W/Hz, NF linear, P_tx in W. The
// per-entry SNR |gain|^2 / N0_eff therefore equals N_OFDM times the in-band SNR
// P_tx |gain|^2 / (psd * S * df * NF).
#pragma once

#include "sidelink/core.hpp"
#include "sidelink/scene.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace sidelink {

struct ArrayConfig {
  int n_x = 4;
  int n_z = 2;
  double d_x = 0.0;
  double d_z = 0.0;
  double wavelength = 0.0;

  static ArrayConfig half_wavelength(int n_x, int n_z, double wavelength) {
    return {n_x, n_z, 0.5 * wavelength, 0.5 * wavelength, wavelength};
  }

  int elements() const { return n_x * n_z; }

  void validate() const {
    if (n_x < 1 || n_z < 1) throw InvalidInput("array element counts must be >= 1");
    if (!(d_x > 0.0 && d_z > 0.0)) throw InvalidInput("array spacings must be positive");
    if (!(wavelength > 0.0)) throw InvalidInput("wavelength must be positive");
  }
};

struct OfdmConfig {
  int subcarriers = 288;
  double subcarrier_spacing = 60e3;  // Hz
  int symbols = 12;
  double carrier_freq = 5.9e9;       // Hz
  double tx_power_dbm = 10.0;
  double noise_psd_dbm_hz = -174.0;
  double noise_figure_db = 8.0;

  double wavelength() const { return kSpeedOfLight / carrier_freq; }
  double bandwidth() const { return subcarriers * subcarrier_spacing; }
  /// Delay resolution 1/(S * df).
  double delay_resolution() const { return 1.0 / bandwidth(); }

  double tx_power_w() const { return std::pow(10.0, (tx_power_dbm - 30.0) / 10.0); }
  double noise_psd_w_hz() const { return std::pow(10.0, (noise_psd_dbm_hz - 30.0) / 10.0); }
  double noise_figure() const { return std::pow(10.0, noise_figure_db / 10.0); }

  /// Per-entry noise variance of the integrated, pilot-wiped tensor.
  double effective_noise_variance() const {
    const double noise_per_subcarrier = noise_psd_w_hz() * subcarrier_spacing * noise_figure();
    const double tx_per_subcarrier = tx_power_w() / subcarriers;
    return noise_per_subcarrier / (symbols * tx_per_subcarrier);
  }

  /// In-band SNR of a single symbol at one antenna for a path gain.
  double band_snr(double gain_magnitude) const {
    return tx_power_w() * gain_magnitude * gain_magnitude /
           (noise_psd_w_hz() * bandwidth() * noise_figure());
  }

  void validate() const {
    if (subcarriers < 2) throw InvalidInput("at least two subcarriers are required");
    if (!(subcarrier_spacing > 0.0)) throw InvalidInput("subcarrier spacing must be positive");
    if (symbols < 1) throw InvalidInput("at least one OFDM symbol is required");
    if (!(carrier_freq > 0.0)) throw InvalidInput("carrier frequency must be positive");
  }
};

/// Complex tensor with dims (n_z, n_x, S), stored column-major so that
/// vec(Y) matches d (x) a_x (x) a_z.
struct ObservationTensor {
  int n_z = 0;
  int n_x = 0;
  int subcarriers = 0;
  CVec data;
  double noise_variance = 0.0;

  ObservationTensor() = default;
  ObservationTensor(int nz, int nx, int s)
      : n_z(nz), n_x(nx), subcarriers(s), data(CVec::Zero(Eigen::Index(nz) * nx * s)) {}

  Eigen::Index index(int iz, int ix, int k) const {
    return iz + Eigen::Index(n_z) * (ix + Eigen::Index(n_x) * k);
  }
  cplx& operator()(int iz, int ix, int k) { return data[index(iz, ix, k)]; }
  cplx operator()(int iz, int ix, int k) const { return data[index(iz, ix, k)]; }

  /// Mode-n unfolding (n in {1,2,3}); rows index mode n.
  CMat unfold(int mode) const {
    const int dims[3] = {n_z, n_x, subcarriers};
    const int rows = dims[mode - 1];
    CMat out(rows, data.size() / rows);
    for (int k = 0; k < subcarriers; ++k)
      for (int ix = 0; ix < n_x; ++ix)
        for (int iz = 0; iz < n_z; ++iz) {
          const cplx v = (*this)(iz, ix, k);
          if (mode == 1) out(iz, ix + n_x * k) = v;
          else if (mode == 2) out(ix, iz + n_z * k) = v;
          else out(k, iz + n_z * ix) = v;
        }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Steering vectors

inline CVec steering_x(const ArrayConfig& array, double az, double el) {
  const double phase = kTwoPi / array.wavelength * array.d_x * std::cos(el) * std::sin(az);
  CVec v(array.n_x);
  for (int n = 0; n < array.n_x; ++n) v[n] = std::polar(1.0, phase * n);
  return v;
}

inline CVec steering_z(const ArrayConfig& array, double /*az*/, double el) {
  const double phase = kTwoPi / array.wavelength * array.d_z * std::sin(el);
  CVec v(array.n_z);
  for (int n = 0; n < array.n_z; ++n) v[n] = std::polar(1.0, phase * n);
  return v;
}

/// Element k = exp(-j 2 pi k df toa), k = 0..count-1.
inline CVec delay_steering(double subcarrier_spacing, double toa, int count) {
  CVec v(count);
  const double phase = -kTwoPi * subcarrier_spacing * toa;
  for (int k = 0; k < count; ++k) v[k] = std::polar(1.0, phase * k);
  return v;
}

inline CVec delay_steering(const OfdmConfig& ofdm, double toa) {
  return delay_steering(ofdm.subcarrier_spacing, toa, ofdm.subcarriers);
}

/// Kronecker product a (x) b with b varying fastest.
inline CVec kron(const CVec& a, const CVec& b) {
  CVec out(a.size() * b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a[i] * b;
  return out;
}

/// vec of the rank-1 tensor a_z o a_x o d for one path (unit gain).
inline CVec path_response(const ArrayConfig& array, const OfdmConfig& ofdm, double toa, double az,
                          double el) {
  return kron(delay_steering(ofdm, toa), kron(steering_x(array, az, el), steering_z(array, az, el)));
}

// ---------------------------------------------------------------------------
// Synthesis

inline ObservationTensor synthesize(std::span<const PathParams> paths, const ArrayConfig& array,
                                    const OfdmConfig& ofdm, std::uint64_t seed,
                                    double noise_variance) {
  array.validate();
  ofdm.validate();
  if (!(noise_variance >= 0.0)) throw InvalidInput("noise variance must be non-negative");
  ObservationTensor y(array.n_z, array.n_x, ofdm.subcarriers);
  y.noise_variance = noise_variance;
  for (const PathParams& p : paths)
    y.data += p.gain * path_response(array, ofdm, p.toa, p.aoa_az, p.aoa_el);
  if (noise_variance > 0.0) {
    Rng rng(seed);
    for (Eigen::Index i = 0; i < y.data.size(); ++i) y.data[i] += rng.complex_normal(noise_variance);
  }
  return y;
}

inline ObservationTensor synthesize(std::span<const PathParams> paths, const ArrayConfig& array,
                                    const OfdmConfig& ofdm, std::uint64_t seed) {
  return synthesize(paths, array, ofdm, seed, ofdm.effective_noise_variance());
}

// ---------------------------------------------------------------------------
// Round-trip-time ranging
//
// The RSU sends a request at t = 0 on its own clock. The CRU timestamps the
// arrival on its clock (offset by clock_bias) and answers exactly
// processing_time later on that same clock. The RSU timestamps the response
// arrival on its clock. Timestamps are carried through integer femtoseconds so
// the bias cancels exactly rather than to rounding error.

struct RttExchange {
  double toa_request = 0.0;      // CRU clock [s]
  double toa_response = 0.0;     // RSU clock, relative to request departure [s]
  double processing_time = 0.0;  // [s]
  double clock_bias = 0.0;       // CRU clock minus RSU clock [s]
};

inline std::int64_t to_femtoseconds(double seconds) {
  return static_cast<std::int64_t>(std::llround(seconds * 1e15));
}
inline double from_femtoseconds(std::int64_t fs) { return static_cast<double>(fs) * 1e-15; }

/// Builds the timestamps of one exchange. `cru_toa` is the CRU's estimate of
/// the one-way request delay and `rsu_toa` the RSU's estimate of the one-way
/// response delay (both without clock bias).
inline RttExchange make_rtt_exchange(double cru_toa, double rsu_toa, double processing_time,
                                     double clock_bias) {
  if (!(processing_time >= 0.0)) throw InvalidInput("processing time must be non-negative");
  const std::int64_t bias = to_femtoseconds(clock_bias);
  const std::int64_t rx_local = to_femtoseconds(cru_toa) + bias;
  const std::int64_t tx_local = rx_local + to_femtoseconds(processing_time);
  const std::int64_t tx_true = tx_local - bias;
  const std::int64_t rx_rsu = tx_true + to_femtoseconds(rsu_toa);
  return {from_femtoseconds(rx_local), from_femtoseconds(rx_rsu), processing_time, clock_bias};
}

struct RttRange {
  double meters = 0.0;
  bool degenerate = false;
};

/// c * (round trip - processing time) / 2. The clock bias is never read.
inline RttRange rtt_range(const RttExchange& ex) {
  if (!std::isfinite(ex.toa_response) || !std::isfinite(ex.processing_time))
    throw InvalidInput("RTT timestamps must be finite");
  const double r = kSpeedOfLight * (ex.toa_response - ex.processing_time) / 2.0;
  return {r, !(r > 0.0)};
}

// ---------------------------------------------------------------------------
// Binary dump
//
// Little-endian layout: 8-byte magic "SLTENSR1", three uint64 dims
// (n_z, n_x, S), one float64 noise variance, then n_z*n_x*S complex entries
// as interleaved (re, im) float64 in column-major order (n_z fastest).

namespace detail {
template <typename T>
void put_le(std::ostream& os, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get_le(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}
}  // namespace detail

inline void write_tensor(const std::string& path, const ObservationTensor& y) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write("SLTENSR1", 8);
  detail::put_le<std::uint64_t>(os, y.n_z);
  detail::put_le<std::uint64_t>(os, y.n_x);
  detail::put_le<std::uint64_t>(os, y.subcarriers);
  detail::put_le<double>(os, y.noise_variance);
  for (Eigen::Index i = 0; i < y.data.size(); ++i) {
    detail::put_le<double>(os, y.data[i].real());
    detail::put_le<double>(os, y.data[i].imag());
  }
  if (!os) throw IoError("write failed: " + path);
}

inline ObservationTensor read_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "SLTENSR1", 8) != 0) throw IoError("bad tensor header: " + path);
  const auto nz = detail::get_le<std::uint64_t>(is);
  const auto nx = detail::get_le<std::uint64_t>(is);
  const auto s = detail::get_le<std::uint64_t>(is);
  if (!is || nz == 0 || nx == 0 || s == 0 || nz * nx * s > (1ULL << 28))
    throw IoError("bad tensor dims: " + path);
  ObservationTensor y(static_cast<int>(nz), static_cast<int>(nx), static_cast<int>(s));
  y.noise_variance = detail::get_le<double>(is);
  for (Eigen::Index i = 0; i < y.data.size(); ++i) {
    const double re = detail::get_le<double>(is);
    const double im = detail::get_le<double>(is);
    y.data[i] = {re, im};
  }
  if (!is) throw IoError("truncated tensor file: " + path);
  return y;
}

}  // namespace sidelink
