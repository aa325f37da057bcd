// Shared fixtures for the unit and acceptance tests.
#pragma once

#include "sidelink/sidelink.hpp"

#include <vector>

namespace sidelink::test {

inline OfdmConfig default_ofdm() { return OfdmConfig{}; }

inline ArrayConfig default_array() {
  return ArrayConfig::half_wavelength(4, 2, default_ofdm().wavelength());
}

inline PathParams make_path(double toa, double az_deg, double el_deg, cplx gain = {1.0, 0.0}) {
  PathParams p;
  p.toa = toa;
  p.aoa_az = deg2rad(az_deg);
  p.aoa_el = deg2rad(el_deg);
  p.gain = gain;
  p.is_los = true;
  return p;
}

/// sigma_2 / sigma_1 of a matrix (0 for rank <= 1 up to rounding).
inline double second_singular_ratio(const CMat& m) {
  Eigen::JacobiSVD<CMat> svd(m);
  const auto& s = svd.singularValues();
  return s.size() > 1 ? s[1] / s[0] : 0.0;
}

inline int numerical_rank(const CMat& m, double rel = 1e-10) {
  Eigen::JacobiSVD<CMat> svd(m);
  const auto& s = svd.singularValues();
  int r = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s[i] > rel * s[0]) ++r;
  return r;
}

inline Mat3 sample_covariance(const std::vector<Vec3>& xs) {
  Vec3 mean = Vec3::Zero();
  for (const auto& x : xs) mean += x;
  mean /= double(xs.size());
  Mat3 c = Mat3::Zero();
  for (const auto& x : xs) c += (x - mean) * (x - mean).transpose();
  return c / double(xs.size() - 1);
}

/// Small campaign used by harness tests: LoS-only, noiseless unless asked.
inline CampaignConfig tiny_campaign(int runs = 1) {
  CampaignConfig cfg;
  cfg.runs = runs;
  cfg.seed = 7;
  cfg.threads = 1;
  cfg.trajectory.start_y = -20.0;
  cfg.trajectory.end_y = 20.0;
  cfg.trajectory.speed = 20.0;
  cfg.trajectory.epoch = 0.5;
  cfg.tracker.period = 0.05;
  cfg.sa.max_rank = 3;
  cfg.sa.restarts = 2;
  return cfg;
}

}  // namespace sidelink::test
