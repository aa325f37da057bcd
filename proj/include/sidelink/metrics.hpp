// Campaign metrics: horizontal RMSE per trajectory position, pooled error
// CDFs, LoS identification statistics and run-level bootstrap.
#pragma once

#include "sidelink/campaign.hpp"
#include "sidelink/config.hpp"
#include "sidelink/core.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace sidelink {

struct LosIdRow {
  double y = 0.0;
  std::string variant;
  double id_rate = 0.0;          // fraction of runs whose chosen path is the true LoS
  double gate_empty_rate = 0.0;  // fraction of runs with an empty gate
  double toa_rmse_m = kNaN;      // RMSE of c * (chosen toa - true LoS toa) over runs with a choice
};

struct MetricsTable {
  std::vector<std::string> variants;
  std::vector<double> positions;  // nominal y per step [m]
  RMat rmse;                      // steps x variants [m], NaN where no run had an estimate
  std::vector<double> cdf_x;      // error abscissae [m]
  RMat cdf;                       // abscissae x variants
  std::vector<LosIdRow> los_id;   // per position, per LoS-choosing variant
};

/// A chosen path counts as the LoS when its delay is within half a delay
/// resolution cell of the true LoS delay.
inline bool los_identified(double chosen_toa, double true_toa, double delay_resolution) {
  return std::isfinite(chosen_toa) && std::isfinite(true_toa) &&
         std::abs(chosen_toa - true_toa) < 0.5 * delay_resolution;
}

/// Variants that pick a LoS path every step.
inline bool chooses_los(const Variant& v) { return v.method != Method::kBm4; }

/// Horizontal error of variant `vi` at every (run, step); NaN where the
/// variant produced no estimate. Rows are runs.
inline RMat horizontal_errors(const std::vector<RunLog>& runs, std::size_t vi) {
  const Eigen::Index steps = runs.empty() ? 0 : Eigen::Index(runs.front().steps.size());
  RMat e = RMat::Constant(Eigen::Index(runs.size()), steps, kNaN);
  for (std::size_t r = 0; r < runs.size(); ++r) {
    for (Eigen::Index k = 0; k < steps; ++k) {
      const StepLog& s = runs[r].steps[std::size_t(k)];
      const VariantStep& v = s.variants[vi];
      if (v.has_estimate) e(Eigen::Index(r), k) = (v.estimate - s.channel.truth).head<2>().norm();
    }
  }
  return e;
}

/// c * (chosen LoS toa - true LoS toa) per (run, step); NaN when no path was
/// chosen or the LoS is blocked.
inline RMat los_toa_errors(const std::vector<RunLog>& runs, std::size_t vi) {
  const Eigen::Index steps = runs.empty() ? 0 : Eigen::Index(runs.front().steps.size());
  RMat e = RMat::Constant(Eigen::Index(runs.size()), steps, kNaN);
  for (std::size_t r = 0; r < runs.size(); ++r) {
    for (Eigen::Index k = 0; k < steps; ++k) {
      const StepLog& s = runs[r].steps[std::size_t(k)];
      const double d = s.variants[vi].los_toa - s.channel.true_los_toa;
      if (std::isfinite(d)) e(Eigen::Index(r), k) = kSpeedOfLight * d;
    }
  }
  return e;
}

/// Column-wise RMSE over the finite entries; NaN for an all-NaN column.
inline RVec column_rmse(const RMat& e) {
  RVec out(e.cols());
  for (Eigen::Index k = 0; k < e.cols(); ++k) {
    double acc = 0.0;
    int n = 0;
    for (Eigen::Index r = 0; r < e.rows(); ++r) {
      if (std::isfinite(e(r, k))) {
        acc += e(r, k) * e(r, k);
        ++n;
      }
    }
    out[k] = n > 0 ? std::sqrt(acc / n) : kNaN;
  }
  return out;
}

/// Mean over positions of the per-position RMSE, skipping undefined positions.
inline double trajectory_rmse(const RMat& e) {
  const RVec r = column_rmse(e);
  double acc = 0.0;
  int n = 0;
  for (double v : r) {
    if (std::isfinite(v)) {
      acc += v;
      ++n;
    }
  }
  return n > 0 ? acc / n : kNaN;
}

inline std::vector<double> finite_values(const RMat& e) {
  std::vector<double> v;
  for (Eigen::Index i = 0; i < e.size(); ++i)
    if (std::isfinite(e.data()[i])) v.push_back(e.data()[i]);
  std::sort(v.begin(), v.end());
  return v;
}

/// Fraction of `sorted` that is <= x.
inline double empirical_cdf(const std::vector<double>& sorted, double x) {
  if (sorted.empty()) return kNaN;
  return double(std::upper_bound(sorted.begin(), sorted.end(), x) - sorted.begin()) /
         double(sorted.size());
}

/// Linear-interpolated quantile of sorted data.
inline double quantile(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return kNaN;
  const double pos = q * double(sorted.size() - 1);
  const auto lo = std::size_t(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - double(lo)) * (sorted[hi] - sorted[lo]);
}

inline constexpr int kCdfPoints = 200;

inline MetricsTable compute_metrics(const std::vector<RunLog>& runs,
                                    const std::vector<Variant>& variants, double delay_resolution) {
  MetricsTable t;
  for (const auto& v : variants) t.variants.push_back(v.name());
  const std::size_t steps = runs.empty() ? 0 : runs.front().steps.size();
  for (std::size_t k = 0; k < steps; ++k) t.positions.push_back(runs.front().steps[k].nominal_y);

  t.rmse = RMat::Constant(Eigen::Index(steps), Eigen::Index(variants.size()), kNaN);
  std::vector<std::vector<double>> pooled(variants.size());
  double x_max = 0.0;
  for (std::size_t vi = 0; vi < variants.size(); ++vi) {
    const RMat e = horizontal_errors(runs, vi);
    if (steps > 0) t.rmse.col(Eigen::Index(vi)) = column_rmse(e);
    pooled[vi] = finite_values(e);
    if (!pooled[vi].empty()) x_max = std::max(x_max, pooled[vi].back());
  }

  if (!variants.empty() && x_max > 0.0) {
    t.cdf = RMat(kCdfPoints, Eigen::Index(variants.size()));
    for (int i = 0; i < kCdfPoints; ++i) {
      const double x = x_max * double(i) / double(kCdfPoints - 1);
      t.cdf_x.push_back(x);
      for (std::size_t vi = 0; vi < variants.size(); ++vi)
        t.cdf(i, Eigen::Index(vi)) = empirical_cdf(pooled[vi], x);
    }
  }

  for (std::size_t k = 0; k < steps; ++k) {
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
      if (!chooses_los(variants[vi])) continue;
      LosIdRow row;
      row.y = t.positions[k];
      row.variant = variants[vi].name();
      int ident = 0, empty = 0, n_toa = 0;
      double acc = 0.0;
      for (const RunLog& run : runs) {
        const StepLog& s = run.steps[k];
        const VariantStep& v = s.variants[vi];
        if (v.gate_empty) ++empty;
        if (los_identified(v.los_toa, s.channel.true_los_toa, delay_resolution)) ++ident;
        const double d = v.los_toa - s.channel.true_los_toa;
        if (std::isfinite(d)) {
          acc += (kSpeedOfLight * d) * (kSpeedOfLight * d);
          ++n_toa;
        }
      }
      const double n = double(runs.size());
      row.id_rate = ident / n;
      row.gate_empty_rate = empty / n;
      row.toa_rmse_m = n_toa > 0 ? std::sqrt(acc / n_toa) : kNaN;
      t.los_id.push_back(row);
    }
  }
  return t;
}

/// Trajectory RMSE of each error matrix (rows = runs) under B bootstrap
/// resamples of the runs. The same resample is applied to every matrix, so
/// differences between columns are paired. Returns B x matrices.size().
inline RMat bootstrap_trajectory_rmse(const std::vector<RMat>& errors, int resamples,
                                      std::uint64_t seed) {
  RMat out(resamples, Eigen::Index(errors.size()));
  if (errors.empty()) return out;
  const Eigen::Index runs = errors.front().rows();
  Rng rng(seed);
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(runs));
  for (int b = 0; b < resamples; ++b) {
    for (auto& i : idx) i = std::min<Eigen::Index>(runs - 1, Eigen::Index(rng.uniform() * double(runs)));
    for (std::size_t m = 0; m < errors.size(); ++m) {
      RMat e(runs, errors[m].cols());
      for (Eigen::Index r = 0; r < runs; ++r) e.row(r) = errors[m].row(idx[std::size_t(r)]);
      out(b, Eigen::Index(m)) = trajectory_rmse(e);
    }
  }
  return out;
}

struct Interval {
  double lo = kNaN;
  double hi = kNaN;
};

/// Percentile interval of a bootstrap sample.
inline Interval percentile_interval(const RVec& sample, double level = 0.95) {
  std::vector<double> v(sample.data(), sample.data() + sample.size());
  std::erase_if(v, [](double x) { return !std::isfinite(x); });
  std::sort(v.begin(), v.end());
  return {quantile(v, 0.5 * (1.0 - level)), quantile(v, 0.5 * (1.0 + level))};
}

}  // namespace sidelink
