// Monte Carlo campaign: per-step channel simulation and estimation, snapshot
// MSE tables, the tracking variants, and per-run step logs.
//
// A campaign runs in three passes:
//   1. channel: truth -> paths -> RSU tensor -> chest, CRU tensor -> delays
//      (parallel over runs)
//   2. ungated snapshot errors -> BM1/BM2 MSE tables (ordered reduction)
//   3. every variant filters every run (parallel over runs)
// Every random draw is keyed by (seed, run, step, stream), so neither the
// thread count nor the order runs finish in changes any output.
#pragma once

#include "sidelink/chest.hpp"
#include "sidelink/config.hpp"
#include "sidelink/core.hpp"
#include "sidelink/crlb.hpp"
#include "sidelink/scene.hpp"
#include "sidelink/tracker.hpp"
#include "sidelink/waveform.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace sidelink {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// ---------------------------------------------------------------------------
// Per-step channel

struct StepSeeds {
  std::uint64_t tensor = 0;  // RSU tensor noise
  std::uint64_t cpd = 0;     // RSU CPD restarts
  std::uint64_t cru = 0;     // CRU tensor noise; CRU CPD uses splitmix64 of it
  std::uint64_t bias = 0;    // clock bias draw
};

inline StepSeeds step_seeds(std::uint64_t seed, int run, int step) {
  return {derive_seed(seed, run, step, Stream::kTensorNoise),
          derive_seed(seed, run, step, Stream::kCpdRestarts),
          derive_seed(seed, run, step, Stream::kCruToa),
          derive_seed(seed, run, step, Stream::kClockBias)};
}

/// Everything the trackers consume from one epoch.
struct ChannelStep {
  int step = 0;
  Vec3 truth = Vec3::Zero();
  double true_los_toa = kNaN;  // NaN when the LoS is blocked
  int true_path_count = 0;
  StepSeeds seeds;
  double clock_bias = 0.0;
  PathEstimateSet estimates;       // RSU side
  std::vector<double> cru_toas;    // CRU side, ascending
  std::string error;               // chest failure, if any
};

/// Synthesised observation of one epoch, before estimation.
struct StepObservation {
  std::vector<PathParams> paths;
  ObservationTensor rsu;
  ObservationTensor cru;
  double clock_bias = 0.0;
};

inline std::vector<PathParams> true_paths(const CampaignConfig& cfg, const Vec3& position) {
  CruState cru;
  cru.position = position;
  auto paths = generate_paths(cfg.scene.geometry, cfg.scene.rsu, cru, cfg.ofdm.wavelength());
  if (cfg.scene.los_only) std::erase_if(paths, [](const PathParams& p) { return !p.is_los; });
  return paths;
}

inline StepObservation observe(const CampaignConfig& cfg, const Vec3& position,
                               const StepSeeds& seeds) {
  StepObservation o;
  o.paths = true_paths(cfg, position);
  const double nv = cfg.noise_variance();
  o.rsu = synthesize(o.paths, cfg.array_config(), cfg.ofdm, seeds.tensor, nv);
  o.cru = synthesize(o.paths, single_antenna(cfg.ofdm.wavelength()), cfg.ofdm, seeds.cru, nv);
  Rng rng(seeds.bias);
  o.clock_bias = cfg.rtt.clock_bias_max > 0.0
                     ? rng.uniform(-cfg.rtt.clock_bias_max, cfg.rtt.clock_bias_max)
                     : 0.0;
  return o;
}

/// Truth positions of one run at every measurement epoch.
inline std::vector<Vec3> truth_trajectory(const CampaignConfig& cfg, int run) {
  const auto& tr = cfg.trajectory;
  std::vector<Vec3> out(std::size_t(tr.steps()));
  if (!tr.process_noise) {
    for (int k = 0; k < tr.steps(); ++k) {
      out[std::size_t(k)] = tr.start_position();
      out[std::size_t(k)].y() = tr.nominal_y(k);
    }
    return out;
  }
  Rng rng(derive_seed(cfg.seed, std::uint64_t(run), 0, Stream::kTruthProcess));
  const MotionModel model = cfg.tracker.motion();
  CruState s{tr.start_position(), tr.start_velocity()};
  for (int k = 0; k < tr.steps(); ++k) {
    if (k > 0) {
      for (int i = 0; i < cfg.substeps(); ++i) s = propagate(s, model, Vec2(rng.normal(), rng.normal()));
    }
    out[std::size_t(k)] = s.position;
  }
  return out;
}

/// CRU-side delay estimates of one epoch (see CruToaModel).
inline std::vector<double> cru_delays(const CampaignConfig& cfg, const StepObservation& o,
                                      const StepSeeds& seeds) {
  std::vector<double> out;
  if (cfg.rtt.cru_toa_model == CruToaModel::kEstimator) {
    const PathEstimateSet cru = estimate_delays_1d(o.cru, cfg.ofdm, cfg.sa, splitmix64(seeds.cru));
    for (const auto& p : cru.paths) out.push_back(p.toa);
    return out;
  }
  if (o.paths.empty()) return out;
  const double nv = cfg.noise_variance();
  // The bound is linear in the noise variance.
  const double sigma = nv > 0.0 ? std::sqrt(cru_delay_crb(o.paths.front(), cfg.ofdm, nv)) : 0.0;
  Rng rng(splitmix64(seeds.cru));
  out.push_back(o.paths.front().toa + sigma * rng.normal());
  return out;
}

inline ChannelStep estimate_step(const CampaignConfig& cfg, int run, int step, const Vec3& truth) {
  ChannelStep c;
  c.step = step;
  c.truth = truth;
  c.seeds = step_seeds(cfg.seed, run, step);
  try {
    const StepObservation o = observe(cfg, truth, c.seeds);
    c.true_path_count = int(o.paths.size());
    if (!o.paths.empty() && o.paths.front().is_los) c.true_los_toa = o.paths.front().toa;
    c.clock_bias = o.clock_bias;
    c.estimates = estimate(o.rsu, cfg.array_config(), cfg.ofdm, cfg.sa, c.seeds.cpd);
    c.cru_toas = cru_delays(cfg, o, c.seeds);
  } catch (const Error& e) {
    c.error = e.what();
  }
  return c;
}

inline std::vector<ChannelStep> simulate_run(const CampaignConfig& cfg, int run) {
  const auto truth = truth_trajectory(cfg, run);
  std::vector<ChannelStep> out;
  out.reserve(truth.size());
  for (std::size_t k = 0; k < truth.size(); ++k)
    out.push_back(estimate_step(cfg, run, int(k), truth[k]));
  return out;
}

/// Range from the RTT exchange, pairing the RSU LoS delay with the closest
/// CRU-side delay estimate. None when the CRU found no path.
inline std::optional<double> paired_rtt_range(const ChannelStep& c, double rsu_toa,
                                              const RttConfig& rtt) {
  if (c.cru_toas.empty()) return std::nullopt;
  double cru_toa = c.cru_toas.front();
  for (double t : c.cru_toas)
    if (std::abs(t - rsu_toa) < std::abs(cru_toa - rsu_toa)) cru_toa = t;
  const RttExchange ex = make_rtt_exchange(cru_toa, rsu_toa, rtt.processing_time, c.clock_bias);
  const RttRange r = rtt_range(ex);
  if (r.degenerate) return std::nullopt;
  return r.meters;
}

// ---------------------------------------------------------------------------
// Snapshot MSE tables

/// Ungated snapshot (BM3) errors z - x per step, runs in index order.
inline std::vector<std::vector<Vec3>> snapshot_errors(const CampaignConfig& cfg,
                                                      const std::vector<std::vector<ChannelStep>>& runs) {
  std::vector<std::vector<Vec3>> errors(std::size_t(cfg.trajectory.steps()));
  for (const auto& run : runs) {
    for (const ChannelStep& c : run) {
      const auto los = identify_los(c.estimates, std::nullopt);
      if (!los) continue;
      const auto range = paired_rtt_range(c, c.estimates.paths[*los].toa, cfg.rtt);
      if (!range) continue;
      const auto m = make_measurement(c.estimates, *los, *range, cfg.scene.rsu, Mat3::Identity(),
                                      CovarianceSource::kMseStep);
      if (m) errors[std::size_t(c.step)].push_back(m->z - c.truth);
    }
  }
  return errors;
}

// ---------------------------------------------------------------------------
// Tracking

struct VariantStep {
  int los_index = -1;     // into the step's estimates; -1: none chosen
  bool gate_empty = false;
  bool updated = false;
  bool has_estimate = false;
  Vec3 estimate = Vec3::Zero();
  double los_toa = kNaN;     // toa of the chosen path [s]
  double rtt_range = kNaN;   // [m]
  Vec3 eeclb_los = Vec3::Constant(kNaN);   // position cov (xx, yy, xy) [m^2]
  Vec3 eeclb_nlos = Vec3::Constant(kNaN);
  std::string error;
};

struct StepLog {
  ChannelStep channel;
  double nominal_y = 0.0;
  std::vector<VariantStep> variants;  // in CampaignConfig::variants order
};

struct RunLog {
  int run = 0;
  std::vector<StepLog> steps;
};

struct MseTables {
  MseTable table;
  bool available = false;
};

inline GaussianState initial_state(const CampaignConfig& cfg, int run, const Vec3& truth0) {
  if (cfg.tracker.draw_prior) {
    Rng rng(derive_seed(cfg.seed, std::uint64_t(run), 0, Stream::kPrior));
    return draw_prior(truth0, cfg.tracker.prior, rng);
  }
  GaussianState s;
  s.mean << truth0, cfg.trajectory.direction() * cfg.tracker.prior.nominal_speed * Vec3::UnitY();
  s.cov = cfg.tracker.prior.covariance();
  return s;
}

namespace detail {

inline Vec3 cov_summary(const Mat3& c) { return Vec3(c(0, 0), c(1, 1), c(0, 1)); }

/// Largest measurement variance treated as information [m^2] (1 km std).
/// A bound above this comes from a near-singular FIM (e.g. an AoA estimate at
/// endfire). Its small eigenvalues are then below the rounding error of the
/// large one and the update corrupts the velocity.
inline constexpr double kMaxMeasurementVariance = 1e6;

inline std::optional<std::string> unusable_covariance(const Mat3& R) {
  if (!R.allFinite()) return "measurement covariance is not finite";
  const Eigen::SelfAdjointEigenSolver<Mat3> eig(0.5 * (R + R.transpose()));
  const Vec3 ev = eig.eigenvalues();
  if (ev.maxCoeff() > kMaxMeasurementVariance) return "measurement covariance is unbounded";
  if (ev.minCoeff() < -1e-9 * ev.cwiseAbs().maxCoeff())
    return "measurement covariance is not positive semidefinite";
  return std::nullopt;
}

/// Chooses the LoS, forms the measurement and records both bounds. Returns
/// the measurement when an update should happen.
inline std::optional<PosMeasurement> measure(const CampaignConfig& cfg, const ChannelStep& c,
                                             const Variant& v, const GaussianState& pred,
                                             const MseTable* mse, VariantStep& log) {
  std::optional<Gate> gate;
  if (v.gated) {
    const Mat3 floor = cfg.tracker.gate_resolution_floor
                           ? resolution_floor(cfg.array_config(), cfg.ofdm, cfg.tracker.gate_beta)
                           : Mat3::Zero();
    gate = build_gate(pred, cfg.scene.rsu, cfg.tracker.gate_beta, floor);
  }
  const auto los = identify_los(c.estimates, gate);
  if (!los) {
    log.gate_empty = v.gated;
    return std::nullopt;
  }
  log.los_index = int(*los);
  log.los_toa = c.estimates.paths[*los].toa;
  const auto range = paired_rtt_range(c, log.los_toa, cfg.rtt);
  if (!range) {
    log.error = "no usable RTT range";
    return std::nullopt;
  }
  log.rtt_range = *range;

  const Vec3 p = pred.position();
  const ArrayConfig array = cfg.array_config();
  const double nv = cfg.noise_variance();
  std::optional<Mat3> bound_los, bound_nlos;
  if (is_tracking(v.method)) {
    // The bound scales linearly with the noise variance; a noiseless run
    // evaluates it at unit variance and scales by zero.
    const double nv_eval = nv > 0.0 ? nv : 1.0;
    const double scale = nv > 0.0 ? 1.0 : 0.0;
    auto bound = [&](EeclbVariant ev) -> std::optional<Mat3> {
      try {
        Mat3 cov = eeclb(c.estimates, *los, p, cfg.scene.rsu, ev, array, cfg.ofdm, nv_eval,
                         cfg.tracker.links, cfg.tracker.planar)
                       .position_cov;
        if (scale == 0.0) {
          cov.topLeftCorner<2, 2>().setZero();
          if (!cfg.tracker.planar) cov.setZero();
        }
        return cov;
      } catch (const Error& e) {
        log.error = std::string(to_string(ev)) + ": " + e.what();
        return std::nullopt;
      }
    };
    bound_los = bound(EeclbVariant::kLos);
    bound_nlos = bound(EeclbVariant::kNlos);
    if (bound_los) log.eeclb_los = cov_summary(*bound_los);
    if (bound_nlos) log.eeclb_nlos = cov_summary(*bound_nlos);
  }

  Mat3 R = Mat3::Identity();
  CovarianceSource source = CovarianceSource::kEeclbLos;
  switch (v.method) {
    case Method::kEeclbLos:
      if (!bound_los) return std::nullopt;
      R = *bound_los;
      break;
    case Method::kEeclbNlos:
      if (!bound_nlos) return std::nullopt;
      R = *bound_nlos;
      source = CovarianceSource::kEeclbNlos;
      break;
    case Method::kBm1:
      R = mse->per_step[std::size_t(c.step)];
      source = CovarianceSource::kMseStep;
      break;
    case Method::kBm2:
      R = mse->average;
      source = CovarianceSource::kMseAverage;
      break;
    case Method::kBm3:
    case Method::kBm4:
      break;
  }
  if (const auto bad = unusable_covariance(R)) {
    log.error = *bad;
    return std::nullopt;
  }
  return make_measurement(c.estimates, *los, *range, cfg.scene.rsu, R, source);
}

}  // namespace detail

/// Runs every configured variant over one run's channel steps.
inline RunLog track_run(const CampaignConfig& cfg, int run, const std::vector<ChannelStep>& channel,
                        const MseTables& mse) {
  RunLog out;
  out.run = run;
  out.steps.resize(channel.size());
  for (std::size_t k = 0; k < channel.size(); ++k) {
    out.steps[k].channel = channel[k];
    out.steps[k].nominal_y = cfg.trajectory.nominal_y(int(k));
    out.steps[k].variants.resize(cfg.variants.size());
  }
  if (channel.empty()) return out;
  const MotionModel model = cfg.tracker.motion();
  const GaussianState prior = initial_state(cfg, run, channel.front().truth);

  for (std::size_t vi = 0; vi < cfg.variants.size(); ++vi) {
    const Variant& v = cfg.variants[vi];
    if ((v.method == Method::kBm1 || v.method == Method::kBm2) && !mse.available)
      throw InvalidInput("BM1/BM2 need MSE tables from a completed campaign");
    GaussianState state = prior;
    for (std::size_t k = 0; k < channel.size(); ++k) {
      VariantStep& log = out.steps[k].variants[vi];
      const ChannelStep& c = channel[k];
      const GaussianState pred = k == 0 ? state : predict(state, model, cfg.substeps());
      try {
        if (v.method == Method::kBm4) {
          state = pred;
        } else {
          const auto meas = detail::measure(cfg, c, v, pred, &mse.table, log);
          if (v.method == Method::kBm3) {
            if (meas) {
              log.has_estimate = true;
              log.estimate = meas->z;
            }
            continue;
          }
          state = meas ? update(pred, *meas) : pred;
          log.updated = meas.has_value();
        }
      } catch (const Error& e) {
        log.error = e.what();
        state = pred;
        log.updated = false;
        if (v.method == Method::kBm3) continue;
      }
      log.has_estimate = true;
      log.estimate = state.position();
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runner

/// Worker count: `requested` (0: hardware), capped by SIDELINK_TRK_THREADS.
inline int resolve_threads(int requested) {
  int n = requested > 0 ? requested : int(std::max(1u, std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("SIDELINK_TRK_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && cap > 0) n = std::min<long>(n, cap);
  }
  return std::max(1, n);
}

/// Calls fn(i) for i in [0, n) on up to `threads` workers. The first
/// exception is rethrown after all workers stop.
inline void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, n));
  if (threads == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

struct CampaignResult {
  std::vector<RunLog> runs;
  MseTables mse;
  double elapsed_s = 0.0;
};

using ProgressFn = std::function<void(const char* phase, int done, int total)>;
using ChannelCampaign = std::vector<std::vector<ChannelStep>>;

namespace detail {

struct Ticker {
  Ticker(const ProgressFn& f, const char* p, int t) : fn(f), phase(p), total(t) {}

  const ProgressFn& fn;
  const char* phase;
  int total;
  std::atomic<int> done{0};
  std::mutex mu;

  void operator()() {
    const int d = ++done;
    if (!fn) return;
    std::lock_guard lock(mu);
    fn(phase, d, total);
  }
};

}  // namespace detail

/// Pass 1: channel simulation and estimation for every run.
inline ChannelCampaign simulate_channels(const CampaignConfig& cfg, const ProgressFn& progress = {}) {
  cfg.validate();
  ChannelCampaign channel(std::size_t(cfg.runs));
  detail::Ticker tick(progress, "channel", cfg.runs);
  parallel_for(cfg.runs, resolve_threads(cfg.threads), [&](int r) {
    channel[std::size_t(r)] = simulate_run(cfg, r);
    tick();
  });
  return channel;
}

/// Passes 2 and 3 on precomputed channels. `cfg` may differ from the one
/// that produced `channel` in tracker and variant settings only.
inline CampaignResult track_campaign(const CampaignConfig& cfg, const ChannelCampaign& channel,
                                     const ProgressFn& progress = {}) {
  cfg.validate();
  if (int(channel.size()) != cfg.runs) throw InvalidInput("channel campaign has the wrong run count");
  CampaignResult result;
  const bool needs_mse = std::any_of(cfg.variants.begin(), cfg.variants.end(), [](const Variant& v) {
    return v.method == Method::kBm1 || v.method == Method::kBm2;
  });
  if (needs_mse) {
    result.mse.table = build_mse_table(snapshot_errors(cfg, channel), cfg.tracker.planar,
                                       cfg.tracker.mse_scalar);
    result.mse.available = true;
  }
  result.runs.resize(std::size_t(cfg.runs));
  detail::Ticker tick(progress, "tracking", cfg.runs);
  parallel_for(cfg.runs, resolve_threads(cfg.threads), [&](int r) {
    result.runs[std::size_t(r)] = track_run(cfg, r, channel[std::size_t(r)], result.mse);
    tick();
  });
  return result;
}

inline CampaignResult run_campaign(const CampaignConfig& cfg, const ProgressFn& progress = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  CampaignResult result = track_campaign(cfg, simulate_channels(cfg, progress), progress);
  result.elapsed_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace sidelink
