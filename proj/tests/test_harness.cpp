#include "support.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace sidelink;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sidelink_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

bool same_bits(const RMat& a, const RMat& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * std::size_t(a.size())) == 0;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

void expect_same_table(const MetricsTable& a, const MetricsTable& b) {
  EXPECT_EQ(a.variants, b.variants);
  EXPECT_TRUE(same_bits(a.positions, b.positions));
  EXPECT_TRUE(same_bits(a.rmse, b.rmse));
  EXPECT_TRUE(same_bits(a.cdf_x, b.cdf_x));
  EXPECT_TRUE(same_bits(a.cdf, b.cdf));
  ASSERT_EQ(a.los_id.size(), b.los_id.size());
  for (std::size_t i = 0; i < a.los_id.size(); ++i) {
    EXPECT_EQ(a.los_id[i].variant, b.los_id[i].variant);
    EXPECT_EQ(a.los_id[i].id_rate, b.los_id[i].id_rate);
    EXPECT_EQ(a.los_id[i].gate_empty_rate, b.los_id[i].gate_empty_rate);
    EXPECT_EQ(std::isnan(a.los_id[i].toa_rmse_m), std::isnan(b.los_id[i].toa_rmse_m));
    if (!std::isnan(a.los_id[i].toa_rmse_m)) {
      EXPECT_EQ(a.los_id[i].toa_rmse_m, b.los_id[i].toa_rmse_m);
    }
  }
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::ifstream is(p);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

// Shared noisy two-run campaign.
const CampaignResult& small_campaign() {
  static const CampaignResult r = [] {
    CampaignConfig cfg = test::tiny_campaign(2);
    return run_campaign(cfg);
  }();
  return r;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SIDELINK_TRK_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

TEST(Config, DefaultsValidate) {
  const CampaignConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.trajectory.steps(), 101);
  EXPECT_EQ(cfg.substeps(), 10);
  EXPECT_EQ(cfg.variants.size(), 10u);
}

TEST(Config, IniOverridesAndDefaults) {
  const auto cfg = config_from_ini_string(
      "[campaign]\nruns = 3\nseed = 18446744073709551615\nvariants = EECLB-LOS:gated, BM3\n"
      "[ofdm]\nnoise_scale = 0.5\n[scene]\nrsu_orientation_deg = 0, 90, 0\nbuildings = none\n"
      "[tracker]\nprior_std = 1, 2, 0.1, 0.5, 0.5, 0.1\nlink_combination = average\n");
  EXPECT_EQ(cfg.runs, 3);
  EXPECT_EQ(cfg.seed, 18446744073709551615ULL);
  ASSERT_EQ(cfg.variants.size(), 2u);
  EXPECT_EQ(cfg.variants[0].name(), "EECLB-LOS:gated");
  EXPECT_EQ(cfg.variants[1].name(), "BM3");
  EXPECT_EQ(cfg.noise_scale, 0.5);
  EXPECT_NEAR(cfg.scene.rsu.orientation.y(), kPi / 2, 1e-15);
  EXPECT_TRUE(cfg.scene.geometry.buildings.empty());
  EXPECT_EQ(cfg.tracker.prior.std_dev[1], 2.0);
  EXPECT_EQ(cfg.tracker.links, LinkCombination::kAverage);
  EXPECT_EQ(cfg.ofdm.subcarriers, 288);
}

TEST(Config, ErrorsNameTheKey) {
  auto message = [](const std::string& text) {
    try {
      config_from_ini_string(text, "t.ini");
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("[ofdm]\nsubcarier = 3\n").find("t.ini: ofdm.subcarier: unknown key"), std::string::npos);
  EXPECT_NE(message("[ofdm]\nsubcarriers = lots\n").find("ofdm.subcarriers"), std::string::npos);
  EXPECT_NE(message("[campaign]\nvariants = BM9\n").find("campaign.variants"), std::string::npos);
  EXPECT_NE(message("[campaign]\nruns = 0\n").find("campaign.runs"), std::string::npos);
  EXPECT_NE(message("[tracker]\nperiod = 0.03\n").find("trajectory.epoch"), std::string::npos);
  EXPECT_NE(message("[trajectory]\nlane_x = 45\n").find("building"), std::string::npos);
  EXPECT_NE(message("[rtt]\ncru_toa_model = guess\n").find("rtt.cru_toa_model"), std::string::npos);
  EXPECT_NE(message("[ofdm\nsubcarriers = 3\n").find("t.ini:1"), std::string::npos);
}

TEST(Config, JsonImportAndRoundTrip) {
  CampaignConfig cfg = test::tiny_campaign(4);
  cfg.seed = 99;
  cfg.variants = parse_variants("BM1:gated,BM4");
  cfg.scene.geometry.wall_reflection = std::polar(0.5, deg2rad(170.0));
  cfg.rtt.cru_toa_model = CruToaModel::kEstimator;
  cfg.tracker.mse_scalar = true;
  const nlohmann::json j = to_json(cfg);
  const CampaignConfig back = config_from_json(j);
  EXPECT_EQ(to_json(back), j);
  EXPECT_EQ(back.runs, 4);
  EXPECT_EQ(back.variants, cfg.variants);
  EXPECT_EQ(back.rtt.cru_toa_model, CruToaModel::kEstimator);
  EXPECT_NEAR(std::abs(back.scene.geometry.wall_reflection - cfg.scene.geometry.wall_reflection), 0.0, 1e-12);
  EXPECT_THROW(config_from_json(nlohmann::json::parse(R"({"ofdm": {"nope": 1}})")), ConfigError);
  EXPECT_THROW(config_from_json(nlohmann::json::array()), ConfigError);
}

TEST(Config, LoadConfigErrors) {
  EXPECT_THROW(load_config("/nonexistent/campaign.ini"), IoError);
  const fs::path dir = scratch_dir("load");
  std::ofstream(dir / "bad.json") << "{ not json";
  EXPECT_THROW(load_config((dir / "bad.json").string()), ConfigError);
  std::ofstream(dir / "ok.json") << R"({"campaign": {"runs": 2, "variants": ["BM3", "BM4"]}})";
  const auto cfg = load_config((dir / "ok.json").string());
  EXPECT_EQ(cfg.runs, 2);
  EXPECT_EQ(cfg.variants.size(), 2u);
}

TEST(Config, ShippedConfigsLoad) {
  for (const char* name : {"default.ini", "noiseless.ini"}) {
    const fs::path p = fs::path(SIDELINK_SOURCE_DIR) / "configs" / name;
    EXPECT_NO_THROW(load_config(p.string())) << p;
  }
  const auto def = load_config((fs::path(SIDELINK_SOURCE_DIR) / "configs" / "default.ini").string());
  EXPECT_EQ(to_json(def), to_json(CampaignConfig{}));
}

TEST(Variants, Parsing) {
  EXPECT_EQ(parse_variants("all").size(), 10u);
  EXPECT_TRUE(parse_variants("").empty());
  const auto both = parse_variants("BM2");
  ASSERT_EQ(both.size(), 2u);
  EXPECT_EQ(both[0].name(), "BM2:gated");
  EXPECT_EQ(both[1].name(), "BM2:ungated");
  const auto v = parse_variants("BM4, BM3:gated, EECLB-NLOS:ungated, BM4");
  ASSERT_EQ(v.size(), 3u);
  EXPECT_EQ(join_variants(v), "EECLB-NLOS:ungated,BM3,BM4");
  EXPECT_THROW(parse_variants("EECLB-LOS:sometimes"), ConfigError);
  EXPECT_THROW(parse_variants("BM5"), ConfigError);
  for (const auto& x : all_variants()) EXPECT_EQ(parse_variants(x.name()), std::vector{x});
}

// ---------------------------------------------------------------------------
// Campaign

TEST(Campaign, StepSeedsAreOrderIndependent) {
  const StepSeeds a = step_seeds(5, 3, 17);
  const StepSeeds b = step_seeds(5, 3, 17);
  EXPECT_EQ(a.tensor, b.tensor);
  EXPECT_NE(a.tensor, step_seeds(5, 3, 18).tensor);
  EXPECT_NE(a.tensor, step_seeds(5, 4, 17).tensor);
  EXPECT_NE(a.tensor, a.cpd);
  const CampaignConfig cfg = test::tiny_campaign();
  const auto truth = truth_trajectory(cfg, 0);
  const ChannelStep alone = estimate_step(cfg, 0, 3, truth[3]);
  const ChannelStep in_run = simulate_run(cfg, 0)[3];
  EXPECT_EQ(alone.estimates.size(), in_run.estimates.size());
  for (std::size_t i = 0; i < alone.estimates.size(); ++i)
    EXPECT_EQ(alone.estimates.paths[i].toa, in_run.estimates.paths[i].toa);
  EXPECT_EQ(alone.cru_toas, in_run.cru_toas);
}

TEST(Campaign, DeterministicForFixedSeed) {
  const CampaignConfig cfg = test::tiny_campaign(1);
  const auto a = run_campaign(cfg);
  const auto b = run_campaign(cfg);
  expect_same_table(compute_metrics(cfg, a.runs), compute_metrics(cfg, b.runs));
}

TEST(Campaign, ThreadCountDoesNotChangeResults) {
  CampaignConfig cfg = test::tiny_campaign(3);
  cfg.threads = 1;
  const auto one = run_campaign(cfg);
  cfg.threads = 3;
  const auto three = run_campaign(cfg);
  expect_same_table(compute_metrics(cfg, one.runs), compute_metrics(cfg, three.runs));
}

TEST(Campaign, NoiselessLosOnlyIsExact) {
  CampaignConfig cfg = test::tiny_campaign(1);
  cfg.noise_scale = 0.0;
  cfg.scene.los_only = true;
  cfg.tracker.draw_prior = false;
  cfg.tracker.prior.nominal_speed = cfg.trajectory.speed;  // else BM4 drifts
  const auto res = run_campaign(cfg);
  const auto t = compute_metrics(cfg, res.runs);
  for (std::size_t vi = 0; vi < cfg.variants.size(); ++vi) {
    const double r = trajectory_rmse(horizontal_errors(res.runs, vi));
    EXPECT_LT(r, 1e-3) << t.variants[vi];
  }
}

TEST(Campaign, ModuleErrorsAreRecordedNotThrown) {
  CampaignConfig cfg = test::tiny_campaign(1);
  cfg.variants = parse_variants("EECLB-LOS:ungated");
  const auto truth = truth_trajectory(cfg, 0);
  std::vector<ChannelStep> channel;
  for (int k = 0; k < int(truth.size()); ++k) channel.push_back(estimate_step(cfg, 0, k, truth[std::size_t(k)]));
  // Corrupt one step so that the bound cannot be formed.
  channel[2].estimates.paths[0].aoa_el = std::numeric_limits<double>::quiet_NaN();
  const RunLog log = track_run(cfg, 0, channel, MseTables{});
  EXPECT_FALSE(log.steps[2].variants[0].error.empty());
  EXPECT_FALSE(log.steps[2].variants[0].updated);
  EXPECT_TRUE(log.steps[3].variants[0].has_estimate);
}

TEST(Campaign, UnusableCovarianceChecks) {
  EXPECT_FALSE(detail::unusable_covariance(Vec3(0.0, 0.0, 1e-4).asDiagonal()));
  EXPECT_TRUE(detail::unusable_covariance(Vec3(1e28, 1.0, 1.0).asDiagonal()));
  EXPECT_TRUE(detail::unusable_covariance(Vec3(-1.0, 1.0, 1.0).asDiagonal()));
  EXPECT_TRUE(detail::unusable_covariance(Mat3::Constant(std::numeric_limits<double>::infinity())));
}

TEST(Campaign, ClockBiasHasNoEffect) {
  CampaignConfig cfg = test::tiny_campaign(1);
  cfg.rtt.clock_bias_max = 1e-3;
  const auto biased = run_campaign(cfg);
  cfg.rtt.clock_bias_max = 0.0;
  const auto clean = run_campaign(cfg);
  bool any_bias = false;
  for (std::size_t k = 0; k < biased.runs[0].steps.size(); ++k) {
    const StepLog& a = biased.runs[0].steps[k];
    const StepLog& b = clean.runs[0].steps[k];
    any_bias |= a.channel.clock_bias != 0.0;
    for (std::size_t vi = 0; vi < a.variants.size(); ++vi) {
      EXPECT_EQ(std::isnan(a.variants[vi].rtt_range), std::isnan(b.variants[vi].rtt_range));
      if (!std::isnan(a.variants[vi].rtt_range)) {
        EXPECT_EQ(a.variants[vi].rtt_range, b.variants[vi].rtt_range);
      }
    }
  }
  EXPECT_TRUE(any_bias);
  expect_same_table(compute_metrics(cfg, biased.runs), compute_metrics(cfg, clean.runs));
}

// ---------------------------------------------------------------------------
// Metrics

TEST(Metrics, NaiveAggregatorOverJsonLogsAgrees) {
  CampaignConfig cfg = test::tiny_campaign(2);
  const auto& res = small_campaign();
  const fs::path out = scratch_dir("naive");
  write_run_logs(out, cfg, res.runs);
  const MetricsTable t = compute_metrics(cfg, res.runs);

  const std::size_t steps = res.runs.front().steps.size();
  for (std::size_t vi = 0; vi < cfg.variants.size(); ++vi) {
    const std::string name = cfg.variants[vi].name();
    std::vector<double> sum(steps, 0.0);
    std::vector<int> n(steps, 0);
    for (int r = 0; r < cfg.runs; ++r) {
      std::ifstream is(run_log_dir(out, cfg.seed) / (std::to_string(r) + ".jsonl"));
      std::string line;
      while (std::getline(is, line)) {
        const auto j = nlohmann::json::parse(line);
        const auto& est = j["variants"][name]["estimate"];
        if (est.is_null()) continue;
        const double dx = est[0].get<double>() - j["truth"][0].get<double>();
        const double dy = est[1].get<double>() - j["truth"][1].get<double>();
        const auto k = j["step"].get<std::size_t>();
        sum[k] += dx * dx + dy * dy;
        ++n[k];
      }
    }
    for (std::size_t k = 0; k < steps; ++k) {
      const double rmse = t.rmse(Eigen::Index(k), Eigen::Index(vi));
      if (n[k] == 0) EXPECT_TRUE(std::isnan(rmse));
      else EXPECT_NEAR(rmse, std::sqrt(sum[k] / n[k]), 1e-12 * (1.0 + rmse)) << name << " step " << k;
    }
  }
}

TEST(Metrics, CdfColumnsAreMonotoneAndBounded) {
  const CampaignConfig cfg = test::tiny_campaign(2);
  const MetricsTable t = compute_metrics(cfg, small_campaign().runs);
  ASSERT_EQ(t.cdf.rows(), kCdfPoints);
  for (Eigen::Index c = 0; c < t.cdf.cols(); ++c) {
    for (Eigen::Index i = 0; i < t.cdf.rows(); ++i) {
      EXPECT_GE(t.cdf(i, c), 0.0);
      EXPECT_LE(t.cdf(i, c), 1.0);
      if (i) {
        EXPECT_GE(t.cdf(i, c), t.cdf(i - 1, c));
      }
    }
    EXPECT_EQ(t.cdf(t.cdf.rows() - 1, c), 1.0);
  }
  for (Eigen::Index i = 0; i < t.rmse.size(); ++i)
    if (!std::isnan(t.rmse.data()[i])) {
      EXPECT_GE(t.rmse.data()[i], 0.0);
    }
}

TEST(Metrics, BootstrapIsPairedAndSeeded) {
  RMat e(4, 3);
  e << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
  const RMat a = bootstrap_trajectory_rmse({e, 2.0 * e}, 200, 5);
  const RMat b = bootstrap_trajectory_rmse({e, 2.0 * e}, 200, 5);
  EXPECT_TRUE(same_bits(a, b));
  for (Eigen::Index i = 0; i < a.rows(); ++i) EXPECT_NEAR(a(i, 1), 2.0 * a(i, 0), 1e-12);
  const Interval ci = percentile_interval(a.col(0));
  EXPECT_LE(ci.lo, trajectory_rmse(e));
  EXPECT_GE(ci.hi, trajectory_rmse(e));
}

TEST(Metrics, QuantileAndCdfHelpers) {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  EXPECT_EQ(quantile(v, 0.0), 1.0);
  EXPECT_EQ(quantile(v, 1.0), 4.0);
  EXPECT_NEAR(quantile(v, 0.5), 2.5, 1e-15);
  EXPECT_EQ(empirical_cdf(v, 2.0), 0.5);
  EXPECT_EQ(empirical_cdf(v, 0.5), 0.0);
  EXPECT_TRUE(std::isnan(quantile({}, 0.5)));
}

// ---------------------------------------------------------------------------
// Emission

TEST(Emit, EmptyVariantListWritesHeadersOnly) {
  CampaignConfig cfg = test::tiny_campaign(1);
  cfg.variants.clear();
  const auto res = run_campaign(cfg);
  const fs::path out = scratch_dir("empty");
  emit(out, cfg, res.runs, compute_metrics(cfg, res.runs));
  const auto rmse = read_csv(out / "rmse_vs_y.csv");
  ASSERT_EQ(rmse.size(), 1u);
  EXPECT_EQ(rmse[0], std::vector<std::string>{"y_m"});
  EXPECT_EQ(read_csv(out / "cdf.csv").size(), 1u);
  const auto los = read_csv(out / "los_id.csv");
  ASSERT_EQ(los.size(), 1u);
  EXPECT_EQ(los[0], (std::vector<std::string>{"y_m", "variant", "id_rate", "gate_empty_rate", "los_toa_rmse_m"}));
  EXPECT_TRUE(fs::exists(out / "summary.txt"));
}

TEST(Emit, OneVariantTwoPositions) {
  CampaignConfig cfg = test::tiny_campaign(1);
  cfg.trajectory.end_y = cfg.trajectory.start_y + cfg.trajectory.speed * cfg.trajectory.epoch;
  cfg.variants = parse_variants("BM3");
  ASSERT_EQ(cfg.trajectory.steps(), 2);
  const auto res = run_campaign(cfg);
  const fs::path out = scratch_dir("two");
  emit(out, cfg, res.runs, compute_metrics(cfg, res.runs));
  const auto rows = read_csv(out / "rmse_vs_y.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"y_m", "BM3"}));
  EXPECT_EQ(std::stod(rows[1][0]), -20.0);
  EXPECT_EQ(std::stod(rows[2][0]), -10.0);
}

TEST(Emit, ParsedCdfIsMonotone) {
  const CampaignConfig cfg = test::tiny_campaign(2);
  const auto& res = small_campaign();
  const fs::path out = scratch_dir("cdf");
  emit(out, cfg, res.runs, compute_metrics(cfg, res.runs));
  const auto rows = read_csv(out / "cdf.csv");
  ASSERT_EQ(rows.size(), std::size_t(kCdfPoints) + 1);
  ASSERT_EQ(rows[0].size(), cfg.variants.size() + 1);
  for (std::size_t c = 1; c < rows[0].size(); ++c) {
    double prev = -1.0;
    for (std::size_t r = 1; r < rows.size(); ++r) {
      const double v = std::stod(rows[r][c]);
      EXPECT_GE(v, prev) << rows[0][c];
      EXPECT_LE(v, 1.0);
      prev = v;
    }
  }
}

TEST(Emit, ReportFromLogsReproducesTables) {
  const CampaignConfig cfg = test::tiny_campaign(2);
  const auto& res = small_campaign();
  const fs::path out = scratch_dir("report");
  write_run_logs(out, cfg, res.runs);
  const LoadedLogs logs = read_run_logs(out);
  EXPECT_EQ(to_json(logs.config), to_json(cfg));
  ASSERT_EQ(logs.runs.size(), res.runs.size());
  expect_same_table(compute_metrics(logs.config, logs.runs), compute_metrics(cfg, res.runs));
  EXPECT_EQ(logs.runs[1].steps[2].channel.seeds.tensor, res.runs[1].steps[2].channel.seeds.tensor);
}

TEST(Emit, ReadLogErrorsAreIoErrors) {
  const fs::path out = scratch_dir("missing");
  EXPECT_THROW(read_run_logs(out), IoError);
  EXPECT_THROW(read_run_logs(out, 5), IoError);
}

// ---------------------------------------------------------------------------
// CLI

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch_dir("cli");
  std::ofstream(dir / "bad.ini") << "[ofdm]\nsubcarriers = -4\n";
  std::ofstream(dir / "tiny.ini") << "[campaign]\nruns = 1\nthreads = 1\nvariants = BM3, BM4\n"
                                     "[trajectory]\nstart_y = -5\nend_y = 5\nspeed = 10\nepoch = 0.5\n"
                                     "[tracker]\nperiod = 0.05\n";
  EXPECT_EQ(run_cli("track --config " + (dir / "bad.ini").string()), 2);
  EXPECT_EQ(run_cli("track --variants BM9"), 2);
  EXPECT_EQ(run_cli("track --bogus-flag"), 2);
  EXPECT_EQ(run_cli("track --config " + (dir / "none.ini").string()), 3);
  EXPECT_EQ(run_cli("report --out " + (dir / "empty").string()), 3);
  EXPECT_EQ(run_cli("track --quiet --config " + (dir / "tiny.ini").string() + " --out " + (dir / "o").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "o" / "rmse_vs_y.csv"));
  EXPECT_TRUE(fs::exists(dir / "o" / "runs" / "1" / "0.jsonl"));
  EXPECT_EQ(run_cli("report --quiet --out " + (dir / "o").string()), 0);
  EXPECT_EQ(run_cli("simulate --quiet --config " + (dir / "tiny.ini").string() + " --out " + (dir / "o").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "o" / "sim" / "1" / "0" / "step0_rsu.bin"));
}
