// Output files of a campaign and their round trip.
//
//   <out>/rmse_vs_y.csv              y_m,<variant>...
//   <out>/cdf.csv                    error_m,<variant>...
//   <out>/los_id.csv                 y_m,variant,id_rate,gate_empty_rate,los_toa_rmse_m
//   <out>/summary.txt                per-variant trajectory RMSE with bootstrap CI
//   <out>/runs/<seed>/meta.json      config used
//   <out>/runs/<seed>/<run>.jsonl    one JSON object per step
#pragma once

#include "sidelink/campaign.hpp"
#include "sidelink/config.hpp"
#include "sidelink/core.hpp"
#include "sidelink/metrics.hpp"

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace sidelink {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Step log serialisation

namespace detail {

inline nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }
inline double num(const nlohmann::json& j) { return j.is_number() ? j.get<double>() : kNaN; }

inline nlohmann::json vec(const Vec3& v) { return {num(v[0]), num(v[1]), num(v[2])}; }
inline Vec3 vec(const nlohmann::json& j) { return Vec3(num(j.at(0)), num(j.at(1)), num(j.at(2))); }

}  // namespace detail

inline nlohmann::json to_json(const StepLog& s, const std::vector<Variant>& variants) {
  using nlohmann::json;
  using detail::num;
  using detail::vec;
  const ChannelStep& c = s.channel;
  json paths = json::array();
  for (const PathParams& p : c.estimates.paths)
    paths.push_back({{"toa", p.toa},
                     {"az", p.aoa_az},
                     {"el", p.aoa_el},
                     {"gain", {p.gain.real(), p.gain.imag()}}});
  json vs = json::object();
  for (std::size_t i = 0; i < variants.size(); ++i) {
    const VariantStep& v = s.variants[i];
    json o = {{"los", v.los_index},
              {"gate_empty", v.gate_empty},
              {"updated", v.updated},
              {"estimate", v.has_estimate ? vec(v.estimate) : json()},
              {"los_toa", num(v.los_toa)},
              {"rtt_range", num(v.rtt_range)},
              {"eeclb_los", vec(v.eeclb_los)},
              {"eeclb_nlos", vec(v.eeclb_nlos)}};
    if (!v.error.empty()) o["error"] = v.error;
    vs[variants[i].name()] = std::move(o);
  }
  json j = {{"step", c.step},
            {"y", s.nominal_y},
            {"truth", vec(c.truth)},
            {"true_los_toa", num(c.true_los_toa)},
            {"true_paths", c.true_path_count},
            {"seeds",
             {{"tensor", c.seeds.tensor}, {"cpd", c.seeds.cpd}, {"cru", c.seeds.cru}, {"bias", c.seeds.bias}}},
            {"clock_bias", c.clock_bias},
            {"rank", c.estimates.rank_used},
            {"residual", num(c.estimates.residual)},
            {"paths", paths},
            {"cru_toas", c.cru_toas},
            {"variants", vs}};
  if (!c.error.empty()) j["error"] = c.error;
  return j;
}

inline StepLog step_from_json(const nlohmann::json& j, const std::vector<Variant>& variants) {
  using detail::num;
  using detail::vec;
  StepLog s;
  ChannelStep& c = s.channel;
  c.step = j.at("step").get<int>();
  s.nominal_y = j.at("y").get<double>();
  c.truth = vec(j.at("truth"));
  c.true_los_toa = num(j.at("true_los_toa"));
  c.true_path_count = j.at("true_paths").get<int>();
  const auto& sd = j.at("seeds");
  c.seeds = {sd.at("tensor").get<std::uint64_t>(), sd.at("cpd").get<std::uint64_t>(),
             sd.at("cru").get<std::uint64_t>(), sd.at("bias").get<std::uint64_t>()};
  c.clock_bias = j.at("clock_bias").get<double>();
  c.estimates.rank_used = j.at("rank").get<int>();
  c.estimates.residual = num(j.at("residual"));
  for (const auto& p : j.at("paths")) {
    PathParams q;
    q.toa = p.at("toa").get<double>();
    q.aoa_az = p.at("az").get<double>();
    q.aoa_el = p.at("el").get<double>();
    q.gain = {p.at("gain").at(0).get<double>(), p.at("gain").at(1).get<double>()};
    c.estimates.paths.push_back(q);
    c.estimates.energy.push_back(std::norm(q.gain));
    c.estimates.at_boundary.push_back(false);
  }
  c.cru_toas = j.at("cru_toas").get<std::vector<double>>();
  if (j.contains("error")) c.error = j.at("error").get<std::string>();
  for (const Variant& v : variants) {
    const auto& o = j.at("variants").at(v.name());
    VariantStep x;
    x.los_index = o.at("los").get<int>();
    x.gate_empty = o.at("gate_empty").get<bool>();
    x.updated = o.at("updated").get<bool>();
    x.has_estimate = !o.at("estimate").is_null();
    if (x.has_estimate) x.estimate = vec(o.at("estimate"));
    x.los_toa = num(o.at("los_toa"));
    x.rtt_range = num(o.at("rtt_range"));
    x.eeclb_los = vec(o.at("eeclb_los"));
    x.eeclb_nlos = vec(o.at("eeclb_nlos"));
    if (o.contains("error")) x.error = o.at("error").get<std::string>();
    s.variants.push_back(std::move(x));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Files

namespace detail {

inline std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw IoError("cannot open " + p.string() + " for writing");
  return os;
}

inline void check_written(std::ofstream& os, const fs::path& p) {
  os.flush();
  if (!os) throw IoError("write failed: " + p.string());
}

inline std::string fmt(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create directory " + p.string() + ": " + ec.message());
}

}  // namespace detail

inline fs::path run_log_dir(const fs::path& out, std::uint64_t seed) {
  return out / "runs" / std::to_string(seed);
}

inline void write_run_logs(const fs::path& out, const CampaignConfig& cfg,
                           const std::vector<RunLog>& runs) {
  const fs::path dir = run_log_dir(out, cfg.seed);
  detail::make_dirs(dir);
  {
    const fs::path p = dir / "meta.json";
    auto os = detail::open_out(p);
    nlohmann::json meta = {{"config", to_json(cfg)}, {"runs", runs.size()}};
    os << meta.dump(2) << '\n';
    detail::check_written(os, p);
  }
  for (const RunLog& run : runs) {
    const fs::path p = dir / (std::to_string(run.run) + ".jsonl");
    auto os = detail::open_out(p);
    for (const StepLog& s : run.steps) os << to_json(s, cfg.variants).dump() << '\n';
    detail::check_written(os, p);
  }
}

struct LoadedLogs {
  CampaignConfig config;
  std::vector<RunLog> runs;
};

/// Reads meta.json and every <run>.jsonl under runs/<seed>. With no seed,
/// the directory must hold exactly one seed.
inline LoadedLogs read_run_logs(const fs::path& out, std::optional<std::uint64_t> seed = std::nullopt) {
  fs::path dir;
  if (seed) {
    dir = run_log_dir(out, *seed);
  } else {
    std::vector<fs::path> seeds;
    std::error_code ec;
    for (const auto& e : fs::directory_iterator(out / "runs", ec))
      if (e.is_directory()) seeds.push_back(e.path());
    if (ec) throw IoError("cannot list " + (out / "runs").string() + ": " + ec.message());
    if (seeds.size() != 1)
      throw IoError((out / "runs").string() + " holds " + std::to_string(seeds.size()) +
                    " seeds; pass --seed");
    dir = seeds.front();
  }
  const fs::path meta_path = dir / "meta.json";
  std::ifstream mis(meta_path);
  if (!mis) throw IoError("cannot open " + meta_path.string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(mis);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(meta_path.string() + ": " + e.what());
  }
  LoadedLogs logs;
  logs.config = config_from_json(meta.at("config"), meta_path.string());
  const int runs = meta.at("runs").get<int>();
  for (int r = 0; r < runs; ++r) {
    const fs::path p = dir / (std::to_string(r) + ".jsonl");
    std::ifstream is(p);
    if (!is) throw IoError("cannot open " + p.string());
    RunLog run;
    run.run = r;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        run.steps.push_back(step_from_json(nlohmann::json::parse(line), logs.config.variants));
      } catch (const nlohmann::json::exception& e) {
        throw IoError(p.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
    logs.runs.push_back(std::move(run));
  }
  return logs;
}

inline void write_rmse_csv(const fs::path& p, const MetricsTable& t) {
  auto os = detail::open_out(p);
  os << "y_m";
  for (const auto& v : t.variants) os << ',' << v;
  os << '\n';
  if (!t.variants.empty()) {
    for (std::size_t k = 0; k < t.positions.size(); ++k) {
      os << detail::fmt(t.positions[k]);
      for (Eigen::Index vi = 0; vi < t.rmse.cols(); ++vi)
        os << ',' << detail::fmt(t.rmse(Eigen::Index(k), vi));
      os << '\n';
    }
  }
  detail::check_written(os, p);
}

inline void write_cdf_csv(const fs::path& p, const MetricsTable& t) {
  auto os = detail::open_out(p);
  os << "error_m";
  for (const auto& v : t.variants) os << ',' << v;
  os << '\n';
  for (std::size_t i = 0; i < t.cdf_x.size(); ++i) {
    os << detail::fmt(t.cdf_x[i]);
    for (Eigen::Index vi = 0; vi < t.cdf.cols(); ++vi)
      os << ',' << detail::fmt(t.cdf(Eigen::Index(i), vi));
    os << '\n';
  }
  detail::check_written(os, p);
}

inline void write_los_id_csv(const fs::path& p, const MetricsTable& t) {
  auto os = detail::open_out(p);
  os << "y_m,variant,id_rate,gate_empty_rate,los_toa_rmse_m\n";
  for (const auto& r : t.los_id)
    os << detail::fmt(r.y) << ',' << r.variant << ',' << detail::fmt(r.id_rate) << ','
       << detail::fmt(r.gate_empty_rate) << ',' << detail::fmt(r.toa_rmse_m) << '\n';
  detail::check_written(os, p);
}

inline constexpr int kBootstrapResamples = 1000;

/// Human-readable per-variant summary.
inline std::string summary_text(const CampaignConfig& cfg, const std::vector<RunLog>& runs,
                                const MetricsTable& t, std::optional<double> elapsed_s = std::nullopt) {
  std::vector<RMat> errors;
  for (std::size_t vi = 0; vi < cfg.variants.size(); ++vi) errors.push_back(horizontal_errors(runs, vi));
  const RMat boot = bootstrap_trajectory_rmse(
      errors, kBootstrapResamples, derive_seed(cfg.seed, 0, 0, Stream::kBootstrap));

  std::ostringstream os;
  os << "seed " << cfg.seed << ", runs " << runs.size() << ", steps "
     << (runs.empty() ? 0 : runs.front().steps.size()) << ", variants " << cfg.variants.size();
  if (elapsed_s) os << ", elapsed " << detail::fmt(*elapsed_s) << " s";
  os << "\n\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-20s %10s %10s %10s %10s %10s %8s %8s %7s\n", "variant",
                "rmse_m", "ci95_lo", "ci95_hi", "median_m", "p90_m", "los_id", "gate_0", "errors");
  os << line;
  for (std::size_t vi = 0; vi < cfg.variants.size(); ++vi) {
    const auto pooled = finite_values(errors[vi]);
    const Interval ci = percentile_interval(boot.col(Eigen::Index(vi)));
    double id = 0.0, empty = 0.0;
    int rows = 0;
    for (const auto& r : t.los_id) {
      if (r.variant != t.variants[vi]) continue;
      id += r.id_rate;
      empty += r.gate_empty_rate;
      ++rows;
    }
    int failures = 0;
    for (const RunLog& run : runs)
      for (const StepLog& s : run.steps)
        if (!s.variants[vi].error.empty() || !s.channel.error.empty()) ++failures;
    std::snprintf(line, sizeof line, "%-20s %10.4f %10.4f %10.4f %10.4f %10.4f %8s %8s %7d\n",
                  t.variants[vi].c_str(), trajectory_rmse(errors[vi]), ci.lo, ci.hi,
                  quantile(pooled, 0.5), quantile(pooled, 0.9),
                  rows ? detail::fmt(id / rows).substr(0, 6).c_str() : "-",
                  rows ? detail::fmt(empty / rows).substr(0, 6).c_str() : "-", failures);
    os << line;
  }
  os << "\nrmse_m: mean over positions of the per-position horizontal RMSE; ci95 from "
     << kBootstrapResamples << " run resamples.\n";
  return os.str();
}

/// Writes the three CSVs and summary.txt into `out`.
inline void emit(const fs::path& out, const CampaignConfig& cfg, const std::vector<RunLog>& runs,
                 const MetricsTable& t, std::optional<double> elapsed_s = std::nullopt) {
  detail::make_dirs(out);
  write_rmse_csv(out / "rmse_vs_y.csv", t);
  write_cdf_csv(out / "cdf.csv", t);
  write_los_id_csv(out / "los_id.csv", t);
  const fs::path p = out / "summary.txt";
  auto os = detail::open_out(p);
  os << summary_text(cfg, runs, t, elapsed_s);
  detail::check_written(os, p);
}

inline MetricsTable compute_metrics(const CampaignConfig& cfg, const std::vector<RunLog>& runs) {
  return compute_metrics(runs, cfg.variants, cfg.ofdm.delay_resolution());
}

}  // namespace sidelink
