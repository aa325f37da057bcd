// sidelink_trk: simulate / track / report.
//
// Exit codes: 0 success, 1 other failure, 2 config error, 3 I/O error.

#include "sidelink/sidelink.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

namespace {

using namespace sidelink;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> runs;
  std::string out = "out";
  std::optional<std::string> variants;
  bool no_gate = false;
  bool quiet = false;
};

CampaignConfig load(const Options& o) {
  CampaignConfig cfg = o.config.empty() ? CampaignConfig{} : load_config(o.config);
  if (o.seed) cfg.seed = *o.seed;
  if (o.runs) cfg.runs = *o.runs;
  if (o.variants) cfg.variants = parse_variants(*o.variants);
  if (o.no_gate) std::erase_if(cfg.variants, [](const Variant& v) { return v.gated; });
  cfg.validate();
  return cfg;
}

ProgressFn progress(bool quiet) {
  if (quiet) return {};
  return [](const char* phase, int done, int total) {
    std::fprintf(stderr, "\r%-8s %d/%d", phase, done, total);
    if (done == total) std::fputc('\n', stderr);
  };
}

/// Paths and tensors for every step of the first --runs runs (default 1).
int cmd_simulate(const Options& o) {
  CampaignConfig cfg = load(o);
  const int runs = o.runs.value_or(1);
  const fs::path root = fs::path(o.out) / "sim" / std::to_string(cfg.seed);
  for (int r = 0; r < runs; ++r) {
    const fs::path dir = root / std::to_string(r);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    const fs::path index = dir / "paths.jsonl";
    std::ofstream os(index);
    if (!os) throw IoError("cannot open " + index.string() + " for writing");
    const auto truth = truth_trajectory(cfg, r);
    for (std::size_t k = 0; k < truth.size(); ++k) {
      const StepSeeds seeds = step_seeds(cfg.seed, r, int(k));
      const StepObservation obs = observe(cfg, truth[k], seeds);
      nlohmann::json paths = nlohmann::json::array();
      for (const auto& p : obs.paths)
        paths.push_back({{"toa", p.toa},
                         {"az", p.aoa_az},
                         {"el", p.aoa_el},
                         {"gain", {p.gain.real(), p.gain.imag()}},
                         {"bounces", p.bounce_count},
                         {"los", p.is_los}});
      const std::string stem = "step" + std::to_string(k);
      write_tensor((dir / (stem + "_rsu.bin")).string(), obs.rsu);
      write_tensor((dir / (stem + "_cru.bin")).string(), obs.cru);
      os << nlohmann::json{{"step", k},
                           {"truth", {truth[k].x(), truth[k].y(), truth[k].z()}},
                           {"seeds", {{"tensor", seeds.tensor}, {"cru", seeds.cru}}},
                           {"clock_bias", obs.clock_bias},
                           {"paths", paths}}
                .dump()
         << '\n';
    }
    if (!os) throw IoError("write failed: " + index.string());
  }
  if (!o.quiet) std::fprintf(stderr, "wrote %s\n", root.string().c_str());
  return 0;
}

int cmd_track(const Options& o) {
  const CampaignConfig cfg = load(o);
  const CampaignResult res = run_campaign(cfg, progress(o.quiet));
  const MetricsTable t = compute_metrics(cfg, res.runs);
  write_run_logs(o.out, cfg, res.runs);
  emit(o.out, cfg, res.runs, t, res.elapsed_s);
  if (!o.quiet) std::cout << summary_text(cfg, res.runs, t, res.elapsed_s);
  return 0;
}

int cmd_report(const Options& o) {
  LoadedLogs logs = read_run_logs(o.out, o.seed);
  const MetricsTable t = compute_metrics(logs.config, logs.runs);
  emit(o.out, logs.config, logs.runs, t);
  if (!o.quiet) std::cout << summary_text(logs.config, logs.runs, t);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sidelink V2X tracking campaigns"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub, bool campaign) {
    sub->add_option("--out", o.out, "Output directory")->capture_default_str();
    sub->add_option("--seed", o.seed, "Campaign seed (u64)");
    sub->add_flag("--quiet", o.quiet, "No progress or summary on the terminal");
    if (!campaign) return;
    sub->add_option("--config", o.config, "INI or JSON config file");
    sub->add_option("--runs", o.runs, "Monte Carlo runs")->check(CLI::PositiveNumber);
    sub->add_option("--variants", o.variants,
                    "Comma list, e.g. EECLB-LOS:gated,BM1,BM3 (bare name: both gating modes)");
    sub->add_flag("--no-gate", o.no_gate, "Drop gated variants");
  };
  auto* simulate = app.add_subcommand("simulate", "Dump true paths and tensors (debug)");
  auto* track = app.add_subcommand("track", "Run a full campaign");
  auto* report = app.add_subcommand("report", "Recompute tables from step logs in --out");
  common(simulate, true);
  common(track, true);
  common(report, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*simulate) return cmd_simulate(o);
    if (*track) return cmd_track(o);
    if (*report) return cmd_report(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "I/O error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
