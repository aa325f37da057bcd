// Campaign configuration: parameter groups, variant selection, INI/JSON
// loading with schema validation.
//
// INI layout (every key optional, defaults shown in configs/default.ini):
//
//   [campaign]   runs, seed, threads, variants
//   [trajectory] start_y, end_y, speed, lane_x, antenna_height, epoch, process_noise
//   [scene]      rsu_position, rsu_orientation_deg, buildings, wall_reflection,
//                ground_reflection, los_only
//   [array]      n_x, n_z, spacing
//   [ofdm]       subcarriers, subcarrier_spacing, symbols, carrier_freq, tx_power_dbm,
//                noise_psd_dbm_hz, noise_figure_db, noise_scale
//   [rtt]        processing_time, clock_bias_max, cru_toa_model
//   [sa]         aug_x, aug_z, max_rank, als_max_iters, als_tol, restarts,
//                rank_improvement, energy_floor_db, dynamic_range_db,
//                angle_grid_step_deg, refine_toa
//   [tracker]    period, sigma_a, gate_beta, gate_resolution_floor, prior_std, nominal_speed,
//                draw_prior, link_combination, mse_scalar, planar
//
// A JSON file with the same sections as objects is accepted too.
#pragma once

#include "sidelink/chest.hpp"
#include "sidelink/core.hpp"
#include "sidelink/crlb.hpp"
#include "sidelink/scene.hpp"
#include "sidelink/tracker.hpp"
#include "sidelink/waveform.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace sidelink {

// ---------------------------------------------------------------------------
// Variants

enum class Method { kEeclbLos, kEeclbNlos, kBm1, kBm2, kBm3, kBm4 };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::kEeclbLos: return "EECLB-LOS";
    case Method::kEeclbNlos: return "EECLB-NLOS";
    case Method::kBm1: return "BM1";
    case Method::kBm2: return "BM2";
    case Method::kBm3: return "BM3";
    case Method::kBm4: return "BM4";
  }
  return "?";
}

/// Methods that run the Kalman filter (and therefore can gate).
inline bool is_tracking(Method m) { return m != Method::kBm3 && m != Method::kBm4; }

/// A method plus gating mode. BM3 and BM4 have no predicted density to gate
/// with, so they always carry gated = false and are named without a suffix.
struct Variant {
  Method method = Method::kEeclbLos;
  bool gated = false;

  std::string name() const {
    std::string n = to_string(method);
    if (is_tracking(method)) n += gated ? ":gated" : ":ungated";
    return n;
  }
  auto operator<=>(const Variant&) const = default;
};

inline std::vector<Variant> all_variants() {
  std::vector<Variant> v;
  for (Method m : {Method::kEeclbLos, Method::kEeclbNlos, Method::kBm1, Method::kBm2}) {
    v.push_back({m, true});
    v.push_back({m, false});
  }
  v.push_back({Method::kBm3, false});
  v.push_back({Method::kBm4, false});
  return v;
}

/// Parses a comma-separated list such as "EECLB-LOS:gated, BM1, BM3". A bare
/// tracking method selects both gating modes; "all" selects everything; an
/// empty string selects nothing. Output is deduplicated in canonical order.
inline std::vector<Variant> parse_variants(const std::string& list) {
  std::vector<Variant> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(std::remove_if(item.begin(), item.end(), [](unsigned char c) { return std::isspace(c); }),
               item.end());
    if (item.empty()) continue;
    if (item == "all") {
      auto a = all_variants();
      out.insert(out.end(), a.begin(), a.end());
      continue;
    }
    std::string method = item, mode;
    if (const auto colon = item.find(':'); colon != std::string::npos) {
      method = item.substr(0, colon);
      mode = item.substr(colon + 1);
    }
    std::optional<Method> m;
    for (Method c : {Method::kEeclbLos, Method::kEeclbNlos, Method::kBm1, Method::kBm2,
                     Method::kBm3, Method::kBm4})
      if (method == to_string(c)) m = c;
    if (!m) throw ConfigError("unknown variant '" + item + "'");
    if (!mode.empty() && mode != "gated" && mode != "ungated")
      throw ConfigError("unknown gating mode in '" + item + "'");
    if (!is_tracking(*m)) {
      out.push_back({*m, false});
    } else {
      if (mode.empty() || mode == "gated") out.push_back({*m, true});
      if (mode.empty() || mode == "ungated") out.push_back({*m, false});
    }
  }
  const auto canonical = all_variants();
  std::sort(out.begin(), out.end(), [&](const Variant& a, const Variant& b) {
    return std::find(canonical.begin(), canonical.end(), a) <
           std::find(canonical.begin(), canonical.end(), b);
  });
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline std::string join_variants(const std::vector<Variant>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i].name();
  return s;
}

// ---------------------------------------------------------------------------
// Parameter groups

struct TrajectoryConfig {
  double start_y = -70.0;       // [m]
  double end_y = 70.0;          // [m]
  double speed = 14.0;          // [m/s] along +y (sign follows end_y - start_y)
  double lane_x = 1.6;          // [m]
  double antenna_height = 1.5;  // [m]
  double epoch = 0.1;           // measurement interval [s]
  /// Drive the truth with the motion model's acceleration noise. Off: the
  /// truth moves at exactly constant velocity.
  bool process_noise = false;

  int steps() const {
    return int(std::lround(std::abs(end_y - start_y) / (speed * epoch))) + 1;
  }
  double direction() const { return end_y >= start_y ? 1.0 : -1.0; }
  Vec3 start_position() const { return Vec3(lane_x, start_y, antenna_height); }
  Vec3 start_velocity() const { return Vec3(0.0, direction() * speed, 0.0); }
  /// Nominal (noise-free) y at measurement epoch k.
  double nominal_y(int k) const { return start_y + direction() * speed * epoch * k; }

  void validate() const {
    if (!(speed > 0.0)) throw InvalidInput("trajectory.speed must be positive");
    if (!(epoch > 0.0)) throw InvalidInput("trajectory.epoch must be positive");
    if (!(antenna_height > 0.0)) throw InvalidInput("trajectory.antenna_height must be positive");
    if (!std::isfinite(start_y) || !std::isfinite(end_y) || !std::isfinite(lane_x))
      throw InvalidInput("trajectory endpoints must be finite");
  }
};

/// Source of the CRU-side one-way delay.
enum class CruToaModel {
  kCrb,        // first true path delay + Gaussian error at the single-path delay CRB
  kEstimator,  // delay-only channel estimation on the CRU's single-antenna tensor
};

struct RttConfig {
  double processing_time = 0.5e-3;  // [s]
  double clock_bias_max = 1e-3;     // bias ~ U[-max, max] per epoch [s]
  CruToaModel cru_toa_model = CruToaModel::kCrb;

  void validate() const {
    if (!(processing_time >= 0.0)) throw InvalidInput("rtt.processing_time must be >= 0");
    if (!(clock_bias_max >= 0.0)) throw InvalidInput("rtt.clock_bias_max must be >= 0");
  }
};

struct TrackerConfig {
  double period = 0.01;   // T [s]
  double sigma_a = 0.1;   // [m/s^2]
  double gate_beta = kDefaultGateBeta;
  /// Widen the gate to at least half a resolution cell (resolution_floor).
  /// Off: U = M P M^T exactly.
  bool gate_resolution_floor = true;
  PriorConfig prior;
  /// Offset the prior mean by a draw from the prior covariance each run.
  bool draw_prior = true;
  LinkCombination links = LinkCombination::kSum;
  bool mse_scalar = false;
  bool planar = true;

  MotionModel motion() const { return MotionModel::constant_velocity(period, sigma_a); }

  void validate() const {
    motion();
    if (!(gate_beta > 0.0)) throw InvalidInput("tracker.gate_beta must be positive");
    if (!(prior.std_dev.array() > 0.0).all())
      throw InvalidInput("tracker.prior_std entries must be positive");
  }
};

struct SceneConfig {
  RsuState rsu;
  SceneGeometry geometry = SceneGeometry::intersection();
  /// Keep only the LoS path (debugging and noiseless checks).
  bool los_only = false;

  void validate() const {
    rsu.validate();
    geometry.validate();
  }
};

struct ArraySpec {
  int n_x = 4;
  int n_z = 2;
  double spacing = 0.5;  // [wavelengths]

  ArrayConfig build(double wavelength) const {
    return {n_x, n_z, spacing * wavelength, spacing * wavelength, wavelength};
  }
};

struct CampaignConfig {
  int runs = 100;
  std::uint64_t seed = 1;
  int threads = 0;  // 0: hardware concurrency
  std::vector<Variant> variants = all_variants();

  TrajectoryConfig trajectory;
  SceneConfig scene;
  ArraySpec array;
  OfdmConfig ofdm;
  /// Multiplies the physical noise variance; 0 gives noiseless tensors.
  double noise_scale = 1.0;
  RttConfig rtt;
  SaConfig sa;
  TrackerConfig tracker;

  ArrayConfig array_config() const { return array.build(ofdm.wavelength()); }
  double noise_variance() const { return noise_scale * ofdm.effective_noise_variance(); }
  int substeps() const { return int(std::lround(trajectory.epoch / tracker.period)); }

  /// Throws ConfigError naming the offending group.
  void validate() const {
    auto check = [](const char* group, const auto& fn) {
      try {
        fn();
      } catch (const InvalidInput& e) {
        throw ConfigError(std::string(group) + ": " + e.what());
      }
    };
    if (runs < 1) throw ConfigError("campaign.runs: must be >= 1");
    if (threads < 0) throw ConfigError("campaign.threads: must be >= 0");
    check("trajectory", [&] { trajectory.validate(); });
    check("scene", [&] { scene.validate(); });
    check("ofdm", [&] { ofdm.validate(); });
    check("array", [&] {
      if (!(array.spacing > 0.0)) throw InvalidInput("spacing must be positive");
      array_config().validate();
    });
    if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale))
      throw ConfigError("ofdm.noise_scale: must be finite and >= 0");
    check("rtt", [&] { rtt.validate(); });
    check("sa", [&] { sa.validate(ofdm.subcarriers); });
    check("tracker", [&] { tracker.validate(); });
    const double ratio = trajectory.epoch / tracker.period;
    if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio || std::round(ratio) < 1)
      throw ConfigError("trajectory.epoch: must be a positive multiple of tracker.period");
    for (int k = 0; k < trajectory.steps(); ++k) {
      Vec3 p = trajectory.start_position();
      p.y() = trajectory.nominal_y(k);
      for (const Box& b : scene.geometry.buildings)
        if (b.contains(p)) throw ConfigError("trajectory: lane passes through a building");
    }
  }
};

// ---------------------------------------------------------------------------
// Value parsing

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n\"");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n\"");
  return s.substr(b, e - b + 1);
}

inline double parse_double(const std::string& raw, const std::string& where) {
  const std::string s = trim(raw);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
    throw ConfigError(where + ": expected a number, got '" + raw + "'");
  return v;
}

inline long long parse_integer(const std::string& raw, const std::string& where) {
  const std::string s = trim(raw);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
    throw ConfigError(where + ": expected an integer, got '" + raw + "'");
  return v;
}

inline int parse_int(const std::string& raw, const std::string& where) {
  const long long v = parse_integer(raw, where);
  if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max())
    throw ConfigError(where + ": integer out of range");
  return int(v);
}

inline std::uint64_t parse_u64(const std::string& raw, const std::string& where) {
  const std::string s = trim(raw);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
    throw ConfigError(where + ": expected an unsigned 64-bit integer, got '" + raw + "'");
  return v;
}

inline bool parse_bool(const std::string& raw, const std::string& where) {
  std::string s = trim(raw);
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(where + ": expected a boolean, got '" + raw + "'");
}

inline std::vector<double> parse_list(const std::string& raw, const std::string& where) {
  std::string s = raw;
  std::replace(s.begin(), s.end(), ',', ' ');
  std::stringstream ss(s);
  std::vector<double> out;
  std::string tok;
  while (ss >> tok) out.push_back(parse_double(tok, where));
  return out;
}

template <int N>
Eigen::Matrix<double, N, 1> parse_vec(const std::string& raw, const std::string& where) {
  const auto v = parse_list(raw, where);
  if (int(v.size()) != N)
    throw ConfigError(where + ": expected " + std::to_string(N) + " numbers, got " +
                      std::to_string(v.size()));
  Eigen::Matrix<double, N, 1> out;
  for (int i = 0; i < N; ++i) out[i] = v[i];
  return out;
}

/// "magnitude, phase_deg".
inline cplx parse_polar(const std::string& raw, const std::string& where) {
  const Vec2 v = parse_vec<2>(raw, where);
  return std::polar(v[0], deg2rad(v[1]));
}

/// "intersection", "none", or "cx cy cz ex ey ez; ...".
inline std::vector<Box> parse_buildings(const std::string& raw, const std::string& where) {
  const std::string s = trim(raw);
  if (s == "intersection") return SceneGeometry::intersection().buildings;
  if (s == "none" || s.empty()) return {};
  std::vector<Box> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (trim(item).empty()) continue;
    const auto v = parse_list(item, where);
    if (v.size() != 6)
      throw ConfigError(where + ": each building needs 6 numbers (center, extents)");
    out.push_back({Vec3(v[0], v[1], v[2]), Vec3(v[3], v[4], v[5])});
  }
  return out;
}

inline LinkCombination parse_links(const std::string& raw, const std::string& where) {
  const std::string s = trim(raw);
  if (s == "sum") return LinkCombination::kSum;
  if (s == "average") return LinkCombination::kAverage;
  throw ConfigError(where + ": expected 'sum' or 'average', got '" + raw + "'");
}

using Setter = std::function<void(CampaignConfig&, const std::string& value, const std::string& where)>;

inline const std::map<std::string, Setter>& schema() {
  static const std::map<std::string, Setter> s = [] {
    std::map<std::string, Setter> m;
    auto dbl = [&](const std::string& key, auto member) {
      m[key] = [member](CampaignConfig& c, const std::string& v, const std::string& w) {
        member(c) = parse_double(v, w);
      };
    };
    auto integer = [&](const std::string& key, auto member) {
      m[key] = [member](CampaignConfig& c, const std::string& v, const std::string& w) {
        member(c) = parse_int(v, w);
      };
    };
    auto boolean = [&](const std::string& key, auto member) {
      m[key] = [member](CampaignConfig& c, const std::string& v, const std::string& w) {
        member(c) = parse_bool(v, w);
      };
    };
    using C = CampaignConfig;
    integer("campaign.runs", [](C& c) -> int& { return c.runs; });
    m["campaign.seed"] = [](C& c, const std::string& v, const std::string& w) {
      c.seed = parse_u64(v, w);
    };
    integer("campaign.threads", [](C& c) -> int& { return c.threads; });
    m["campaign.variants"] = [](C& c, const std::string& v, const std::string& w) {
      try {
        c.variants = parse_variants(v);
      } catch (const ConfigError& e) {
        throw ConfigError(w + ": " + e.what());
      }
    };

    dbl("trajectory.start_y", [](C& c) -> double& { return c.trajectory.start_y; });
    dbl("trajectory.end_y", [](C& c) -> double& { return c.trajectory.end_y; });
    dbl("trajectory.speed", [](C& c) -> double& { return c.trajectory.speed; });
    dbl("trajectory.lane_x", [](C& c) -> double& { return c.trajectory.lane_x; });
    dbl("trajectory.antenna_height", [](C& c) -> double& { return c.trajectory.antenna_height; });
    dbl("trajectory.epoch", [](C& c) -> double& { return c.trajectory.epoch; });
    boolean("trajectory.process_noise", [](C& c) -> bool& { return c.trajectory.process_noise; });

    m["scene.rsu_position"] = [](C& c, const std::string& v, const std::string& w) {
      c.scene.rsu.position = parse_vec<3>(v, w);
    };
    m["scene.rsu_orientation_deg"] = [](C& c, const std::string& v, const std::string& w) {
      const Vec3 d = parse_vec<3>(v, w);
      c.scene.rsu.orientation = Vec3(deg2rad(d[0]), deg2rad(d[1]), deg2rad(d[2]));
    };
    m["scene.buildings"] = [](C& c, const std::string& v, const std::string& w) {
      c.scene.geometry.buildings = parse_buildings(v, w);
    };
    m["scene.wall_reflection"] = [](C& c, const std::string& v, const std::string& w) {
      c.scene.geometry.wall_reflection = parse_polar(v, w);
    };
    m["scene.ground_reflection"] = [](C& c, const std::string& v, const std::string& w) {
      c.scene.geometry.ground_reflection = parse_polar(v, w);
    };
    boolean("scene.los_only", [](C& c) -> bool& { return c.scene.los_only; });

    integer("array.n_x", [](C& c) -> int& { return c.array.n_x; });
    integer("array.n_z", [](C& c) -> int& { return c.array.n_z; });
    dbl("array.spacing", [](C& c) -> double& { return c.array.spacing; });

    integer("ofdm.subcarriers", [](C& c) -> int& { return c.ofdm.subcarriers; });
    dbl("ofdm.subcarrier_spacing", [](C& c) -> double& { return c.ofdm.subcarrier_spacing; });
    integer("ofdm.symbols", [](C& c) -> int& { return c.ofdm.symbols; });
    dbl("ofdm.carrier_freq", [](C& c) -> double& { return c.ofdm.carrier_freq; });
    dbl("ofdm.tx_power_dbm", [](C& c) -> double& { return c.ofdm.tx_power_dbm; });
    dbl("ofdm.noise_psd_dbm_hz", [](C& c) -> double& { return c.ofdm.noise_psd_dbm_hz; });
    dbl("ofdm.noise_figure_db", [](C& c) -> double& { return c.ofdm.noise_figure_db; });
    dbl("ofdm.noise_scale", [](C& c) -> double& { return c.noise_scale; });

    dbl("rtt.processing_time", [](C& c) -> double& { return c.rtt.processing_time; });
    dbl("rtt.clock_bias_max", [](C& c) -> double& { return c.rtt.clock_bias_max; });
    m["rtt.cru_toa_model"] = [](C& c, const std::string& v, const std::string& w) {
      const std::string s = trim(v);
      if (s == "crb") c.rtt.cru_toa_model = CruToaModel::kCrb;
      else if (s == "estimator") c.rtt.cru_toa_model = CruToaModel::kEstimator;
      else throw ConfigError(w + ": expected 'crb' or 'estimator', got '" + v + "'");
    };

    integer("sa.aug_x", [](C& c) -> int& { return c.sa.aug_x; });
    integer("sa.aug_z", [](C& c) -> int& { return c.sa.aug_z; });
    integer("sa.max_rank", [](C& c) -> int& { return c.sa.max_rank; });
    integer("sa.als_max_iters", [](C& c) -> int& { return c.sa.als_max_iters; });
    dbl("sa.als_tol", [](C& c) -> double& { return c.sa.als_tol; });
    integer("sa.restarts", [](C& c) -> int& { return c.sa.restarts; });
    dbl("sa.rank_improvement", [](C& c) -> double& { return c.sa.rank_improvement; });
    dbl("sa.energy_floor_db", [](C& c) -> double& { return c.sa.energy_floor_db; });
    dbl("sa.dynamic_range_db", [](C& c) -> double& { return c.sa.dynamic_range_db; });
    m["sa.angle_grid_step_deg"] = [](C& c, const std::string& v, const std::string& w) {
      c.sa.angle_grid_step = deg2rad(parse_double(v, w));
    };
    boolean("sa.refine_toa", [](C& c) -> bool& { return c.sa.refine_toa; });

    dbl("tracker.period", [](C& c) -> double& { return c.tracker.period; });
    dbl("tracker.sigma_a", [](C& c) -> double& { return c.tracker.sigma_a; });
    dbl("tracker.gate_beta", [](C& c) -> double& { return c.tracker.gate_beta; });
    boolean("tracker.gate_resolution_floor",
            [](C& c) -> bool& { return c.tracker.gate_resolution_floor; });
    m["tracker.prior_std"] = [](C& c, const std::string& v, const std::string& w) {
      c.tracker.prior.std_dev = parse_vec<6>(v, w);
    };
    dbl("tracker.nominal_speed", [](C& c) -> double& { return c.tracker.prior.nominal_speed; });
    boolean("tracker.draw_prior", [](C& c) -> bool& { return c.tracker.draw_prior; });
    m["tracker.link_combination"] = [](C& c, const std::string& v, const std::string& w) {
      c.tracker.links = parse_links(v, w);
    };
    boolean("tracker.mse_scalar", [](C& c) -> bool& { return c.tracker.mse_scalar; });
    boolean("tracker.planar", [](C& c) -> bool& { return c.tracker.planar; });
    return m;
  }();
  return s;
}

/// JSON value to the INI string form the schema parses.
inline std::string json_scalar(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_unsigned()) return std::to_string(v.get<std::uint64_t>());
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  if (v.is_number_float()) return v.dump();
  if (v.is_array()) {
    std::string s;
    const bool nested = !v.empty() && v.front().is_array();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += nested ? "; " : ", ";
      if (nested) {
        for (std::size_t j = 0; j < v[i].size(); ++j) s += (j ? " " : "") + json_scalar(v[i][j]);
      } else {
        s += json_scalar(v[i]);
      }
    }
    return s;
  }
  throw ConfigError("unsupported JSON value " + v.dump());
}

}  // namespace detail

/// Applies every key of `tree` (sections of key = value) on top of the
/// defaults, then validates. `source` prefixes error locations.
inline CampaignConfig config_from_tree(const boost::property_tree::ptree& tree,
                                       const std::string& source = "config") {
  CampaignConfig cfg;
  const auto& schema = detail::schema();
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty())
      throw ConfigError(source + ": " + section + ": key outside of any section");
    for (const auto& [key, value] : body) {
      const std::string loc = section + "." + key;
      const auto it = schema.find(loc);
      if (it == schema.end()) throw ConfigError(source + ": " + loc + ": unknown key");
      try {
        it->second(cfg, value.data(), loc);
      } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + e.what());
      }
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

inline CampaignConfig config_from_ini_string(const std::string& text,
                                             const std::string& source = "config") {
  boost::property_tree::ptree tree;
  std::istringstream is(text);
  try {
    boost::property_tree::ini_parser::read_ini(is, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(source + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  return config_from_tree(tree, source);
}

inline CampaignConfig config_from_json(const nlohmann::json& j, const std::string& source = "config") {
  if (!j.is_object()) throw ConfigError(source + ": top level must be an object");
  boost::property_tree::ptree tree;
  for (const auto& [section, body] : j.items()) {
    if (!body.is_object()) throw ConfigError(source + ": " + section + ": expected an object");
    boost::property_tree::ptree sec;
    for (const auto& [key, value] : body.items()) {
      try {
        sec.push_back({key, boost::property_tree::ptree(detail::json_scalar(value))});
      } catch (const ConfigError& e) {
        throw ConfigError(source + ": " + section + "." + key + ": " + e.what());
      }
    }
    tree.push_back({section, sec});
  }
  return config_from_tree(tree, source);
}

/// Loads an INI file, or JSON when the extension is .json.
inline CampaignConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  if (std::filesystem::path(path).extension() == ".json") {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(path + ": " + e.what());
    }
    return config_from_json(j, path);
  }
  return config_from_ini_string(ss.str(), path);
}

/// Full config as JSON in the layout config_from_json accepts.
inline nlohmann::json to_json(const CampaignConfig& c) {
  using nlohmann::json;
  auto vec = [](const auto& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
  };
  auto polar = [](cplx z) { return json::array({std::abs(z), rad2deg(std::arg(z))}); };
  json buildings = json::array();
  for (const Box& b : c.scene.geometry.buildings)
    buildings.push_back({b.center.x(), b.center.y(), b.center.z(), b.extents.x(), b.extents.y(),
                         b.extents.z()});
  json j;
  j["campaign"] = {{"runs", c.runs},
                   {"seed", c.seed},
                   {"threads", c.threads},
                   {"variants", join_variants(c.variants)}};
  j["trajectory"] = {{"start_y", c.trajectory.start_y},
                     {"end_y", c.trajectory.end_y},
                     {"speed", c.trajectory.speed},
                     {"lane_x", c.trajectory.lane_x},
                     {"antenna_height", c.trajectory.antenna_height},
                     {"epoch", c.trajectory.epoch},
                     {"process_noise", c.trajectory.process_noise}};
  const Vec3 orient_deg = c.scene.rsu.orientation.unaryExpr([](double a) { return rad2deg(a); });
  j["scene"] = {{"rsu_position", vec(c.scene.rsu.position)},
                {"rsu_orientation_deg", vec(orient_deg)},
                {"buildings", buildings.empty() ? json("none") : buildings},
                {"wall_reflection", polar(c.scene.geometry.wall_reflection)},
                {"ground_reflection", polar(c.scene.geometry.ground_reflection)},
                {"los_only", c.scene.los_only}};
  j["array"] = {{"n_x", c.array.n_x}, {"n_z", c.array.n_z}, {"spacing", c.array.spacing}};
  j["ofdm"] = {{"subcarriers", c.ofdm.subcarriers},
               {"subcarrier_spacing", c.ofdm.subcarrier_spacing},
               {"symbols", c.ofdm.symbols},
               {"carrier_freq", c.ofdm.carrier_freq},
               {"tx_power_dbm", c.ofdm.tx_power_dbm},
               {"noise_psd_dbm_hz", c.ofdm.noise_psd_dbm_hz},
               {"noise_figure_db", c.ofdm.noise_figure_db},
               {"noise_scale", c.noise_scale}};
  j["rtt"] = {{"processing_time", c.rtt.processing_time},
              {"clock_bias_max", c.rtt.clock_bias_max},
              {"cru_toa_model", c.rtt.cru_toa_model == CruToaModel::kCrb ? "crb" : "estimator"}};
  j["sa"] = {{"aug_x", c.sa.aug_x},
             {"aug_z", c.sa.aug_z},
             {"max_rank", c.sa.max_rank},
             {"als_max_iters", c.sa.als_max_iters},
             {"als_tol", c.sa.als_tol},
             {"restarts", c.sa.restarts},
             {"rank_improvement", c.sa.rank_improvement},
             {"energy_floor_db", c.sa.energy_floor_db},
             {"dynamic_range_db", c.sa.dynamic_range_db},
             {"angle_grid_step_deg", rad2deg(c.sa.angle_grid_step)},
             {"refine_toa", c.sa.refine_toa}};
  j["tracker"] = {{"period", c.tracker.period},
                  {"sigma_a", c.tracker.sigma_a},
                  {"gate_beta", c.tracker.gate_beta},
                  {"gate_resolution_floor", c.tracker.gate_resolution_floor},
                  {"prior_std", vec(c.tracker.prior.std_dev)},
                  {"nominal_speed", c.tracker.prior.nominal_speed},
                  {"draw_prior", c.tracker.draw_prior},
                  {"link_combination",
                   c.tracker.links == LinkCombination::kSum ? "sum" : "average"},
                  {"mse_scalar", c.tracker.mse_scalar},
                  {"planar", c.tracker.planar}};
  return j;
}

}  // namespace sidelink
