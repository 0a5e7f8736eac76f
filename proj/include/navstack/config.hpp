#pragma once

// Run configuration shared by the CLI and the end-to-end pipeline. Values come
// from the defaults below, then an optional key=value file, then flags.

#include <charconv>
#include <cstdint>
#include <string>
#include <string_view>

#include "navstack/controller.hpp"
#include "navstack/error.hpp"
#include "navstack/gridmap.hpp"
#include "navstack/planner.hpp"
#include "navstack/sim.hpp"

namespace navstack {

struct RunConfig {
  double cell_size = kDefaultCellSize;
  int padding = kDefaultPadding;
  Connectivity connectivity = Connectivity::FourConnected;
  bool snap = false;

  ControllerParams controller;
  LidarConfig lidar;

  double dt = kDefaultDt;
  VehicleParams vehicle;
  int max_steps = 20000;
  std::uint64_t seed = 0;
  double start_jitter_xy = 0.05;     // meters, uniform +- around the start cell center
  double start_jitter_theta = 0.1;   // radians, uniform +- around the path direction

  std::string host = "127.0.0.1";
  unsigned short port = 8080;
  double position_rate_hz = 10.0;
  double replay_speed = 1.0;

  void validate() const {
    const auto positive = [](double v, const char* name) {
      if (!(v > 0.0)) throw Error(Errc::InvalidArgument, std::string(name) + " must be positive");
    };
    positive(cell_size, "cell_size");
    if (padding < 0) throw Error(Errc::InvalidArgument, "padding must be non-negative");
    controller.validate();
    positive(lidar.sector, "lidar_sector");
    positive(lidar.max_range, "lidar_max_range");
    if (lidar.n_rays < 1) throw Error(Errc::InvalidArgument, "lidar_rays must be at least 1");
    if (!(dt > 0.0 && dt <= kMaxDt)) throw Error(Errc::InvalidArgument, "dt must lie in (0, 0.5]");
    positive(vehicle.track_width, "track_width");
    positive(vehicle.v_max, "v_max");
    positive(vehicle.omega_max, "omega_max");
    if (!(vehicle.asymmetry >= 0.0)) throw Error(Errc::InvalidArgument, "asymmetry must be non-negative");
    if (max_steps < 1) throw Error(Errc::InvalidArgument, "max_steps must be at least 1");
    if (!(start_jitter_xy >= 0.0) || !(start_jitter_theta >= 0.0)) {
      throw Error(Errc::InvalidArgument, "start jitter must be non-negative");
    }
    positive(position_rate_hz, "position_rate_hz");
    if (!(replay_speed >= 0.0)) throw Error(Errc::InvalidArgument, "replay_speed must be non-negative");
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) {
    throw Error(Errc::InvalidArgument, "bad value '" + std::string(text) + "' for " + std::string(key));
  }
  return value;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw Error(Errc::InvalidArgument, "bad boolean '" + std::string(text) + "' for " + std::string(key));
}

}  // namespace detail

inline Connectivity parse_connectivity(std::string_view text) {
  if (text == "4") return Connectivity::FourConnected;
  if (text == "8") return Connectivity::EightConnected;
  throw Error(Errc::InvalidArgument, "connectivity must be 4 or 8");
}

/// Applies one setting. Unknown keys are rejected.
inline void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
  using detail::parse_number;
  if (key == "cell_size") cfg.cell_size = parse_number<double>(key, value);
  else if (key == "padding") cfg.padding = parse_number<int>(key, value);
  else if (key == "connectivity") cfg.connectivity = parse_connectivity(value);
  else if (key == "snap") cfg.snap = detail::parse_bool(key, value);
  else if (key == "lookahead") cfg.controller.lookahead = parse_number<double>(key, value);
  else if (key == "goal_tolerance") cfg.controller.goal_tolerance = parse_number<double>(key, value);
  else if (key == "stop_distance") cfg.controller.stop_distance = parse_number<double>(key, value);
  else if (key == "turn_gain") cfg.controller.turn_gain = parse_number<double>(key, value);
  else if (key == "cruise_speed") cfg.controller.cruise_speed = parse_number<double>(key, value);
  else if (key == "clip_range") cfg.controller.clip_range = parse_number<double>(key, value);
  else if (key == "lidar_sector") cfg.lidar.sector = parse_number<double>(key, value);
  else if (key == "lidar_rays") cfg.lidar.n_rays = parse_number<int>(key, value);
  else if (key == "lidar_max_range") cfg.lidar.max_range = parse_number<double>(key, value);
  else if (key == "dt") cfg.dt = parse_number<double>(key, value);
  else if (key == "asymmetry") cfg.vehicle.asymmetry = parse_number<double>(key, value);
  else if (key == "track_width") cfg.vehicle.track_width = parse_number<double>(key, value);
  else if (key == "v_max") cfg.vehicle.v_max = parse_number<double>(key, value);
  else if (key == "omega_max") {
    cfg.vehicle.omega_max = parse_number<double>(key, value);
    cfg.controller.omega_max = cfg.vehicle.omega_max;
  }
  else if (key == "max_steps") cfg.max_steps = parse_number<int>(key, value);
  else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "start_jitter_xy") cfg.start_jitter_xy = parse_number<double>(key, value);
  else if (key == "start_jitter_theta") cfg.start_jitter_theta = parse_number<double>(key, value);
  else if (key == "host") cfg.host = std::string(value);
  else if (key == "port") cfg.port = parse_number<unsigned short>(key, value);
  else if (key == "position_rate_hz") cfg.position_rate_hz = parse_number<double>(key, value);
  else if (key == "replay_speed") cfg.replay_speed = parse_number<double>(key, value);
  else throw Error(Errc::InvalidArgument, "unknown setting '" + std::string(key) + "'");
}

/// key=value lines; blank lines and '#' comments ignored.
inline void apply_config_text(RunConfig& cfg, std::string_view text) {
  int line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(Errc::InvalidArgument, "config line " + std::to_string(line_no) + ": expected key=value");
    }
    apply_setting(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
}

}  // namespace navstack
