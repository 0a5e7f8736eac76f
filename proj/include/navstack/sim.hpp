#pragma once

// Point-vehicle differential-drive simulation on an occupancy grid, with a
// ray-cast range sensor limited to a sector around the heading.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "navstack/error.hpp"
#include "navstack/geometry.hpp"
#include "navstack/gridmap.hpp"

namespace navstack {

struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;  // (-pi, pi], counterclockwise from +x

  Vec2 position() const { return {x, y}; }

  friend bool operator==(const Pose2D&, const Pose2D&) = default;
};

struct Command {
  double v = 0.0;
  double omega = 0.0;

  friend bool operator==(const Command&, const Command&) = default;
};

struct LidarScan {
  std::vector<double> angles;  // relative to heading, ascending
  std::vector<double> ranges;
  double max_range = 0.0;
};

struct LidarConfig {
  double sector = std::numbers::pi / 2.0;
  int n_rays = 90;
  double max_range = 8.0;
};

struct VehicleParams {
  double track_width = 0.5;
  double v_max = 1.0;
  double omega_max = std::numbers::pi / 2.0;
  double asymmetry = 0.0;  // right wheel runs (1 + asymmetry) times faster
};

struct SimState {
  Pose2D pose;
  std::shared_ptr<const OccupancyGrid> grid;
  VehicleParams vehicle;
  bool collided = false;
  double time = 0.0;
};

inline constexpr double kMaxDt = 0.5;
inline constexpr double kDefaultDt = 0.05;
inline constexpr double kMinRange = 1e-9;

inline SimState create_world(std::shared_ptr<const OccupancyGrid> grid, Pose2D start, VehicleParams vehicle = {}) {
  if (!grid) throw Error(Errc::InvalidArgument, "world needs a grid");
  if (!(vehicle.asymmetry >= 0.0) || !(vehicle.track_width > 0.0) || !(vehicle.v_max > 0.0) ||
      !(vehicle.omega_max > 0.0)) {
    throw Error(Errc::InvalidArgument, "vehicle parameters out of range");
  }
  if (!std::isfinite(start.theta)) throw Error(Errc::InvalidArgument, "heading must be finite");
  const GridIndex cell = world_to_cell(*grid, start.position());
  if (grid->occupied(cell)) throw Error(Errc::StartInObstacle, "start lies in an occupied cell");
  start.theta = wrap_angle(start.theta);
  return SimState{start, std::move(grid), vehicle, false, 0.0};
}

/// Body velocities actually produced by the wheels once the right-wheel gain
/// is applied.
inline Command apply_asymmetry(const Command& cmd, const VehicleParams& vehicle) {
  const double half = cmd.omega * vehicle.track_width / 2.0;
  const double v_left = cmd.v - half;
  const double v_right = (cmd.v + half) * (1.0 + vehicle.asymmetry);
  return {(v_left + v_right) / 2.0, (v_right - v_left) / vehicle.track_width};
}

/// One explicit-Euler step. A move into an occupied or off-grid cell is
/// undone and latches the collision flag; a collided vehicle never moves.
inline SimState step(SimState state, const Command& cmd, double dt) {
  if (!(dt > 0.0 && dt <= kMaxDt)) throw Error(Errc::InvalidDt, "dt must lie in (0, 0.5]");
  if (!(std::abs(cmd.v) <= state.vehicle.v_max) || !(std::abs(cmd.omega) <= state.vehicle.omega_max)) {
    throw Error(Errc::CommandOutOfLimits, "command exceeds vehicle limits");
  }
  state.time += dt;
  if (state.collided) return state;

  const Command actual = apply_asymmetry(cmd, state.vehicle);
  Pose2D next = state.pose;
  next.x += actual.v * std::cos(state.pose.theta) * dt;
  next.y += actual.v * std::sin(state.pose.theta) * dt;
  next.theta = wrap_angle(state.pose.theta + actual.omega * dt);

  const GridIndex cell{
      static_cast<int>(std::clamp<double>(std::floor((next.x - state.grid->origin().x) / state.grid->cell_size()), -1.0,
                                          static_cast<double>(state.grid->width()))),
      static_cast<int>(std::clamp<double>(std::floor((next.y - state.grid->origin().y) / state.grid->cell_size()), -1.0,
                                          static_cast<double>(state.grid->height())))};
  if (state.grid->blocked(cell)) {
    state.collided = true;
  } else {
    state.pose = next;
  }
  return state;
}

/// Distance from `origin` along world angle `angle` to the first boundary of
/// an occupied (or off-grid) cell, capped at max_range. Walks the grid cell by
/// cell; the starting cell never counts as a hit.
inline double cast_ray(const OccupancyGrid& grid, Vec2 origin, double angle, double max_range) {
  const double cs = grid.cell_size();
  const Vec2 o = grid.origin();
  const double fx = (origin.x - o.x) / cs;
  const double fy = (origin.y - o.y) / cs;
  if (!std::isfinite(fx) || !std::isfinite(fy)) return max_range;
  std::int64_t col = static_cast<std::int64_t>(std::floor(fx));
  std::int64_t row = static_cast<std::int64_t>(std::floor(fy));
  const auto blocked = [&](std::int64_t c, std::int64_t r) {
    return c < 0 || r < 0 || c >= grid.width() || r >= grid.height() ||
           grid.occupied({static_cast<int>(c), static_cast<int>(r)});
  };
  if (blocked(col, row)) return max_range;

  const double dx = std::cos(angle);
  const double dy = std::sin(angle);
  const int step_x = dx > 0.0 ? 1 : (dx < 0.0 ? -1 : 0);
  const int step_y = dy > 0.0 ? 1 : (dy < 0.0 ? -1 : 0);
  constexpr double inf = std::numeric_limits<double>::infinity();

  // Parametric distance to the next vertical / horizontal cell boundary,
  // recomputed from the boundary index each time so no error accumulates.
  const auto next_x = [&] {
    if (step_x == 0) return inf;
    const double boundary = o.x + static_cast<double>(step_x > 0 ? col + 1 : col) * cs;
    return (boundary - origin.x) / dx;
  };
  const auto next_y = [&] {
    if (step_y == 0) return inf;
    const double boundary = o.y + static_cast<double>(step_y > 0 ? row + 1 : row) * cs;
    return (boundary - origin.y) / dy;
  };

  for (;;) {
    const double tx = next_x();
    const double ty = next_y();
    double t;
    if (tx < ty) {
      t = tx;
      col += step_x;
    } else if (ty < tx) {
      t = ty;
      row += step_y;
    } else {
      // Exactly through a corner: the side cells are only touched at a point.
      t = tx;
      col += step_x;
      row += step_y;
    }
    if (!(t < max_range)) return max_range;
    if (blocked(col, row)) return std::max(t, kMinRange);
  }
}

/// Ray angles (relative to heading) for a sector scan.
inline std::vector<double> scan_angles(double sector, int n_rays) {
  if (!(sector > 0.0 && sector <= 2.0 * std::numbers::pi)) {
    throw Error(Errc::InvalidSector, "sector must lie in (0, 2pi]");
  }
  if (n_rays < 1) throw Error(Errc::InvalidRayCount, "at least one ray is required");
  std::vector<double> angles(static_cast<std::size_t>(n_rays));
  if (n_rays == 1) {
    angles[0] = 0.0;
    return angles;
  }
  const bool full_circle = sector >= 2.0 * std::numbers::pi;
  if (full_circle) {
    const double inc = sector / n_rays;
    for (int i = 0; i < n_rays; ++i) angles[i] = -std::numbers::pi + (i + 1) * inc;
    angles.back() = std::numbers::pi;
  } else {
    const double inc = sector / (n_rays - 1);
    for (int i = 0; i < n_rays; ++i) angles[i] = -sector / 2.0 + i * inc;
    angles.back() = sector / 2.0;
  }
  return angles;
}

inline LidarScan lidar_scan(const SimState& state, double sector, int n_rays, double max_range) {
  if (!(max_range > 0.0)) throw Error(Errc::InvalidArgument, "max_range must be positive");
  LidarScan scan;
  scan.angles = scan_angles(sector, n_rays);
  scan.max_range = max_range;
  scan.ranges.reserve(scan.angles.size());
  for (double a : scan.angles) {
    scan.ranges.push_back(cast_ray(*state.grid, state.pose.position(), state.pose.theta + a, max_range));
  }
  return scan;
}

inline LidarScan lidar_scan(const SimState& state, const LidarConfig& cfg = {}) {
  return lidar_scan(state, cfg.sector, cfg.n_rays, cfg.max_range);
}

struct TraceRecord {
  double t = 0.0;
  Pose2D pose;
  Command cmd;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

enum class Outcome { Reached, Collided, Timeout };

constexpr std::string_view to_string(Outcome o) {
  switch (o) {
    case Outcome::Reached: return "REACHED";
    case Outcome::Collided: return "COLLIDED";
    case Outcome::Timeout: return "TIMEOUT";
  }
  return "UNKNOWN";
}

struct Episode {
  std::vector<TraceRecord> trace;
  SimState final_state;
  Outcome outcome = Outcome::Timeout;
};

/// Runs `controller(pose, scan) -> std::optional<Command>` in closed loop;
/// an empty optional means the controller is done. Stops on done, collision
/// or after max_steps steps.
template <typename Controller>
Episode run_episode(SimState state, Controller&& controller, double dt, int max_steps,
                    const LidarConfig& lidar = {}) {
  if (max_steps < 1) throw Error(Errc::InvalidArgument, "max_steps must be at least 1");
  Episode ep;
  for (int i = 0;; ++i) {
    const LidarScan scan = lidar_scan(state, lidar);
    const std::optional<Command> cmd = controller(state.pose, scan);
    if (!cmd) {
      ep.outcome = Outcome::Reached;
      break;
    }
    if (i == max_steps) {
      ep.outcome = Outcome::Timeout;
      break;
    }
    state = step(std::move(state), *cmd, dt);
    ep.trace.push_back({state.time, state.pose, *cmd});
    if (state.collided) {
      ep.outcome = Outcome::Collided;
      break;
    }
  }
  ep.final_state = std::move(state);
  return ep;
}

/// One trace line: {"t":..,"pose":[x,y,theta],"cmd":[v,omega]}.
inline std::string encode_trace_record(const TraceRecord& r) {
  nlohmann::ordered_json j;
  j["t"] = r.t;
  j["pose"] = {r.pose.x, r.pose.y, r.pose.theta};
  j["cmd"] = {r.cmd.v, r.cmd.omega};
  return j.dump();
}

inline std::string encode_trace(const std::vector<TraceRecord>& trace) {
  std::string out;
  for (const auto& r : trace) {
    out += encode_trace_record(r);
    out += '\n';
  }
  return out;
}

inline TraceRecord decode_trace_record(std::string_view line) {
  try {
    const auto j = nlohmann::json::parse(line);
    const auto& pose = j.at("pose");
    const auto& cmd = j.at("cmd");
    if (!pose.is_array() || pose.size() != 3 || !cmd.is_array() || cmd.size() != 2) {
      throw Error(Errc::MalformedFile, "trace record has wrong arity");
    }
    return {j.at("t").get<double>(),
            {pose[0].get<double>(), pose[1].get<double>(), pose[2].get<double>()},
            {cmd[0].get<double>(), cmd[1].get<double>()}};
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::MalformedFile, std::string("trace record: ") + e.what());
  }
}

inline std::vector<TraceRecord> decode_trace(std::string_view text) {
  std::vector<TraceRecord> out;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    const std::string_view line = text.substr(0, nl);
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) out.push_back(decode_trace_record(line));
    if (nl == std::string_view::npos) break;
    text.remove_prefix(nl + 1);
  }
  return out;
}

}  // namespace navstack
