#pragma once

// Rule-based path follower. Takes the same inputs a learned policy would
// (range scan, pose, planned path) and produces a velocity command.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <vector>

#include "navstack/error.hpp"
#include "navstack/geometry.hpp"
#include "navstack/gridmap.hpp"
#include "navstack/planner.hpp"
#include "navstack/sim.hpp"

namespace navstack {

struct ControllerParams {
  double lookahead = 0.75;
  double goal_tolerance = 0.1;
  double stop_distance = 0.5;
  double turn_gain = 1.5;
  double cruise_speed = 0.5;
  double clip_range = 8.0;
  double omega_max = std::numbers::pi / 2.0;

  void validate() const {
    if (!(lookahead > 0 && goal_tolerance > 0 && stop_distance > 0 && turn_gain > 0 && cruise_speed > 0 &&
          clip_range > 0 && omega_max > 0)) {
      throw Error(Errc::InvalidArgument, "controller parameters must be positive");
    }
    if (!(goal_tolerance < lookahead)) throw Error(Errc::InvalidArgument, "goal_tolerance must be < lookahead");
    if (!(stop_distance < clip_range)) throw Error(Errc::InvalidArgument, "stop_distance must be < clip_range");
  }
};

struct Observation {
  std::vector<double> normalized_ranges;
  double heading_error = 0.0;
  double distance_to_target = 0.0;
};

/// Waypoint-index memory carried between control steps so progress along
/// the path never goes backwards.
struct PathProgress {
  std::size_t index = 0;

  friend bool operator==(const PathProgress&, const PathProgress&) = default;
};

/// min(r, clip) / clip for every range.
inline std::vector<double> normalize_scan(const LidarScan& scan, double clip_range) {
  if (!(clip_range > 0.0)) throw Error(Errc::InvalidArgument, "clip_range must be positive");
  std::vector<double> out;
  out.reserve(scan.ranges.size());
  for (double r : scan.ranges) out.push_back(std::clamp(r, 0.0, clip_range) / clip_range);
  return out;
}

struct Waypoint {
  Vec2 point;
  std::size_t index = 0;
};

namespace detail {
// Absorbs rounding in cell-center arithmetic when a center sits exactly at
// the lookahead distance.
inline constexpr double kDistanceSlack = 1e-9;
}  // namespace detail

/// Steering target: the furthest path cell whose center is within lookahead,
/// never behind the nearest cell or `progress`.
inline Waypoint target_waypoint(const GridPath& path, const OccupancyGrid& grid, const Pose2D& pose,
                                const ControllerParams& params, PathProgress progress = {}) {
  if (path.cells.empty()) throw Error(Errc::EmptyPath, "path has no cells");
  const std::size_t first = std::min(progress.index, path.cells.size() - 1);
  std::size_t nearest = first;
  double nearest_d = std::numeric_limits<double>::infinity();
  std::size_t furthest_in_reach = first;
  for (std::size_t i = first; i < path.cells.size(); ++i) {
    const double d = distance(cell_to_world(grid, path.cells[i]), pose.position());
    if (d < nearest_d) {
      nearest_d = d;
      nearest = i;
    }
    if (d <= params.lookahead + detail::kDistanceSlack) furthest_in_reach = i;
  }
  const std::size_t index = std::max(nearest, furthest_in_reach);
  return {cell_to_world(grid, path.cells[index]), index};
}

struct ControlDecision {
  std::optional<Command> command;  // empty once the goal is reached
  PathProgress progress;
  Observation observation;

  bool done() const { return !command.has_value(); }
};

/// Rules, in order:
///  1. within goal_tolerance of the final cell center: done;
///  2. something in the forward sector closer than stop_distance while
///     roughly facing the target: turn in place away from the nearer side
///     (left on ties);
///  3. otherwise drive toward the waypoint, slowing with heading error.
inline ControlDecision next_command(const Pose2D& pose, const GridPath& path, const OccupancyGrid& grid,
                                    const LidarScan& scan, const ControllerParams& params,
                                    PathProgress progress = {}) {
  if (path.cells.empty()) throw Error(Errc::EmptyPath, "path has no cells");
  const Waypoint wp = target_waypoint(path, grid, pose, params, progress);

  ControlDecision out;
  out.progress.index = wp.index;
  out.observation.normalized_ranges = normalize_scan(scan, params.clip_range);
  const double bearing = std::atan2(wp.point.y - pose.y, wp.point.x - pose.x);
  out.observation.heading_error = wrap_angle(bearing - pose.theta);
  out.observation.distance_to_target = distance(wp.point, pose.position());

  const Vec2 goal = cell_to_world(grid, path.cells.back());
  if (distance(goal, pose.position()) <= params.goal_tolerance) return out;

  const double heading_error = out.observation.heading_error;
  constexpr double quarter_turn = std::numbers::pi / 4.0;
  bool blocked_ahead = false;
  double nearest_left = std::numeric_limits<double>::infinity();
  double nearest_right = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scan.angles.size() && i < scan.ranges.size(); ++i) {
    const double a = scan.angles[i];
    if (std::abs(a) > quarter_turn) continue;
    const double r = out.observation.normalized_ranges[i] * params.clip_range;
    if (r < params.stop_distance) blocked_ahead = true;
    if (a > 0.0) nearest_left = std::min(nearest_left, r);
    if (a < 0.0) nearest_right = std::min(nearest_right, r);
  }

  if (blocked_ahead && std::abs(heading_error) < quarter_turn) {
    const double turn = params.turn_gain * quarter_turn;
    out.command = Command{0.0, nearest_left < nearest_right ? -turn : turn};
    return out;
  }

  const double v = params.cruise_speed * std::max(0.0, std::cos(heading_error));
  const double omega = std::clamp(params.turn_gain * heading_error, -params.omega_max, params.omega_max);
  out.command = Command{v, omega};
  return out;
}

/// Adapts next_command to run_episode's (pose, scan) callback, carrying the
/// progress token between calls.
class PathFollower {
 public:
  PathFollower(GridPath path, const OccupancyGrid& grid, ControllerParams params)
      : path_(std::move(path)), grid_(&grid), params_(params) {
    params_.validate();
    if (path_.cells.empty()) throw Error(Errc::EmptyPath, "path has no cells");
  }

  std::optional<Command> operator()(const Pose2D& pose, const LidarScan& scan) {
    const ControlDecision d = next_command(pose, path_, *grid_, scan, params_, progress_);
    progress_ = d.progress;
    history_.push_back(progress_.index);
    return d.command;
  }

  const std::vector<std::size_t>& index_history() const { return history_; }

 private:
  GridPath path_;
  const OccupancyGrid* grid_;
  ControllerParams params_;
  PathProgress progress_;
  std::vector<std::size_t> history_;
};

}  // namespace navstack
