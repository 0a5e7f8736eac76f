#pragma once

// End-to-end helpers: map file -> grid, grid + cells -> path, path -> episode.

#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <random>
#include <span>

#include "navstack/config.hpp"
#include "navstack/controller.hpp"
#include "navstack/gridmap.hpp"
#include "navstack/map_ingest.hpp"
#include "navstack/planner.hpp"
#include "navstack/sim.hpp"

namespace navstack {

inline OccupancyGrid ingest_map(std::span<const std::uint8_t> map_bytes, const RunConfig& cfg,
                                const PlaneProjection& proj = {}) {
  const MapDatabase db = parse_map_file(map_bytes);
  const auto points = project_points(db, proj);
  return build_grid(points, cfg.cell_size, cfg.padding);
}

inline GridPath plan_route(const OccupancyGrid& grid, GridIndex start, GridIndex goal, const RunConfig& cfg) {
  if (cfg.snap) {
    if (grid.contains(start)) start = snap_to_free(grid, start);
    if (grid.contains(goal)) goal = snap_to_free(grid, goal);
  }
  return plan(grid, start, goal, cfg.connectivity);
}

namespace detail {

// Uniform in [-1, 1) from the raw 64-bit engine output; avoids the
// implementation-defined std::uniform_real_distribution.
inline double symmetric_unit(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-52 - 1.0;
}

}  // namespace detail

/// Start pose for following `path`: center of the first cell, facing the
/// next distinct cell, perturbed by the seeded start jitter.
inline Pose2D start_pose(const OccupancyGrid& grid, const GridPath& path, const RunConfig& cfg) {
  if (path.cells.empty()) throw Error(Errc::EmptyPath, "path has no cells");
  const Vec2 c0 = cell_to_world(grid, path.cells.front());
  double heading = 0.0;
  if (path.cells.size() > 1) {
    const Vec2 c1 = cell_to_world(grid, path.cells[1]);
    heading = std::atan2(c1.y - c0.y, c1.x - c0.x);
  }
  std::mt19937_64 rng(cfg.seed);
  const double max_xy = std::min(cfg.start_jitter_xy, 0.4 * grid.cell_size());
  const double jx = detail::symmetric_unit(rng) * max_xy;
  const double jy = detail::symmetric_unit(rng) * max_xy;
  const double jt = detail::symmetric_unit(rng) * cfg.start_jitter_theta;
  return {c0.x + jx, c0.y + jy, wrap_angle(heading + jt)};
}

inline Episode simulate_route(std::shared_ptr<const OccupancyGrid> grid, const GridPath& path, const RunConfig& cfg) {
  cfg.validate();
  const Pose2D start = start_pose(*grid, path, cfg);
  SimState state = create_world(grid, start, cfg.vehicle);
  PathFollower follower(path, *grid, cfg.controller);
  return run_episode(std::move(state), follower, cfg.dt, cfg.max_steps, cfg.lidar);
}

}  // namespace navstack
