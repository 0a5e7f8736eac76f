#include <gtest/gtest.h>

#include <cmath>
#include <memory>
#include <numbers>
#include <random>

#include "navstack/controller.hpp"
#include "navstack/map_ingest.hpp"
#include "navstack/pipeline.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace navstack;

namespace {

std::shared_ptr<const OccupancyGrid> shared(OccupancyGrid g) { return std::make_shared<const OccupancyGrid>(std::move(g)); }

GridPath straight_path(int n, int row = 0) {
  GridPath p;
  for (int c = 0; c < n; ++c) p.cells.push_back({c, row});
  p.cost = n - 1;
  return p;
}

LidarScan clear_scan(int n = 90, double sector = std::numbers::pi / 2) {
  LidarScan s;
  s.angles = scan_angles(sector, n);
  s.ranges.assign(s.angles.size(), 8.0);
  s.max_range = 8.0;
  return s;
}

std::shared_ptr<const OccupancyGrid> empty_room() {
  const auto db = parse_map_file(testutil::fixture_bytes("empty_room.msg"));
  return shared(build_grid(project_points(db), 0.25, 2));
}

}  // namespace

TEST(NormalizeScan, Examples) {
  LidarScan s;
  s.ranges = {8, 8, 8};
  EXPECT_EQ(normalize_scan(s, 8.0), (std::vector<double>{1, 1, 1}));
  s.ranges = {2, 4, 8};
  EXPECT_EQ(normalize_scan(s, 4.0), (std::vector<double>{0.5, 1.0, 1.0}));
  EXPECT_THROW(normalize_scan(s, 0.0), Error);
}

TEST(NormalizeScan, WallFixture) {
  OccupancyGrid g(80, 80, 0.25, {-10.0, -10.0}, 0.0);
  for (int r = 0; r < 80; ++r) g.set({48, r}, 1.0);
  const auto state = create_world(shared(g), {0.0, 0.0, 0.0});
  const auto scan = lidar_scan(state, std::numbers::pi / 2, 90, 8.0);
  const auto norm = normalize_scan(scan, 8.0);
  ASSERT_EQ(norm.size(), 90u);
  for (std::size_t i = 0; i < norm.size(); ++i) {
    EXPECT_GE(norm[i], 0.0);
    EXPECT_LE(norm[i], 1.0);
    EXPECT_NEAR(norm[i], std::min(oracle::dense_sample_range(g, 0, 0, scan.angles[i], 8.0), 8.0) / 8.0, 1e-3 / 8);
  }
  // the two rays straddling the heading see the wall at ~2 m
  EXPECT_NEAR(norm[44], 0.25, 1e-4);
  EXPECT_NEAR(norm[45], 0.25, 1e-4);
}

TEST(TargetWaypoint, LookaheadOfTwoCells) {
  const OccupancyGrid g(12, 1, 0.25, {0, 0}, 0.0);
  const auto path = straight_path(10);
  ControllerParams params;
  params.lookahead = 2 * g.cell_size();
  const Vec2 start = cell_to_world(g, {0, 0});
  const auto wp = target_waypoint(path, g, {start.x, start.y, 0.0}, params);
  // exhaustive oracle: furthest index whose center is within lookahead
  std::size_t want = 0;
  for (std::size_t i = 0; i < path.cells.size(); ++i) {
    if (distance(cell_to_world(g, path.cells[i]), start) <= params.lookahead + 1e-9) want = i;
  }
  EXPECT_EQ(want, 2u);
  EXPECT_EQ(wp.index, want);
}

TEST(TargetWaypoint, TerminalAndSingleCell) {
  const OccupancyGrid g(12, 1, 0.25, {0, 0}, 0.0);
  const auto path = straight_path(10);
  ControllerParams params;
  const Vec2 near_end = cell_to_world(g, {8, 0});
  EXPECT_EQ(target_waypoint(path, g, {near_end.x, near_end.y, 0.0}, params).index, 9u);
  const auto single = straight_path(1);
  for (double x : {0.1, 1.0, 2.9}) EXPECT_EQ(target_waypoint(single, g, {x, 0.1, 0.0}, params).index, 0u);
  EXPECT_THROW(target_waypoint(GridPath{}, g, {}, params), Error);
}

TEST(TargetWaypoint, NeverBehindProgress) {
  const OccupancyGrid g(12, 1, 0.25, {0, 0}, 0.0);
  const auto path = straight_path(10);
  ControllerParams params;
  const auto wp = target_waypoint(path, g, {0.125, 0.125, 0.0}, params, PathProgress{7});
  EXPECT_EQ(wp.index, 7u);
}

TEST(NextCommand, DoneAtGoal) {
  const OccupancyGrid g(12, 1, 0.25, {0, 0}, 0.0);
  const auto path = straight_path(5);
  const Vec2 goal = cell_to_world(g, {4, 0});
  const auto d = next_command({goal.x, goal.y, 1.0}, path, g, clear_scan(), ControllerParams{});
  EXPECT_TRUE(d.done());
}

TEST(NextCommand, AlignedClearPathCruises) {
  const OccupancyGrid g(12, 1, 0.25, {0, 0}, 0.0);
  const auto path = straight_path(10);
  ControllerParams params;
  const Vec2 s = cell_to_world(g, {0, 0});
  const auto d = next_command({s.x, s.y, 0.0}, path, g, clear_scan(), params);
  ASSERT_FALSE(d.done());
  EXPECT_EQ(*d.command, (Command{params.cruise_speed, 0.0}));
}

TEST(NextCommand, ObstacleNearerOnRightTurnsLeft) {
  const OccupancyGrid g(12, 1, 0.25, {0, 0}, 0.0);
  const auto path = straight_path(10);
  ControllerParams params;
  auto scan = clear_scan();
  for (std::size_t i = 0; i < scan.angles.size(); ++i) {
    if (std::abs(scan.angles[i]) < 0.2) scan.ranges[i] = 0.3;
    if (scan.angles[i] < -0.2 && scan.angles[i] > -0.5) scan.ranges[i] = 0.2;
  }
  const Vec2 s = cell_to_world(g, {0, 0});
  const auto d = next_command({s.x, s.y, 0.0}, path, g, scan, params);
  ASSERT_FALSE(d.done());
  EXPECT_EQ(d.command->v, 0.0);
  EXPECT_DOUBLE_EQ(d.command->omega, params.turn_gain * std::numbers::pi / 4);

  // mirrored: nearer on the left turns right
  for (auto& a : scan.angles) a = -a;
  const auto m = next_command({s.x, s.y, 0.0}, path, g, scan, params);
  EXPECT_DOUBLE_EQ(m.command->omega, -params.turn_gain * std::numbers::pi / 4);
}

TEST(NextCommand, ObstacleIgnoredWhenFacingAway) {
  const OccupancyGrid g(12, 1, 0.25, {0, 0}, 0.0);
  const auto path = straight_path(10);
  ControllerParams params;
  auto scan = clear_scan();
  for (auto& r : scan.ranges) r = 0.2;
  const Vec2 s = cell_to_world(g, {0, 0});
  const auto d = next_command({s.x, s.y, 2.0}, path, g, scan, params);
  ASSERT_FALSE(d.done());
  EXPECT_EQ(d.command->v, 0.0);  // cos of a large heading error is negative: turn in place
  EXPECT_DOUBLE_EQ(d.command->omega, -params.omega_max);
}

TEST(NextCommand, Pure) {
  const OccupancyGrid g(12, 4, 0.25, {0, 0}, 0.0);
  const auto path = straight_path(10, 2);
  const auto scan = clear_scan();
  const Pose2D pose{0.4, 0.3, -0.6};
  const auto a = next_command(pose, path, g, scan, ControllerParams{}, PathProgress{1});
  const auto b = next_command(pose, path, g, scan, ControllerParams{}, PathProgress{1});
  EXPECT_EQ(a.command, b.command);
  EXPECT_EQ(a.progress, b.progress);
  EXPECT_EQ(a.observation.normalized_ranges, b.observation.normalized_ranges);
}

TEST(PathFollower, EmptyRoomLivenessAndMonotoneProgress) {
  const auto grid = empty_room();
  const auto free = oracle::free_cells(*grid);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 12; ++trial) {
    const GridIndex s = free[rng() % free.size()];
    const GridIndex t = free[rng() % free.size()];
    for (auto conn : {Connectivity::FourConnected, Connectivity::EightConnected}) {
      const auto path = plan(*grid, s, t, conn);
      const Vec2 c = cell_to_world(*grid, s);
      auto state = create_world(grid, {c.x, c.y, static_cast<double>(rng() % 628) / 100.0 - 3.14});
      PathFollower follower(path, *grid, ControllerParams{});
      const auto ep = run_episode(state, follower, 0.05, 4000);
      ASSERT_EQ(ep.outcome, Outcome::Reached) << trial;
      EXPECT_FALSE(ep.final_state.collided);
      EXPECT_EQ(world_to_cell(*grid, ep.final_state.pose.position()), t);
      const auto& h = follower.index_history();
      for (std::size_t i = 1; i < h.size(); ++i) EXPECT_GE(h[i], h[i - 1]);
    }
  }
}

TEST(ControllerParams, Validation) {
  ControllerParams p;
  EXPECT_NO_THROW(p.validate());
  p.goal_tolerance = p.lookahead;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.stop_distance = 9.0;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.cruise_speed = 0.0;
  EXPECT_THROW(p.validate(), Error);
}
