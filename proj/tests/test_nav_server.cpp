#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <random>
#include <thread>

#include <unistd.h>

#include "loopback.hpp"
#include "navstack/map_ingest.hpp"
#include "navstack/nav_server.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace navstack;
using namespace navstack::protocol;

namespace {

std::shared_ptr<const OccupancyGrid> shared(OccupancyGrid g) { return std::make_shared<const OccupancyGrid>(std::move(g)); }

// Thread-safe frame recorder usable as a session sink.
struct Recorder {
  std::mutex m;
  std::vector<std::string> frames;
  bool alive = true;

  FrameSink sink() {
    return [this](const std::string& f) {
      std::lock_guard lock(m);
      frames.push_back(f);
      return alive;
    };
  }
  std::vector<std::string> snapshot() {
    std::lock_guard lock(m);
    return frames;
  }
};

Message only(const std::vector<Message>& replies) {
  EXPECT_EQ(replies.size(), 1u);
  return replies.at(0);
}

ErrorCode error_of(const Message& m) {
  const auto* e = std::get_if<ErrorReply>(&m);
  EXPECT_NE(e, nullptr) << encode_message(m);
  return e ? e->code : ErrorCode::BadMessage;
}

std::shared_ptr<const OccupancyGrid> empty_room() {
  const auto db = parse_map_file(testutil::fixture_bytes("empty_room.msg"));
  return shared(build_grid(project_points(db), 0.25, 2));
}

// 7x5 free room split by a full-height wall at column 3.
OccupancyGrid walled_room() {
  OccupancyGrid g(7, 5, 1.0, {0, 0}, 0.0);
  for (int r = 0; r < 5; ++r) g.set({3, r}, 1.0);
  return g;
}

}  // namespace

TEST(HandleMessage, GetMapIsGolden) {
  NavServer server(shared(testutil::grid_5x3()));
  Session s;
  const auto reply = only(server.handle_message(s, GetMap{}));
  EXPECT_EQ(encode_message(reply), testutil::fixture("grid_5x3.json"));
}

TEST(HandleMessage, SetGoalErrors) {
  NavServer server(shared(testutil::grid_5x3()));
  Session s;
  EXPECT_TRUE(server.handle_message(s, SetStart{{1, 1}}).empty());
  EXPECT_EQ(s.start, (GridIndex{1, 1}));
  EXPECT_EQ(error_of(only(server.handle_message(s, SetGoal{{2, 1}}))), ErrorCode::Occupied);
  EXPECT_EQ(error_of(only(server.handle_message(s, SetGoal{{9, 1}}))), ErrorCode::OutOfBounds);
  EXPECT_EQ(error_of(only(server.handle_message(s, SetGoal{{3, 1}}))), ErrorCode::NoPath);
  EXPECT_EQ(error_of(only(server.handle_message(s, SetStart{{0, 0}}))), ErrorCode::Occupied);
  EXPECT_EQ(error_of(only(server.handle_message(s, SetStart{{-1, 0}}))), ErrorCode::OutOfBounds);
  EXPECT_EQ(error_of(only(server.handle_message(s, Position{{1, 1}, {}}))), ErrorCode::BadMessage);
  EXPECT_FALSE(s.goal.has_value());
}

TEST(HandleMessage, NoStartKnown) {
  NavServer server(shared(OccupancyGrid(4, 4, 1.0, {0, 0}, 0.0)));
  Session s;
  EXPECT_EQ(error_of(only(server.handle_message(s, SetGoal{{3, 3}}))), ErrorCode::NoPath);
  server.set_vehicle_pose({0.5, 0.5, 0.0});
  const auto reply = only(server.handle_message(s, SetGoal{{3, 3}}));
  ASSERT_TRUE(std::holds_alternative<Path>(reply));
  EXPECT_EQ(std::get<Path>(reply).path.cells.front(), (GridIndex{0, 0}));
}

TEST(HandleMessage, HalfValueCellIsOccupied) {
  OccupancyGrid g(4, 1, 1.0, {0, 0}, 0.0);
  g.set({2, 0}, 0.5);
  NavServer server(shared(g));
  Session s;
  server.handle_message(s, SetStart{{0, 0}});
  EXPECT_EQ(error_of(only(server.handle_message(s, SetGoal{{2, 0}}))), ErrorCode::Occupied);
  EXPECT_EQ(error_of(only(server.handle_message(s, SetGoal{{3, 0}}))), ErrorCode::NoPath);
}

TEST(HandleMessage, PathCostMatchesBfs) {
  std::mt19937_64 rng(42);
  const auto g = oracle::random_grid(rng, 20, 20, 0.3);
  NavServer server(shared(g));
  const auto free = oracle::free_cells(g);
  int paths = 0;
  for (int k = 0; k < 50; ++k) {
    Session s;
    const GridIndex a = free[rng() % free.size()], b = free[rng() % free.size()];
    server.handle_message(s, SetStart{a});
    const auto reply = only(server.handle_message(s, SetGoal{b}));
    const auto hops = oracle::bfs_distance(g, a, b);
    if (hops) {
      ASSERT_TRUE(std::holds_alternative<Path>(reply));
      EXPECT_EQ(std::get<Path>(reply).path.cost, static_cast<double>(*hops));
      EXPECT_EQ(s.goal, b);
      ++paths;
    } else {
      EXPECT_EQ(error_of(reply), ErrorCode::NoPath);
    }
  }
  EXPECT_GT(paths, 10);
}

TEST(HandleMessage, SnapMode) {
  ServerConfig cfg;
  cfg.snap = true;
  NavServer server(shared(testutil::grid_5x3()), cfg);
  Session s;
  EXPECT_TRUE(server.handle_message(s, SetStart{{0, 1}}).empty());
  EXPECT_EQ(s.start, (GridIndex{1, 1}));
}

TEST(OnFrame, RepliesAndBadFrames) {
  NavServer server(shared(testutil::grid_5x3()));
  Recorder rec;
  const auto id = server.open_session(rec.sink());
  server.on_frame(id, R"({"type":"get_map"})");
  server.on_frame(id, "garbage");
  server.on_frame(id, R"({"type":"warp"})");
  server.on_frame(id, R"({"type":"set_start","cell":[1,1]})");
  server.on_frame(id, R"({"type":"set_goal","cell":[2,1]})");
  const auto f = rec.snapshot();
  ASSERT_EQ(f.size(), 4u);
  EXPECT_EQ(f[0], testutil::fixture("grid_5x3.json"));
  EXPECT_EQ(error_of(decode_message(f[1])), ErrorCode::BadMessage);
  EXPECT_EQ(error_of(decode_message(f[2])), ErrorCode::BadMessage);
  EXPECT_EQ(error_of(decode_message(f[3])), ErrorCode::Occupied);
  server.on_frame(999, R"({"type":"get_map"})");  // unknown session: ignored
}

TEST(Broadcast, ZeroOneThreeClients) {
  NavServer server(shared(testutil::grid_5x3()));
  EXPECT_EQ(server.publish_position({0.5, 0.5, 0.0}), 0u);

  Recorder one;
  const auto id1 = server.open_session(one.sink());
  EXPECT_EQ(server.publish_position({0.5, 0.5, 0.0}), 1u);
  ASSERT_EQ(one.snapshot().size(), 1u);
  EXPECT_EQ(one.snapshot()[0], R"({"type":"position","cell":[1,1],"pose":[0.5,0.5,0.0]})");
  server.close_session(id1);

  Recorder a, b, c;
  server.open_session(a.sink());
  server.open_session(b.sink());
  server.open_session(c.sink());
  EXPECT_EQ(server.publish_position({2.4, 0.6, 1.0}), 3u);
  EXPECT_EQ(a.snapshot(), b.snapshot());
  EXPECT_EQ(b.snapshot(), c.snapshot());
  EXPECT_EQ(a.snapshot().size(), 1u);
  EXPECT_EQ(server.publish_position({-9.0, 0.0, 0.0}), 0u);  // off grid
}

TEST(Broadcast, DeadSinksStopCounting) {
  NavServer server(shared(testutil::grid_5x3()));
  Recorder a, b;
  a.alive = false;
  server.open_session(a.sink());
  server.open_session(b.sink());
  EXPECT_EQ(server.publish_position({0.5, 0.5, 0.0}), 1u);
  EXPECT_EQ(server.publish_position({0.5, 0.5, 0.0}), 1u);
  EXPECT_EQ(a.snapshot().size(), 1u);
  EXPECT_EQ(b.snapshot().size(), 2u);
}

TEST(Broadcast, ThrottledToConfiguredRate) {
  NavServer server(shared(testutil::grid_5x3()));
  Recorder rec;
  server.open_session(rec.sink());
  std::size_t sent = 0;
  for (int i = 0; i <= 100; ++i) sent += server.broadcast_position({0.5, 0.5, 0.0}, i * 0.05);  // 20 Hz, 5 s
  EXPECT_EQ(sent, 51u);
  EXPECT_EQ(rec.snapshot().size(), 51u);
}

TEST(DriveLoop, EmptyRoomEndsInGoalCell) {
  const auto grid = empty_room();
  NavServer server(grid);
  Recorder rec;
  server.open_session(rec.sink());
  const GridIndex start{3, 3}, goal{17, 15};
  const auto path = plan(*grid, start, goal);
  const Vec2 c = cell_to_world(*grid, start);
  SimState state = create_world(grid, {c.x, c.y, 0.0});
  DriveConfig cfg;
  cfg.speedup = 0.0;
  EXPECT_EQ(drive_loop(server, state, path, cfg), Outcome::Reached);
  const auto frames = rec.snapshot();
  ASSERT_GE(frames.size(), 2u);
  const auto last = decode_message(frames.back());
  ASSERT_TRUE(std::holds_alternative<Position>(last));
  EXPECT_EQ(std::get<Position>(last).cell, goal);
  // throttled: at most one intermediate frame per 0.1 s of sim time, plus first and last
  EXPECT_LE(frames.size(), static_cast<std::size_t>(state.time / 0.1) + 3);
}

TEST(DriveLoop, CollisionIsReported) {
  // the path's last cell is a wall; with a tiny stop distance the vehicle drives into it
  OccupancyGrid g(6, 3, 1.0, {0, 0}, 0.0);
  g.set({5, 1}, 1.0);
  auto grid = shared(std::move(g));
  NavServer server(grid);
  Recorder rec;
  server.open_session(rec.sink());
  SimState state = create_world(grid, {4.5, 1.5, 0.0});
  DriveConfig cfg;
  cfg.speedup = 0.0;
  cfg.controller.stop_distance = 0.05;
  cfg.controller.lookahead = 1.5;  // cells are 1 m here
  EXPECT_EQ(drive_loop(server, state, GridPath{{{4, 1}, {5, 1}}, 1.0}, cfg), Outcome::Collided);
  EXPECT_TRUE(state.collided);
  const auto frames = rec.snapshot();
  ASSERT_GE(frames.size(), 2u);
  EXPECT_EQ(error_of(decode_message(frames.back())), ErrorCode::Collided);
  EXPECT_TRUE(std::holds_alternative<Position>(decode_message(frames[frames.size() - 2])));
}

TEST(ReplayLoop, HundredRecordsHundredFrames) {
  NavServer server(shared(OccupancyGrid(120, 3, 0.5, {0, 0}, 0.0)));
  Recorder rec;
  server.open_session(rec.sink());
  std::vector<TraceRecord> trace;
  for (int i = 0; i < 100; ++i) trace.push_back({0.01 * i, {0.25 + 0.5 * i, 0.75, 0.0}, {0.5, 0.0}});
  EXPECT_EQ(replay_loop(server, trace, 0.0), 100u);
  const auto frames = rec.snapshot();
  ASSERT_EQ(frames.size(), 100u);
  for (int i = 0; i < 100; ++i) {
    const auto m = decode_message(frames[i]);
    ASSERT_TRUE(std::holds_alternative<Position>(m));
    EXPECT_EQ(std::get<Position>(m).cell, (GridIndex{i, 1}));
    EXPECT_EQ(std::get<Position>(m).pose, trace[i].pose);
  }
}

TEST(ReplayLoop, StopsOnRequest) {
  NavServer server(shared(OccupancyGrid(4, 4, 1.0, {0, 0}, 0.0)));
  std::vector<TraceRecord> trace(50, TraceRecord{0.0, {0.5, 0.5, 0.0}, {}});
  for (int i = 0; i < 50; ++i) trace[i].t = i * 10.0;  // 10 s apart
  std::stop_source stop;
  std::size_t sent = 0;
  std::thread t([&] { sent = replay_loop(server, trace, 1.0, stop.get_token()); });
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  stop.request_stop();
  t.join();
  EXPECT_EQ(sent, 1u);
}

TEST(VehicleDriver, NoPathNeverStartsADrive) {
  const auto grid = shared(walled_room());
  NavServer server(grid);
  SimState state = create_world(grid, {0.5, 0.5, 0.0});
  DriveConfig cfg;
  cfg.speedup = 0.0;
  VehicleDriver driver(server, state, cfg);
  Recorder rec;
  const auto id = server.open_session(rec.sink());
  server.on_frame(id, R"({"type":"set_goal","cell":[5,2]})");
  driver.wait_idle();
  EXPECT_EQ(driver.runs_started(), 0u);
  const auto frames = rec.snapshot();
  ASSERT_EQ(frames.size(), 1u);
  EXPECT_EQ(error_of(decode_message(frames[0])), ErrorCode::NoPath);
}

TEST(VehicleDriver, SimModeDrivesToTheGoal) {
  const auto grid = empty_room();
  NavServer server(grid);
  const Vec2 c = cell_to_world(*grid, {4, 4});
  DriveConfig cfg;
  cfg.speedup = 0.0;
  VehicleDriver driver(server, create_world(grid, {c.x, c.y, 1.0}), cfg);
  Recorder rec;
  const auto id = server.open_session(rec.sink());
  server.on_frame(id, R"({"type":"set_goal","cell":[15,12]})");
  driver.wait_idle();
  EXPECT_EQ(driver.runs_started(), 1u);
  EXPECT_EQ(driver.last_outcome(), Outcome::Reached);
  const auto frames = rec.snapshot();
  ASSERT_GE(frames.size(), 3u);
  EXPECT_TRUE(std::holds_alternative<Path>(decode_message(frames[0])));
  EXPECT_EQ(std::get<Position>(decode_message(frames.back())).cell, (GridIndex{15, 12}));

  // a second goal plans from where the vehicle stopped
  server.on_frame(id, R"({"type":"set_goal","cell":[5,16]})");
  driver.wait_idle();
  EXPECT_EQ(driver.runs_started(), 2u);
  EXPECT_EQ(std::get<Position>(decode_message(rec.snapshot().back())).cell, (GridIndex{5, 16}));
}

TEST(VehicleDriver, NewGoalCancelsRunningDrive) {
  const auto grid = empty_room();
  NavServer server(grid);
  const Vec2 c = cell_to_world(*grid, {4, 4});
  DriveConfig cfg;
  cfg.speedup = 1.0;  // real time: the first drive is still running when the second goal arrives
  VehicleDriver driver(server, create_world(grid, {c.x, c.y, 0.0}), cfg);
  Recorder rec;
  const auto id = server.open_session(rec.sink());
  server.on_frame(id, R"({"type":"set_start","cell":[4,4]})");
  server.on_frame(id, R"({"type":"set_goal","cell":[18,4]})");
  std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.on_frame(id, R"({"type":"set_goal","cell":[5,4]})");
  driver.wait_idle();
  EXPECT_EQ(driver.runs_started(), 2u);
}

TEST(Concurrency, SessionOrderingUnderParallelBroadcasts) {
  NavServer server(shared(testutil::grid_5x3()));
  constexpr int kClients = 4, kRequests = 200;
  std::vector<std::unique_ptr<Recorder>> recs;
  std::vector<SessionId> ids;
  for (int i = 0; i < kClients; ++i) {
    recs.push_back(std::make_unique<Recorder>());
    ids.push_back(server.open_session(recs.back()->sink()));
  }
  std::atomic<bool> done{false};
  std::thread broadcaster([&] {
    while (!done) server.publish_position({0.5, 0.5, 0.0});
  });
  std::vector<std::thread> clients;
  for (int i = 0; i < kClients; ++i) {
    clients.emplace_back([&, i] {
      for (int k = 0; k < kRequests; ++k) {
        server.on_frame(ids[i], R"({"type":"set_start","cell":[1,1]})");
        server.on_frame(ids[i], k % 2 ? R"({"type":"set_goal","cell":[3,1]})" : R"({"type":"get_map"})");
      }
    });
  }
  for (auto& t : clients) t.join();
  done = true;
  broadcaster.join();
  for (auto& r : recs) {
    int replies = 0, maps = 0;
    for (const auto& f : r->snapshot()) {
      const auto m = decode_message(f);
      if (std::holds_alternative<Position>(m)) continue;
      // replies alternate map, error(NO_PATH), map, ...
      if (replies % 2 == 0) {
        EXPECT_TRUE(std::holds_alternative<Map>(m));
        ++maps;
      } else {
        EXPECT_EQ(error_of(m), ErrorCode::NoPath);
      }
      ++replies;
    }
    EXPECT_EQ(replies, kRequests);
    EXPECT_EQ(maps, kRequests / 2);
  }
}

TEST(WebSocket, GoldenTranscriptReplayMode) {
  const std::string golden = testutil::fixture("golden_transcript.txt");
  const auto grid = shared(decode_grid(testutil::fixture("golden_grid.json")));
  loopback::Harness harness(grid, decode_trace(testutil::fixture("corridor_trace.jsonl")));
  EXPECT_EQ(loopback::run_transcript(harness.port(), golden), golden);
}

TEST(WebSocket, PlanOnlyRoundTripAndSessions) {
  const auto grid = shared(testutil::grid_5x3());
  loopback::Harness harness(grid);
  {
    loopback::Client a(harness.port());
    loopback::Client b(harness.port());
    a.send(R"({"type":"get_map"})");
    EXPECT_EQ(a.receive(), testutil::fixture("grid_5x3.json"));
    b.send(R"({"type":"set_start","cell":[1,1]})");
    b.send(R"({"type":"set_goal","cell":[1,1]})");
    EXPECT_EQ(b.receive(), R"({"type":"path","cells":[[1,1]],"cost":0.0})");
    a.send(R"({"type":"set_goal","cell":[1,1]})");
    EXPECT_EQ(error_of(decode_message(a.receive())), ErrorCode::NoPath);  // a never set a start
    a.send("{");
    EXPECT_EQ(error_of(decode_message(a.receive())), ErrorCode::BadMessage);
    EXPECT_EQ(harness.server().session_count(), 2u);
    harness.server().publish_position({0.5, 0.5, 0.0});
    EXPECT_EQ(a.receive(), b.receive());
  }
  for (int i = 0; i < 100 && harness.server().session_count() != 0; ++i) {
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  EXPECT_EQ(harness.server().session_count(), 0u);
}

TEST(WebSocket, ServesStaticFiles) {
  const auto dir = std::filesystem::temp_directory_path() / ("navstack_web_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "index.html") << "<html>nav</html>";
  {
    loopback::Harness harness(shared(testutil::grid_5x3()), {}, dir);
    const auto [status, body] = loopback::http_get(harness.port(), "/");
    EXPECT_EQ(status, 200);
    EXPECT_EQ(body, "<html>nav</html>");
    EXPECT_EQ(loopback::http_get(harness.port(), "/missing.js").first, 404);
    EXPECT_EQ(loopback::http_get(harness.port(), "/../etc/passwd").first, 404);
  }
  std::filesystem::remove_all(dir);
}
