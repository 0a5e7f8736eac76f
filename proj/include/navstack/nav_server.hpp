#pragma once

// Transport-independent session server: serves the grid, plans paths to
// selected goals and fans vehicle positions out to every connected client.
// A transport (see ws_server.hpp) feeds inbound frames to on_frame() and
// supplies a sink per session for outbound frames.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "navstack/controller.hpp"
#include "navstack/error.hpp"
#include "navstack/gridmap.hpp"
#include "navstack/planner.hpp"
#include "navstack/protocol.hpp"
#include "navstack/sim.hpp"

namespace navstack {

struct ServerConfig {
  Connectivity connectivity = Connectivity::FourConnected;
  bool snap = false;
  double position_rate_hz = 10.0;
};

using SessionId = std::uint64_t;

/// Delivers one outbound frame; returns false once the peer is gone.
using FrameSink = std::function<bool(const std::string&)>;

struct Session {
  SessionId id = 0;
  std::optional<GridIndex> start;
  std::optional<GridIndex> goal;
  std::optional<GridPath> path;
};

class NavServer {
 public:
  using GoalListener = std::function<void(SessionId, const GridPath&)>;

  explicit NavServer(std::shared_ptr<const OccupancyGrid> grid, ServerConfig config = {})
      : grid_(std::move(grid)), config_(config) {
    if (!grid_) throw Error(Errc::InvalidArgument, "server needs a grid");
    if (!(config_.position_rate_hz > 0.0)) throw Error(Errc::InvalidArgument, "position rate must be positive");
  }

  const OccupancyGrid& grid() const { return *grid_; }
  std::shared_ptr<const OccupancyGrid> shared_grid() const { return grid_; }
  const ServerConfig& config() const { return config_; }

  SessionId open_session(FrameSink sink) {
    std::lock_guard lock(mutex_);
    const SessionId id = next_id_++;
    auto entry = std::make_shared<Entry>();
    entry->session.id = id;
    entry->sink = std::move(sink);
    sessions_.emplace(id, std::move(entry));
    return id;
  }

  void close_session(SessionId id) {
    std::lock_guard lock(mutex_);
    sessions_.erase(id);
  }

  std::size_t session_count() const {
    std::lock_guard lock(mutex_);
    return sessions_.size();
  }

  std::optional<Session> session(SessionId id) const {
    const auto entry = find(id);
    if (!entry) return std::nullopt;
    std::lock_guard lock(entry->mutex);
    return entry->session;
  }

  /// Called with the driving session and its new path after every accepted goal.
  void set_goal_listener(GoalListener listener) {
    std::lock_guard lock(mutex_);
    goal_listener_ = std::move(listener);
  }

  void set_vehicle_pose(const Pose2D& pose) {
    std::lock_guard lock(mutex_);
    vehicle_ = pose;
  }

  std::optional<Pose2D> vehicle_pose() const {
    std::lock_guard lock(mutex_);
    return vehicle_;
  }

  /// Pure protocol step for one decoded message; updates the session.
  std::vector<protocol::Message> handle_message(Session& session, const protocol::Message& m) const {
    using namespace protocol;
    if (std::holds_alternative<GetMap>(m)) return {Map{*grid_}};
    if (const auto* set_start = std::get_if<SetStart>(&m)) {
      GridIndex cell = set_start->cell;
      if (auto err = check_endpoint(cell, "start")) return {*err};
      session.start = cell;
      return {};
    }
    if (const auto* set_goal = std::get_if<SetGoal>(&m)) return plan_to(session, set_goal->cell);
    return {ErrorReply{ErrorCode::BadMessage, "message type is server-to-client only"}};
  }

  /// Decodes one inbound frame, handles it and writes the replies to the
  /// session's sink, in order. Never throws on frame content.
  void on_frame(SessionId id, std::string_view frame) {
    const auto entry = find(id);
    if (!entry) return;
    std::optional<std::pair<SessionId, GridPath>> accepted;
    {
      std::lock_guard lock(entry->mutex);
      std::vector<protocol::Message> replies;
      try {
        const protocol::Message m = protocol::decode_message(frame);
        replies = handle_message(entry->session, m);
        if (std::holds_alternative<protocol::SetGoal>(m) && !replies.empty() &&
            std::holds_alternative<protocol::Path>(replies.front())) {
          accepted.emplace(id, std::get<protocol::Path>(replies.front()).path);
        }
      } catch (const Error& e) {
        replies = {protocol::ErrorReply{protocol::ErrorCode::BadMessage, e.what()}};
      }
      for (const auto& r : replies) send_locked(*entry, protocol::encode_message(r));
    }
    if (accepted) {
      GoalListener listener;
      {
        std::lock_guard lock(mutex_);
        listener = goal_listener_;
      }
      if (listener) listener(accepted->first, accepted->second);
    }
  }

  /// Rate-limited position fan-out. `stamp` is the pose time in seconds;
  /// poses closer than 1/position_rate_hz to the last emitted one are dropped.
  /// Returns the number of sessions the frame was delivered to.
  std::size_t broadcast_position(const Pose2D& pose, double stamp) {
    {
      std::lock_guard lock(mutex_);
      const double period = 1.0 / config_.position_rate_hz;
      if (last_stamp_ && stamp - *last_stamp_ < period - 1e-9) return 0;
      last_stamp_ = stamp;
    }
    return publish_position(pose);
  }

  /// Position fan-out without rate limiting. Poses off the grid are skipped.
  std::size_t publish_position(const Pose2D& pose) {
    set_vehicle_pose(pose);
    GridIndex cell;
    try {
      cell = world_to_cell(*grid_, pose.position());
    } catch (const Error&) {
      return 0;
    }
    return broadcast(protocol::encode_message(protocol::Position{cell, pose}));
  }

  std::size_t broadcast_error(protocol::ErrorCode code, const std::string& message) {
    return broadcast(protocol::encode_message(protocol::ErrorReply{code, message}));
  }

  void reset_throttle() {
    std::lock_guard lock(mutex_);
    last_stamp_.reset();
  }

 private:
  struct Entry {
    std::mutex mutex;
    Session session;
    FrameSink sink;
    bool alive = true;
  };

  std::shared_ptr<Entry> find(SessionId id) const {
    std::lock_guard lock(mutex_);
    const auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
  }

  static bool send_locked(Entry& e, const std::string& frame) {
    if (!e.alive) return false;
    try {
      e.alive = e.sink(frame);
    } catch (...) {
      e.alive = false;
    }
    return e.alive;
  }

  std::size_t broadcast(const std::string& frame) {
    std::vector<std::shared_ptr<Entry>> targets;
    {
      std::lock_guard lock(mutex_);
      for (const auto& [id, e] : sessions_) targets.push_back(e);
    }
    std::size_t delivered = 0;
    for (const auto& e : targets) {
      std::lock_guard lock(e->mutex);
      if (send_locked(*e, frame)) ++delivered;
    }
    return delivered;
  }

  std::optional<protocol::Message> check_endpoint(GridIndex& cell, const char* what) const {
    using namespace protocol;
    if (!grid_->contains(cell)) return ErrorReply{ErrorCode::OutOfBounds, std::string(what) + " outside grid"};
    if (grid_->occupied(cell)) {
      if (!config_.snap) return ErrorReply{ErrorCode::Occupied, std::string(what) + " cell is occupied"};
      try {
        cell = snap_to_free(*grid_, cell);
      } catch (const Error& e) {
        return ErrorReply{ErrorCode::NoPath, e.what()};
      }
    }
    return std::nullopt;
  }

  std::vector<protocol::Message> plan_to(Session& session, GridIndex goal) const {
    using namespace protocol;
    if (auto err = check_endpoint(goal, "goal")) return {*err};
    std::optional<GridIndex> start = session.start;
    if (!start) {
      if (const auto pose = vehicle_pose()) {
        try {
          start = world_to_cell(*grid_, pose->position());
        } catch (const Error&) {
        }
      }
    }
    if (!start) return {ErrorReply{ErrorCode::NoPath, "no start cell: send set_start first"}};
    if (auto err = check_endpoint(*start, "start")) return {*err};
    try {
      GridPath path = plan(*grid_, *start, goal, config_.connectivity);
      session.goal = goal;
      session.path = path;
      return {Path{std::move(path)}};
    } catch (const Error& e) {
      return {ErrorReply{ErrorCode::NoPath, e.what()}};
    }
  }

  std::shared_ptr<const OccupancyGrid> grid_;
  ServerConfig config_;
  mutable std::mutex mutex_;
  std::map<SessionId, std::shared_ptr<Entry>> sessions_;
  SessionId next_id_ = 1;
  GoalListener goal_listener_;
  std::optional<Pose2D> vehicle_;
  std::optional<double> last_stamp_;
};

struct DriveConfig {
  double dt = kDefaultDt;
  int max_steps = 20000;
  LidarConfig lidar;
  ControllerParams controller;
  double speedup = 1.0;  // wall-clock pacing factor; 0 runs unpaced
};

namespace detail {

// Sleeps for `seconds` unless a stop is requested first. Returns false if stopped.
inline bool paced_wait(double seconds, std::stop_token stop) {
  if (stop.stop_requested()) return false;
  if (!(seconds > 0.0)) return true;
  std::mutex m;
  std::condition_variable_any cv;
  std::unique_lock lock(m);
  return !cv.wait_for(lock, stop, std::chrono::duration<double>(seconds), [] { return false; });
}

}  // namespace detail

/// Closed loop: scan, decide, step, broadcast, until the controller is done,
/// the vehicle collides, max_steps elapse or a stop is requested. The final
/// pose is always published; a collision is broadcast as a COLLIDED error.
inline Outcome drive_loop(NavServer& server, SimState& state, const GridPath& path, const DriveConfig& cfg,
                          std::stop_token stop = {}) {
  PathFollower follower(path, *state.grid, cfg.controller);
  server.reset_throttle();
  server.publish_position(state.pose);
  for (int i = 0;; ++i) {
    const LidarScan scan = lidar_scan(state, cfg.lidar);
    const std::optional<Command> cmd = follower(state.pose, scan);
    if (!cmd) {
      server.publish_position(state.pose);
      return Outcome::Reached;
    }
    if (i == cfg.max_steps || stop.stop_requested()) return Outcome::Timeout;
    state = step(std::move(state), *cmd, cfg.dt);
    if (state.collided) {
      server.publish_position(state.pose);
      server.broadcast_error(protocol::ErrorCode::Collided, "vehicle collided at t=" + std::to_string(state.time));
      return Outcome::Collided;
    }
    server.broadcast_position(state.pose, state.time);
    if (cfg.speedup > 0.0 && !detail::paced_wait(cfg.dt / cfg.speedup, stop)) return Outcome::Timeout;
  }
}

/// Streams every record of a recorded trace as a Position frame, paced by the
/// record timestamps. Returns the number of records streamed.
inline std::size_t replay_loop(NavServer& server, const std::vector<TraceRecord>& trace, double speedup = 1.0,
                               std::stop_token stop = {}) {
  std::size_t sent = 0;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (i > 0 && speedup > 0.0 && !detail::paced_wait((trace[i].t - trace[i - 1].t) / speedup, stop)) break;
    if (stop.stop_requested()) break;
    server.publish_position(trace[i].pose);
    ++sent;
  }
  return sent;
}

/// Owns the vehicle: starts a drive (sim) or replay run on its own thread
/// each time a goal is accepted, cancelling any run in progress.
class VehicleDriver {
 public:
  enum class Mode { Sim, Replay };

  VehicleDriver(NavServer& server, SimState initial, DriveConfig cfg)
      : server_(server), mode_(Mode::Sim), state_(std::move(initial)), cfg_(std::move(cfg)) {
    server_.set_vehicle_pose(state_.pose);
    install();
  }

  VehicleDriver(NavServer& server, std::vector<TraceRecord> trace, double speedup)
      : server_(server), mode_(Mode::Replay), trace_(std::move(trace)) {
    cfg_.speedup = speedup;
    if (!trace_.empty()) server_.set_vehicle_pose(trace_.front().pose);
    install();
  }

  VehicleDriver(const VehicleDriver&) = delete;
  VehicleDriver& operator=(const VehicleDriver&) = delete;

  ~VehicleDriver() {
    server_.set_goal_listener({});
    std::lock_guard start_lock(start_mutex_);
    if (worker_.joinable()) {
      worker_.request_stop();
      worker_.join();
    }
  }

  /// Blocks until the current run (if any) has finished.
  void wait_idle() {
    std::unique_lock lock(mutex_);
    idle_cv_.wait(lock, [this] { return !running_; });
  }

  std::optional<Outcome> last_outcome() const {
    std::lock_guard lock(mutex_);
    return last_outcome_;
  }

  std::size_t runs_started() const { return runs_.load(); }

 private:
  void install() {
    server_.set_goal_listener([this](SessionId, const GridPath& path) { start(path); });
  }

  void start(const GridPath& path) {
    std::lock_guard start_lock(start_mutex_);
    if (worker_.joinable()) {
      worker_.request_stop();
      worker_.join();
    }
    std::lock_guard lock(mutex_);
    running_ = true;
    ++runs_;
    worker_ = std::jthread([this, path](std::stop_token stop) {
      std::optional<Outcome> outcome;
      if (mode_ == Mode::Sim) {
        SimState local;
        {
          std::lock_guard l(mutex_);
          local = state_;
        }
        outcome = drive_loop(server_, local, path, cfg_, stop);
        std::lock_guard l(mutex_);
        state_ = local;
      } else {
        replay_loop(server_, trace_, cfg_.speedup, stop);
      }
      std::lock_guard l(mutex_);
      last_outcome_ = outcome;
      running_ = false;
      idle_cv_.notify_all();
    });
  }

  NavServer& server_;
  Mode mode_;
  SimState state_;
  std::vector<TraceRecord> trace_;
  DriveConfig cfg_;
  std::mutex start_mutex_;  // serializes start() and teardown
  mutable std::mutex mutex_;
  std::condition_variable idle_cv_;
  bool running_ = false;
  std::optional<Outcome> last_outcome_;
  std::atomic<std::size_t> runs_{0};
  std::jthread worker_;
};

}  // namespace navstack
