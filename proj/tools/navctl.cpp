// navctl: map file -> grid, grid -> path, path -> simulated run, and the
// WebSocket server. Exit codes: 0 ok, 1 domain error, 2 usage error.

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <boost/asio/io_context.hpp>
#include <boost/asio/ip/address.hpp>
#include <boost/asio/signal_set.hpp>

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "navstack/config.hpp"
#include "navstack/nav_server.hpp"
#include "navstack/pipeline.hpp"
#include "navstack/ws_server.hpp"

namespace {

using namespace navstack;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::MalformedFile, "cannot read " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::InvalidArgument, "cannot write " + path);
  out << data;
  if (!out.flush()) throw Error(Errc::InvalidArgument, "write failed: " + path);
}

// "col,row"
GridIndex parse_cell(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw UsageError("cell must be col,row: '" + text + "'");
  try {
    return {detail::parse_number<int>("cell", detail::trim(std::string_view(text).substr(0, comma))),
            detail::parse_number<int>("cell", detail::trim(std::string_view(text).substr(comma + 1)))};
  } catch (const Error&) {
    throw UsageError("cell must be col,row: '" + text + "'");
  }
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("navctl");
  logger->set_pattern("%^%l%$: %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* env = std::getenv("NAVCTL_LOG")) {
    const std::string level(env);
    if (level == "error") spdlog::set_level(spdlog::level::err);
    else if (level == "warn") spdlog::set_level(spdlog::level::warn);
    else if (level == "info") spdlog::set_level(spdlog::level::info);
    else if (level == "debug") spdlog::set_level(spdlog::level::debug);
    else spdlog::warn("ignoring NAVCTL_LOG={}", level);
  }
}

// Flags that map onto config keys; collected during parsing and applied
// after the config file so flags win.
class Settings {
 public:
  void add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(flag, [this, key](const std::string& v) { given_.emplace_back(key, v); },
                                          help);
  }
  void set(const std::string& key, const std::string& value) { given_.emplace_back(key, value); }

  RunConfig build(const std::string& config_file) const {
    RunConfig cfg;
    try {
      if (!config_file.empty()) apply_config_text(cfg, read_file(config_file));
      for (const auto& [k, v] : given_) apply_setting(cfg, k, v);
      cfg.validate();
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    return cfg;
  }

 private:
  std::vector<std::pair<std::string, std::string>> given_;
};

int cmd_ingest(const RunConfig& cfg, const std::string& map_file, const std::string& out, const std::string& pgm) {
  const std::string bytes = read_file(map_file);
  const OccupancyGrid grid =
      ingest_map({reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()}, cfg);
  std::size_t free_cells = 0;
  for (double v : grid.cells()) free_cells += v < kOccupiedThreshold ? 1 : 0;
  const std::string body = encode_grid(grid);
  if (out.empty()) {
    std::cout << body << '\n';
  } else {
    write_file(out, body);
  }
  if (!pgm.empty()) write_file(pgm, export_pgm(grid));
  spdlog::info("grid {}x{} cell {} m, {} free cells", grid.width(), grid.height(), grid.cell_size(), free_cells);
  if (!out.empty()) std::cout << grid.width() << "x" << grid.height() << " free=" << free_cells << '\n';
  return 0;
}

int cmd_plan(const RunConfig& cfg, const std::string& grid_file, GridIndex start, GridIndex goal,
             const std::string& out) {
  const OccupancyGrid grid = decode_grid(read_file(grid_file));
  const GridPath path = plan_route(grid, start, goal, cfg);
  const std::string body = encode_path(path);
  if (out.empty()) {
    std::cout << body << '\n';
  } else {
    write_file(out, body);
    std::cout << "cost " << path.cost << " cells " << path.cells.size() << '\n';
  }
  spdlog::info("path of {} cells, cost {}", path.cells.size(), path.cost);
  return 0;
}

int cmd_simulate(const RunConfig& cfg, const std::string& grid_file, const std::string& path_file,
                 const std::string& trace_file) {
  auto grid = std::make_shared<const OccupancyGrid>(decode_grid(read_file(grid_file)));
  const GridPath path = decode_path(read_file(path_file));
  for (const auto& c : path.cells) {
    if (!grid->contains(c)) throw Error(Errc::OutOfBounds, "path cell outside grid");
  }
  const Episode ep = simulate_route(grid, path, cfg);
  if (!trace_file.empty()) write_file(trace_file, encode_trace(ep.trace));
  const auto& p = ep.final_state.pose;
  spdlog::info("{} steps, t={:.2f} s, final pose ({:.3f}, {:.3f}, {:.3f})", ep.trace.size(), ep.final_state.time,
               p.x, p.y, p.theta);
  std::cout << to_string(ep.outcome) << '\n';
  return ep.outcome == Outcome::Reached ? 0 : 1;
}

int cmd_serve(const RunConfig& cfg, const std::string& grid_file, const std::string& mode,
              const std::string& replay_file, const std::optional<GridIndex>& start_cell,
              const std::string& web_root) {
  auto grid = std::make_shared<const OccupancyGrid>(decode_grid(read_file(grid_file)));
  NavServer server(grid, ServerConfig{cfg.connectivity, cfg.snap, cfg.position_rate_hz});

  std::unique_ptr<VehicleDriver> driver;
  if (mode == "sim") {
    GridIndex cell = start_cell ? *start_cell : snap_to_free(*grid, {0, 0});
    const Vec2 c = cell_to_world(*grid, cell);
    SimState state = create_world(grid, Pose2D{c.x, c.y, 0.0}, cfg.vehicle);
    driver = std::make_unique<VehicleDriver>(
        server, std::move(state), DriveConfig{cfg.dt, cfg.max_steps, cfg.lidar, cfg.controller, cfg.replay_speed});
  } else if (mode == "replay") {
    if (replay_file.empty()) throw UsageError("--replay is required in replay mode");
    driver = std::make_unique<VehicleDriver>(server, decode_trace(read_file(replay_file)), cfg.replay_speed);
  } else if (start_cell) {
    const Vec2 c = cell_to_world(*grid, *start_cell);
    server.set_vehicle_pose({c.x, c.y, 0.0});
  }

  boost::asio::io_context ioc;
  std::optional<std::filesystem::path> root;
  if (!web_root.empty()) root = web_root;
  boost::system::error_code ec;
  const auto address = boost::asio::ip::make_address(cfg.host, ec);
  if (ec) throw UsageError("bad host address '" + cfg.host + "'");
  std::unique_ptr<WsServer> ws;
  try {
    ws = std::make_unique<WsServer>(ioc, server, boost::asio::ip::tcp::endpoint(address, cfg.port), root);
  } catch (const boost::system::system_error& e) {
    throw Error(Errc::InvalidArgument, std::string("cannot listen on ") + cfg.host + ":" +
                                           std::to_string(cfg.port) + ": " + e.what());
  }
  ws->start();

  boost::asio::signal_set signals(ioc, SIGINT, SIGTERM);
  signals.async_wait([&](const boost::system::error_code&, int sig) {
    spdlog::info("signal {}, shutting down", sig);
    ws->stop();
    ioc.stop();
  });

  std::cout << "listening on " << cfg.host << ":" << ws->port() << " (" << mode << " mode)" << std::endl;
  spdlog::info("grid {}x{}, serving {}", grid->width(), grid->height(), root ? root->string() : "no static files");
  ioc.run();
  driver.reset();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();

  CLI::App app{"navctl: occupancy-grid navigation from SLAM keyframe maps"};
  app.require_subcommand(1);
  std::string config_file;
  app.add_option("--config", config_file, "key=value settings file (flags override it)");
  Settings settings;

  auto* ingest = app.add_subcommand("ingest", "build an occupancy grid from a NavMap file");
  std::string map_file, grid_out, pgm_out;
  ingest->add_option("map", map_file, "NavMap v1 file (MessagePack or JSON)")->required();
  ingest->add_option("-o,--output", grid_out, "grid file to write (default: stdout)");
  ingest->add_option("--pgm", pgm_out, "also write a PGM image");
  settings.add(ingest, "--cell-size", "cell_size", "cell edge in meters");
  settings.add(ingest, "--padding", "padding", "occupied border cells");

  auto* plan_cmd = app.add_subcommand("plan", "plan a path on a grid file");
  std::string plan_grid, plan_out, start_text, goal_text;
  plan_cmd->add_option("grid", plan_grid, "grid file")->required();
  plan_cmd->add_option("--start", start_text, "start cell col,row")->required();
  plan_cmd->add_option("--goal", goal_text, "goal cell col,row")->required();
  plan_cmd->add_option("-o,--output", plan_out, "path file to write (default: stdout)");
  settings.add(plan_cmd, "--connectivity", "connectivity", "4 or 8");
  plan_cmd->add_flag_callback("--snap", [&] { settings.set("snap", "true"); }, "move occupied endpoints to the nearest free cell");

  auto* sim_cmd = app.add_subcommand("simulate", "drive a planned path in the simulator");
  std::string sim_grid, sim_path, trace_out;
  sim_cmd->add_option("grid", sim_grid, "grid file")->required();
  sim_cmd->add_option("path", sim_path, "path file")->required();
  sim_cmd->add_option("--trace", trace_out, "write the trace (JSON lines)");
  settings.add(sim_cmd, "--seed", "seed", "start-pose jitter seed");
  settings.add(sim_cmd, "--asymmetry", "asymmetry", "right wheel speed factor minus one");
  settings.add(sim_cmd, "--max-steps", "max_steps", "step budget");
  settings.add(sim_cmd, "--dt", "dt", "time step in seconds");

  auto* serve_cmd = app.add_subcommand("serve", "serve the grid over WebSocket");
  std::string serve_grid, mode = "plan", replay_file, serve_start, web_root;
  serve_cmd->add_option("grid", serve_grid, "grid file")->required();
  serve_cmd->add_option("--mode", mode, "plan, sim or replay")->check(CLI::IsMember({"plan", "sim", "replay"}));
  serve_cmd->add_option("--replay", replay_file, "trace file for replay mode");
  serve_cmd->add_option("--start", serve_start, "vehicle start cell col,row");
  serve_cmd->add_option("--web-root", web_root, "directory of static files served over HTTP");
  settings.add(serve_cmd, "--host", "host", "listen address");
  settings.add(serve_cmd, "--port", "port", "listen port (0 picks one)");
  settings.add(serve_cmd, "--connectivity", "connectivity", "4 or 8");
  settings.add(serve_cmd, "--rate", "position_rate_hz", "position frames per second");
  settings.add(serve_cmd, "--speed", "replay_speed", "playback speed factor (0 = as fast as possible)");
  serve_cmd->add_flag_callback("--snap", [&] { settings.set("snap", "true"); }, "move occupied endpoints to the nearest free cell");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const RunConfig cfg = settings.build(config_file);
    if (ingest->parsed()) return cmd_ingest(cfg, map_file, grid_out, pgm_out);
    if (plan_cmd->parsed()) return cmd_plan(cfg, plan_grid, parse_cell(start_text), parse_cell(goal_text), plan_out);
    if (sim_cmd->parsed()) return cmd_simulate(cfg, sim_grid, sim_path, trace_out);
    std::optional<GridIndex> start;
    if (!serve_start.empty()) start = parse_cell(serve_start);
    return cmd_serve(cfg, serve_grid, mode, replay_file, start, web_root);
  } catch (const UsageError& e) {
    spdlog::error("{}", e.what());
    return 2;
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
