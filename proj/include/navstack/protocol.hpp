#pragma once

// Session protocol frames. One JSON object per text frame, tagged by "type".
// Encoding is canonical: "type" first, remaining keys in alphabetical order.

#include <algorithm>
#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>

#include "json.hpp"
#include "navstack/error.hpp"
#include "navstack/gridmap.hpp"
#include "navstack/planner.hpp"
#include "navstack/sim.hpp"

namespace navstack::protocol {

enum class ErrorCode { OutOfBounds, Occupied, NoPath, BadMessage, Collided };

constexpr std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::OutOfBounds: return "OUT_OF_BOUNDS";
    case ErrorCode::Occupied: return "OCCUPIED";
    case ErrorCode::NoPath: return "NO_PATH";
    case ErrorCode::BadMessage: return "BAD_MESSAGE";
    case ErrorCode::Collided: return "COLLIDED";
  }
  return "BAD_MESSAGE";
}

inline std::optional<ErrorCode> error_code_from(std::string_view s) {
  for (auto c : {ErrorCode::OutOfBounds, ErrorCode::Occupied, ErrorCode::NoPath, ErrorCode::BadMessage,
                 ErrorCode::Collided}) {
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

struct GetMap {
  friend bool operator==(const GetMap&, const GetMap&) = default;
};
struct Map {
  OccupancyGrid grid;
  friend bool operator==(const Map&, const Map&) = default;
};
struct SetGoal {
  GridIndex cell;
  friend bool operator==(const SetGoal&, const SetGoal&) = default;
};
struct SetStart {
  GridIndex cell;
  friend bool operator==(const SetStart&, const SetStart&) = default;
};
struct Path {
  GridPath path;
  friend bool operator==(const Path&, const Path&) = default;
};
struct Position {
  GridIndex cell;
  Pose2D pose;
  friend bool operator==(const Position&, const Position&) = default;
};
struct ErrorReply {
  ErrorCode code = ErrorCode::BadMessage;
  std::string message;
  friend bool operator==(const ErrorReply&, const ErrorReply&) = default;
};

using Message = std::variant<GetMap, Map, SetGoal, SetStart, Path, Position, ErrorReply>;

namespace detail {

inline nlohmann::ordered_json cell_json(GridIndex c) { return nlohmann::ordered_json::array({c.col, c.row}); }

template <typename T>
constexpr bool always_false = false;

}  // namespace detail

inline std::string encode_message(const Message& m) {
  return std::visit(
      [](const auto& msg) -> std::string {
        using T = std::decay_t<decltype(msg)>;
        nlohmann::ordered_json j;
        if constexpr (std::is_same_v<T, GetMap>) {
          j["type"] = "get_map";
        } else if constexpr (std::is_same_v<T, Map>) {
          return encode_grid(msg.grid);
        } else if constexpr (std::is_same_v<T, SetGoal>) {
          j["type"] = "set_goal";
          j["cell"] = detail::cell_json(msg.cell);
        } else if constexpr (std::is_same_v<T, SetStart>) {
          j["type"] = "set_start";
          j["cell"] = detail::cell_json(msg.cell);
        } else if constexpr (std::is_same_v<T, Path>) {
          return encode_path(msg.path);
        } else if constexpr (std::is_same_v<T, Position>) {
          j["type"] = "position";
          j["cell"] = detail::cell_json(msg.cell);
          j["pose"] = {msg.pose.x, msg.pose.y, msg.pose.theta};
        } else if constexpr (std::is_same_v<T, ErrorReply>) {
          j["type"] = "error";
          j["code"] = std::string(to_string(msg.code));
          j["message"] = msg.message;
        } else {
          static_assert(detail::always_false<T>);
        }
        return j.dump();
      },
      m);
}

/// Throws Error(BadMessage) for anything that is not exactly one known frame.
inline Message decode_message(std::string_view frame) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(frame);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::BadMessage, e.what());
  }
  if (!j.is_object()) throw Error(Errc::BadMessage, "frame must be a JSON object");
  const auto type_it = j.find("type");
  if (type_it == j.end() || !type_it->is_string()) throw Error(Errc::BadMessage, "missing \"type\"");
  const std::string type = type_it->get<std::string>();

  const auto expect_keys = [&](std::initializer_list<std::string_view> keys) {
    for (const auto& [k, v] : j.items()) {
      if (k == "type") continue;
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) {
        throw Error(Errc::BadMessage, "unexpected key \"" + k + "\" in " + type);
      }
    }
    for (auto k : keys) {
      if (!j.contains(std::string(k))) throw Error(Errc::BadMessage, "missing \"" + std::string(k) + "\" in " + type);
    }
  };

  if (type == "get_map") {
    expect_keys({});
    return GetMap{};
  }
  if (type == "set_goal" || type == "set_start") {
    expect_keys({"cell"});
    const GridIndex cell = navstack::detail::cell_from_json(j["cell"]);
    if (type == "set_goal") return SetGoal{cell};
    return SetStart{cell};
  }
  if (type == "map") {
    expect_keys({"cell_size", "cells", "height", "origin", "version", "width"});
    try {
      return Map{navstack::detail::grid_from_json(j)};
    } catch (const Error& e) {
      throw Error(Errc::BadMessage, e.what());
    }
  }
  if (type == "path") {
    expect_keys({"cells", "cost"});
    return Path{navstack::detail::path_from_json(j)};
  }
  if (type == "position") {
    expect_keys({"cell", "pose"});
    const auto& pose = j["pose"];
    if (!pose.is_array() || pose.size() != 3 || !pose[0].is_number() || !pose[1].is_number() ||
        !pose[2].is_number()) {
      throw Error(Errc::BadMessage, "pose must be [x,y,theta]");
    }
    return Position{navstack::detail::cell_from_json(j["cell"]),
                    {pose[0].get<double>(), pose[1].get<double>(), pose[2].get<double>()}};
  }
  if (type == "error") {
    expect_keys({"code", "message"});
    if (!j["code"].is_string() || !j["message"].is_string()) {
      throw Error(Errc::BadMessage, "error code and message must be strings");
    }
    const auto code = error_code_from(j["code"].get<std::string>());
    if (!code) throw Error(Errc::BadMessage, "unknown error code");
    return ErrorReply{*code, j["message"].get<std::string>()};
  }
  throw Error(Errc::BadMessage, "unknown message type \"" + type + "\"");
}

}  // namespace navstack::protocol
