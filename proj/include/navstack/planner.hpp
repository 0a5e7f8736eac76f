#pragma once

// A* over an occupancy grid with unit orthogonal and sqrt(2) diagonal moves.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <queue>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "navstack/error.hpp"
#include "navstack/gridmap.hpp"

namespace navstack {

enum class Connectivity { FourConnected, EightConnected };

struct GridPath {
  std::vector<GridIndex> cells;
  double cost = 0.0;

  friend bool operator==(const GridPath&, const GridPath&) = default;
};

/// A path length as an exact count of straight and diagonal moves.
struct MoveCount {
  std::int64_t straight = 0;
  std::int64_t diagonal = 0;

  double value() const { return static_cast<double>(straight) + static_cast<double>(diagonal) * std::numbers::sqrt2; }

  friend MoveCount operator+(MoveCount a, MoveCount b) {
    return {a.straight + b.straight, a.diagonal + b.diagonal};
  }
  friend bool operator==(const MoveCount&, const MoveCount&) = default;
};

/// Strict ordering by real value; distinct counts never compare equal since
/// sqrt(2) is irrational.
inline bool cost_less(const MoveCount& a, const MoveCount& b) {
  if (a == b) return false;
  return a.value() < b.value();
}

inline MoveCount heuristic_moves(GridIndex a, GridIndex b, Connectivity conn) {
  const std::int64_t dc = std::llabs(static_cast<std::int64_t>(a.col) - b.col);
  const std::int64_t dr = std::llabs(static_cast<std::int64_t>(a.row) - b.row);
  if (conn == Connectivity::FourConnected) return {dc + dr, 0};
  // Octile: max + (sqrt2 - 1) * min  ==  (max - min) straight + min diagonal.
  const std::int64_t lo = std::min(dc, dr);
  return {std::max(dc, dr) - lo, lo};
}

/// Manhattan distance for 4-connectivity, octile distance for 8-connectivity.
inline double heuristic(GridIndex a, GridIndex b, Connectivity conn) {
  return heuristic_moves(a, b, conn).value();
}

namespace detail {

struct Step {
  int dc;
  int dr;
};

inline constexpr std::array<Step, 8> kNeighbourSteps{{
    {1, 0}, {-1, 0}, {0, 1}, {0, -1},  // straight
    {1, 1}, {-1, 1}, {1, -1}, {-1, -1},  // diagonal
}};

struct OpenEntry {
  MoveCount f;
  MoveCount h;
  std::uint64_t seq;
  GridIndex cell;
  MoveCount g;
};

// priority_queue pops the "largest"; invert so the smallest f comes first,
// then smaller h, then earlier insertion.
struct OpenOrder {
  bool operator()(const OpenEntry& a, const OpenEntry& b) const {
    if (!(a.f == b.f)) return cost_less(b.f, a.f);
    if (!(a.h == b.h)) return cost_less(b.h, a.h);
    return a.seq > b.seq;
  }
};

inline std::string cell_text(GridIndex c) {
  return "(" + std::to_string(c.col) + "," + std::to_string(c.row) + ")";
}

}  // namespace detail

/// Minimum-cost path from `start` to `goal`. Diagonal moves may not cut
/// corners: both orthogonal cells next to the diagonal must be free.
inline GridPath plan(const OccupancyGrid& grid, GridIndex start, GridIndex goal,
                     Connectivity conn = Connectivity::FourConnected) {
  if (!grid.contains(start)) throw Error(Errc::OutOfBounds, "start " + detail::cell_text(start));
  if (!grid.contains(goal)) throw Error(Errc::OutOfBounds, "goal " + detail::cell_text(goal));
  if (grid.occupied(start)) throw Error(Errc::StartOccupied, "start " + detail::cell_text(start));
  if (grid.occupied(goal)) throw Error(Errc::GoalOccupied, "goal " + detail::cell_text(goal));

  const std::size_t n = grid.cells().size();
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  std::vector<MoveCount> best(n);
  std::vector<bool> seen(n, false);
  std::vector<bool> closed(n, false);
  std::vector<std::size_t> parent(n, kNone);

  std::priority_queue<detail::OpenEntry, std::vector<detail::OpenEntry>, detail::OpenOrder> open;
  std::uint64_t seq = 0;
  const MoveCount h0 = heuristic_moves(start, goal, conn);
  open.push({h0, h0, seq++, start, {}});
  seen[grid.linear(start)] = true;

  const std::size_t steps = conn == Connectivity::FourConnected ? 4 : 8;
  while (!open.empty()) {
    const detail::OpenEntry top = open.top();
    open.pop();
    const std::size_t cur = grid.linear(top.cell);
    if (closed[cur]) continue;
    closed[cur] = true;

    if (top.cell == goal) {
      GridPath path;
      for (std::size_t i = cur; i != kNone; i = parent[i]) {
        path.cells.push_back({static_cast<int>(i % static_cast<std::size_t>(grid.width())),
                              static_cast<int>(i / static_cast<std::size_t>(grid.width()))});
      }
      std::reverse(path.cells.begin(), path.cells.end());
      path.cost = top.g.value();
      return path;
    }

    for (std::size_t k = 0; k < steps; ++k) {
      const auto [dc, dr] = detail::kNeighbourSteps[k];
      const GridIndex next{top.cell.col + dc, top.cell.row + dr};
      if (grid.blocked(next)) continue;
      const bool diagonal = dc != 0 && dr != 0;
      if (diagonal && (grid.blocked({top.cell.col + dc, top.cell.row}) ||
                       grid.blocked({top.cell.col, top.cell.row + dr}))) {
        continue;
      }
      const std::size_t ni = grid.linear(next);
      if (closed[ni]) continue;
      const MoveCount g = top.g + (diagonal ? MoveCount{0, 1} : MoveCount{1, 0});
      if (seen[ni] && !cost_less(g, best[ni])) continue;
      seen[ni] = true;
      best[ni] = g;
      parent[ni] = cur;
      const MoveCount h = heuristic_moves(next, goal, conn);
      open.push({g + h, h, seq++, next, g});
    }
  }
  throw Error(Errc::NoPath, "no path from " + detail::cell_text(start) + " to " + detail::cell_text(goal));
}

/// `idx` if free, else the free cell with the nearest center (ties: smaller
/// row, then smaller col).
inline GridIndex snap_to_free(const OccupancyGrid& grid, GridIndex idx) {
  if (!grid.contains(idx)) throw Error(Errc::OutOfBounds, "cell " + detail::cell_text(idx));
  if (!grid.occupied(idx)) return idx;
  std::int64_t best_d2 = std::numeric_limits<std::int64_t>::max();
  GridIndex best{-1, -1};
  for (int row = 0; row < grid.height(); ++row) {
    for (int col = 0; col < grid.width(); ++col) {
      if (grid.occupied({col, row})) continue;
      const std::int64_t dc = col - idx.col;
      const std::int64_t dr = row - idx.row;
      const std::int64_t d2 = dc * dc + dr * dr;
      if (d2 < best_d2) {
        best_d2 = d2;
        best = {col, row};
      }
    }
  }
  if (best.col < 0) throw Error(Errc::NoFreeCells, "grid has no free cells");
  return best;
}

inline std::string encode_path(const GridPath& path) {
  nlohmann::ordered_json j;
  j["type"] = "path";
  j["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : path.cells) j["cells"].push_back({c.col, c.row});
  j["cost"] = path.cost;
  return j.dump();
}

namespace detail {

inline GridIndex cell_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer()) {
    throw Error(Errc::BadMessage, "cell must be [col,row] integers");
  }
  const auto col = j[0].get<std::int64_t>();
  const auto row = j[1].get<std::int64_t>();
  constexpr auto lo = std::numeric_limits<int>::min();
  constexpr auto hi = std::numeric_limits<int>::max();
  if (col < lo || col > hi || row < lo || row > hi) throw Error(Errc::BadMessage, "cell out of range");
  return {static_cast<int>(col), static_cast<int>(row)};
}

inline GridPath path_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("type") || j["type"] != "path") {
    throw Error(Errc::BadMessage, "type must be \"path\"");
  }
  const auto cells = j.find("cells");
  const auto cost = j.find("cost");
  if (cells == j.end() || !cells->is_array()) throw Error(Errc::BadMessage, "cells must be an array");
  if (cost == j.end() || !cost->is_number()) throw Error(Errc::BadMessage, "cost must be a number");
  GridPath path;
  for (const auto& c : *cells) path.cells.push_back(cell_from_json(c));
  path.cost = cost->get<double>();
  return path;
}

}  // namespace detail

inline GridPath decode_path(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::BadMessage, e.what());
  }
  return detail::path_from_json(j);
}

}  // namespace navstack
