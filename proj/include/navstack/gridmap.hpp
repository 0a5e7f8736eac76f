#pragma once

// Binary occupancy grid built from a keyframe trail: every tile the camera
// passed through is free, everything else is treated as an obstacle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "navstack/error.hpp"
#include "navstack/geometry.hpp"

namespace navstack {

inline constexpr double kOccupiedThreshold = 0.5;
inline constexpr double kDefaultCellSize = 0.25;
inline constexpr int kDefaultPadding = 2;

struct GridIndex {
  int col = 0;
  int row = 0;

  friend bool operator==(const GridIndex&, const GridIndex&) = default;
};

class OccupancyGrid {
 public:
  /// Validates dimensions, cell size and that every value lies in [0,1].
  OccupancyGrid(int width, int height, double cell_size, Vec2 origin, std::vector<double> cells)
      : width_(width), height_(height), cell_size_(cell_size), origin_(origin), cells_(std::move(cells)) {
    if (width_ < 1 || height_ < 1) throw Error(Errc::MalformedGrid, "dimensions must be positive");
    if (!(cell_size_ > 0.0) || !std::isfinite(cell_size_)) {
      throw Error(Errc::MalformedGrid, "cell_size must be positive");
    }
    if (!std::isfinite(origin_.x) || !std::isfinite(origin_.y)) {
      throw Error(Errc::MalformedGrid, "origin must be finite");
    }
    if (cells_.size() != static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_)) {
      throw Error(Errc::MalformedGrid, "cell count does not match width*height");
    }
    for (double v : cells_) {
      if (!(v >= 0.0 && v <= 1.0)) throw Error(Errc::MalformedGrid, "cell value outside [0,1]");
    }
  }

  /// Grid of identical values.
  OccupancyGrid(int width, int height, double cell_size, Vec2 origin, double fill)
      : OccupancyGrid(width, height, cell_size, origin,
                      std::vector<double>(static_cast<std::size_t>(std::max(width, 0)) *
                                              static_cast<std::size_t>(std::max(height, 0)),
                                          fill)) {}

  int width() const { return width_; }
  int height() const { return height_; }
  double cell_size() const { return cell_size_; }
  Vec2 origin() const { return origin_; }
  std::span<const double> cells() const { return cells_; }

  bool contains(GridIndex idx) const {
    return idx.col >= 0 && idx.col < width_ && idx.row >= 0 && idx.row < height_;
  }

  std::size_t linear(GridIndex idx) const {
    return static_cast<std::size_t>(idx.row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(idx.col);
  }

  double value(GridIndex idx) const {
    check(idx);
    return cells_[linear(idx)];
  }

  void set(GridIndex idx, double v) {
    check(idx);
    if (!(v >= 0.0 && v <= 1.0)) throw Error(Errc::MalformedGrid, "cell value outside [0,1]");
    cells_[linear(idx)] = v;
  }

  /// Occupied means value >= 0.5, inclusive.
  bool occupied(GridIndex idx) const { return value(idx) >= kOccupiedThreshold; }

  /// Same as occupied() for in-bounds cells; out-of-bounds counts as occupied.
  bool blocked(GridIndex idx) const { return !contains(idx) || cells_[linear(idx)] >= kOccupiedThreshold; }

  friend bool operator==(const OccupancyGrid&, const OccupancyGrid&) = default;

 private:
  void check(GridIndex idx) const {
    if (!contains(idx)) {
      throw Error(Errc::OutOfBounds,
                  "cell (" + std::to_string(idx.col) + "," + std::to_string(idx.row) + ")");
    }
  }

  int width_;
  int height_;
  double cell_size_;
  Vec2 origin_;
  std::vector<double> cells_;
};

namespace detail {

// Cell coordinate without a bounds check; floor convention, lower edge inclusive.
inline std::int64_t raw_cell(double coord, double origin, double cell_size) {
  return static_cast<std::int64_t>(std::floor((coord - origin) / cell_size));
}

}  // namespace detail

inline GridIndex world_to_cell(const OccupancyGrid& grid, Vec2 p) {
  const std::int64_t col = detail::raw_cell(p.x, grid.origin().x, grid.cell_size());
  const std::int64_t row = detail::raw_cell(p.y, grid.origin().y, grid.cell_size());
  if (!std::isfinite(p.x) || !std::isfinite(p.y) || col < 0 || row < 0 || col >= grid.width() ||
      row >= grid.height()) {
    throw Error(Errc::OutOfBounds, "point outside grid extent");
  }
  return {static_cast<int>(col), static_cast<int>(row)};
}

/// Center of the cell.
inline Vec2 cell_to_world(const OccupancyGrid& grid, GridIndex idx) {
  if (!grid.contains(idx)) throw Error(Errc::OutOfBounds, "cell outside grid");
  return {grid.origin().x + (idx.col + 0.5) * grid.cell_size(),
          grid.origin().y + (idx.row + 0.5) * grid.cell_size()};
}

inline bool is_occupied(const OccupancyGrid& grid, GridIndex idx) { return grid.occupied(idx); }

/// Builds the grid around the bounding box of `points` with `padding` extra
/// cells on every side. All cells start occupied (1.0); each cell holding at
/// least one point becomes free (0.0).
inline OccupancyGrid build_grid(std::span<const Vec2> points, double cell_size = kDefaultCellSize,
                                int padding = kDefaultPadding) {
  if (points.empty()) throw Error(Errc::NoPoints, "no points to build a grid from");
  if (!(cell_size > 0.0) || !std::isfinite(cell_size)) {
    throw Error(Errc::InvalidArgument, "cell_size must be positive");
  }
  if (padding < 0) throw Error(Errc::InvalidArgument, "padding must be non-negative");

  Vec2 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  Vec2 hi{-lo.x, -lo.y};
  for (const Vec2& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw Error(Errc::InvalidArgument, "non-finite point");
    lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
    hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
  }

  const double pad = padding * cell_size;
  Vec2 origin{lo.x - pad, lo.y - pad};
  // Rounding in lo - pad can land the lowest point one cell short of the
  // padding ring; step the origin down until it maps to cell `padding`.
  while (detail::raw_cell(lo.x, origin.x, cell_size) < padding) {
    origin.x = std::nextafter(origin.x, -std::numeric_limits<double>::infinity());
  }
  while (detail::raw_cell(lo.y, origin.y, cell_size) < padding) {
    origin.y = std::nextafter(origin.y, -std::numeric_limits<double>::infinity());
  }

  const auto extent = [&](double span) {
    const double cells = std::floor(span / cell_size) + 1.0 + 2.0 * padding;
    if (cells > static_cast<double>(std::numeric_limits<int>::max() / 4)) {
      throw Error(Errc::InvalidArgument, "grid too large");
    }
    return static_cast<std::int64_t>(cells);
  };
  std::int64_t width = extent(hi.x - lo.x);
  std::int64_t height = extent(hi.y - lo.y);
  width = std::max(width, detail::raw_cell(hi.x, origin.x, cell_size) + 1 + padding);
  height = std::max(height, detail::raw_cell(hi.y, origin.y, cell_size) + 1 + padding);

  OccupancyGrid grid(static_cast<int>(width), static_cast<int>(height), cell_size, origin, 1.0);
  for (const Vec2& p : points) grid.set(world_to_cell(grid, p), 0.0);
  return grid;
}

/// Canonical map body: "type" first, remaining keys alphabetical.
inline std::string encode_grid(const OccupancyGrid& grid) {
  nlohmann::ordered_json j;
  j["type"] = "map";
  j["cell_size"] = grid.cell_size();
  j["cells"] = nlohmann::ordered_json::array();
  auto& cells = j["cells"];
  for (double v : grid.cells()) cells.push_back(v);
  j["height"] = grid.height();
  j["origin"] = {grid.origin().x, grid.origin().y};
  j["version"] = 1;
  j["width"] = grid.width();
  return j.dump();
}

namespace detail {

inline OccupancyGrid grid_from_json(const nlohmann::json& j) {
  const auto fail = [](const std::string& why) { return Error(Errc::MalformedGrid, why); };
  if (!j.is_object()) throw fail("grid body must be an object");
  const auto type = j.find("type");
  if (type == j.end() || *type != "map") throw fail("type must be \"map\"");
  const auto version = j.find("version");
  if (version == j.end() || !version->is_number_integer() || version->get<std::int64_t>() != 1) {
    throw fail("version must be 1");
  }
  const auto dim = [&](const char* key) {
    const auto it = j.find(key);
    if (it == j.end() || !it->is_number_integer()) throw fail(std::string(key) + " must be an integer");
    const auto v = it->get<std::int64_t>();
    if (v < 1 || v > std::numeric_limits<int>::max()) throw fail(std::string(key) + " out of range");
    return static_cast<int>(v);
  };
  const int width = dim("width");
  const int height = dim("height");
  const auto cs = j.find("cell_size");
  if (cs == j.end() || !cs->is_number()) throw fail("cell_size must be a number");
  const auto origin = j.find("origin");
  if (origin == j.end() || !origin->is_array() || origin->size() != 2 || !(*origin)[0].is_number() ||
      !(*origin)[1].is_number()) {
    throw fail("origin must be [x, y]");
  }
  const auto cells = j.find("cells");
  if (cells == j.end() || !cells->is_array()) throw fail("cells must be an array");
  if (cells->size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw fail("cell count does not match width*height");
  }
  std::vector<double> values;
  values.reserve(cells->size());
  for (const auto& v : *cells) {
    if (!v.is_number()) throw fail("cell values must be numbers");
    values.push_back(v.get<double>());
  }
  return OccupancyGrid(width, height, cs->get<double>(),
                       {(*origin)[0].get<double>(), (*origin)[1].get<double>()}, std::move(values));
}

}  // namespace detail

inline OccupancyGrid decode_grid(std::string_view bytes) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(bytes);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::MalformedGrid, e.what());
  }
  return detail::grid_from_json(j);
}

/// Plain (P2) greyscale image; occupied black, free white, top line = highest row.
inline std::string export_pgm(const OccupancyGrid& grid) {
  std::string out = "P2\n" + std::to_string(grid.width()) + " " + std::to_string(grid.height()) + "\n255\n";
  for (int row = grid.height() - 1; row >= 0; --row) {
    for (int col = 0; col < grid.width(); ++col) {
      if (col > 0) out += ' ';
      out += grid.occupied({col, row}) ? "0" : "255";
    }
    out += '\n';
  }
  return out;
}

}  // namespace navstack
