#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace navstack {

enum class Errc {
  MalformedFile,
  MissingField,
  BadQuaternion,
  UnsupportedVersion,
  EmptyMap,
  NoPoints,
  OutOfBounds,
  MalformedGrid,
  StartOccupied,
  GoalOccupied,
  NoPath,
  NoFreeCells,
  StartInObstacle,
  InvalidDt,
  CommandOutOfLimits,
  InvalidSector,
  InvalidRayCount,
  InvalidArgument,
  EmptyPath,
  BadMessage,
};

constexpr std::string_view to_string(Errc code) noexcept {
  switch (code) {
    case Errc::MalformedFile: return "MalformedFile";
    case Errc::MissingField: return "MissingField";
    case Errc::BadQuaternion: return "BadQuaternion";
    case Errc::UnsupportedVersion: return "UnsupportedVersion";
    case Errc::EmptyMap: return "EmptyMap";
    case Errc::NoPoints: return "NoPoints";
    case Errc::OutOfBounds: return "OutOfBounds";
    case Errc::MalformedGrid: return "MalformedGrid";
    case Errc::StartOccupied: return "StartOccupied";
    case Errc::GoalOccupied: return "GoalOccupied";
    case Errc::NoPath: return "NoPath";
    case Errc::NoFreeCells: return "NoFreeCells";
    case Errc::StartInObstacle: return "StartInObstacle";
    case Errc::InvalidDt: return "InvalidDt";
    case Errc::CommandOutOfLimits: return "CommandOutOfLimits";
    case Errc::InvalidSector: return "InvalidSector";
    case Errc::InvalidRayCount: return "InvalidRayCount";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::EmptyPath: return "EmptyPath";
    case Errc::BadMessage: return "BadMessage";
  }
  return "Unknown";
}

/// Every library failure is reported as an Error carrying a stable code.
/// what() is "<CodeName>: <detail>" so diagnostics always lead with the code.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace navstack
