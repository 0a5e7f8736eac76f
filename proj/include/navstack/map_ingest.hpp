#pragma once

// NavMap v1 map-database reader/writer and keyframe pose unpacking.
//
// A map database holds the keyframes (camera poses) recorded while mapping and
// optionally the triangulated landmarks. Poses are camera-from-world: a world
// point p maps to R*p + t in the camera frame, so the camera sits at -R^T t.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "navstack/error.hpp"
#include "navstack/geometry.hpp"

namespace navstack {

struct Keyframe {
  std::uint64_t id = 0;
  Quaternion rot_cw;
  Vec3 trans_cw;
  std::optional<double> timestamp;

  friend bool operator==(const Keyframe&, const Keyframe&) = default;
};

struct Landmark {
  std::uint64_t id = 0;
  Vec3 pos_w;

  friend bool operator==(const Landmark&, const Landmark&) = default;
};

struct MapDatabase {
  int version = 1;
  std::vector<Keyframe> keyframes;  // ascending id
  std::vector<Landmark> landmarks;  // ascending id

  friend bool operator==(const MapDatabase&, const MapDatabase&) = default;
};

enum class Axis { X = 0, Y = 1, Z = 2 };

class PlaneProjection {
 public:
  /// Floor plane of a forward-looking camera whose Y axis points along gravity.
  PlaneProjection() = default;

  PlaneProjection(Axis horizontal, Axis vertical) : horizontal_(horizontal), vertical_(vertical) {
    if (horizontal == vertical) throw Error(Errc::InvalidArgument, "projection axes must differ");
  }

  Axis horizontal() const { return horizontal_; }
  Axis vertical() const { return vertical_; }

 private:
  Axis horizontal_ = Axis::X;
  Axis vertical_ = Axis::Z;
};

enum class MapEncoding { Binary, Text };

inline constexpr double kQuaternionNormTolerance = 1e-3;

namespace detail {

inline std::uint64_t parse_id(const std::string& key) {
  if (key.empty() || key.size() > 19 ||
      !std::all_of(key.begin(), key.end(), [](unsigned char c) { return std::isdigit(c) != 0; })) {
    throw Error(Errc::MalformedFile, "id '" + key + "' is not a non-negative integer");
  }
  return std::stoull(key);
}

inline double number_at(const nlohmann::json& j, std::string_view what) {
  if (!j.is_number()) throw Error(Errc::MalformedFile, std::string(what) + " must be numeric");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw Error(Errc::MalformedFile, std::string(what) + " must be finite");
  return v;
}

template <std::size_t N>
std::array<double, N> fixed_array(const nlohmann::json& j, std::string_view what) {
  if (!j.is_array() || j.size() != N) {
    throw Error(Errc::MalformedFile, std::string(what) + " must be an array of " + std::to_string(N));
  }
  std::array<double, N> out{};
  for (std::size_t i = 0; i < N; ++i) out[i] = number_at(j[i], what);
  return out;
}

inline Quaternion checked_quaternion(const std::array<double, 4>& raw, std::uint64_t id) {
  const Quaternion q{raw[0], raw[1], raw[2], raw[3]};
  const double n = q.norm();
  if (!(std::abs(n - 1.0) <= kQuaternionNormTolerance)) {
    throw Error(Errc::BadQuaternion,
                "keyframe " + std::to_string(id) + " rotation norm " + std::to_string(n));
  }
  // Leave already-unit quaternions bit-identical so parse/serialize is a fixpoint.
  if (std::abs(n - 1.0) <= 4.0 * std::numeric_limits<double>::epsilon()) return q;
  return q.normalized();
}

inline MapDatabase from_document(const nlohmann::json& doc) {
  if (!doc.is_object()) throw Error(Errc::MalformedFile, "top level must be a map");

  MapDatabase db;
  const auto version = doc.find("version");
  if (version == doc.end()) throw Error(Errc::MissingField, "version");
  if (!version->is_number_integer()) throw Error(Errc::MalformedFile, "version must be an integer");
  if (version->get<std::int64_t>() != 1) {
    throw Error(Errc::UnsupportedVersion, "version " + version->dump());
  }
  db.version = 1;

  const auto keyframes = doc.find("keyframes");
  if (keyframes == doc.end()) throw Error(Errc::MissingField, "keyframes");
  if (!keyframes->is_object()) throw Error(Errc::MalformedFile, "keyframes must be a map");
  for (const auto& [key, entry] : keyframes->items()) {
    Keyframe kf;
    kf.id = parse_id(key);
    if (!entry.is_object()) throw Error(Errc::MalformedFile, "keyframe " + key + " must be a map");
    const auto rot = entry.find("rot_cw");
    const auto trans = entry.find("trans_cw");
    if (rot == entry.end()) throw Error(Errc::MissingField, "keyframe " + key + " lacks rot_cw");
    if (trans == entry.end()) throw Error(Errc::MissingField, "keyframe " + key + " lacks trans_cw");
    kf.rot_cw = checked_quaternion(fixed_array<4>(*rot, "rot_cw"), kf.id);
    const auto t = fixed_array<3>(*trans, "trans_cw");
    kf.trans_cw = {t[0], t[1], t[2]};
    if (const auto ts = entry.find("ts"); ts != entry.end()) kf.timestamp = number_at(*ts, "ts");
    db.keyframes.push_back(kf);
  }

  if (const auto landmarks = doc.find("landmarks"); landmarks != doc.end()) {
    if (!landmarks->is_object()) throw Error(Errc::MalformedFile, "landmarks must be a map");
    for (const auto& [key, entry] : landmarks->items()) {
      Landmark lm;
      lm.id = parse_id(key);
      if (!entry.is_object()) throw Error(Errc::MalformedFile, "landmark " + key + " must be a map");
      const auto pos = entry.find("pos_w");
      if (pos == entry.end()) throw Error(Errc::MissingField, "landmark " + key + " lacks pos_w");
      const auto p = fixed_array<3>(*pos, "pos_w");
      lm.pos_w = {p[0], p[1], p[2]};
      db.landmarks.push_back(lm);
    }
  }

  const auto by_id = [](const auto& a, const auto& b) { return a.id < b.id; };
  const auto same_id = [](const auto& a, const auto& b) { return a.id == b.id; };
  std::sort(db.keyframes.begin(), db.keyframes.end(), by_id);
  std::sort(db.landmarks.begin(), db.landmarks.end(), by_id);
  if (std::adjacent_find(db.keyframes.begin(), db.keyframes.end(), same_id) != db.keyframes.end()) {
    throw Error(Errc::MalformedFile, "duplicate keyframe id");
  }
  if (std::adjacent_find(db.landmarks.begin(), db.landmarks.end(), same_id) != db.landmarks.end()) {
    throw Error(Errc::MalformedFile, "duplicate landmark id");
  }
  return db;
}

// Minimal MessagePack writer. Always emits float64 and the smallest integer,
// string and container headers, matching stock encoders.
class MsgpackWriter {
 public:
  std::vector<std::uint8_t> take() { return std::move(out_); }

  void map_header(std::size_t n) { container_header(n, 0x80, 0xde, 0xdf); }
  void array_header(std::size_t n) { container_header(n, 0x90, 0xdc, 0xdd); }

  void str(std::string_view s) {
    const std::size_t n = s.size();
    if (n < 32) {
      byte(static_cast<std::uint8_t>(0xa0 | n));
    } else if (n <= 0xff) {
      byte(0xd9);
      big_endian(n, 1);
    } else if (n <= 0xffff) {
      byte(0xda);
      big_endian(n, 2);
    } else {
      byte(0xdb);
      big_endian(n, 4);
    }
    out_.insert(out_.end(), s.begin(), s.end());
  }

  void uint(std::uint64_t v) {
    if (v < 0x80) {
      byte(static_cast<std::uint8_t>(v));
    } else if (v <= 0xff) {
      byte(0xcc);
      big_endian(v, 1);
    } else if (v <= 0xffff) {
      byte(0xcd);
      big_endian(v, 2);
    } else if (v <= 0xffffffffULL) {
      byte(0xce);
      big_endian(v, 4);
    } else {
      byte(0xcf);
      big_endian(v, 8);
    }
  }

  void float64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    byte(0xcb);
    big_endian(bits, 8);
  }

 private:
  void byte(std::uint8_t b) { out_.push_back(b); }

  void big_endian(std::uint64_t v, int bytes) {
    for (int i = bytes - 1; i >= 0; --i) byte(static_cast<std::uint8_t>(v >> (8 * i)));
  }

  void container_header(std::size_t n, std::uint8_t fix, std::uint8_t m16, std::uint8_t m32) {
    if (n < 16) {
      byte(static_cast<std::uint8_t>(fix | n));
    } else if (n <= 0xffff) {
      byte(m16);
      big_endian(n, 2);
    } else {
      byte(m32);
      big_endian(n, 4);
    }
  }

  std::vector<std::uint8_t> out_;
};

}  // namespace detail

/// Parses a NavMap v1 database. Input beginning (after whitespace) with '{'
/// is read as JSON, anything else as MessagePack.
inline MapDatabase parse_map_file(std::span<const std::uint8_t> bytes) {
  const auto first = std::find_if(bytes.begin(), bytes.end(),
                                  [](std::uint8_t b) { return std::isspace(b) == 0; });
  const bool text = first != bytes.end() && *first == '{';
  nlohmann::json doc;
  try {
    doc = text ? nlohmann::json::parse(bytes.begin(), bytes.end())
               : nlohmann::json::from_msgpack(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::MalformedFile, e.what());
  }
  return detail::from_document(doc);
}

inline MapDatabase parse_map_file(std::string_view bytes) {
  return parse_map_file(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

/// Canonical encoding: "version", "keyframes", then "landmarks" (omitted
/// when empty); ids ascending; every float as float64.
inline std::vector<std::uint8_t> serialize_map_file(const MapDatabase& db,
                                                    MapEncoding encoding = MapEncoding::Binary) {
  if (encoding == MapEncoding::Text) {
    nlohmann::ordered_json doc;
    doc["version"] = db.version;
    auto& kfs = doc["keyframes"] = nlohmann::ordered_json::object();
    for (const auto& kf : db.keyframes) {
      nlohmann::ordered_json entry;
      entry["rot_cw"] = {kf.rot_cw.w, kf.rot_cw.x, kf.rot_cw.y, kf.rot_cw.z};
      entry["trans_cw"] = {kf.trans_cw.x, kf.trans_cw.y, kf.trans_cw.z};
      if (kf.timestamp) entry["ts"] = *kf.timestamp;
      kfs[std::to_string(kf.id)] = std::move(entry);
    }
    if (!db.landmarks.empty()) {
      auto& lms = doc["landmarks"] = nlohmann::ordered_json::object();
      for (const auto& lm : db.landmarks) {
        lms[std::to_string(lm.id)]["pos_w"] = {lm.pos_w.x, lm.pos_w.y, lm.pos_w.z};
      }
    }
    const std::string s = doc.dump();
    return {s.begin(), s.end()};
  }

  detail::MsgpackWriter w;
  w.map_header(db.landmarks.empty() ? 2 : 3);
  w.str("version");
  w.uint(static_cast<std::uint64_t>(db.version));
  w.str("keyframes");
  w.map_header(db.keyframes.size());
  for (const auto& kf : db.keyframes) {
    w.str(std::to_string(kf.id));
    w.map_header(kf.timestamp ? 3 : 2);
    w.str("rot_cw");
    w.array_header(4);
    for (double v : {kf.rot_cw.w, kf.rot_cw.x, kf.rot_cw.y, kf.rot_cw.z}) w.float64(v);
    w.str("trans_cw");
    w.array_header(3);
    for (double v : {kf.trans_cw.x, kf.trans_cw.y, kf.trans_cw.z}) w.float64(v);
    if (kf.timestamp) {
      w.str("ts");
      w.float64(*kf.timestamp);
    }
  }
  if (!db.landmarks.empty()) {
    w.str("landmarks");
    w.map_header(db.landmarks.size());
    for (const auto& lm : db.landmarks) {
      w.str(std::to_string(lm.id));
      w.map_header(1);
      w.str("pos_w");
      w.array_header(3);
      for (double v : {lm.pos_w.x, lm.pos_w.y, lm.pos_w.z}) w.float64(v);
    }
  }
  return w.take();
}

/// World-frame camera position, c = -R^T t.
inline Vec3 camera_center(const Keyframe& kf) {
  const Vec3 c = multiply_transposed(to_rotation_matrix(kf.rot_cw), kf.trans_cw);
  return {-c.x, -c.y, -c.z};
}

/// One 2D point per keyframe, in ascending keyframe-id order.
inline std::vector<Vec2> project_points(const MapDatabase& db, const PlaneProjection& proj = {}) {
  if (db.keyframes.empty()) throw Error(Errc::EmptyMap, "map has no keyframes");
  std::vector<Vec2> points;
  points.reserve(db.keyframes.size());
  for (const auto& kf : db.keyframes) {
    const Vec3 c = camera_center(kf);
    points.push_back({c[static_cast<int>(proj.horizontal())], c[static_cast<int>(proj.vertical())]});
  }
  return points;
}

}  // namespace navstack
