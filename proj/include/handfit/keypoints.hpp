#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "handfit/errors.hpp"
#include "handfit/hand_model.hpp"

namespace handfit {

enum class Units { normalized, pixels_pseudo_z, millimeters };

inline std::string_view to_string(Units u) {
  switch (u) {
    case Units::normalized:
      return "normalized";
    case Units::pixels_pseudo_z:
      return "pixels";
    case Units::millimeters:
      return "mm";
  }
  return "?";
}

inline Units parse_units(std::string_view s) {
  if (s == "normalized") return Units::normalized;
  if (s == "pixels" || s == "pixels_pseudo_z") return Units::pixels_pseudo_z;
  if (s == "mm" || s == "millimeters") return Units::millimeters;
  throw ParameterError("unknown units '" + std::string(s) + "'");
}

struct ImageSize {
  double width = 0.0;
  double height = 0.0;
};

/// 21 labeled hand keypoints in MediaPipe order.
struct KeypointSet {
  Joints points{};
  Units units = Units::pixels_pseudo_z;
  Handedness handedness = Handedness::right;
  std::array<bool, kNumJoints> valid = all_valid();
  std::optional<ImageSize> image_size;
  double score = 1.0;

  static constexpr std::array<bool, kNumJoints> all_valid() {
    std::array<bool, kNumJoints> v{};
    for (auto& b : v) b = true;
    return v;
  }

  int valid_count() const {
    int n = 0;
    for (bool b : valid) n += b ? 1 : 0;
    return n;
  }

  bool palm_valid() const {
    for (int j : kPalmAnchors)
      if (!valid[j]) return false;
    return true;
  }
};

inline KeypointSet make_keypoints(const Joints& points, Units units = Units::pixels_pseudo_z,
                                  Handedness handedness = Handedness::right) {
  KeypointSet k;
  k.points = points;
  k.units = units;
  k.handedness = handedness;
  return k;
}

/// Reflection x -> -x. Used to canonicalize left hands onto the right-hand model.
inline Vec3 mirror_x(const Vec3& p) { return Vec3(-p.x(), p.y(), p.z()); }

inline Joints mirror_x(const Joints& pts) {
  Joints out;
  for (int j = 0; j < kNumJoints; ++j) out[j] = mirror_x(pts[j]);
  return out;
}

/// Mirrored points with the handedness label flipped.
inline KeypointSet mirrored(const KeypointSet& k) {
  KeypointSet out = k;
  out.points = mirror_x(k.points);
  out.handedness = k.handedness == Handedness::left ? Handedness::right : Handedness::left;
  return out;
}

}  // namespace handfit
