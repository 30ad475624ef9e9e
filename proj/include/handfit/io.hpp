#pragma once

// JSON keypoint files, FitResult files and OBJ skeletons.
//
// Keypoint file (one per image, see schema/keypoints.schema.json):
//   {"image_width": 640, "image_height": 480,
//    "hands": [{"handedness": "right", "score": 0.97, "units": "normalized",
//               "keypoints": [[x, y, z], ... 21], "valid": [true, ... 21]}]}
// `valid` is optional (all true). Image size is required when any hand is normalized.

#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "handfit/errors.hpp"
#include "handfit/keypoints.hpp"
#include "handfit/pipeline.hpp"
#include "json.hpp"

namespace handfit {

using Json = nlohmann::json;

struct KeypointFile {
  std::optional<ImageSize> image_size;
  std::vector<KeypointSet> hands;
};

namespace detail {

inline Vec3 vec3_from(const Json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw ParameterError(what + " must be an array of 3 numbers");
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) throw ParameterError(what + " must be an array of 3 numbers");
    v[i] = j[i].get<double>();
  }
  return v;
}

inline Json vec3_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

inline Json joints_json(const Joints& pts) {
  Json a = Json::array();
  for (const auto& p : pts) a.push_back(vec3_json(p));
  return a;
}

inline Joints joints_from(const Json& j, const std::string& what) {
  if (!j.is_array() || j.size() != kNumJoints) throw ParameterError(what + " must hold 21 points");
  Joints out;
  for (int i = 0; i < kNumJoints; ++i) out[i] = vec3_from(j[i], what + "[" + std::to_string(i) + "]");
  return out;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path.string(), 0, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// nlohmann reports a byte offset; turn it into a line number.
inline int line_of(const std::string& text, std::size_t byte) {
  int line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

inline Json parse_json(const std::string& text, const std::string& path) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ParseError(path, line_of(text, e.byte), e.what());
  }
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParameterError("cannot write " + path.string());
  out << text;
  if (!out) throw ParameterError("failed writing " + path.string());
}

}  // namespace detail

inline KeypointFile keypoint_file_from_json(const Json& doc) {
  if (!doc.is_object()) throw ParameterError("keypoint file must be a JSON object");
  KeypointFile file;
  const bool has_w = doc.contains("image_width"), has_h = doc.contains("image_height");
  if (has_w != has_h) throw ParameterError("image_width and image_height go together");
  if (has_w) {
    if (!doc["image_width"].is_number() || !doc["image_height"].is_number())
      throw ParameterError("image size must be numeric");
    file.image_size = ImageSize{doc["image_width"].get<double>(), doc["image_height"].get<double>()};
    if (!(file.image_size->width > 0.0 && file.image_size->height > 0.0))
      throw ParameterError("image size must be positive");
  }
  if (!doc.contains("hands") || !doc["hands"].is_array()) throw ParameterError("missing 'hands' array");
  int index = 0;
  for (const auto& h : doc["hands"]) {
    const std::string where = "hands[" + std::to_string(index++) + "]";
    if (!h.is_object()) throw ParameterError(where + " must be an object");
    KeypointSet k;
    k.handedness = parse_handedness(h.value("handedness", std::string("right")));
    k.units = parse_units(h.value("units", std::string("normalized")));
    k.score = h.value("score", 1.0);
    if (!h.contains("keypoints")) throw ParameterError(where + " has no keypoints");
    k.points = detail::joints_from(h["keypoints"], where + ".keypoints");
    if (h.contains("valid")) {
      const auto& v = h["valid"];
      if (!v.is_array() || v.size() != kNumJoints) throw ParameterError(where + ".valid must hold 21 booleans");
      for (int j = 0; j < kNumJoints; ++j) {
        if (!v[j].is_boolean()) throw ParameterError(where + ".valid must hold 21 booleans");
        k.valid[j] = v[j].get<bool>();
      }
    }
    if (k.units == Units::normalized) {
      if (!file.image_size) throw ParameterError(where + " is normalized but the file has no image size");
      for (int j = 0; j < kNumJoints; ++j) {
        const auto& p = k.points[j];
        if (k.valid[j] && (p.x() < 0.0 || p.x() > 1.0 || p.y() < 0.0 || p.y() > 1.0))
          throw ParameterError(where + " keypoint " + std::to_string(j) + " is outside [0, 1]");
      }
    }
    k.image_size = file.image_size;
    file.hands.push_back(k);
  }
  return file;
}

inline KeypointFile read_keypoint_file(const std::filesystem::path& path) {
  const std::string text = detail::read_text(path);
  const Json doc = detail::parse_json(text, path.string());
  try {
    return keypoint_file_from_json(doc);
  } catch (const ParameterError& e) {
    throw ParseError(path.string(), 0, e.what());
  }
}

inline Json to_json(const KeypointFile& file) {
  Json doc = Json::object();
  if (file.image_size) {
    doc["image_width"] = file.image_size->width;
    doc["image_height"] = file.image_size->height;
  }
  Json hands = Json::array();
  for (const auto& k : file.hands) {
    Json h;
    h["handedness"] = to_string(k.handedness);
    h["score"] = k.score;
    h["units"] = to_string(k.units);
    h["keypoints"] = detail::joints_json(k.points);
    h["valid"] = k.valid;
    hands.push_back(h);
  }
  doc["hands"] = hands;
  return doc;
}

inline void write_keypoint_file(const std::filesystem::path& path, const KeypointFile& file) {
  detail::write_text(path, to_json(file).dump(2) + "\n");
}

inline Json to_json(const RigidTransform& t) {
  Json rot = Json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(t.rotation(r, c));
  return {{"rotation", rot}, {"translation", detail::vec3_json(t.translation)}, {"scale", t.scale}};
}

inline RigidTransform transform_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("rotation") || !j["rotation"].is_array() || j["rotation"].size() != 9)
    throw ParameterError("transform needs a 9-entry row-major rotation");
  RigidTransform t;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) t.rotation(r, c) = j["rotation"][3 * r + c].get<double>();
  t.translation = detail::vec3_from(j.at("translation"), "translation");
  t.scale = j.at("scale").get<double>();
  return t;
}

inline Json to_json(const StageDiagnostics& d) {
  return {{"stage", d.stage},           {"loss_initial", d.loss_initial},
          {"loss_final", d.loss_final}, {"grad_norm", d.grad_norm},
          {"iterations", d.iterations}, {"evaluations", d.evaluations},
          {"status", to_string(d.status)}};
}

inline Json to_json(const FitResult& r) {
  Json j;
  j["handedness"] = to_string(r.handedness);
  j["mirrored"] = r.mirrored;
  j["theta"] = std::vector<double>(r.state.theta.data(), r.state.theta.data() + kNumPoseDof);
  j["beta"] = std::vector<double>(r.state.beta.data(), r.state.beta.data() + kNumShape);
  j["root"] = detail::vec3_json(r.state.root);
  j["transform"] = to_json(r.transform);
  j["joints"] = detail::joints_json(r.joints);
  Json stages = Json::array();
  for (const auto& d : r.stages) stages.push_back(to_json(d));
  j["diagnostics"] = {{"alignment", to_json(r.alignment)}, {"palm_rms", r.palm_rms}, {"stages", stages}};
  return j;
}

/// Reads what to_json(FitResult) wrote. Diagnostics are optional.
inline FitResult fit_result_from_json(const Json& j) {
  FitResult r;
  r.handedness = parse_handedness(j.value("handedness", std::string("right")));
  r.mirrored = j.value("mirrored", false);
  const auto theta = j.at("theta").get<std::vector<double>>();
  const auto beta = j.value("beta", std::vector<double>(kNumShape, 0.0));
  const Vec3 root = detail::vec3_from(j.at("root"), "root");
  r.state = PoseState::from_spans(theta, beta, std::span<const double>(root.data(), 3));
  r.transform = transform_from_json(j.at("transform"));
  r.joints = detail::joints_from(j.at("joints"), "joints");
  if (j.contains("diagnostics")) {
    const auto& d = j["diagnostics"];
    if (d.contains("alignment")) r.alignment = transform_from_json(d["alignment"]);
    r.palm_rms = d.value("palm_rms", 0.0);
  }
  return r;
}

/// Wavefront OBJ: one vertex per joint, one line element per bone.
inline void write_obj_skeleton(std::ostream& out, const HandModel& model, const Joints& joints) {
  out << "# hand skeleton: 21 joints, 20 bones\n";
  out.precision(17);
  for (const auto& p : joints) out << "v " << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
  for (int j = 1; j < kNumJoints; ++j) out << "l " << model.parent(j) + 1 << ' ' << j + 1 << '\n';
}

}  // namespace handfit
