#pragma once

// Metrics (EPE, PCK, AUC), evaluation alignment, synthetic data and annotation loaders.

#include <algorithm>
#include <cstdlib>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "handfit/alignment.hpp"
#include "handfit/errors.hpp"
#include "handfit/hand_model.hpp"
#include "handfit/io.hpp"
#include "handfit/model_io.hpp"
#include "handfit/keypoints.hpp"

namespace handfit {

using Mask = std::array<bool, kNumJoints>;

inline Mask full_mask() { return KeypointSet::all_valid(); }

inline Mask fingertip_mask() {
  Mask m{};
  for (int j : kFingertips) m[j] = true;
  return m;
}

inline Mask operator&(const Mask& a, const Mask& b) {
  Mask m{};
  for (int j = 0; j < kNumJoints; ++j) m[j] = a[j] && b[j];
  return m;
}

using PckCurve = std::vector<std::pair<double, double>>;

namespace detail {

inline void check_frames(std::span<const Joints> pred, std::span<const Joints> gt, std::span<const Mask> masks) {
  if (pred.size() != gt.size() || gt.size() != masks.size())
    throw ParameterError("prediction, ground truth and mask counts differ (" + std::to_string(pred.size()) + ", " +
                         std::to_string(gt.size()) + ", " + std::to_string(masks.size()) + ")");
}

// Euclidean errors over valid pairs, frame-major.
inline std::vector<double> errors(std::span<const Joints> pred, std::span<const Joints> gt,
                                  std::span<const Mask> masks) {
  check_frames(pred, gt, masks);
  std::vector<double> e;
  for (std::size_t f = 0; f < pred.size(); ++f)
    for (int j = 0; j < kNumJoints; ++j)
      if (masks[f][j]) e.push_back((pred[f][j] - gt[f][j]).norm());
  if (e.empty()) throw EmptyError("no valid keypoints to evaluate");
  return e;
}

}  // namespace detail

/// Root mean squared joint distance over valid pairs.
inline double epe(std::span<const Joints> pred, std::span<const Joints> gt, std::span<const Mask> masks) {
  const auto e = detail::errors(pred, gt, masks);
  double ss = 0.0;
  for (double v : e) ss += v * v;
  return std::sqrt(ss / e.size());
}

/// 31 integer thresholds, 20..50 mm.
inline std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int mm = 20; mm <= 50; ++mm) t.push_back(mm);
  return t;
}

inline PckCurve pck_curve(std::span<const Joints> pred, std::span<const Joints> gt, std::span<const Mask> masks,
                          std::span<const double> thresholds) {
  if (thresholds.empty()) throw ParameterError("pck needs at least one threshold");
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (!(thresholds[i] > thresholds[i - 1])) throw ParameterError("pck thresholds must be strictly increasing");
  auto e = detail::errors(pred, gt, masks);
  std::sort(e.begin(), e.end());
  PckCurve curve;
  for (double t : thresholds) {
    const auto n = std::upper_bound(e.begin(), e.end(), t) - e.begin();
    curve.emplace_back(t, static_cast<double>(n) / e.size());
  }
  return curve;
}

/// Trapezoidal area under the curve, normalized by the threshold span.
inline double auc(const PckCurve& curve) {
  if (curve.size() < 2) throw ParameterError("auc needs at least two curve points");
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    const double w = curve[i].first - curve[i - 1].first;
    if (!(w > 0.0)) throw ParameterError("auc thresholds must be strictly increasing");
    area += 0.5 * w * (curve[i].second + curve[i - 1].second);
  }
  return area / (curve.back().first - curve.front().first);
}

/// Similarity-aligns `pred` onto `gt` using the valid correspondences.
/// Empty when fewer than three are valid or they are degenerate.
inline std::optional<Joints> align_for_eval(const Joints& pred, const Joints& gt, const Mask& mask) {
  std::vector<Vec3> src, dst;
  for (int j = 0; j < kNumJoints; ++j)
    if (mask[j]) {
      src.push_back(pred[j]);
      dst.push_back(gt[j]);
    }
  if (src.size() < 3) return std::nullopt;
  try {
    return apply_to(estimate_similarity(src, dst), pred);
  } catch (const DegenerateError&) {
    return std::nullopt;
  }
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SynthFrame {
  KeypointSet target;  // millimeters, right hand
  Joints clean{};      // noise-free joints in target space
  PoseState state;     // articulation only, root zero
  RigidTransform transform;
};

/// Random poses within 80% of the joint limits under random similarity transforms
/// (uniform rotation, scale log-uniform in [500, 2000], translation in a 1 m box),
/// plus isotropic Gaussian noise of `noise_sigma` per coordinate.
inline std::vector<SynthFrame> synth_generate(const HandModel& model, int n_frames, double noise_sigma,
                                              std::uint64_t seed) {
  if (n_frames < 0) throw ParameterError("frame count must be >= 0");
  if (!(noise_sigma >= 0.0)) throw ParameterError("noise sigma must be >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<SynthFrame> frames;
  for (int f = 0; f < n_frames; ++f) {
    SynthFrame s;
    for (int i = 0; i < kNumPoseDof; ++i) {
      const auto& l = model.joint_limits()[i];
      s.state.theta[i] = 0.8 * (l.lower + (l.upper - l.lower) * unit(rng));
    }
    Eigen::Quaterniond q(normal(rng), normal(rng), normal(rng), normal(rng));
    q.normalize();
    s.transform.rotation = q.toRotationMatrix();
    s.transform.scale = 500.0 * std::pow(4.0, unit(rng));
    s.transform.translation = Vec3(unit(rng) - 0.5, unit(rng) - 0.5, unit(rng) - 0.5) * 1000.0;
    s.clean = apply_to(s.transform, forward_kinematics(model, s.state));
    s.target = make_keypoints(s.clean, Units::millimeters, model.handedness());
    if (noise_sigma > 0.0)
      for (auto& p : s.target.points) p += noise_sigma * Vec3(normal(rng), normal(rng), normal(rng));
    frames.push_back(s);
  }
  return frames;
}

// ---------------------------------------------------------------------------
// Ground truth

struct GtFrame {
  std::string stem;
  Joints points{};
  Mask valid{};
};

enum class AnnotationFormat { egodexter, dexterobject, generic_json };

inline AnnotationFormat parse_annotation_format(std::string_view s) {
  if (s == "egodexter") return AnnotationFormat::egodexter;
  if (s == "dexterobject") return AnnotationFormat::dexterobject;
  if (s == "generic_json") return AnnotationFormat::generic_json;
  throw ParameterError("unknown annotation format '" + std::string(s) + "'");
}

inline std::string_view to_string(AnnotationFormat f) {
  switch (f) {
    case AnnotationFormat::egodexter:
      return "egodexter";
    case AnnotationFormat::dexterobject:
      return "dexterobject";
    case AnnotationFormat::generic_json:
      return "generic_json";
  }
  return "?";
}

namespace detail {

inline bool is_number(const std::string& tok) {
  if (tok.empty()) return false;
  char* end = nullptr;
  std::strtod(tok.c_str(), &end);
  return end == tok.c_str() + tok.size();
}

// One frame per line: optional name token, then 5 fingertip triples (thumb..little, mm).
// Separators may be whitespace, commas or semicolons. An all-zero triple marks a missing
// annotation. Lines with 24 numbers carry 3 extra object corners, which are ignored.
inline std::vector<GtFrame> load_fingertip_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open annotation file");
  std::vector<GtFrame> frames;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    std::replace(raw.begin(), raw.end(), ',', ' ');
    std::replace(raw.begin(), raw.end(), ';', ' ');
    auto tok = split_ws(raw);
    if (tok.empty() || tok[0][0] == '#') continue;
    GtFrame f;
    if (!is_number(tok[0])) {
      f.stem = tok[0];
      tok.erase(tok.begin());
    } else {
      std::ostringstream s;
      s << std::setw(6) << std::setfill('0') << frames.size();
      f.stem = s.str();
    }
    if (tok.size() != 15 && tok.size() != 24)
      throw ParseError(path.string(), line, "expected 15 fingertip coordinates, got " + std::to_string(tok.size()));
    for (int t = 0; t < 5; ++t) {
      const Vec3 p(parse_double(tok[3 * t], path.string(), line), parse_double(tok[3 * t + 1], path.string(), line),
                   parse_double(tok[3 * t + 2], path.string(), line));
      const int j = kFingertips[t];
      f.points[j] = p;
      f.valid[j] = !(p.x() == 0.0 && p.y() == 0.0 && p.z() == 0.0);
    }
    frames.push_back(f);
  }
  return frames;
}

inline GtFrame load_generic_file(const std::filesystem::path& path) {
  const KeypointFile file = read_keypoint_file(path);
  if (file.hands.empty()) throw ParseError(path.string(), 0, "ground truth file has no hands");
  GtFrame f;
  f.stem = path.stem().string();
  f.points = file.hands[0].points;
  f.valid = file.hands[0].valid;
  return f;
}

}  // namespace detail

/// JSON files in a directory (or one file), sorted by name.
inline std::vector<std::filesystem::path> json_files(const std::filesystem::path& path) {
  std::vector<std::filesystem::path> out;
  if (std::filesystem::is_directory(path)) {
    for (const auto& e : std::filesystem::directory_iterator(path))
      if (e.is_regular_file() && e.path().extension() == ".json") out.push_back(e.path());
    std::sort(out.begin(), out.end());
  } else if (std::filesystem::exists(path)) {
    out.push_back(path);
  } else {
    throw ParseError(path.string(), 0, "no such file or directory");
  }
  return out;
}

inline std::vector<GtFrame> load_annotations(const std::filesystem::path& path, AnnotationFormat format) {
  if (format == AnnotationFormat::generic_json) {
    std::vector<GtFrame> frames;
    for (const auto& p : json_files(path)) frames.push_back(detail::load_generic_file(p));
    return frames;
  }
  return detail::load_fingertip_text(path);
}

inline std::vector<GtFrame> load_annotations(const std::filesystem::path& path, std::string_view format) {
  return load_annotations(path, parse_annotation_format(format));
}

// ---------------------------------------------------------------------------
// Reports

struct EvalOptions {
  bool align = true;
  std::vector<double> thresholds = default_thresholds();
};

struct EvalReport {
  double epe_mm = 0.0;
  PckCurve pck;
  double auc = 0.0;
  int frames_evaluated = 0;
  int keypoints_evaluated = 0;
  int frames_skipped = 0;
  bool aligned = true;
};

/// Metrics over frames; with alignment on, frames that cannot be aligned are skipped and counted.
inline EvalReport evaluate(std::span<const Joints> pred, std::span<const Joints> gt, std::span<const Mask> masks,
                           const EvalOptions& opt = {}) {
  detail::check_frames(pred, gt, masks);
  std::vector<Joints> p, g;
  std::vector<Mask> m;
  EvalReport r;
  r.aligned = opt.align;
  for (std::size_t f = 0; f < pred.size(); ++f) {
    Joints use = pred[f];
    if (opt.align) {
      const auto a = align_for_eval(pred[f], gt[f], masks[f]);
      if (!a) {
        ++r.frames_skipped;
        continue;
      }
      use = *a;
    }
    p.push_back(use);
    g.push_back(gt[f]);
    m.push_back(masks[f]);
    for (bool b : masks[f]) r.keypoints_evaluated += b ? 1 : 0;
  }
  r.frames_evaluated = static_cast<int>(p.size());
  r.epe_mm = epe(p, g, m);
  r.pck = pck_curve(p, g, m, opt.thresholds);
  r.auc = auc(r.pck);
  return r;
}

inline Json to_json(const EvalReport& r, const Json& config_echo = Json::object()) {
  Json pck = Json::array();
  for (const auto& [t, f] : r.pck) pck.push_back({t, f});
  return {{"epe_mm", r.epe_mm},
          {"auc", r.auc},
          {"pck", pck},
          {"frames_evaluated", r.frames_evaluated},
          {"keypoints_evaluated", r.keypoints_evaluated},
          {"frames_skipped", r.frames_skipped},
          {"alignment", r.aligned ? "similarity" : "none"},
          {"config_echo", config_echo}};
}

inline void write_pck_csv(std::ostream& out, const PckCurve& curve) {
  out << "threshold_mm,fraction\n";
  out.precision(17);
  for (const auto& [t, f] : curve) out << t << ',' << f << '\n';
}

inline void print_table(std::ostream& out, const EvalReport& r) {
  out << std::fixed << std::setprecision(3);
  out << "frames     " << r.frames_evaluated << " evaluated, " << r.frames_skipped << " skipped\n";
  out << "keypoints  " << r.keypoints_evaluated << "\n";
  out << "alignment  " << (r.aligned ? "similarity (per frame)" : "none") << "\n";
  out << "EPE        " << r.epe_mm << " mm\n";
  out << "AUC        " << r.auc << " (" << r.pck.front().first << ".." << r.pck.back().first << " mm)\n";
  for (const auto& [t, f] : r.pck)
    if (std::fmod(t, 5.0) == 0.0) out << "PCK@" << std::setw(3) << static_cast<int>(t) << "    " << f << "\n";
  out.unsetf(std::ios::floatfield);
}

}  // namespace handfit
