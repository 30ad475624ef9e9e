#pragma once

// Keypoints in, fitted hand out:
//   mirror to the model's handedness -> scale and rigid alignment on the palm ->
//   stage one (3D) -> optional stage two (2D + joint limits) -> fold the alignment
//   rotation into the root and map joints back to target space.

#include <string>
#include <string_view>
#include <vector>

#include "handfit/alignment.hpp"
#include "handfit/errors.hpp"
#include "handfit/hand_model.hpp"
#include "handfit/keypoints.hpp"
#include "handfit/objectives.hpp"
#include "handfit/solver.hpp"

namespace handfit {

/// Normalized detector output to pixels. z follows the detector convention and scales with width.
inline KeypointSet denormalize(const KeypointSet& kp) {
  if (kp.units != Units::normalized) throw ParameterError("denormalize expects normalized keypoints");
  if (!kp.image_size || !(kp.image_size->width > 0.0) || !(kp.image_size->height > 0.0))
    throw ParameterError("denormalize needs a positive image size");
  KeypointSet out = kp;
  const double w = kp.image_size->width, h = kp.image_size->height;
  for (auto& p : out.points) p = Vec3(p.x() * w, p.y() * h, p.z() * w);
  out.units = Units::pixels_pseudo_z;
  return out;
}

/// How the model-to-target scale is found.
/// palm_ratio: wrist to index-MCP distance ratio. similarity: least squares over the palm anchors.
enum class ScaleMode { palm_ratio, similarity };

inline std::string_view to_string(ScaleMode m) { return m == ScaleMode::palm_ratio ? "palm_ratio" : "similarity"; }

inline ScaleMode parse_scale_mode(std::string_view s) {
  if (s == "palm_ratio") return ScaleMode::palm_ratio;
  if (s == "similarity") return ScaleMode::similarity;
  throw ParameterError("unknown scale mode '" + std::string(s) + "'");
}

struct FitOptions {
  LossSpec loss;
  SolverConfig solver;
  Stage stages = Stage::one;  // Stage::two runs both
  bool refine_root = false;
  bool optimize_shape = false;
  double shape_l2 = 1e-3;
  ScaleMode scale_mode = ScaleMode::palm_ratio;

  void validate() const {
    loss.validate();
    solver.validate();
    if (!(shape_l2 >= 0.0)) throw ParameterError("fit.shape_l2 must be >= 0");
  }
};

struct StageDiagnostics {
  int stage = 1;
  double loss_initial = 0.0;
  double loss_final = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  int evaluations = 0;
  SolveStatus status = SolveStatus::max_iters;
};

struct FitResult {
  /// Model parameters. The alignment rotation is folded into `state.root`.
  PoseState state;
  /// Placement of the posed model in target space: joints == apply_to(transform, FK(state)),
  /// mirrored in x when `mirrored` is set. Its rotation is always the identity.
  RigidTransform transform;
  /// The palm alignment found before optimizing (model rest pose -> canonicalized target).
  RigidTransform alignment;
  Joints joints{};
  Handedness handedness = Handedness::right;
  bool mirrored = false;
  double palm_rms = 0.0;  // alignment residual over the palm anchors, target units
  std::vector<StageDiagnostics> stages;
};

/// Raised when a stage hits a non-finite objective; carries the stages finished so far.
class FitError : public Error {
 public:
  FitError(const std::string& what, std::vector<StageDiagnostics> done) : Error(what), stages_(std::move(done)) {}
  const std::vector<StageDiagnostics>& stages() const noexcept { return stages_; }

 private:
  std::vector<StageDiagnostics> stages_;
};

namespace detail {

inline std::vector<Vec3> palm_points(const Joints& pts) {
  std::vector<Vec3> out;
  for (int j : kPalmAnchors) out.push_back(pts[j]);
  return out;
}

inline RigidTransform align_palm(const HandModel& model, const KeypointSet& target, ScaleMode mode) {
  const auto dst = palm_points(target.points);
  if (mode == ScaleMode::similarity) return estimate_similarity(palm_points(model.rest_joints()), dst);
  const double s = estimate_scale(make_keypoints(model.rest_joints()), target);
  std::vector<Vec3> src = palm_points(model.rest_joints());
  for (auto& p : src) p *= s;
  RigidTransform t = estimate_rigid(src, dst);
  t.scale = s;
  return t;
}

}  // namespace detail

inline FitResult fit(const HandModel& model, const KeypointSet& target, const FitOptions& opt) {
  opt.validate();
  if (target.units == Units::normalized) throw ParameterError("fit expects denormalized keypoints");
  if (!target.palm_valid()) throw ParameterError("fit needs all six palm anchors (0, 1, 5, 9, 13, 17)");
  for (int j = 0; j < kNumJoints; ++j)
    if (target.valid[j] && !target.points[j].allFinite())
      throw ParameterError("keypoint " + std::to_string(j) + " is not finite");

  FitResult result;
  result.handedness = target.handedness;
  result.mirrored = target.handedness != model.handedness();
  const KeypointSet canon = result.mirrored ? mirrored(target) : target;

  const RigidTransform t = detail::align_palm(model, canon, opt.scale_mode);
  result.alignment = t;
  {
    double ss = 0.0;
    for (int j : kPalmAnchors) ss += (apply_to(t, model.rest_joints()[j]) - canon.points[j]).squaredNorm();
    result.palm_rms = std::sqrt(ss / kPalmAnchors.size());
  }

  KeypointSet local = canon;
  local.points = apply_to(invert(t), canon.points);
  const ResidualFrame frame{t.scale, t.rotation};
  const VariableLayout layout{opt.refine_root, opt.optimize_shape};
  const double shape_l2 = opt.optimize_shape ? opt.shape_l2 : 0.0;

  PoseState state;
  auto run_stage = [&](Stage stage) {
    HandObjective obj(model, local, opt.loss, stage, frame, layout, state, shape_l2);
    StageDiagnostics d;
    d.stage = stage == Stage::one ? 1 : 2;
    SolveOutcome out;
    try {
      out = minimize(obj, obj.pack(state), opt.solver);
    } catch (const NumericError& e) {
      throw FitError("stage " + std::to_string(d.stage) + ": " + e.what(), result.stages);
    }
    d.loss_initial = out.f_initial;
    d.loss_final = out.f_final;
    d.grad_norm = out.grad_norm;
    d.iterations = out.iterations;
    d.evaluations = out.evaluations;
    d.status = out.status;
    result.stages.push_back(d);
    state = obj.unpack(out.x_final);
  };
  run_stage(Stage::one);
  if (opt.stages == Stage::two) run_stage(Stage::two);

  // FK rotates every joint about the origin by the root, so R_align * FK(r) == FK(R_align * R(r)).
  state.root = matrix_to_axis_angle(t.rotation * axis_angle_to_matrix(state.root));
  result.state = state;
  result.transform = RigidTransform{Mat3::Identity(), t.translation, t.scale};
  result.joints = apply_to(result.transform, forward_kinematics(model, state));
  if (result.mirrored) result.joints = mirror_x(result.joints);
  return result;
}

/// Joints in target space for a fitted state, honoring the mirror flag.
inline Joints posed_joints(const HandModel& model, const FitResult& r) {
  Joints j = apply_to(r.transform, forward_kinematics(model, r.state));
  return r.mirrored ? mirror_x(j) : j;
}

}  // namespace handfit
