#pragma once

// The handfit command line: fit, eval, synth, inspect, ablate.
// Exit codes: 0 success, 1 some frames failed or did not match, 2 usage or config error.

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "handfit/config.hpp"
#include "handfit/evalkit.hpp"
#include "handfit/io.hpp"
#include "handfit/model_io.hpp"
#include "handfit/pipeline.hpp"

namespace handfit::cli {

namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailures = 1;
inline constexpr int kExitUsage = 2;

/// Raised for anything the user has to fix before a run can start.
class UsageError : public Error {
 public:
  using Error::Error;
};

inline constexpr std::array<const char*, kNumJoints> kJointNames = {
    "wrist",      "thumb_cmc",  "thumb_mcp",  "thumb_ip",   "thumb_tip",  "index_mcp", "index_pip",
    "index_dip",  "index_tip",  "middle_mcp", "middle_pip", "middle_dip", "middle_tip", "ring_mcp",
    "ring_pip",   "ring_dip",   "ring_tip",   "little_mcp", "little_pip", "little_dip", "little_tip"};

/// Runs f(0..n-1) on `jobs` threads (0: hardware concurrency). f must not throw.
template <class F>
void parallel_for(std::size_t n, int jobs, F&& f) {
  std::size_t workers = jobs > 0 ? static_cast<std::size_t>(jobs) : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) f(i);
  };
  if (workers <= 1) {
    work();
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
}

inline HandModel load_model(const RunConfig& cfg) {
  return cfg.model_path.empty() ? default_hand_model() : load_hand_model(cfg.model_path);
}

inline void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw UsageError("cannot create output directory " + dir.string());
}

inline std::string frame_stem(int i) {
  std::ostringstream s;
  s << "frame_" << std::setw(6) << std::setfill('0') << i;
  return s.str();
}

inline Mask joint_mask(const std::string& which) { return which == "fingertips" ? fingertip_mask() : full_mask(); }

// ---------------------------------------------------------------------------
// fit

struct FitJob {
  fs::path file;
  std::vector<std::string> errors;
  int hands = 0;
  int failed = 0;
  std::optional<Joints> first_hand;  // hand 0 joints, for the truth summary
};

inline void fit_file(const HandModel& model, const RunConfig& cfg, const fs::path& out_dir, FitJob& job) {
  KeypointFile file;
  try {
    file = read_keypoint_file(job.file);
  } catch (const Error& e) {
    job.errors.push_back(e.what());
    job.failed = 1;
    return;
  }
  const std::string stem = job.file.stem().string();
  for (std::size_t k = 0; k < file.hands.size(); ++k) {
    ++job.hands;
    try {
      const KeypointSet& raw = file.hands[k];
      const KeypointSet target = raw.units == Units::normalized ? denormalize(raw) : raw;
      const FitResult r = fit(model, target, cfg.fit);
      Json j = to_json(r);
      j["frame"] = stem;
      j["hand_index"] = k;
      j["source"] = job.file.filename().string();
      j["units"] = to_string(target.units);
      detail::write_text(out_dir / (stem + "_h" + std::to_string(k) + ".json"), j.dump(2) + "\n");
      if (k == 0) job.first_hand = r.joints;
    } catch (const Error& e) {
      job.errors.push_back(job.file.string() + " hand " + std::to_string(k) + ": " + e.what());
      ++job.failed;
    }
  }
}

inline int cmd_fit(const std::vector<std::string>& inputs, const std::string& truth, const RunConfig& cfg,
                   std::ostream& out, std::ostream& err) {
  if (cfg.output_dir.empty()) throw UsageError("fit needs an output directory (--out or io.out)");
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    if (!fs::exists(in)) throw UsageError("no such input: " + in);
    for (auto& p : json_files(in)) files.push_back(p);
  }
  if (files.empty()) throw UsageError("no inputs: no .json keypoint files found");
  const HandModel model = load_model(cfg);
  const fs::path out_dir = cfg.output_dir;
  ensure_dir(out_dir);

  std::vector<FitJob> jobs(files.size());
  for (std::size_t i = 0; i < files.size(); ++i) jobs[i].file = files[i];
  parallel_for(jobs.size(), cfg.jobs, [&](std::size_t i) { fit_file(model, cfg, out_dir, jobs[i]); });

  int hands = 0, failed = 0;
  for (const auto& j : jobs) {
    for (const auto& e : j.errors) err << "error: " << e << "\n";
    hands += j.hands;
    failed += j.failed;
  }
  out << "fit: " << files.size() << " files, " << hands << " hands, " << failed << " failed\n";

  if (!truth.empty()) {
    std::map<std::string, Joints> pred;
    for (const auto& j : jobs)
      if (j.first_hand) pred[j.file.stem().string()] = *j.first_hand;
    std::vector<Joints> p, g;
    std::vector<Mask> m;
    for (const auto& gt : load_annotations(truth, cfg.gt_format)) {
      const auto it = pred.find(gt.stem);
      if (it == pred.end()) continue;
      p.push_back(it->second);
      g.push_back(gt.points);
      m.push_back(gt.valid & joint_mask(cfg.eval_joints));
    }
    if (p.empty()) {
      err << "error: no fitted frame matches the truth set\n";
      return kExitFailures;
    }
    out << std::setprecision(6) << "EPE vs truth: " << epe(p, g, m) << " over " << p.size()
        << " frames (no alignment)\n";
  }
  return failed > 0 ? kExitFailures : kExitOk;
}

// ---------------------------------------------------------------------------
// eval

inline constexpr const char* kProtocolNote =
    "Joints come from a 21-joint surrogate skeleton, not a full mesh model. Each prediction is "
    "similarity-aligned to its ground truth over the evaluated joints before scoring (unless "
    "alignment is off). Numbers are not directly comparable to results obtained with a different "
    "hand model or alignment protocol.";

struct Matched {
  std::vector<Joints> pred, gt;
  std::vector<Mask> masks;
  std::vector<std::string> missing_pred, missing_gt;
};

/// Prediction stems come from the "frame" field of fit results; only hand 0 is scored.
inline Matched match_frames(const fs::path& pred_dir, const std::vector<GtFrame>& gt, const Mask& joints) {
  std::map<std::string, Joints> pred;
  for (const auto& p : json_files(pred_dir)) {
    const std::string text = detail::read_text(p);
    const Json j = detail::parse_json(text, p.string());
    if (j.value("hand_index", 0) != 0) continue;
    const std::string stem = j.value("frame", p.stem().string());
    try {
      pred[stem] = detail::joints_from(j.at("joints"), "joints");
    } catch (const std::exception& e) {
      throw ParseError(p.string(), 0, e.what());
    }
  }
  Matched m;
  std::map<std::string, bool> used;
  for (const auto& g : gt) {
    const auto it = pred.find(g.stem);
    if (it == pred.end()) {
      m.missing_pred.push_back(g.stem);
      continue;
    }
    used[g.stem] = true;
    m.pred.push_back(it->second);
    m.gt.push_back(g.points);
    m.masks.push_back(g.valid & joints);
  }
  for (const auto& [stem, _] : pred)
    if (!used.count(stem)) m.missing_gt.push_back(stem);
  return m;
}

inline int cmd_eval(const std::string& pred_dir, const std::string& gt_path, const std::string& report_path,
                    const std::string& csv_path, const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  if (gt_path.empty()) throw UsageError("eval needs --gt");
  if (!fs::exists(pred_dir)) throw UsageError("no such prediction path: " + pred_dir);
  const auto gt = load_annotations(gt_path, cfg.gt_format);
  const Matched m = match_frames(pred_dir, gt, joint_mask(cfg.eval_joints));
  for (const auto& s : m.missing_pred) err << "unmatched: no prediction for " << s << "\n";
  for (const auto& s : m.missing_gt) err << "unmatched: no ground truth for " << s << "\n";
  if (m.pred.empty()) {
    err << "error: no frames to evaluate\n";
    return kExitFailures;
  }
  EvalOptions opt;
  opt.align = cfg.eval_align;
  EvalReport report;
  try {
    report = evaluate(m.pred, m.gt, m.masks, opt);
  } catch (const EmptyError& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailures;
  }
  const Json echo = {{"predictions", pred_dir},      {"ground_truth", gt_path},
                     {"format", cfg.gt_format},      {"joints", cfg.eval_joints},
                     {"frames_unmatched", m.missing_pred.size() + m.missing_gt.size()}};
  Json doc = handfit::to_json(report, echo);
  doc["note"] = kProtocolNote;
  if (!report_path.empty()) detail::write_text(report_path, doc.dump(2) + "\n");
  if (!csv_path.empty()) {
    std::ostringstream csv;
    write_pck_csv(csv, report.pck);
    detail::write_text(csv_path, csv.str());
  }
  print_table(out, report);
  const bool mismatch = !m.missing_pred.empty() || !m.missing_gt.empty();
  return mismatch || report.frames_skipped > 0 ? kExitFailures : kExitOk;
}

// ---------------------------------------------------------------------------
// synth

inline int cmd_synth(int frames, double sigma, std::uint64_t seed, const RunConfig& cfg, std::ostream& out) {
  if (cfg.output_dir.empty()) throw UsageError("synth needs an output directory (--out or io.out)");
  if (frames < 1) throw UsageError("--frames must be >= 1");
  if (!(sigma >= 0.0)) throw UsageError("--sigma must be >= 0");
  const HandModel model = load_model(cfg);
  const fs::path root = cfg.output_dir;
  ensure_dir(root / "keypoints");
  ensure_dir(root / "truth");
  const auto data = synth_generate(model, frames, sigma, seed);
  Json manifest = {{"frames", frames}, {"sigma_mm", sigma}, {"seed", seed}, {"units", "mm"}};
  Json params = Json::array();
  for (int i = 0; i < frames; ++i) {
    const std::string stem = frame_stem(i);
    const auto& f = data[i];
    write_keypoint_file(root / "keypoints" / (stem + ".json"), KeypointFile{std::nullopt, {f.target}});
    write_keypoint_file(root / "truth" / (stem + ".json"),
                        KeypointFile{std::nullopt, {make_keypoints(f.clean, Units::millimeters, f.target.handedness)}});
    params.push_back({{"frame", stem},
                      {"theta", std::vector<double>(f.state.theta.data(), f.state.theta.data() + kNumPoseDof)},
                      {"transform", to_json(f.transform)}});
  }
  manifest["truth_parameters"] = params;
  detail::write_text(root / "manifest.json", manifest.dump(2) + "\n");
  out << "synth: " << frames << " frames (sigma " << sigma << " mm, seed " << seed << ") -> " << root.string()
      << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// inspect

inline int cmd_inspect(const std::string& path, const std::string& obj_path, const RunConfig& cfg, std::ostream& out) {
  const HandModel model = load_model(cfg);
  const std::string text = detail::read_text(path);
  const Json j = detail::parse_json(text, path);
  FitResult r;
  try {
    r = fit_result_from_json(j);
  } catch (const std::exception& e) {
    throw ParseError(path, 0, e.what());
  }
  out << std::fixed << std::setprecision(4);
  if (j.contains("frame")) out << "frame       " << j["frame"].get<std::string>() << "\n";
  out << "handedness  " << to_string(r.handedness) << (r.mirrored ? " (fitted mirrored)" : "") << "\n";
  out << "root        " << r.state.root.x() << " " << r.state.root.y() << " " << r.state.root.z() << "\n";
  out << "scale       " << r.transform.scale << "\n";
  out << "theta (rad)       flex     twist    spread\n";
  const auto& limits = model.joint_limits();
  std::vector<std::string> violations;
  for (int k = 0; k < kNumArticulated; ++k) {
    out << "  " << std::left << std::setw(14) << kJointNames[kArticulated[k]] << std::right;
    for (int a = 0; a < 3; ++a) {
      const int i = 3 * k + a;
      const double v = r.state.theta[i];
      const bool bad = v < limits[i].lower || v > limits[i].upper;
      out << std::setw(9) << v << (bad ? "*" : " ");
      if (bad) {
        std::ostringstream s;
        s << std::fixed << std::setprecision(4) << kJointNames[kArticulated[k]] << "[" << a << "] = " << v
          << " outside [" << limits[i].lower << ", " << limits[i].upper << "]";
        violations.push_back(s.str());
      }
    }
    out << "\n";
  }
  out << "beta       ";
  for (int i = 0; i < kNumShape; ++i) out << " " << r.state.beta[i];
  out << "\n";
  if (violations.empty()) {
    out << "limits      all " << kNumPoseDof << " DoF in range\n";
  } else {
    out << "limits      " << violations.size() << " of " << kNumPoseDof << " DoF out of range\n";
    for (const auto& v : violations) out << "  " << v << "\n";
  }
  out.unsetf(std::ios::floatfield);
  if (!obj_path.empty()) {
    std::ofstream obj(obj_path);
    if (!obj) throw UsageError("cannot write " + obj_path);
    write_obj_skeleton(obj, model, r.joints);
    out << "wrote " << obj_path << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// ablate

struct AblationRow {
  char id = '?';
  std::string description;
  FitOptions options;
  int frames = 0;
  int failed = 0;
  double epe_all_mm = 0.0;
  double epe_tips_mm = 0.0;
  double auc_tips = 0.0;
};

/// Fits every synthetic frame under each grid configuration and scores against the clean joints
/// (same frame, no alignment). Failed frames are counted and left out of the metrics.
inline std::vector<AblationRow> run_ablation(const HandModel& model, const std::vector<SynthFrame>& data,
                                             const FitOptions& base, int jobs) {
  std::vector<AblationRow> rows;
  for (const auto& ex : ablation_grid(base)) {
    std::vector<std::optional<Joints>> fitted(data.size());
    parallel_for(data.size(), jobs, [&](std::size_t i) {
      try {
        fitted[i] = fit(model, data[i].target, ex.options).joints;
      } catch (const Error&) {
      }
    });
    AblationRow row{ex.id, ex.description, ex.options, static_cast<int>(data.size())};
    std::vector<Joints> p, g;
    std::vector<Mask> all, tips;
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (!fitted[i]) {
        ++row.failed;
        continue;
      }
      p.push_back(*fitted[i]);
      g.push_back(data[i].clean);
      all.push_back(full_mask());
      tips.push_back(fingertip_mask());
    }
    if (!p.empty()) {
      row.epe_all_mm = epe(p, g, all);
      row.epe_tips_mm = epe(p, g, tips);
      row.auc_tips = auc(pck_curve(p, g, tips, default_thresholds()));
    }
    rows.push_back(row);
  }
  return rows;
}

inline void write_ablation_csv(std::ostream& out, const std::vector<AblationRow>& rows) {
  out << "id,optimizer,loss,fingertip_weight,stages,frames,failed,epe_all_mm,epe_tips_mm,auc_tips\n";
  out.precision(17);
  for (const auto& r : rows)
    out << r.id << ',' << to_string(r.options.solver.method) << ',' << to_string(r.options.loss.kind) << ','
        << r.options.loss.fingertip_weight << ',' << (r.options.stages == Stage::one ? 1 : 2) << ',' << r.frames
        << ',' << r.failed << ',' << r.epe_all_mm << ',' << r.epe_tips_mm << ',' << r.auc_tips << '\n';
}

inline int cmd_ablate(int frames, double sigma, std::uint64_t seed, const std::string& csv_path,
                      const RunConfig& cfg, std::ostream& out) {
  if (frames < 1) throw UsageError("--frames must be >= 1");
  if (!(sigma >= 0.0)) throw UsageError("--sigma must be >= 0");
  const HandModel model = load_model(cfg);
  const auto data = synth_generate(model, frames, sigma, seed);
  const auto rows = run_ablation(model, data, cfg.fit, cfg.jobs);
  out << "ablation on " << frames << " synthetic frames (sigma " << sigma << " mm, seed " << seed << ")\n";
  out << "ID  configuration                               EPE all   EPE tips  AUC tips  failed\n";
  for (const auto& r : rows)
    out << r.id << "   " << std::left << std::setw(42) << r.description << std::right << std::fixed
        << std::setprecision(3) << std::setw(9) << r.epe_all_mm << std::setw(11) << r.epe_tips_mm
        << std::setw(10) << r.auc_tips << std::setw(8) << r.failed << "\n";
  out.unsetf(std::ios::floatfield);
  if (!csv_path.empty()) {
    std::ostringstream csv;
    write_ablation_csv(csv, rows);
    detail::write_text(csv_path, csv.str());
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// entry point

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  bool print_config = false;
};

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fit a kinematic hand model to 21 hand keypoints and evaluate the fits.", "handfit"};
  app.require_subcommand(1);

  CommonFlags common;
  // Shortcut flags become key=value assignments applied after the config file.
  std::vector<std::string> shortcuts;
  auto add_common = [&](CLI::App* sub, bool fit_flags) {
    sub->add_option("-c,--config", common.config, "key=value config file");
    sub->add_option("--set", common.sets, "override one config key (key=value), repeatable");
    sub->add_flag("--print-config", common.print_config, "print the merged configuration and exit");
    auto shortcut = [&](const char* flag, const char* key, const char* help) {
      sub->add_option_function<std::string>(
          flag, [&shortcuts, key](const std::string& v) { shortcuts.push_back(std::string(key) + "=" + v); }, help);
    };
    shortcut("-j,--jobs", "run.jobs", "worker threads (default: all processors)");
    shortcut("--model", "model.path", "hand model file (default: built-in skeleton)");
    if (fit_flags) {
      shortcut("--loss", "loss.kind", "mse | geman_mcclure | huber");
      shortcut("--method", "solver.method", "lbfgs | bfgs");
      shortcut("--stages", "fit.stages", "1 or 2");
      shortcut("--fingertip-weight", "loss.fingertip_weight", "weight on the five fingertips");
      shortcut("--max-iters", "solver.max_iters", "solver iteration cap per stage");
    }
  };

  std::vector<std::string> fit_inputs;
  std::string truth, pred_dir, gt_path, report_path, csv_path, result_path, obj_path;
  int frames = 50;
  double sigma = 0.0;
  std::uint64_t seed = 42;

  auto* fit_cmd = app.add_subcommand("fit", "fit keypoint files, one result JSON per hand");
  fit_cmd->add_option("inputs", fit_inputs, "keypoint JSON files or directories")->required();
  fit_cmd->add_option_function<std::string>(
      "-o,--out", [&](const std::string& v) { shortcuts.push_back("io.out=" + v); }, "output directory");
  fit_cmd->add_option("--truth", truth, "ground truth to report EPE against (matched by stem)");
  fit_cmd->add_option_function<std::string>(
      "--format", [&](const std::string& v) { shortcuts.push_back("eval.format=" + v); }, "truth format");
  add_common(fit_cmd, true);

  auto* eval_cmd = app.add_subcommand("eval", "score fit results against ground truth");
  eval_cmd->add_option("predictions", pred_dir, "directory of fit results")->required();
  eval_cmd->add_option("--gt", gt_path, "ground truth file or directory")->required();
  eval_cmd->add_option_function<std::string>(
      "--format", [&](const std::string& v) { shortcuts.push_back("eval.format=" + v); },
      "egodexter | dexterobject | generic_json");
  eval_cmd->add_option_function<std::string>(
      "--joints", [&](const std::string& v) { shortcuts.push_back("eval.joints=" + v); }, "all | fingertips");
  eval_cmd->add_flag_callback("--no-align", [&] { shortcuts.push_back("eval.align=false"); },
                              "score without per-frame similarity alignment");
  eval_cmd->add_option("--report", report_path, "write the JSON report here");
  eval_cmd->add_option("--csv", csv_path, "write the PCK curve here");
  add_common(eval_cmd, false);

  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic keypoint set with ground truth");
  synth_cmd->add_option("-n,--frames", frames, "frame count")->capture_default_str();
  synth_cmd->add_option("--sigma", sigma, "Gaussian noise per coordinate, mm")->capture_default_str();
  synth_cmd->add_option("--seed", seed, "random seed")->capture_default_str();
  synth_cmd->add_option_function<std::string>(
      "-o,--out", [&](const std::string& v) { shortcuts.push_back("io.out=" + v); }, "output directory");
  add_common(synth_cmd, false);

  auto* inspect_cmd = app.add_subcommand("inspect", "print a fit result and optionally export its skeleton");
  inspect_cmd->add_option("result", result_path, "fit result JSON")->required();
  inspect_cmd->add_option("--obj", obj_path, "write the skeleton as Wavefront OBJ");
  add_common(inspect_cmd, false);

  auto* ablate_cmd = app.add_subcommand("ablate", "run the eight-configuration ablation grid on synthetic data");
  ablate_cmd->add_option("-n,--frames", frames, "frame count")->capture_default_str();
  ablate_cmd->add_option("--sigma", sigma, "Gaussian noise per coordinate, mm")->capture_default_str();
  ablate_cmd->add_option("--seed", seed, "random seed")->capture_default_str();
  ablate_cmd->add_option("--csv", csv_path, "write one row per configuration here");
  add_common(ablate_cmd, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  RunConfig cfg;
  try {
    if (!common.config.empty()) apply_config_file(cfg, common.config);
    for (const auto& s : common.sets) apply_assignment(cfg, s);
    for (const auto& s : shortcuts) apply_assignment(cfg, s);
    cfg.fit.validate();
  } catch (const Error& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  }
  if (common.print_config) {
    out << dump_config(cfg);
    return kExitOk;
  }

  try {
    if (*fit_cmd) return cmd_fit(fit_inputs, truth, cfg, out, err);
    if (*eval_cmd) return cmd_eval(pred_dir, gt_path, report_path, csv_path, cfg, out, err);
    if (*synth_cmd) return cmd_synth(frames, sigma, seed, cfg, out);
    if (*inspect_cmd) return cmd_inspect(result_path, obj_path, cfg, out);
    if (*ablate_cmd) return cmd_ablate(frames, sigma, seed, csv_path, cfg, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailures;
  }
  return kExitUsage;
}

}  // namespace handfit::cli
