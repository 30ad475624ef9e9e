#pragma once

// Run configuration: defaults, then a key=value file, then command-line overrides.
//
//   # comment
//   loss.kind = geman_mcclure
//   solver.max_iters = 500
//
// Keys are listed in config_keys(). Unknown keys and malformed values are errors.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "handfit/errors.hpp"
#include "handfit/evalkit.hpp"
#include "handfit/pipeline.hpp"

namespace handfit {

inline std::string_view to_string(ResidualMode m) {
  return m == ResidualMode::per_coordinate ? "per_coordinate" : "per_point";
}

inline ResidualMode parse_residual_mode(std::string_view s) {
  if (s == "per_coordinate") return ResidualMode::per_coordinate;
  if (s == "per_point") return ResidualMode::per_point;
  throw ParameterError("unknown residual mode '" + std::string(s) + "'");
}

struct RunConfig {
  FitOptions fit;
  std::string model_path;  // empty: built-in skeleton
  std::string output_dir;
  int jobs = 0;  // 0: one worker per hardware thread
  std::string gt_format = "generic_json";
  bool eval_align = true;
  std::string eval_joints = "all";  // all | fingertips
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ParameterError(key + ": expected a number, got '" + v + "'");
  return d;
}

inline int to_int(const std::string& key, const std::string& v) {
  std::size_t used = 0;
  int i = 0;
  try {
    i = std::stoi(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size()) throw ParameterError(key + ": expected an integer, got '" + v + "'");
  return i;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ParameterError(key + ": expected true or false, got '" + v + "'");
}

inline Stage to_stages(const std::string& key, const std::string& v) {
  if (v == "1" || v == "one") return Stage::one;
  if (v == "2" || v == "two") return Stage::two;
  throw ParameterError(key + ": expected 1 or 2, got '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

inline const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"loss.kind", [](RunConfig& c, const auto&, const auto& v) { c.fit.loss.kind = parse_loss_kind(v); }},
      {"loss.rho", [](RunConfig& c, const auto& k, const auto& v) { c.fit.loss.rho = to_double(k, v); }},
      {"loss.delta", [](RunConfig& c, const auto& k, const auto& v) { c.fit.loss.delta = to_double(k, v); }},
      {"loss.fingertip_weight",
       [](RunConfig& c, const auto& k, const auto& v) { c.fit.loss.fingertip_weight = to_double(k, v); }},
      {"loss.a_limits", [](RunConfig& c, const auto& k, const auto& v) { c.fit.loss.a_limits = to_double(k, v); }},
      {"loss.residual_mode",
       [](RunConfig& c, const auto&, const auto& v) { c.fit.loss.residual_mode = parse_residual_mode(v); }},
      {"solver.method", [](RunConfig& c, const auto&, const auto& v) { c.fit.solver.method = parse_solver_method(v); }},
      {"solver.memory", [](RunConfig& c, const auto& k, const auto& v) { c.fit.solver.memory = to_int(k, v); }},
      {"solver.max_iters", [](RunConfig& c, const auto& k, const auto& v) { c.fit.solver.max_iters = to_int(k, v); }},
      {"solver.grad_tol", [](RunConfig& c, const auto& k, const auto& v) { c.fit.solver.grad_tol = to_double(k, v); }},
      {"solver.f_tol", [](RunConfig& c, const auto& k, const auto& v) { c.fit.solver.f_tol = to_double(k, v); }},
      {"solver.c1", [](RunConfig& c, const auto& k, const auto& v) { c.fit.solver.c1 = to_double(k, v); }},
      {"solver.c2", [](RunConfig& c, const auto& k, const auto& v) { c.fit.solver.c2 = to_double(k, v); }},
      {"fit.stages", [](RunConfig& c, const auto& k, const auto& v) { c.fit.stages = to_stages(k, v); }},
      {"fit.refine_root", [](RunConfig& c, const auto& k, const auto& v) { c.fit.refine_root = to_bool(k, v); }},
      {"fit.optimize_shape", [](RunConfig& c, const auto& k, const auto& v) { c.fit.optimize_shape = to_bool(k, v); }},
      {"fit.shape_l2", [](RunConfig& c, const auto& k, const auto& v) { c.fit.shape_l2 = to_double(k, v); }},
      {"fit.scale_mode", [](RunConfig& c, const auto&, const auto& v) { c.fit.scale_mode = parse_scale_mode(v); }},
      {"model.path", [](RunConfig& c, const auto&, const auto& v) { c.model_path = v; }},
      {"io.out", [](RunConfig& c, const auto&, const auto& v) { c.output_dir = v; }},
      {"run.jobs",
       [](RunConfig& c, const auto& k, const auto& v) {
         c.jobs = to_int(k, v);
         if (c.jobs < 0) throw ParameterError(k + " must be >= 0");
       }},
      {"eval.format",
       [](RunConfig& c, const auto&, const auto& v) {
         parse_annotation_format(v);
         c.gt_format = v;
       }},
      {"eval.align", [](RunConfig& c, const auto& k, const auto& v) { c.eval_align = to_bool(k, v); }},
      {"eval.joints",
       [](RunConfig& c, const auto& k, const auto& v) {
         if (v != "all" && v != "fingertips") throw ParameterError(k + ": expected all or fingertips");
         c.eval_joints = v;
       }},
  };
  return table;
}

}  // namespace detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : detail::setters()) keys.push_back(k);
  return keys;
}

/// Sets one key. Throws ParameterError on unknown keys or bad values.
inline void set_config_value(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto it = detail::setters().find(key);
  if (it == detail::setters().end()) throw ParameterError("unknown config key '" + key + "'");
  it->second(cfg, key, value);
}

/// "key=value" as given on the command line.
inline void apply_assignment(RunConfig& cfg, const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ParameterError("expected key=value, got '" + text + "'");
  set_config_value(cfg, detail::trim(text.substr(0, eq)), detail::trim(text.substr(eq + 1)));
}

inline void apply_config_stream(RunConfig& cfg, std::istream& in, const std::string& path) {
  std::string raw;
  int line = 0;
  std::map<std::string, int> seen;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string text = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ParseError(path, line, "expected key = value");
    const std::string key = detail::trim(text.substr(0, eq));
    if (auto [it, fresh] = seen.emplace(key, line); !fresh)
      throw ParseError(path, line, "'" + key + "' already set on line " + std::to_string(it->second));
    try {
      set_config_value(cfg, key, detail::trim(text.substr(eq + 1)));
    } catch (const ParameterError& e) {
      throw ParseError(path, line, e.what());
    }
  }
}

inline void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path.string(), 0, "cannot open config file");
  apply_config_stream(cfg, in, path.string());
}

/// Every key with its current value, in config-file syntax.
inline std::string dump_config(const RunConfig& c) {
  std::ostringstream o;
  auto n = [](double v) { return detail::shortest(v); };
  const auto& l = c.fit.loss;
  const auto& s = c.fit.solver;
  auto b = [](bool v) { return v ? "true" : "false"; };
  o << "eval.align = " << b(c.eval_align) << "\n"
    << "eval.format = " << c.gt_format << "\n"
    << "eval.joints = " << c.eval_joints << "\n"
    << "fit.optimize_shape = " << b(c.fit.optimize_shape) << "\n"
    << "fit.refine_root = " << b(c.fit.refine_root) << "\n"
    << "fit.scale_mode = " << to_string(c.fit.scale_mode) << "\n"
    << "fit.shape_l2 = " << n(c.fit.shape_l2) << "\n"
    << "fit.stages = " << (c.fit.stages == Stage::one ? 1 : 2) << "\n"
    << "io.out = " << c.output_dir << "\n"
    << "loss.a_limits = " << n(l.a_limits) << "\n"
    << "loss.delta = " << n(l.delta) << "\n"
    << "loss.fingertip_weight = " << n(l.fingertip_weight) << "\n"
    << "loss.kind = " << to_string(l.kind) << "\n"
    << "loss.residual_mode = " << to_string(l.residual_mode) << "\n"
    << "loss.rho = " << n(l.rho) << "\n"
    << "model.path = " << c.model_path << "\n"
    << "run.jobs = " << c.jobs << "\n"
    << "solver.c1 = " << n(s.c1) << "\n"
    << "solver.c2 = " << n(s.c2) << "\n"
    << "solver.f_tol = " << n(s.f_tol) << "\n"
    << "solver.grad_tol = " << n(s.grad_tol) << "\n"
    << "solver.max_iters = " << s.max_iters << "\n"
    << "solver.memory = " << s.memory << "\n"
    << "solver.method = " << to_string(s.method) << "\n";
  return o.str();
}

/// The eight ablation configurations: optimizer x loss x fingertip weighting, plus the
/// two-stage run with joint limits. Weighted variants use the default fingertip weight.
struct Experiment {
  char id;
  std::string description;
  FitOptions options;
};

inline std::vector<Experiment> ablation_grid(const FitOptions& base = {}) {
  const double w = base.loss.fingertip_weight > 1.0 ? base.loss.fingertip_weight : LossSpec{}.fingertip_weight;
  auto make = [&](char id, SolverMethod m, LossKind k, bool weighted, Stage stages) {
    FitOptions o = base;
    o.solver.method = m;
    o.loss.kind = k;
    o.loss.fingertip_weight = weighted ? w : 1.0;
    o.stages = stages;
    std::string d = std::string(to_string(m)) + " " + std::string(to_string(k));
    if (weighted) d += " + fingertips";
    if (stages == Stage::two) d += ", two stages";
    return Experiment{id, d, o};
  };
  using M = SolverMethod;
  using K = LossKind;
  return {
      make('A', M::lbfgs, K::mse, true, Stage::one),
      make('B', M::lbfgs, K::mse, false, Stage::one),
      make('C', M::lbfgs, K::geman_mcclure, true, Stage::one),
      make('D', M::lbfgs, K::geman_mcclure, false, Stage::one),
      make('E', M::lbfgs, K::huber, true, Stage::one),
      make('F', M::lbfgs, K::huber, false, Stage::one),
      make('G', M::bfgs, K::mse, true, Stage::one),
      make('H', M::lbfgs, K::mse, false, Stage::two),
  };
}

}  // namespace handfit
