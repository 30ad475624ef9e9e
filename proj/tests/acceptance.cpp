// Acceptance checks. One PASS/FAIL line per criterion; exit status 1 if any fails.

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "handfit/cli.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace handfit;
using handfit::testing::random_axis_angle;
using handfit::testing::random_feasible_state;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

Verdict alignment_exactness() {
  const HandModel model = default_hand_model();
  std::mt19937_64 rng(1001);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst_r = 0.0, worst_t = 0.0, worst_s = 0.0;
  const auto t0 = Clock::now();
  for (int trial = 0; trial < 1000; ++trial) {
    // Palm anchors of the rest skeleton, each jittered by up to ~2 cm.
    Joints src = model.rest_joints();
    for (int j : kPalmAnchors) src[j] += 0.01 * Vec3(n(rng), n(rng), n(rng));
    const Mat3 r = axis_angle_to_matrix(random_axis_angle(rng, 3.1));
    // Model meters to target millimeters or pixels. Far smaller scales with large offsets hit the
    // rounding floor of the target coordinates themselves before any estimator error shows.
    const double s = 100.0 * std::pow(20.0, u(rng));
    const Vec3 t = Vec3(n(rng), n(rng), n(rng)) * 500.0;
    const RigidTransform truth{r, t, s};
    const Joints dst = apply_to(truth, src);

    const double s_hat = estimate_scale(make_keypoints(src), make_keypoints(dst));
    std::vector<Vec3> a, b;
    for (int j : kPalmAnchors) {
      a.push_back(s_hat * src[j]);
      b.push_back(dst[j]);
    }
    const RigidTransform est = estimate_rigid(a, b);
    worst_r = std::max(worst_r, (est.rotation - r).norm());
    worst_t = std::max(worst_t, (est.translation - t).norm() / t.norm());
    worst_s = std::max(worst_s, std::abs(s_hat - s) / s);
  }
  const double secs = seconds_since(t0);
  const bool ok = worst_r < 1e-9 && worst_t < 1e-9 && worst_s < 1e-12 && secs < 1.0;
  return {ok, fmt("1000 configs: rotation %.2e, translation %.2e rel, scale %.2e rel, %.3f s", worst_r, worst_t,
                  worst_s, secs)};
}

// ---------------------------------------------------------------------------

struct WolfeTally {
  double c1, c2;
  int steps = 0, violations = 0;
  void operator()(const StepRecord& r) {
    ++steps;
    const bool armijo = r.f_after <= r.f_before + c1 * r.alpha * r.slope_before;
    const bool curvature = std::abs(r.slope_after) <= c2 * std::abs(r.slope_before);
    violations += !(armijo && curvature);
  }
};

Verdict solver_correctness() {
  std::string detail;
  bool ok = true;
  for (auto method : {SolverMethod::bfgs, SolverMethod::lbfgs}) {
    SolverConfig cfg;
    cfg.method = method;
    cfg.max_iters = 200;
    cfg.grad_tol = 1e-10;
    cfg.f_tol = 0.0;
    WolfeTally wolfe{cfg.c1, cfg.c2};
    auto rosen = [](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
      const double a = 1.0 - x[0], b = x[1] - x[0] * x[0];
      if (g) *g = Eigen::Vector2d(-2.0 * a - 400.0 * x[0] * b, 200.0 * b);
      return a * a + 100.0 * b * b;
    };
    const auto r = minimize(rosen, Eigen::Vector2d(-1.2, 1.0), cfg, std::ref(wolfe));
    const bool rosen_ok = r.f_final < 1e-8 && r.iterations <= 200;

    // Convex quadratics 0.5 (x - c)^T A (x - c) with eigenvalues in [1, 10].
    std::mt19937_64 rng(method == SolverMethod::bfgs ? 7 : 8);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> eig(1.0, 10.0);
    double worst_dist = 0.0;
    int worst_iters = 0;
    for (int trial = 0; trial < 20; ++trial) {
      Eigen::MatrixXd m(20, 20);
      for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 20; ++j) m(i, j) = n(rng);
      const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(m).householderQ();
      Eigen::VectorXd d(20), c(20), x0(20);
      for (int i = 0; i < 20; ++i) d[i] = eig(rng), c[i] = n(rng), x0[i] = n(rng) * 3.0;
      const Eigen::MatrixXd a = q * d.asDiagonal() * q.transpose();
      auto quad = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
        const Eigen::VectorXd e = x - c;
        const Eigen::VectorXd ae = a * e;
        if (g) *g = ae;
        return 0.5 * e.dot(ae);
      };
      SolverConfig qc = cfg;
      qc.max_iters = 60;
      qc.grad_tol = 1e-10;
      const auto qr = minimize(quad, x0, qc, std::ref(wolfe));
      worst_dist = std::max(worst_dist, (qr.x_final - c).norm());
      worst_iters = std::max(worst_iters, qr.iterations);
    }
    const bool quad_ok = worst_dist < 1e-8 && worst_iters <= 60;
    ok = ok && rosen_ok && quad_ok && wolfe.violations == 0;
    detail += fmt("%s: rosenbrock f=%.1e in %d it, quadratics |x-x*|<=%.1e in <=%d it, wolfe %d/%d; ",
                  std::string(to_string(method)).c_str(), r.f_final, r.iterations, worst_dist, worst_iters,
                  wolfe.steps - wolfe.violations, wolfe.steps);
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

// ---------------------------------------------------------------------------

Verdict gradient_consistency() {
  const HandModel m = default_hand_model();
  std::mt19937_64 rng(4242);
  std::normal_distribution<double> noise(0.0, 10.0);
  double worst = 0.0;
  int cases = 0;
  for (int trial = 0; trial < 100; ++trial) {
    RigidTransform t{axis_angle_to_matrix(random_axis_angle(rng)), Vec3(50, -20, 400), 900.0};
    KeypointSet target = make_keypoints(apply_to(t, forward_kinematics(m, random_feasible_state(m, rng))));
    for (auto& p : target.points) p += Vec3(noise(rng), noise(rng), noise(rng));
    target.points = apply_to(invert(t), target.points);
    PoseState s = random_feasible_state(m, rng, 1.1);
    s.root = random_axis_angle(rng, 0.5);
    for (auto kind : {LossKind::mse, LossKind::geman_mcclure, LossKind::huber})
      for (auto stage : {Stage::one, Stage::two}) {
        LossSpec spec;
        spec.kind = kind;
        HandObjective obj(m, target, spec, stage, ResidualFrame{t.scale, t.rotation}, VariableLayout{true, false});
        const Eigen::VectorXd x = obj.pack(s);
        const Eigen::VectorXd ga = gradient(obj, x, GradientMode::analytic);
        const Eigen::VectorXd gf = gradient(obj, x, GradientMode::central_diff);
        worst = std::max(worst, (ga - gf).lpNorm<Eigen::Infinity>() / gf.lpNorm<Eigen::Infinity>());
        ++cases;
      }
  }
  return {worst < 1e-5 && cases == 600,
          fmt("100 states x 2 stages x 3 losses: worst relative error %.2e", worst)};
}

// ---------------------------------------------------------------------------

Verdict loss_analytics() {
  double gm_gap = 0.0, huber_gap = 0.0, huber_slope_gap = 0.0;
  for (double rho : {0.5, 1.0, 3.0, 20.0, 123.25}) {
    const double r[] = {rho};
    gm_gap = std::max(gm_gap, std::abs(loss_gm(r, rho) - rho * rho / 2.0));
  }
  for (double delta : {0.5, 1.0, 3.0, 20.0, 123.25}) {
    const double quad = 0.5 * delta * delta;            // inner branch at |a| = delta
    const double lin = delta * (delta - 0.5 * delta);   // outer branch at |a| = delta
    const double just_out = std::nextafter(delta, std::numeric_limits<double>::infinity());
    const auto in = huber_penalty(delta, delta), out = huber_penalty(just_out, delta);
    huber_gap = std::max({huber_gap, std::abs(quad - lin) / quad, std::abs(in.value - out.value) / quad});
    huber_slope_gap = std::max(huber_slope_gap, std::abs(in.grad_over_r * delta - out.grad_over_r * just_out) / delta);
  }
  const double theta[] = {0.0};
  const JointLimit lim[] = {{-1.0, 1.0}};
  double limit_gap = 0.0;
  for (double a : {1.0, 0.25, 1e-2}) limit_gap = std::max(limit_gap, std::abs(e_limits(theta, lim, a) - a * 2.0 * std::exp(-1.0)));
  const bool ok = gm_gap == 0.0 && huber_gap <= 1e-15 && huber_slope_gap <= 1e-15 && limit_gap <= 1e-15;
  return {ok, fmt("GM(rho) - rho^2/2 = %.1e, Huber branch gap %.1e (slope %.1e), e_limits gap %.1e", gm_gap,
                  huber_gap, huber_slope_gap, limit_gap)};
}

// ---------------------------------------------------------------------------

struct Scores {
  double epe_all, epe_tips, auc_all;
  int failed;
};

Scores fit_and_score(const HandModel& model, const std::vector<SynthFrame>& data, const FitOptions& opt) {
  std::vector<std::optional<Joints>> fitted(data.size());
  cli::parallel_for(data.size(), 0, [&](std::size_t i) {
    try {
      fitted[i] = fit(model, data[i].target, opt).joints;
    } catch (const Error&) {
    }
  });
  std::vector<Joints> p, g;
  std::vector<Mask> all, tips;
  int failed = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!fitted[i]) {
      ++failed;
      continue;
    }
    p.push_back(*fitted[i]);
    g.push_back(data[i].clean);
    all.push_back(full_mask());
    tips.push_back(fingertip_mask());
  }
  if (p.empty()) return {INFINITY, INFINITY, 0.0, failed};
  return {epe(p, g, all), epe(p, g, tips), auc(pck_curve(p, g, all, default_thresholds())), failed};
}

Verdict round_trip() {
  const HandModel model = default_hand_model();
  const auto t0 = Clock::now();
  const FitOptions defaults;
  const Scores clean = fit_and_score(model, synth_generate(model, 50, 0.0, 42), defaults);

  const auto noisy_data = synth_generate(model, 50, 5.0, 42);
  FitOptions unweighted = defaults, weighted = defaults;
  unweighted.loss.fingertip_weight = 1.0;
  weighted.loss.fingertip_weight = 5.0;
  const Scores w1 = fit_and_score(model, noisy_data, unweighted);
  const Scores w5 = fit_and_score(model, noisy_data, weighted);
  const double secs = seconds_since(t0);

  const bool ok = clean.failed == 0 && clean.epe_all < 1e-3 && clean.auc_all == 1.0 && w1.failed == 0 &&
                  w5.failed == 0 && w1.epe_tips <= 15.0 && w5.epe_tips <= 15.0 && w5.epe_tips <= w1.epe_tips &&
                  secs < 120.0;
  return {ok, fmt("noise-free EPE %.2e AUC %.3f; sigma 5 mm fingertip EPE w=1 %.3f, w=5 %.3f mm; %.2f s",
                  clean.epe_all, clean.auc_all, w1.epe_tips, w5.epe_tips, secs)};
}

// ---------------------------------------------------------------------------

Verdict metric_oracle() {
  const fs::path scratch = fs::temp_directory_path() / "handfit_acceptance_oracle";
  const std::string log = (fs::temp_directory_path() / "handfit_acceptance_oracle.log").string();
  const std::string cmd = std::string("\"") + HANDFIT_PYTHON + "\" \"" + HANDFIT_ORACLE_SCRIPT + "\" \"" +
                          HANDFIT_CLI_PATH + "\" \"" + scratch.string() + "\" > \"" + log + "\" 2>&1";
  const int rc = std::system(cmd.c_str());
  std::ifstream in(log);
  int pass = 0, fail = 0;
  for (std::string line; std::getline(in, line);) {
    pass += line.rfind("PASS", 0) == 0;
    fail += line.rfind("FAIL", 0) == 0;
  }
  return {rc == 0 && fail == 0 && pass == 4,
          fmt("independent script: %d/4 EPE/PCK/AUC comparisons within 1e-12 (log: %s)", pass, log.c_str())};
}

// ---------------------------------------------------------------------------

int cli_run(std::vector<std::string> args, std::string* out = nullptr) {
  args.insert(args.begin(), "handfit");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int rc = cli::run(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str();
  return rc;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) {
      std::ifstream in(e.path(), std::ios::binary);
      std::ostringstream s;
      s << in.rdbuf();
      out[fs::relative(e.path(), root).string()] = s.str();
    }
  return out;
}

Verdict benchmark_substitutes() {
  // The published dataset numbers need the real datasets, the licensed hand model and the
  // vendor detector. What can be checked here is that the substitutes are in place.
  const auto grid = ablation_grid();
  const std::string want = "ABCDEFGH";
  bool grid_ok = grid.size() == 8;
  for (std::size_t i = 0; grid_ok && i < 8; ++i) grid_ok = grid[i].id == want[i];
  grid_ok = grid_ok && grid[6].options.solver.method == SolverMethod::bfgs && grid[7].options.stages == Stage::two;

  const fs::path dir = fs::temp_directory_path() / "handfit_acceptance_substitutes";
  fs::remove_all(dir);
  fs::create_directories(dir);
  bool loaders_ok = false, note_ok = false;
  try {
    {
      std::ofstream ego(dir / "ego.txt");
      ego << "10 20 300; 11 21 301; 0 0 0; 13 23 303; 14 24 304\n";
      std::ofstream dxo(dir / "dxo.txt");
      dxo << "f1 10 20 300 11 21 301 12 22 302 13 23 303 14 24 304 1 2 3 4 5 6 7 8 9\n";
    }
    const auto ego = load_annotations(dir / "ego.txt", AnnotationFormat::egodexter);
    const auto dxo = load_annotations(dir / "dxo.txt", AnnotationFormat::dexterobject);
    loaders_ok = ego.size() == 1 && !ego[0].valid[12] && ego[0].valid[8] && dxo.size() == 1 && dxo[0].stem == "f1";

    cli_run({"synth", "-n", "3", "--sigma", "2", "-o", (dir / "data").string()});
    cli_run({"fit", (dir / "data" / "keypoints").string(), "-o", (dir / "fit").string()});
    cli_run({"eval", (dir / "fit").string(), "--gt", (dir / "data" / "truth").string(), "--report",
             (dir / "report.json").string()});
    std::ifstream rep(dir / "report.json");
    const Json j = Json::parse(rep);
    note_ok = j.contains("note") && j["note"].get<std::string>().find("surrogate") != std::string::npos;
  } catch (const std::exception&) {
  }
  return {grid_ok && loaders_ok && note_ok,
          fmt("published dataset numbers NOT reproduced (needs the datasets, licensed hand model and detector); "
              "substitutes present: property suites above, ablate grid A-H %s, dataset loaders %s, "
              "protocol note in reports %s",
              grid_ok ? "ok" : "BROKEN", loaders_ok ? "ok" : "BROKEN", note_ok ? "ok" : "MISSING")};
}

// ---------------------------------------------------------------------------

Verdict determinism() {
  const fs::path dir = fs::temp_directory_path() / "handfit_acceptance_determinism";
  fs::remove_all(dir);
  int rc = 0;
  for (const char* run : {"a", "b"}) {
    const fs::path d = dir / run;
    rc |= cli_run({"synth", "-n", "20", "--sigma", "5", "--seed", "77", "-o", (d / "synth").string()});
    rc |= cli_run({"fit", (d / "synth" / "keypoints").string(), "-o", (d / "fit").string()});
  }
  const auto sa = tree(dir / "a" / "synth"), sb = tree(dir / "b" / "synth");
  const auto fa = tree(dir / "a" / "fit"), fb = tree(dir / "b" / "fit");
  const bool ok = rc == 0 && sa == sb && fa == fb && sa.size() == 41 && fa.size() == 20;
  return {ok, fmt("two runs: synth %zu files %s, fit %zu files %s", sa.size(), sa == sb ? "identical" : "DIFFER",
                  fa.size(), fa == fb ? "identical" : "DIFFER")};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"alignment exactness", alignment_exactness},
      {"solver correctness", solver_correctness},
      {"gradient consistency", gradient_consistency},
      {"loss analytics", loss_analytics},
      {"round-trip fitting", round_trip},
      {"metric oracle equivalence", metric_oracle},
      {"benchmark numbers / substitutes", benchmark_substitutes},
      {"determinism", determinism},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v{false, ""};
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << (v.pass ? "PASS" : "FAIL") << "  " << name << ": " << v.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
