#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "handfit/cli.hpp"

namespace fs = std::filesystem;
using namespace handfit;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun handfit_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "handfit");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("handfit_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Relative path -> contents for every regular file under root.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = slurp(e.path());
  return out;
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream o(p);
  o << text;
}

std::string config_line(const std::string& dump, const std::string& key) {
  std::istringstream in(dump);
  for (std::string line; std::getline(in, line);)
    if (line.rfind(key + " = ", 0) == 0) return line.substr(key.size() + 3);
  return "<missing>";
}

Json read_json(const fs::path& p) { return Json::parse(slurp(p)); }

}  // namespace

// ---------------------------------------------------------------------------
// config

TEST(Config, DefaultsParseBackFromTheirDump) {
  RunConfig a;
  std::istringstream in(dump_config(a));
  RunConfig b;
  b.fit.loss.kind = LossKind::huber;
  b.fit.solver.max_iters = 3;
  apply_config_stream(b, in, "dump");
  EXPECT_EQ(dump_config(a), dump_config(b));
}

TEST(Config, FlagBeatsFileBeatsDefault) {
  const fs::path dir = scratch("precedence");
  write(dir / "run.conf",
        "# two keys from the file\n"
        "loss.kind = huber\n"
        "solver.max_iters = 50   # trailing comment\n");
  const CliRun r = handfit_cli({"fit", "in", "--config", (dir / "run.conf").string(), "--max-iters", "75",
                             "--print-config"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(config_line(r.out, "solver.max_iters"), "75");  // flag over file
  EXPECT_EQ(config_line(r.out, "loss.kind"), "huber");      // file over default
  EXPECT_EQ(config_line(r.out, "solver.method"), "lbfgs");  // default
  EXPECT_EQ(config_line(r.out, "solver.grad_tol"), "1e-06");

  const CliRun s = handfit_cli({"fit", "in", "--config", (dir / "run.conf").string(), "--set", "loss.kind=mse",
                             "--print-config"});
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_EQ(config_line(s.out, "loss.kind"), "mse");
  EXPECT_EQ(config_line(s.out, "solver.max_iters"), "50");
}

TEST(Config, ErrorsCarryTheLineAndExitTwo) {
  RunConfig c;
  std::istringstream unknown("loss.kind = mse\n\nloss.bogus = 1\n");
  try {
    apply_config_stream(c, unknown, "x.conf");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3);
  }
  std::istringstream twice("solver.memory = 4\nsolver.memory = 5\n");
  EXPECT_THROW(apply_config_stream(c, twice, "x.conf"), ParseError);
  std::istringstream bad_value("solver.max_iters = ten\n");
  EXPECT_THROW(apply_config_stream(c, bad_value, "x.conf"), ParseError);
  std::istringstream no_eq("solver.max_iters 10\n");
  EXPECT_THROW(apply_config_stream(c, no_eq, "x.conf"), ParseError);

  EXPECT_EQ(handfit_cli({"fit", "in", "--set", "loss.bogus=1"}).code, 2);
  EXPECT_EQ(handfit_cli({"fit", "in", "--loss", "cauchy"}).code, 2);
  EXPECT_EQ(handfit_cli({"fit", "in", "--set", "solver.c2=2"}).code, 2);  // validated after merging
  EXPECT_EQ(handfit_cli({"fit", "in", "--config", "/nonexistent/handfit.conf"}).code, 2);
}

TEST(Config, SampleFilesAreValid) {
  const fs::path dir = fs::path(HANDFIT_DATA_DIR).parent_path() / "samples" / "configs";
  RunConfig d;
  apply_config_file(d, dir / "default.conf");
  EXPECT_EQ(dump_config(d), dump_config(RunConfig{}));
  for (const auto& ex : ablation_grid()) {
    RunConfig c;
    apply_config_file(c, dir / (std::string("experiment_") + ex.id + ".conf"));
    RunConfig want;
    want.fit = ex.options;
    EXPECT_EQ(dump_config(c), dump_config(want)) << ex.id;
  }
}

// ---------------------------------------------------------------------------
// command surface

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(handfit_cli({}).code, 2);
  EXPECT_EQ(handfit_cli({"frobnicate"}).code, 2);
  EXPECT_EQ(handfit_cli({"fit"}).code, 2);  // missing inputs
  EXPECT_EQ(handfit_cli({"fit", "--help"}).code, 0);
  EXPECT_EQ(handfit_cli({"synth", "-n", "0", "-o", scratch("zero").string()}).code, 2);
  EXPECT_EQ(handfit_cli({"fit", "/nonexistent/keypoints", "-o", scratch("nx").string()}).code, 2);
}

TEST(Cli, EmptyDirectoryReportsNoInputs) {
  const fs::path dir = scratch("empty");
  fs::create_directories(dir / "in");
  const CliRun r = handfit_cli({"fit", (dir / "in").string(), "-o", (dir / "out").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("no inputs"), std::string::npos) << r.err;
}

TEST(Cli, SynthIsByteIdenticalAcrossRuns) {
  const fs::path dir = scratch("synth_det");
  for (const char* sub : {"a", "b"})
    ASSERT_EQ(handfit_cli({"synth", "-n", "10", "--sigma", "0", "--seed", "42", "-o", (dir / sub).string()}).code, 0);
  const auto a = tree(dir / "a"), b = tree(dir / "b");
  EXPECT_EQ(a.size(), 21u);  // 10 inputs, 10 truths, manifest
  EXPECT_EQ(a, b);
  ASSERT_EQ(handfit_cli({"synth", "-n", "10", "--sigma", "0", "--seed", "43", "-o", (dir / "c").string()}).code, 0);
  EXPECT_NE(a, tree(dir / "c"));
}

TEST(Cli, FitIsByteIdenticalAcrossRunsAndWorkerCounts) {
  const fs::path dir = scratch("fit_det");
  ASSERT_EQ(handfit_cli({"synth", "-n", "12", "--sigma", "3", "--seed", "5", "-o", (dir / "data").string()}).code, 0);
  const std::string in = (dir / "data" / "keypoints").string();
  ASSERT_EQ(handfit_cli({"fit", in, "-o", (dir / "a").string(), "--jobs", "4"}).code, 0);
  ASSERT_EQ(handfit_cli({"fit", in, "-o", (dir / "b").string(), "--jobs", "4"}).code, 0);
  ASSERT_EQ(handfit_cli({"fit", in, "-o", (dir / "c").string(), "--jobs", "1"}).code, 0);
  const auto a = tree(dir / "a");
  EXPECT_EQ(a.size(), 12u);
  EXPECT_EQ(a, tree(dir / "b"));
  EXPECT_EQ(a, tree(dir / "c"));
}

TEST(Cli, NoiseFreeFitRecoversTruth) {
  const fs::path dir = scratch("roundtrip");
  ASSERT_EQ(handfit_cli({"synth", "-n", "8", "--sigma", "0", "--seed", "11", "-o", (dir / "data").string()}).code, 0);
  const CliRun r = handfit_cli({"fit", (dir / "data" / "keypoints").string(), "-o", (dir / "fit").string(), "--truth",
                             (dir / "data" / "truth").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("8 hands, 0 failed"), std::string::npos) << r.out;

  // Independent check from the files on disk.
  for (int i = 0; i < 8; ++i) {
    const std::string stem = cli::frame_stem(i);
    const Json fit = read_json(dir / "fit" / (stem + "_h0.json"));
    const auto truth = read_keypoint_file(dir / "data" / "truth" / (stem + ".json"));
    EXPECT_EQ(fit.at("frame"), stem);
    EXPECT_EQ(fit.at("hand_index"), 0);
    for (int j = 0; j < kNumJoints; ++j)
      for (int a = 0; a < 3; ++a)
        EXPECT_NEAR(fit["joints"][j][a].get<double>(), truth.hands[0].points[j][a], 1e-3) << stem << " joint " << j;
  }
}

TEST(Cli, LeftHandIsFlaggedAndMirroredBack) {
  const fs::path dir = scratch("left");
  const HandModel model = default_hand_model();
  const auto frames = synth_generate(model, 1, 0.0, 3);
  KeypointSet right = frames[0].target;
  KeypointSet left = mirrored(right);
  fs::create_directories(dir / "in");
  write_keypoint_file(dir / "in" / "r.json", KeypointFile{std::nullopt, {right}});
  write_keypoint_file(dir / "in" / "l.json", KeypointFile{std::nullopt, {left}});
  ASSERT_EQ(handfit_cli({"fit", (dir / "in").string(), "-o", (dir / "out").string()}).code, 0);

  const Json l = read_json(dir / "out" / "l_h0.json");
  const Json r = read_json(dir / "out" / "r_h0.json");
  EXPECT_EQ(l.at("handedness"), "left");
  EXPECT_TRUE(l.at("mirrored").get<bool>());
  EXPECT_EQ(r.at("handedness"), "right");
  EXPECT_FALSE(r.at("mirrored").get<bool>());
  // The left fit happens on the mirrored points, which are exactly the right-hand input,
  // so mirroring its joints back reproduces the right-hand fit.
  EXPECT_EQ(l.at("theta"), r.at("theta"));
  const Joints lj = detail::joints_from(l.at("joints"), "l");
  const Joints rj = detail::joints_from(r.at("joints"), "r");
  for (int j = 0; j < kNumJoints; ++j) {
    EXPECT_EQ(mirror_x(lj[j]), rj[j]) << j;
    EXPECT_LT((lj[j] - left.points[j]).norm(), 1e-3) << j;
  }
}

TEST(Cli, FrameFailuresExitOneAndKeepGoing) {
  const fs::path dir = scratch("partial");
  const auto frames = synth_generate(default_hand_model(), 2, 0.0, 9);
  fs::create_directories(dir / "in");
  write_keypoint_file(dir / "in" / "good.json", KeypointFile{std::nullopt, {frames[0].target}});
  KeypointSet broken = frames[1].target;
  broken.valid[5] = false;  // palm anchor missing
  write_keypoint_file(dir / "in" / "bad.json", KeypointFile{std::nullopt, {broken}});
  write(dir / "in" / "garbage.json", "{\n  \"hands\": [\n");
  const CliRun r = handfit_cli({"fit", (dir / "in").string(), "-o", (dir / "out").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(fs::exists(dir / "out" / "good_h0.json"));
  EXPECT_FALSE(fs::exists(dir / "out" / "bad_h0.json"));
  EXPECT_NE(r.err.find("palm anchors"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("garbage.json"), std::string::npos) << r.err;
  EXPECT_NE(r.out.find("2 failed"), std::string::npos) << r.out;
}

TEST(Cli, FileWithNoHandsIsNotAFailure) {
  const fs::path dir = scratch("nohands");
  fs::create_directories(dir / "in");
  write(dir / "in" / "blank.json", R"({"image_width": 640, "image_height": 480, "hands": []})");
  const CliRun r = handfit_cli({"fit", (dir / "in").string(), "-o", (dir / "out").string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("0 hands"), std::string::npos);
}

TEST(Cli, SampleKeypointFilesFit) {
  const fs::path samples = fs::path(HANDFIT_DATA_DIR).parent_path() / "samples" / "keypoints";
  const fs::path dir = scratch("samples");
  const CliRun r = handfit_cli({"fit", samples.string(), "-o", dir.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "one_hand_h0.json"));
  EXPECT_EQ(read_json(dir / "two_hands_h1.json").at("handedness"), "left");
  EXPECT_EQ(read_json(dir / "two_hands_h1.json").at("units"), "pixels");
}

TEST(Cli, EvalOfGroundTruthAgainstItselfIsPerfect) {
  const fs::path dir = scratch("eval_self");
  ASSERT_EQ(handfit_cli({"synth", "-n", "5", "--sigma", "4", "--seed", "2", "-o", (dir / "data").string()}).code, 0);
  // Predictions shaped like fit results, holding the true joints.
  fs::create_directories(dir / "pred");
  for (const auto& g : load_annotations(dir / "data" / "truth", "generic_json")) {
    Json j = {{"frame", g.stem}, {"hand_index", 0}, {"joints", detail::joints_json(g.points)}};
    detail::write_text(dir / "pred" / (g.stem + "_h0.json"), j.dump());
  }
  const CliRun r = handfit_cli({"eval", (dir / "pred").string(), "--gt", (dir / "data" / "truth").string(), "--report",
                             (dir / "r.json").string(), "--csv", (dir / "p.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json rep = read_json(dir / "r.json");
  EXPECT_LT(rep.at("epe_mm").get<double>(), 1e-9);
  EXPECT_EQ(rep.at("auc").get<double>(), 1.0);
  EXPECT_EQ(rep.at("frames_evaluated"), 5);
  EXPECT_TRUE(rep.contains("note"));
  EXPECT_EQ(slurp(dir / "p.csv").rfind("threshold_mm,fraction\n", 0), 0u);

  const CliRun raw = handfit_cli({"eval", (dir / "pred").string(), "--gt", (dir / "data" / "truth").string(),
                               "--no-align", "--report", (dir / "raw.json").string()});
  ASSERT_EQ(raw.code, 0) << raw.err;
  EXPECT_EQ(read_json(dir / "raw.json").at("epe_mm").get<double>(), 0.0);
  EXPECT_EQ(read_json(dir / "raw.json").at("alignment"), "none");
}

TEST(Cli, EvalListsUnmatchedStems) {
  const fs::path dir = scratch("eval_mismatch");
  ASSERT_EQ(handfit_cli({"synth", "-n", "3", "--sigma", "0", "--seed", "2", "-o", (dir / "data").string()}).code, 0);
  ASSERT_EQ(handfit_cli({"fit", (dir / "data" / "keypoints").string(), "-o", (dir / "fit").string()}).code, 0);
  fs::remove(dir / "fit" / "frame_000001_h0.json");
  Json stray = read_json(dir / "fit" / "frame_000002_h0.json");
  stray["frame"] = "frame_000099";
  detail::write_text(dir / "fit" / "frame_000099_h0.json", stray.dump());

  const CliRun r = handfit_cli({"eval", (dir / "fit").string(), "--gt", (dir / "data" / "truth").string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("no prediction for frame_000001"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("no ground truth for frame_000099"), std::string::npos) << r.err;
  EXPECT_NE(r.out.find("2 evaluated"), std::string::npos) << r.out;
}

TEST(Cli, EvalReadsFingertipTextAnnotations) {
  const fs::path dir = scratch("eval_text");
  ASSERT_EQ(handfit_cli({"synth", "-n", "2", "--sigma", "0", "--seed", "8", "-o", (dir / "data").string()}).code, 0);
  ASSERT_EQ(handfit_cli({"fit", (dir / "data" / "keypoints").string(), "-o", (dir / "fit").string()}).code, 0);
  std::ofstream txt(dir / "tips.txt");
  txt.precision(17);
  for (const auto& g : load_annotations(dir / "data" / "truth", "generic_json")) {
    txt << g.stem;
    for (int t : kFingertips) txt << ' ' << g.points[t].x() << ',' << g.points[t].y() << ',' << g.points[t].z();
    txt << '\n';
  }
  txt.close();
  const CliRun r = handfit_cli({"eval", (dir / "fit").string(), "--gt", (dir / "tips.txt").string(), "--format",
                             "egodexter", "--report", (dir / "r.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const Json rep = read_json(dir / "r.json");
  EXPECT_EQ(rep.at("keypoints_evaluated"), 10);
  EXPECT_LT(rep.at("epe_mm").get<double>(), 1e-3);
}

TEST(Cli, InspectRestPose) {
  const fs::path dir = scratch("inspect");
  const HandModel model = default_hand_model();
  FitResult rest;
  rest.joints = forward_kinematics(model, rest.state);
  detail::write_text(dir / "rest.json", to_json(rest).dump());
  const CliRun r = handfit_cli({"inspect", (dir / "rest.json").string(), "--obj", (dir / "rest.obj").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("all 45 DoF in range"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("little_dip"), std::string::npos);

  std::istringstream obj(slurp(dir / "rest.obj"));
  int v = 0, l = 0;
  for (std::string line; std::getline(obj, line);) {
    v += line.rfind("v ", 0) == 0;
    l += line.rfind("l ", 0) == 0;
  }
  EXPECT_EQ(v, 21);
  EXPECT_EQ(l, 20);

  FitResult bent = rest;
  bent.state.theta[0] = 0.9;  // thumb flexion, upper bound 0.5
  detail::write_text(dir / "bent.json", to_json(bent).dump());
  const CliRun b = handfit_cli({"inspect", (dir / "bent.json").string()});
  EXPECT_NE(b.out.find("1 of 45 DoF out of range"), std::string::npos) << b.out;
  EXPECT_NE(b.out.find("thumb_cmc[0]"), std::string::npos) << b.out;

  EXPECT_EQ(handfit_cli({"inspect", (dir / "missing.json").string()}).code, 1);
}

TEST(Cli, AblationHasEightLabelledRows) {
  const fs::path dir = scratch("ablate");
  const CliRun r =
      handfit_cli({"ablate", "-n", "6", "--sigma", "5", "--seed", "1", "--csv", (dir / "rows.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream csv(slurp(dir / "rows.csv"));
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "id,optimizer,loss,fingertip_weight,stages,frames,failed,epe_all_mm,epe_tips_mm,auc_tips");
  const std::vector<std::string> want = {
      "A,lbfgs,mse,5,1,6,",           "B,lbfgs,mse,1,1,6,",   "C,lbfgs,geman_mcclure,5,1,6,",
      "D,lbfgs,geman_mcclure,1,1,6,", "E,lbfgs,huber,5,1,6,", "F,lbfgs,huber,1,1,6,",
      "G,bfgs,mse,5,1,6,",            "H,lbfgs,mse,1,2,6,"};
  for (const auto& w : want) {
    ASSERT_TRUE(std::getline(csv, line));
    EXPECT_EQ(line.rfind(w, 0), 0u) << line;
  }
  EXPECT_FALSE(std::getline(csv, line));
}

TEST(Cli, ParallelForVisitsEveryIndexOnce) {
  for (int jobs : {0, 1, 3, 16}) {
    std::vector<std::atomic<int>> hits(100);
    cli::parallel_for(hits.size(), jobs, [&](std::size_t i) { hits[i].fetch_add(1); });
    for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
  }
  cli::parallel_for(0, 4, [](std::size_t) { FAIL(); });
}
