#pragma once

// Plain-text hand model format. Blank lines and lines starting with '#' are ignored.
//
//   hand_model <joints=21> <limits=45> <basis=10> <left|right>
//   joint <index> <x> <y> <z> <parent>                       (21 lines, parent -1 for the root)
//   limit <index> <lower> <upper>                            (45 lines, radians)
//   basis <index> <w_0> ... <w_19>                           (10 lines, one weight per bone)
//
// The header comes first; the other records may appear in any order but every
// index must be given exactly once. Bone b is the bone ending at joint b + 1.

#include <array>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "handfit/errors.hpp"
#include "handfit/hand_model.hpp"

namespace handfit {

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

inline double parse_double(const std::string& tok, const std::string& path, int line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ParseError(path, line, "expected a number, got '" + tok + "'");
  }
}

inline int parse_int(const std::string& tok, const std::string& path, int line) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ParseError(path, line, "expected an integer, got '" + tok + "'");
  }
}

}  // namespace detail

inline HandModel parse_hand_model(std::istream& in, const std::string& path = "<stream>") {
  using detail::parse_double;
  using detail::parse_int;

  Joints rest{};
  std::array<int, kNumJoints> parent{};
  ShapeBasis basis = ShapeBasis::Zero();
  std::array<JointLimit, kNumPoseDof> limits{};
  Handedness handedness = Handedness::right;
  std::array<bool, kNumJoints> seen_joint{};
  std::array<bool, kNumPoseDof> seen_limit{};
  std::array<bool, kNumShape> seen_basis{};
  bool header = false;

  auto index_in = [&](const std::string& tok, int count, int line, const char* what) {
    const int i = parse_int(tok, path, line);
    if (i < 0 || i >= count) throw ParseError(path, line, std::string(what) + " index " + tok + " out of range");
    return i;
  };
  auto expect_fields = [&](const std::vector<std::string>& f, std::size_t n, int line) {
    if (f.size() != n)
      throw ParseError(path, line,
                       "'" + f[0] + "' record needs " + std::to_string(n - 1) + " fields, got " +
                           std::to_string(f.size() - 1));
  };

  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto f = detail::split_ws(raw);
    if (f.empty() || f[0][0] == '#') continue;

    if (!header) {
      if (f[0] != "hand_model") throw ParseError(path, line, "expected 'hand_model' header");
      expect_fields(f, 5, line);
      if (parse_int(f[1], path, line) != kNumJoints || parse_int(f[2], path, line) != kNumPoseDof ||
          parse_int(f[3], path, line) != kNumShape)
        throw ParseError(path, line, "header counts must be 21 45 10");
      try {
        handedness = parse_handedness(f[4]);
      } catch (const ParameterError& e) {
        throw ParseError(path, line, e.what());
      }
      header = true;
      continue;
    }

    if (f[0] == "joint") {
      expect_fields(f, 6, line);
      const int i = index_in(f[1], kNumJoints, line, "joint");
      if (seen_joint[i]) throw ParseError(path, line, "duplicate joint " + f[1]);
      seen_joint[i] = true;
      rest[i] = Vec3(parse_double(f[2], path, line), parse_double(f[3], path, line), parse_double(f[4], path, line));
      parent[i] = parse_int(f[5], path, line);
    } else if (f[0] == "limit") {
      expect_fields(f, 4, line);
      const int i = index_in(f[1], kNumPoseDof, line, "limit");
      if (seen_limit[i]) throw ParseError(path, line, "duplicate limit " + f[1]);
      seen_limit[i] = true;
      limits[i] = {parse_double(f[2], path, line), parse_double(f[3], path, line)};
      if (!(limits[i].lower < limits[i].upper)) throw ParseError(path, line, "limit lower must be below upper");
    } else if (f[0] == "basis") {
      expect_fields(f, 2 + kNumBones, line);
      const int i = index_in(f[1], kNumShape, line, "basis");
      if (seen_basis[i]) throw ParseError(path, line, "duplicate basis " + f[1]);
      seen_basis[i] = true;
      for (int b = 0; b < kNumBones; ++b) basis(i, b) = parse_double(f[2 + b], path, line);
    } else {
      throw ParseError(path, line, "unknown record '" + f[0] + "'");
    }
  }

  if (!header) throw ParseError(path, line, "missing 'hand_model' header");
  for (int i = 0; i < kNumJoints; ++i)
    if (!seen_joint[i]) throw ParseError(path, line, "missing joint " + std::to_string(i));
  for (int i = 0; i < kNumPoseDof; ++i)
    if (!seen_limit[i]) throw ParseError(path, line, "missing limit " + std::to_string(i));
  for (int i = 0; i < kNumShape; ++i)
    if (!seen_basis[i]) throw ParseError(path, line, "missing basis " + std::to_string(i));

  try {
    return HandModel(rest, parent, basis, limits, handedness);
  } catch (const ParameterError& e) {
    throw ParseError(path, 0, e.what());
  }
}

inline HandModel load_hand_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path, 0, "cannot open model file");
  return parse_hand_model(in, path);
}

namespace detail {

// Shortest text that parses back to the same double.
inline std::string shortest(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

inline void write_hand_model(std::ostream& out, const HandModel& model) {
  using detail::shortest;
  out << "# joints: index x y z parent (meters)\n";
  out << "hand_model " << kNumJoints << ' ' << kNumPoseDof << ' ' << kNumShape << ' ' << to_string(model.handedness())
      << '\n';
  for (int j = 0; j < kNumJoints; ++j) {
    const Vec3& p = model.rest_joints()[j];
    out << "joint " << j << ' ' << shortest(p.x()) << ' ' << shortest(p.y()) << ' ' << shortest(p.z()) << ' '
        << model.parent(j) << '\n';
  }
  out << "# limits: dof lower upper (radians)\n";
  for (int i = 0; i < kNumPoseDof; ++i)
    out << "limit " << i << ' ' << shortest(model.joint_limits()[i].lower) << ' '
        << shortest(model.joint_limits()[i].upper) << '\n';
  out << "# basis: mode w_0 .. w_19 (relative bone-length change per unit beta)\n";
  for (int m = 0; m < kNumShape; ++m) {
    out << "basis " << m;
    for (int b = 0; b < kNumBones; ++b) out << ' ' << shortest(model.shape_basis()(m, b));
    out << '\n';
  }
}

}  // namespace handfit
