#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "ugcn/errors.hpp"
#include "ugcn/kinematics.hpp"

namespace ugcn {

// Pose / rest-pose file: one "x y z" line per joint, millimeters.
inline Pose read_pose_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open pose file " + path);
  Pose pose;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    Vec3 v;
    if (!(ls >> v.x >> v.y >> v.z))
      throw ParseError(path + " line " + std::to_string(lineno) +
                       ": expected three numbers");
    pose.positions.push_back(v);
  }
  if (pose.positions.empty()) throw ParseError(path + ": no joints");
  return pose;
}

inline void write_pose_file(const Pose& pose, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  char buf[128];
  for (const Vec3& v : pose.positions) {
    std::snprintf(buf, sizeof buf, "%.12g %.12g %.12g\n", v.x, v.y, v.z);
    out << buf;
  }
}

// Rotation-set file: a "translation x y z" line, then one row-major 3x3
// rotation (nine numbers) per joint.
inline RotationSet read_rotation_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open rotation file " + path);
  RotationSet rot;
  std::string line;
  int lineno = 0;
  bool have_translation = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    if (!have_translation) {
      std::string key;
      ls >> key;
      if (key != "translation" ||
          !(ls >> rot.root_translation.x >> rot.root_translation.y >>
            rot.root_translation.z))
        throw ParseError(path + " line " + std::to_string(lineno) +
                         ": expected 'translation x y z'");
      have_translation = true;
      continue;
    }
    Mat3 m;
    for (int i = 0; i < 9; ++i)
      if (!(ls >> m.m[static_cast<std::size_t>(i)]))
        throw ParseError(path + " line " + std::to_string(lineno) +
                         ": expected nine numbers");
    rot.rotations.push_back(m);
  }
  if (!have_translation) throw ParseError(path + ": missing translation line");
  if (rot.rotations.empty()) throw ParseError(path + ": no rotations");
  return rot;
}

inline void write_rotation_file(const RotationSet& rot,
                                const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path + " for writing");
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", rot.root_translation.x);
  out << "translation " << buf;
  std::snprintf(buf, sizeof buf, "%.12g", rot.root_translation.y);
  out << " " << buf;
  std::snprintf(buf, sizeof buf, "%.12g", rot.root_translation.z);
  out << " " << buf << "\n";
  for (const Mat3& m : rot.rotations) {
    for (int i = 0; i < 9; ++i) {
      std::snprintf(buf, sizeof buf, "%.12g", m.m[static_cast<std::size_t>(i)]);
      if (i) out << " ";
      out << buf;
    }
    out << "\n";
  }
}

}  // namespace ugcn
