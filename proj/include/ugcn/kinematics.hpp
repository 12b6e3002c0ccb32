#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ugcn/errors.hpp"
#include "ugcn/topology.hpp"

namespace ugcn {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const {
    const double n = norm();
    if (n == 0.0) throw ZeroVector("cannot normalize zero vector");
    return {x / n, y / n, z / n};
  }
};

// Row-major 3x3.
struct Mat3 {
  std::array<double, 9> m{};

  static Mat3 identity() {
    Mat3 r;
    r.m = {1, 0, 0, 0, 1, 0, 0, 0, 1};
    return r;
  }

  double& operator()(int i, int j) { return m[i * 3 + j]; }
  double operator()(int i, int j) const { return m[i * 3 + j]; }

  Vec3 operator*(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }

  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
        r(i, j) = s;
      }
    return r;
  }

  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
  }

  double det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) -
           m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }

  // Frobenius norm of R^T R - I.
  double orthogonality_defect() const {
    const Mat3 e = transposed() * (*this);
    double s = 0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        const double d = e(i, j) - (i == j ? 1.0 : 0.0);
        s += d * d;
      }
    return std::sqrt(s);
  }

  bool is_rotation(double tol = 1e-9) const {
    return orthogonality_defect() <= tol && std::abs(det() - 1.0) <= tol;
  }
};

// Rodrigues formula; axis need not be normalized in callers, it is here.
inline Mat3 axis_angle(const Vec3& axis, double angle) {
  const Vec3 a = axis.normalized();
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  Mat3 r;
  r.m = {t * a.x * a.x + c,       t * a.x * a.y - s * a.z, t * a.x * a.z + s * a.y,
         t * a.x * a.y + s * a.z, t * a.y * a.y + c,       t * a.y * a.z - s * a.x,
         t * a.x * a.z - s * a.y, t * a.y * a.z + s * a.x, t * a.z * a.z + c};
  return r;
}

// Minimal rotation taking u-hat to v-hat. Antiparallel inputs rotate 180
// degrees about the normalized cross product of u-hat with the standard basis
// vector of u-hat's smallest-magnitude component.
inline Mat3 rotation_between(const Vec3& u, const Vec3& v) {
  if (u.norm() == 0.0 || v.norm() == 0.0)
    throw ZeroVector("rotation_between requires nonzero vectors");
  const Vec3 uh = u.normalized();
  const Vec3 vh = v.normalized();
  const double c = std::max(-1.0, std::min(1.0, uh.dot(vh)));
  const Vec3 w = uh.cross(vh);
  const double s = w.norm();
  if (s < 1e-15) {
    if (c > 0.0) return Mat3::identity();
    // antiparallel: deterministic perpendicular axis
    const double ax = std::abs(uh.x), ay = std::abs(uh.y), az = std::abs(uh.z);
    Vec3 basis{1, 0, 0};
    if (ay <= ax && ay <= az)
      basis = {0, 1, 0};
    else if (az <= ax && az <= ay)
      basis = {0, 0, 1};
    return axis_angle(uh.cross(basis), 3.14159265358979323846);
  }
  return axis_angle(w, std::atan2(s, c));
}

// Template/rest joint locations in millimeters; bone k points from parent to k.
struct RestPose {
  std::vector<Vec3> positions;

  Vec3 bone(const SkeletonTopology& topo, std::size_t k) const {
    return positions[k] - positions[static_cast<std::size_t>(topo.parents[k])];
  }
};

// One global rotation per joint plus a root translation.
struct RotationSet {
  std::vector<Mat3> rotations;
  Vec3 root_translation;

  void validate(double tol = 1e-9) const {
    for (std::size_t k = 0; k < rotations.size(); ++k)
      if (!rotations[k].is_rotation(tol))
        throw InvalidRotation("joint " + std::to_string(k) +
                              " fails orthogonality/determinant check");
  }
};

struct Pose {
  std::vector<Vec3> positions;
};

// q_root = t_root + translation; q_k = R_k (t_k - t_pa(k)) + q_pa(k) in
// topological order. Bone lengths are preserved by construction.
inline Pose forward_kinematics(const SkeletonTopology& topo,
                               const RestPose& rest, const RotationSet& rot) {
  const std::size_t n = topo.joint_count();
  if (rest.positions.size() != n || rot.rotations.size() != n)
    throw ShapeMismatch("forward_kinematics: size mismatch with topology");
  rot.validate();
  Pose q;
  q.positions.resize(n);
  for (std::size_t k : topo.topological_order()) {
    if (topo.parents[k] < 0) {
      q.positions[k] = rest.positions[k] + rot.root_translation;
    } else {
      const auto p = static_cast<std::size_t>(topo.parents[k]);
      q.positions[k] = rot.rotations[k] * rest.bone(topo, k) + q.positions[p];
    }
  }
  return q;
}

// Swing-only analytical inverse: per bone the minimal rotation from the rest
// direction to the observed direction; root rotation stays identity. The
// rotation about the bone axis (twist) is unobservable from positions and is
// zero by construction.
inline RotationSet inverse_kinematics_swing(const SkeletonTopology& topo,
                                            const RestPose& rest,
                                            const Pose& observed,
                                            double length_tol = 1e-6) {
  const std::size_t n = topo.joint_count();
  if (rest.positions.size() != n || observed.positions.size() != n)
    throw ShapeMismatch("inverse_kinematics_swing: size mismatch");
  RotationSet rot;
  rot.rotations.assign(n, Mat3::identity());
  rot.root_translation =
      observed.positions[static_cast<std::size_t>(topo.root)] -
      rest.positions[static_cast<std::size_t>(topo.root)];
  for (std::size_t k = 0; k < n; ++k) {
    if (topo.parents[k] < 0) continue;
    const auto p = static_cast<std::size_t>(topo.parents[k]);
    const Vec3 b = rest.bone(topo, k);
    const double bl = b.norm();
    if (bl == 0.0)
      throw DegenerateBone("joint " + std::to_string(k) +
                           " has zero rest bone length");
    const Vec3 d = observed.positions[k] - observed.positions[p];
    const double dl = d.norm();
    const double rel = std::abs(dl - bl) / bl;
    if (rel > length_tol)
      throw BoneLengthMismatch("joint " + std::to_string(k) +
                               " relative length error " + std::to_string(rel));
    rot.rotations[k] = rotation_between(b, d);
  }
  return rot;
}

}  // namespace ugcn
