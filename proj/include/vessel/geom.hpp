#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace vessel {

using Vec3 = std::array<double, 3>;

// Row-major 3x3 matrix.
using Mat3 = std::array<double, 9>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& v) { return {s * v[0], s * v[1], s * v[2]}; }

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline Vec3 normalized(const Vec3& v) {
  double n = norm(v);
  return n > 0.0 ? (1.0 / n) * v : Vec3{0, 0, 0};
}

inline Mat3 mat3_identity() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

inline Vec3 mat3_apply(const Mat3& m, const Vec3& v) {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
          m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

inline Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += a[3 * i + k] * b[3 * k + j];
      r[3 * i + j] = s;
    }
  return r;
}

inline Mat3 mat3_transpose(const Mat3& m) {
  return {m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]};
}

inline double mat3_det(const Mat3& m) {
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
         m[2] * (m[3] * m[7] - m[4] * m[6]);
}

// Matrix built from three rows; maps e_x->r0 is NOT what this does: it maps
// v -> (r0.v, r1.v, r2.v), i.e. world frame -> (r0,r1,r2) frame.
inline Mat3 mat3_from_rows(const Vec3& r0, const Vec3& r1, const Vec3& r2) {
  return {r0[0], r0[1], r0[2], r1[0], r1[1], r1[2], r2[0], r2[1], r2[2]};
}

// Rodrigues rotation about a unit axis.
inline Mat3 rotation_about_axis(const Vec3& axis, double angle) {
  double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  double x = axis[0], y = axis[1], z = axis[2];
  return {t * x * x + c,     t * x * y - s * z, t * x * z + s * y,
          t * x * y + s * z, t * y * y + c,     t * y * z - s * x,
          t * x * z - s * y, t * y * z + s * x, t * z * z + c};
}

// Minimal rotation taking unit vector a onto unit vector b.
inline Mat3 rotation_between(const Vec3& a, const Vec3& b) {
  Vec3 v = cross(a, b);
  double c = dot(a, b);
  double s = norm(v);
  if (s < 1e-12) {
    if (c > 0.0) return mat3_identity();
    // a == -b: rotate pi about any axis orthogonal to a.
    Vec3 ortho = std::abs(a[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    Vec3 axis = normalized(cross(a, ortho));
    return rotation_about_axis(axis, M_PI);
  }
  return rotation_about_axis((1.0 / s) * v, std::atan2(s, c));
}

// A deterministic unit vector orthogonal to unit u.
inline Vec3 any_orthogonal(const Vec3& u) {
  Vec3 ref = std::abs(u[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
  return normalized(cross(u, ref));
}

}  // namespace vessel
