#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "defleye/error.hpp"

namespace defleye {

constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double d) { return d * kPi / 180.0; }
inline double rad_to_deg(double r) { return r * 180.0 / kPi; }

struct Vec2 {
    double x = 0.0, y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double s, Vec2 v) { return {s * v.x, s * v.y}; }
inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }
};

inline Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
inline Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
inline Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
inline Vec3 operator*(double s, Vec3 v) { return v *= s; }
inline Vec3 operator*(Vec3 v, double s) { return v *= s; }
inline Vec3 operator/(Vec3 v, double s) { return v *= (1.0 / s); }

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm_sq(const Vec3& v) { return dot(v, v); }
inline double norm(const Vec3& v) { return std::sqrt(norm_sq(v)); }

/// Direction with the unit-norm invariant enforced at construction.
class UnitVec3 {
public:
    UnitVec3() : v_{0.0, 0.0, 1.0} {}
    explicit UnitVec3(const Vec3& v) {
        const double n = norm(v);
        if (!(n > 1e-14)) throw DegenerateGeometry("UnitVec3: zero-length direction");
        v_ = v / n;
    }
    UnitVec3(double x, double y, double z) : UnitVec3(Vec3{x, y, z}) {}

    const Vec3& vec() const { return v_; }
    operator const Vec3&() const { return v_; }
    double x() const { return v_.x; }
    double y() const { return v_.y; }
    double z() const { return v_.z; }
    UnitVec3 operator-() const { UnitVec3 u; u.v_ = -v_; return u; }

private:
    Vec3 v_;
};

inline double dot(const UnitVec3& a, const UnitVec3& b) { return dot(a.vec(), b.vec()); }

/// Numerically stable angle between two directions, in radians.
inline double angle_between(const Vec3& a, const Vec3& b) {
    return std::atan2(norm(cross(a, b)), dot(a, b));
}

/// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return Mat3{}; }
    static Mat3 from_columns(const Vec3& c0, const Vec3& c1, const Vec3& c2) {
        Mat3 r;
        r.m = {c0.x, c1.x, c2.x, c0.y, c1.y, c2.y, c0.z, c1.z, c2.z};
        return r;
    }
    /// Rotation about a unit axis by `angle` radians (Rodrigues).
    static Mat3 axis_angle(const UnitVec3& axis, double angle);

    double operator()(int r, int c) const { return m[3 * r + c]; }
    double& operator()(int r, int c) { return m[3 * r + c]; }

    Vec3 col(int c) const { return {m[c], m[3 + c], m[6 + c]}; }
    Vec3 row(int r) const { return {m[3 * r], m[3 * r + 1], m[3 * r + 2]}; }

    Mat3 transposed() const {
        Mat3 t;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) t(r, c) = (*this)(c, r);
        return t;
    }
    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }
};

inline Vec3 operator*(const Mat3& a, const Vec3& v) {
    return {dot(a.row(0), v), dot(a.row(1), v), dot(a.row(2), v)};
}
inline Mat3 operator*(const Mat3& a, const Mat3& b) {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            r(i, j) = a(i, 0) * b(0, j) + a(i, 1) * b(1, j) + a(i, 2) * b(2, j);
    return r;
}

/// Max |R^T R - I| entry; 0 for a perfectly orthonormal matrix.
double orthonormality_error(const Mat3& r);

/// Re-orthonormalizes a near-rotation (Gram-Schmidt, det forced to +1).
Mat3 orthonormalized(const Mat3& r);

/// Rigid transform, applied as world = rotation * local + translation.
struct Pose {
    Mat3 rotation;
    Vec3 translation;

    static Pose identity() { return {}; }

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    Vec3 apply_dir(const Vec3& d) const { return rotation * d; }
    Vec3 apply_inverse(const Vec3& p) const { return rotation.transposed() * (p - translation); }
    Vec3 apply_inverse_dir(const Vec3& d) const { return rotation.transposed() * d; }

    Pose inverse() const {
        Pose inv;
        inv.rotation = rotation.transposed();
        inv.translation = -(inv.rotation * translation);
        return inv;
    }
    Pose then(const Pose& outer) const {  // outer ∘ this
        return {outer.rotation * rotation, outer.rotation * translation + outer.translation};
    }

    /// True when rotation is orthonormal with det +1 within `tol`.
    bool is_rigid(double tol = 1e-10) const {
        return orthonormality_error(rotation) < tol && std::abs(rotation.det() - 1.0) < tol;
    }
};

/// Frame at `eye` with +z pointing at `target`; +x chosen so that, for an
/// observer behind the frame, +x runs to the right of `up`.
Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up);

struct Ray {
    Vec3 origin;
    UnitVec3 direction;

    Vec3 at(double t) const { return origin + t * direction.vec(); }
};

struct Plane {
    Vec3 point;
    UnitVec3 normal;

    double signed_distance(const Vec3& p) const { return dot(p - point, normal.vec()); }
    Vec3 reflect_point(const Vec3& p) const {
        return p - 2.0 * signed_distance(p) * normal.vec();
    }
};

struct Sphere {
    Vec3 center;
    double radius = 1.0;
};

/// Infinite line stored in canonical form: `point` is the closest point of the
/// line to the origin, which makes equality and serialization well defined.
class Line3 {
public:
    Line3() = default;
    Line3(const Vec3& point_on_line, const UnitVec3& direction)
        : direction_(direction),
          point_(point_on_line - dot(point_on_line, direction.vec()) * direction.vec()) {}

    const Vec3& point() const { return point_; }
    const UnitVec3& direction() const { return direction_; }

    Vec3 closest_point_to(const Vec3& p) const {
        return point_ + dot(p - point_, direction_.vec()) * direction_.vec();
    }
    double distance_to(const Vec3& p) const { return norm(p - closest_point_to(p)); }

private:
    UnitVec3 direction_;
    Vec3 point_;
};

/// Shortest distance between two lines (perpendicular distance if parallel).
double line_line_distance(const Line3& a, const Line3& b);

/// Mirror a direction about a surface normal: d - 2(d.n)n.
inline UnitVec3 reflect(const UnitVec3& incident, const UnitVec3& normal) {
    const Vec3 r = incident.vec() - 2.0 * dot(incident, normal) * normal.vec();
    return UnitVec3(r);
}

struct SurfaceHit {
    Vec3 point;
    UnitVec3 normal;  // outward
    double t = 0.0;
};

/// Nearest intersection with t > 1e-9, if any.
std::optional<SurfaceHit> ray_sphere_intersect(const Ray& ray, const Sphere& sphere);

/// Intersection with the plane at t > 1e-9, if any (empty for near-parallel rays).
std::optional<SurfaceHit> ray_plane_intersect(const Ray& ray, const Plane& plane);

struct PinholeCamera {
    double fx = 1000.0, fy = 1000.0;
    double cx = 500.0, cy = 500.0;
    int width = 1000, height = 1000;
    Pose pose;  // camera-to-world

    Vec3 center() const { return pose.translation; }

    /// Pixel coordinates of a world point; empty when z_cam <= 1e-9.
    std::optional<Vec2> project(const Vec3& world) const {
        const Vec3 pc = pose.apply_inverse(world);
        if (pc.z <= 1e-9) return std::nullopt;
        return Vec2{fx * pc.x / pc.z + cx, fy * pc.y / pc.z + cy};
    }

    /// World-frame ray through the camera center and pixel (u, v).
    Ray backproject(double u, double v) const {
        const Vec3 dir_cam{(u - cx) / fx, (v - cy) / fy, 1.0};
        return Ray{center(), UnitVec3(pose.apply_dir(dir_cam))};
    }

    bool in_image(const Vec2& px, double margin = 0.0) const {
        return px.x >= margin && px.x <= width - 1 - margin && px.y >= margin &&
               px.y <= height - 1 - margin;
    }

    void validate() const {
        if (!(fx > 0 && fy > 0)) throw ConfigError("camera focal lengths must be positive");
        if (!(cx >= 0 && cx < width && cy >= 0 && cy < height))
            throw ConfigError("camera principal point outside image");
        if (!pose.is_rigid(1e-8)) throw ConfigError("camera pose is not rigid");
    }
};

struct PointFit {
    Vec3 point;
    double rms_distance = 0.0;
};

/// Least-squares point minimizing summed squared perpendicular distance to the
/// lines, via the closed-form normal equations sum(I - d d^T)(P - p_i) = 0.
/// Throws DegenerateGeometry when the 3x3 system is ill conditioned (near-parallel
/// configuration, condition number >= 1e8).
PointFit best_fit_point(std::span<const Line3> lines);

struct AxisFitOptions {
    int max_iterations = 200;
    double step_tolerance = 1e-12;
    double pencil_tolerance = 1e-9;  // concurrency rms below this => degenerate pencil
};

struct AxisFit {
    Line3 axis;
    double rms_distance = 0.0;
    bool degenerate_pencil = false;
    int iterations = 0;
    std::vector<double> residual_history;  // accepted-iterate rms, monotone
};

/// Refines a 4-dof axis (2 direction + 2 position) minimizing summed squared
/// line-to-line distance, Gauss-Newton with backtracking. `init` must be within
/// ~20 degrees of the optimum. If all lines are concurrent the direction is
/// unconstrained: the fit returns init's direction through the concurrency point
/// with `degenerate_pencil` set.
AxisFit best_fit_axis(std::span<const Line3> lines, const Line3& init,
                      const AxisFitOptions& options = {});

/// Any two unit vectors orthogonal to d and each other.
std::pair<Vec3, Vec3> orthonormal_basis(const UnitVec3& d);

}  // namespace defleye
