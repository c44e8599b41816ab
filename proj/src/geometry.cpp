#include "defleye/geometry.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace defleye {

Mat3 Mat3::axis_angle(const UnitVec3& axis, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    const Vec3 a = axis.vec();
    Mat3 r;
    r.m = {c + a.x * a.x * (1 - c),     a.x * a.y * (1 - c) - a.z * s, a.x * a.z * (1 - c) + a.y * s,
           a.y * a.x * (1 - c) + a.z * s, c + a.y * a.y * (1 - c),     a.y * a.z * (1 - c) - a.x * s,
           a.z * a.x * (1 - c) - a.y * s, a.z * a.y * (1 - c) + a.x * s, c + a.z * a.z * (1 - c)};
    return r;
}

double orthonormality_error(const Mat3& r) {
    const Mat3 g = r.transposed() * r;
    double worst = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            worst = std::max(worst, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
    return worst;
}

Mat3 orthonormalized(const Mat3& r) {
    Vec3 c0 = r.col(0), c1 = r.col(1);
    c0 = c0 / norm(c0);
    c1 = c1 - dot(c1, c0) * c0;
    c1 = c1 / norm(c1);
    const Vec3 c2 = cross(c0, c1);
    return Mat3::from_columns(c0, c1, c2);
}

Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
    const Vec3 fwd = target - eye;
    if (norm(fwd) < 1e-12) throw DegenerateGeometry("look_at: eye equals target");
    const Vec3 z = fwd / norm(fwd);
    Vec3 x = cross(z, up);
    if (norm(x) < 1e-9) throw DegenerateGeometry("look_at: up parallel to view direction");
    x = x / norm(x);
    const Vec3 y = cross(z, x);
    return Pose{Mat3::from_columns(x, y, z), eye};
}

double line_line_distance(const Line3& a, const Line3& b) {
    const Vec3 w = cross(a.direction().vec(), b.direction().vec());
    const double wn = norm(w);
    if (wn < 1e-12) return a.distance_to(b.point());  // parallel
    return std::abs(dot(b.point() - a.point(), w)) / wn;
}

std::optional<SurfaceHit> ray_sphere_intersect(const Ray& ray, const Sphere& sphere) {
    const Vec3 oc = ray.origin - sphere.center;
    const double b = dot(oc, ray.direction.vec());
    const double c = norm_sq(oc) - sphere.radius * sphere.radius;
    const double disc = b * b - c;
    if (disc < 0.0) return std::nullopt;
    const double sq = std::sqrt(disc);
    double t = -b - sq;
    if (t <= 1e-9) t = -b + sq;
    if (t <= 1e-9) return std::nullopt;
    const Vec3 p = ray.at(t);
    return SurfaceHit{p, UnitVec3((p - sphere.center) / sphere.radius), t};
}

std::optional<SurfaceHit> ray_plane_intersect(const Ray& ray, const Plane& plane) {
    const double denom = dot(ray.direction.vec(), plane.normal.vec());
    if (std::abs(denom) < 1e-12) return std::nullopt;
    const double t = -plane.signed_distance(ray.origin) / denom;
    if (t <= 1e-9) return std::nullopt;
    UnitVec3 n = plane.normal;
    if (denom > 0.0) n = -n;  // face the ray
    return SurfaceHit{ray.at(t), n, t};
}

PointFit best_fit_point(std::span<const Line3> lines) {
    if (lines.size() < 2) throw DegenerateGeometry("best_fit_point: need at least 2 lines");
    Eigen::Matrix3d a = Eigen::Matrix3d::Zero();
    Eigen::Vector3d rhs = Eigen::Vector3d::Zero();
    for (const Line3& line : lines) {
        const Vec3 d = line.direction().vec();
        Eigen::Matrix3d proj = Eigen::Matrix3d::Identity();
        const Eigen::Vector3d dv(d.x, d.y, d.z);
        proj -= dv * dv.transpose();
        a += proj;
        rhs += proj * Eigen::Vector3d(line.point().x, line.point().y, line.point().z);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(a);
    const double lo = eig.eigenvalues()(0), hi = eig.eigenvalues()(2);
    if (!(lo > 0.0) || hi / lo >= 1e8)
        throw DegenerateGeometry("best_fit_point: near-parallel line configuration");
    const Eigen::Vector3d p = a.ldlt().solve(rhs);
    const Vec3 point{p(0), p(1), p(2)};
    double ss = 0.0;
    for (const Line3& line : lines) {
        const double d = line.distance_to(point);
        ss += d * d;
    }
    return PointFit{point, std::sqrt(ss / static_cast<double>(lines.size()))};
}

namespace {

struct AxisParams {
    // direction offsets (a, b) in the tangent plane of the init direction,
    // position offsets (p, q) in the plane orthogonal to it
    double a = 0, b = 0, p = 0, q = 0;
};

Line3 make_axis(const Line3& init, const Vec3& e1, const Vec3& e2, const AxisParams& w) {
    const Vec3 dir = init.direction().vec() + w.a * e1 + w.b * e2;
    const Vec3 pt = init.point() + w.p * e1 + w.q * e2;
    return Line3(pt, UnitVec3(dir));
}

// Signed shortest axis-to-line distance; lines nearly parallel to the axis are
// skipped by the caller.
double signed_distance(const Line3& axis, const Line3& line) {
    const Vec3 w = cross(axis.direction().vec(), line.direction().vec());
    const double wn = norm(w);
    if (wn < 1e-9) return norm(line.point() - axis.closest_point_to(line.point()));
    return dot(line.point() - axis.point(), w) / wn;
}

double sum_sq(const Line3& axis, std::span<const Line3> lines) {
    double ss = 0.0;
    for (const Line3& l : lines) {
        const double r = signed_distance(axis, l);
        ss += r * r;
    }
    return ss;
}

}  // namespace

std::pair<Vec3, Vec3> orthonormal_basis(const UnitVec3& d) {
    const Vec3 v = d.vec();
    const Vec3 other = std::abs(v.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    Vec3 e1 = cross(v, other);
    e1 = e1 / norm(e1);
    const Vec3 e2 = cross(v, e1);
    return {e1, e2};
}

AxisFit best_fit_axis(std::span<const Line3> lines, const Line3& init,
                      const AxisFitOptions& options) {
    if (lines.size() < 10) throw DegenerateGeometry("best_fit_axis: need at least 10 lines");

    // A perfect pencil leaves the direction unconstrained.
    try {
        const PointFit pencil = best_fit_point(lines);
        if (pencil.rms_distance < options.pencil_tolerance) {
            AxisFit fit;
            fit.axis = Line3(pencil.point, init.direction());
            fit.rms_distance = pencil.rms_distance;
            fit.degenerate_pencil = true;
            return fit;
        }
    } catch (const DegenerateGeometry&) {
        // non-concurrent near-parallel set; proceed with the iterative fit
    }

    const auto [e1, e2] = orthonormal_basis(init.direction());
    AxisParams w;
    const double n_inv = 1.0 / static_cast<double>(lines.size());
    double ss = sum_sq(make_axis(init, e1, e2, w), lines);

    AxisFit fit;
    fit.residual_history.push_back(std::sqrt(ss * n_inv));

    const double fd = 1e-7;
    for (int iter = 0; iter < options.max_iterations; ++iter) {
        fit.iterations = iter + 1;
        const Line3 axis0 = make_axis(init, e1, e2, w);

        Eigen::MatrixXd jac(lines.size(), 4);
        Eigen::VectorXd res(lines.size());
        for (size_t i = 0; i < lines.size(); ++i) res(i) = signed_distance(axis0, lines[i]);
        for (int k = 0; k < 4; ++k) {
            AxisParams wp = w;
            (&wp.a)[k] += fd;
            const Line3 axis_p = make_axis(init, e1, e2, wp);
            for (size_t i = 0; i < lines.size(); ++i)
                jac(i, k) = (signed_distance(axis_p, lines[i]) - res(i)) / fd;
        }

        Eigen::Matrix4d jtj = jac.transpose() * jac;
        jtj.diagonal().array() += 1e-12 * (1.0 + jtj.trace());
        const Eigen::Vector4d step = jtj.ldlt().solve(-(jac.transpose() * res));

        // backtracking line search on the Gauss-Newton step
        double alpha = 1.0;
        bool accepted = false;
        for (int bt = 0; bt < 24; ++bt) {
            AxisParams wn = w;
            wn.a += alpha * step(0);
            wn.b += alpha * step(1);
            wn.p += alpha * step(2);
            wn.q += alpha * step(3);
            const double ss_new = sum_sq(make_axis(init, e1, e2, wn), lines);
            if (ss_new < ss) {
                w = wn;
                ss = ss_new;
                accepted = true;
                fit.residual_history.push_back(std::sqrt(ss * n_inv));
                break;
            }
            alpha *= 0.5;
        }
        const double step_norm = alpha * step.norm();
        if (!accepted || step_norm < options.step_tolerance) {
            fit.axis = make_axis(init, e1, e2, w);
            fit.rms_distance = std::sqrt(ss * n_inv);
            return fit;
        }
    }
    throw NonConvergence("best_fit_axis: no convergence after max iterations",
                         std::sqrt(ss * n_inv));
}

}  // namespace defleye
