#include "defleye/reconstruct.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>

#include "defleye/util.hpp"

namespace defleye {

Rig Rig::from_scene(const Scene& scene) {
    if (scene.cameras.size() < 2) throw ConfigError("stereo rig needs two cameras");
    return Rig{{scene.cameras[0], scene.cameras[1]}, scene.display};
}

double Rig::nominal_standoff() const {
    // closest approach of the two principal rays
    const Line3 a(cameras[0].center(), UnitVec3(cameras[0].pose.rotation.col(2)));
    const Line3 b(cameras[1].center(), UnitVec3(cameras[1].pose.rotation.col(2)));
    const std::vector<Line3> lines = {a, b};
    try {
        const PointFit fit = best_fit_point(lines);
        return norm(fit.point - cameras[0].center());
    } catch (const DegenerateGeometry&) {
        return 0.75 * norm(cameras[0].center() - cameras[1].center()) + 50.0;
    }
}

long RegionMask::count(RegionLabel l) const {
    long n = 0;
    for (uint8_t v : label)
        if (v == static_cast<uint8_t>(l)) ++n;
    return n;
}

RegionMask RegionMask::all_sclera(const CorrespondenceMap& corr) {
    RegionMask m;
    m.width = corr.width;
    m.height = corr.height;
    m.label.assign(corr.valid.size(), static_cast<uint8_t>(RegionLabel::Invalid));
    for (size_t i = 0; i < corr.valid.size(); ++i)
        if (corr.valid[i]) m.label[i] = static_cast<uint8_t>(RegionLabel::Sclera);
    return m;
}

namespace {

// General-position ring fit: conic constrained to a + c = 1 (handles the
// mildly elliptical perspective projection of the limbus circle). rho() is 1
// on the ring, <1 inside.
struct RingFit {
    double cx = 0, cy = 0, r = 0;     // center and mean radius
    double qa = 1, qb = 0, qc = 1;    // quadratic form about the center
    double scale = 1;
    bool ok = false;

    double rho(double x, double y) const {
        const double dx = x - cx, dy = y - cy;
        const double q = qa * dx * dx + qb * dx * dy + qc * dy * dy;
        return q > 0 ? std::sqrt(q / scale) : 0.0;
    }
};

struct CircleFit2 {
    double cx = 0, cy = 0, r = 0;
    bool ok = false;
};

// Algebraic (Kasa) circle fit.
CircleFit2 fit_circle(const std::vector<Vec2>& pts) {
    CircleFit2 out;
    if (pts.size() < 8) return out;
    Eigen::Matrix3d ata = Eigen::Matrix3d::Zero();
    Eigen::Vector3d atb = Eigen::Vector3d::Zero();
    for (const Vec2& p : pts) {
        const Eigen::Vector3d row(p.x, p.y, 1.0);
        ata += row * row.transpose();
        atb += row * (p.x * p.x + p.y * p.y);
    }
    const Eigen::Vector3d sol = ata.ldlt().solve(atb);
    out.cx = 0.5 * sol(0);
    out.cy = 0.5 * sol(1);
    const double r2 = sol(2) + out.cx * out.cx + out.cy * out.cy;
    if (!(r2 > 0) || !std::isfinite(r2)) return out;
    out.r = std::sqrt(r2);
    out.ok = true;
    return out;
}

RingFit fit_ring(const std::vector<Vec2>& pts) {
    RingFit out;
    if (pts.size() < 12) return out;
    // least squares on a x^2 + b xy + c y^2 + d x + e y + f = 0 with c = 1 - a
    Eigen::Matrix<double, 5, 5> ata = Eigen::Matrix<double, 5, 5>::Zero();
    Eigen::Matrix<double, 5, 1> atb = Eigen::Matrix<double, 5, 1>::Zero();
    for (const Vec2& p : pts) {
        Eigen::Matrix<double, 5, 1> row;
        row << p.x * p.x - p.y * p.y, p.x * p.y, p.x, p.y, 1.0;
        ata += row * row.transpose();
        atb += row * (-p.y * p.y);
    }
    const Eigen::Matrix<double, 5, 1> sol = ata.ldlt().solve(atb);
    const double a = sol(0), b = sol(1), c = 1.0 - sol(0);
    const double d = sol(2), e = sol(3), f = sol(4);
    // center from the gradient zero of the conic
    const double det = 4 * a * c - b * b;
    if (!(det > 1e-9)) return out;
    out.cx = (b * e - 2 * c * d) / det;
    out.cy = (b * d - 2 * a * e) / det;
    // value at the center must be negative for a real ellipse
    const double fc = a * out.cx * out.cx + b * out.cx * out.cy + c * out.cy * out.cy +
                      d * out.cx + e * out.cy + f;
    if (!(fc < 0)) return out;
    out.qa = a;
    out.qb = b;
    out.qc = c;
    out.scale = -fc;
    double r_mean = 0;
    for (const Vec2& p : pts) r_mean += std::hypot(p.x - out.cx, p.y - out.cy);
    out.r = r_mean / static_cast<double>(pts.size());
    out.ok = std::isfinite(out.cx) && std::isfinite(out.cy) && out.r > 0;
    return out;
}

}  // namespace

RegionMask segment_limbus(const CorrespondenceMap& corr, const SegmentOptions& options) {
    const int w = corr.width, h = corr.height;
    const size_t n = corr.valid.size();
    RegionMask mask;
    mask.width = w;
    mask.height = h;
    mask.label.assign(n, static_cast<uint8_t>(RegionLabel::Invalid));

    // gradient magnitude of the correspondence (both channels)
    std::vector<double> grad(n, 0.0);
    std::vector<uint8_t> has_grad(n, 0);
    std::vector<double> grads;
    grads.reserve(n / 4);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!corr.is_valid(x, y)) continue;
            const size_t i = corr.index(x, y);
            auto diff = [&](const std::vector<double>& f, int x0, int y0, int x1, int y1,
                            double scale, double& out) {
                if (x0 < 0 || y0 < 0 || x1 >= w || y1 >= h) return false;
                if (!corr.is_valid(x0, y0) || !corr.is_valid(x1, y1)) return false;
                out = (f[corr.index(x1, y1)] - f[corr.index(x0, y0)]) * scale;
                return true;
            };
            double gxx = 0, gxy = 0, gyx = 0, gyy = 0;
            bool ok = true;
            // central where possible, one-sided at validity edges
            if (!diff(corr.x, x - 1, y, x + 1, y, 0.5, gxx) &&
                !diff(corr.x, x, y, x + 1, y, 1.0, gxx) &&
                !diff(corr.x, x - 1, y, x, y, 1.0, gxx))
                ok = false;
            if (!diff(corr.y, x - 1, y, x + 1, y, 0.5, gyx) &&
                !diff(corr.y, x, y, x + 1, y, 1.0, gyx) &&
                !diff(corr.y, x - 1, y, x, y, 1.0, gyx))
                ok = false;
            if (!diff(corr.x, x, y - 1, x, y + 1, 0.5, gxy) &&
                !diff(corr.x, x, y, x, y + 1, 1.0, gxy) &&
                !diff(corr.x, x, y - 1, x, y, 1.0, gxy))
                ok = false;
            if (!diff(corr.y, x, y - 1, x, y + 1, 0.5, gyy) &&
                !diff(corr.y, x, y, x, y + 1, 1.0, gyy) &&
                !diff(corr.y, x, y - 1, x, y, 1.0, gyy))
                ok = false;
            if (!ok) continue;
            grad[i] = std::sqrt(gxx * gxx + gxy * gxy + gyx * gyx + gyy * gyy);
            has_grad[i] = 1;
            grads.push_back(grad[i]);
        }
    if (grads.empty()) throw NoLimbusFound("segment_limbus: no measurable gradients");
    const double threshold = options.gradient_k * median(grads);

    // Connected components of the valid area. The abrupt fringe deformation at
    // the limbus makes the steep cornea rim unmeasurable, so the cornea shows
    // up as a valid island separated from the sclera region by an invalid
    // moat ringed with high-gradient pixels.
    std::vector<int> comp(n, -1);
    std::vector<long> comp_size;
    std::vector<double> comp_cx, comp_cy;
    {
        std::vector<size_t> stack;
        for (size_t start = 0; start < n; ++start) {
            if (!corr.valid[start] || comp[start] >= 0) continue;
            const int id = static_cast<int>(comp_size.size());
            comp_size.push_back(0);
            comp_cx.push_back(0);
            comp_cy.push_back(0);
            stack.push_back(start);
            comp[start] = id;
            while (!stack.empty()) {
                const size_t i = stack.back();
                stack.pop_back();
                ++comp_size[id];
                const int x = static_cast<int>(i % w), y = static_cast<int>(i / w);
                comp_cx[id] += x;
                comp_cy[id] += y;
                const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
                for (int k = 0; k < 4; ++k) {
                    const int xx = x + dx[k], yy = y + dy[k];
                    if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
                    const size_t j = corr.index(xx, yy);
                    if (corr.valid[j] && comp[j] < 0) {
                        comp[j] = id;
                        stack.push_back(j);
                    }
                }
            }
        }
        for (size_t id = 0; id < comp_size.size(); ++id) {
            comp_cx[id] /= comp_size[id];
            comp_cy[id] /= comp_size[id];
        }
    }

    // The cornea island is a blob (it contains its own centroid, unlike the
    // C-shaped or annular sclera region whose centroid falls inside the
    // island) and is surrounded by other valid components. A smooth
    // single-sphere map has one blob with nothing around it.
    int island = -1;
    long island_size = 0;
    for (size_t id = 0; id < comp_size.size(); ++id) {
        if (comp_size[id] < options.min_region_pixels) continue;
        const int cx = static_cast<int>(std::lround(comp_cx[id]));
        const int cy = static_cast<int>(std::lround(comp_cy[id]));
        bool self_contained = false;
        for (int dy = -6; dy <= 6 && !self_contained; ++dy)
            for (int dx = -6; dx <= 6 && !self_contained; ++dx) {
                const int x = cx + dx, y = cy + dy;
                if (x >= 0 && y >= 0 && x < w && y < h &&
                    comp[corr.index(x, y)] == static_cast<int>(id))
                    self_contained = true;
            }
        if (!self_contained) continue;

        int surrounded = 0;
        const int probes = 16;
        for (int k = 0; k < probes; ++k) {
            const double az = 2 * kPi * k / probes;
            const double dx = std::cos(az), dy = std::sin(az);
            bool left = false, hit_other = false;
            for (double r = 1.0; r < std::hypot(w, h); r += 1.0) {
                const int x = static_cast<int>(std::lround(comp_cx[id] + r * dx));
                const int y = static_cast<int>(std::lround(comp_cy[id] + r * dy));
                if (x < 0 || y < 0 || x >= w || y >= h) break;
                const int c = comp[corr.index(x, y)];
                if (!left) {
                    if (c != static_cast<int>(id)) left = true;
                } else if (c >= 0 && c != static_cast<int>(id) &&
                           comp_size[c] >= options.min_band_pixels) {
                    hit_other = true;
                    break;
                }
            }
            if (hit_other) ++surrounded;
        }
        if (surrounded >= (3 * probes) / 8 && comp_size[id] > island_size) {
            island = static_cast<int>(id);
            island_size = comp_size[id];
        }
    }
    if (island < 0) throw NoLimbusFound("segment_limbus: no enclosed cornea island");

    // island boundary pixels (for the excluded-band bounds)
    std::vector<Vec2> boundary_pts;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (comp[corr.index(x, y)] != island) continue;
            bool boundary = x == 0 || y == 0 || x == w - 1 || y == h - 1;
            const int dx[4] = {1, -1, 0, 0}, dy[4] = {0, 0, 1, -1};
            for (int k = 0; k < 4 && !boundary; ++k)
                if (comp[corr.index(x + dx[k], y + dy[k])] != island) boundary = true;
            if (boundary) boundary_pts.push_back({static_cast<double>(x), static_cast<double>(y)});
        }

    // The limbus circle is traced by the first valid pixels beyond the
    // island: the sclera becomes measurable right at the crease. One nearest
    // point per azimuth; coverage-cutoff points farther out are trimmed by
    // one-sided inlier passes around a circle, then an ellipse refines the
    // perspective-tilted ring.
    std::vector<Vec2> inner_edge_pts;
    {
        const int bins = 720;
        std::vector<Vec2> nearest(bins);
        std::vector<double> nearest_r(bins, 1e18);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int id = comp[corr.index(x, y)];
                if (id < 0 || id == island) continue;
                if (comp_size[id] < options.min_band_pixels) continue;
                const double dx = x - comp_cx[island], dy = y - comp_cy[island];
                const double r = std::hypot(dx, dy);
                const int b = std::min(bins - 1, static_cast<int>((std::atan2(dy, dx) + kPi) /
                                                                  (2 * kPi) * bins));
                if (r < nearest_r[b]) {
                    nearest_r[b] = r;
                    nearest[b] = {static_cast<double>(x), static_cast<double>(y)};
                }
            }
        for (int b = 0; b < bins; ++b)
            if (nearest_r[b] < 1e17) inner_edge_pts.push_back(nearest[b]);
    }

    CircleFit2 circle = fit_circle(inner_edge_pts);
    std::vector<Vec2> inliers = inner_edge_pts;
    for (int pass = 0; pass < 4 && circle.ok; ++pass) {
        std::vector<Vec2> keep;
        for (const Vec2& p : inliers) {
            const double r = std::hypot(p.x - circle.cx, p.y - circle.cy);
            if (r < circle.r + std::max(3.0, 0.09 * circle.r) && r > 0.7 * circle.r)
                keep.push_back(p);
        }
        if (keep.size() < 24) break;
        const CircleFit2 refit = fit_circle(keep);
        if (!refit.ok) break;
        circle = refit;
        inliers = std::move(keep);
    }
    if (!circle.ok || circle.r < 4.0 || circle.r > std::hypot(w, h))
        throw NoLimbusFound("segment_limbus: outer-region inner edge does not form a ring");

    RingFit ring;
    const RingFit ellipse = fit_ring(inliers);
    const bool ellipse_sane =
        ellipse.ok && std::hypot(ellipse.cx - circle.cx, ellipse.cy - circle.cy) < 0.2 * circle.r &&
        ellipse.r > 0.6 * circle.r && ellipse.r < 1.5 * circle.r;
    if (ellipse_sane) {
        ring = ellipse;
    } else {
        ring.cx = circle.cx;
        ring.cy = circle.cy;
        ring.r = circle.r;
        ring.qa = 1.0;
        ring.qb = 0.0;
        ring.qc = 1.0;
        ring.scale = circle.r * circle.r;
        ring.ok = true;
    }

    // the abrupt deformation statistic: high-gradient pixels near the ring
    // (the measurable rims on both sides of the crease); maps whose crease
    // pixels were invalidated outright prove the ring by azimuthal arc coverage
    long band_count = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const size_t i = corr.index(x, y);
            if (!has_grad[i] || grad[i] <= threshold) continue;
            const double rho = ring.rho(x, y);
            if (rho > 0.4 && rho < 1.35) ++band_count;
        }
    double arc_coverage = 0.0;
    {
        std::vector<uint8_t> bin_hit(64, 0);
        for (const Vec2& p : inner_edge_pts) {
            const double rho = ring.rho(p.x, p.y);
            if (rho < 0.85 || rho > 1.2) continue;
            const double az = std::atan2(p.y - ring.cy, p.x - ring.cx);
            bin_hit[std::min<size_t>(63, static_cast<size_t>((az + kPi) / (2 * kPi) * 64))] = 1;
        }
        for (uint8_t b : bin_hit) arc_coverage += b;
        arc_coverage /= 64.0;
    }
    if (band_count < options.min_band_pixels && arc_coverage < 0.3)
        throw NoLimbusFound("segment_limbus: no high-gradient band around the ring (" +
                            std::to_string(band_count) + " px, arc " +
                            std::to_string(arc_coverage) + ")");

    // excluded band spanning the moat between the island rim and the ring,
    // in normalized (elliptical) radius units
    std::vector<double> boundary_rho, edge_rho;
    for (const Vec2& p : boundary_pts) boundary_rho.push_back(ring.rho(p.x, p.y));
    for (const Vec2& p : inner_edge_pts) edge_rho.push_back(ring.rho(p.x, p.y));
    std::sort(boundary_rho.begin(), boundary_rho.end());
    std::sort(edge_rho.begin(), edge_rho.end());
    const double excl = options.exclusion_px / ring.r;
    const double rho_in =
        std::max(0.0, boundary_rho[static_cast<size_t>(0.02 * (boundary_rho.size() - 1))] - excl);
    const double rho_out =
        std::max(edge_rho[static_cast<size_t>(0.98 * (edge_rho.size() - 1))], 1.0) + excl;
    if (!(rho_out > rho_in))
        throw NoLimbusFound("segment_limbus: island and outer region radially interleave");

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const size_t i = corr.index(x, y);
            if (!corr.valid[i]) continue;
            const double rho = ring.rho(x, y);
            if (rho < rho_in && comp[i] == island)
                mask.label[i] = static_cast<uint8_t>(RegionLabel::Cornea);
            else if (rho > rho_out && comp[i] != island)
                mask.label[i] = static_cast<uint8_t>(RegionLabel::Sclera);
            else
                mask.label[i] = static_cast<uint8_t>(RegionLabel::LimbusExcluded);
        }

    if (mask.count(RegionLabel::Cornea) < options.min_region_pixels ||
        mask.count(RegionLabel::Sclera) < options.min_region_pixels)
        throw NoLimbusFound(
            "segment_limbus: ring does not separate two regions (cornea " +
            std::to_string(mask.count(RegionLabel::Cornea)) + ", sclera " +
            std::to_string(mask.count(RegionLabel::Sclera)) + ", band rho [" +
            std::to_string(rho_in) + ", " + std::to_string(rho_out) + "] around (" +
            std::to_string(ring.cx) + ", " + std::to_string(ring.cy) + "))");

    mask.limbus_found = true;
    mask.limbus_cx = ring.cx;
    mask.limbus_cy = ring.cy;
    mask.limbus_r = ring.r;
    return mask;
}

UnitVec3 normal_from_correspondence(const Rig& rig, int camera_id, const Vec3& point,
                                    const Vec2& display_px) {
    const Vec3 incident = point - rig.cameras[camera_id].center();
    const Vec3 to_display = rig.display.pixel_to_world(display_px.x, display_px.y) - point;
    const Vec3 half = to_display / norm(to_display) - incident / norm(incident);
    return UnitVec3(half);
}

namespace {

constexpr double kBadMismatch = 1e9;

double catmull_rom(double p0, double p1, double p2, double p3, double t) {
    return p1 + 0.5 * t * (p2 - p0 + t * (2 * p0 - 5 * p1 + 4 * p2 - p3 +
                                          t * (3 * (p1 - p2) + p3 - p0)));
}

// Valid-aware lookup of a correspondence map: Catmull-Rom over the 4x4
// neighborhood, which must be fully valid. A bilinear fallback would bias the
// depth search by a few microns wherever the field curves, so edge pixels are
// treated as unusable instead.
bool sample_corr(const CorrespondenceMap& corr, double u, double v, Vec2* out) {
    const int x0 = static_cast<int>(std::floor(u));
    const int y0 = static_cast<int>(std::floor(v));
    if (x0 < 1 || y0 < 1 || x0 + 2 >= corr.width || y0 + 2 >= corr.height) return false;
    for (int dy = -1; dy <= 2; ++dy)
        for (int dx = -1; dx <= 2; ++dx)
            if (!corr.is_valid(x0 + dx, y0 + dy)) return false;
    const double fx = u - x0, fy = v - y0;
    auto cubic2 = [&](const std::vector<double>& f) {
        double rows[4];
        for (int dy = -1; dy <= 2; ++dy)
            rows[dy + 1] = catmull_rom(f[corr.index(x0 - 1, y0 + dy)],
                                       f[corr.index(x0, y0 + dy)],
                                       f[corr.index(x0 + 1, y0 + dy)],
                                       f[corr.index(x0 + 2, y0 + dy)], fx);
        return catmull_rom(rows[0], rows[1], rows[2], rows[3], fy);
    };
    out->x = cubic2(corr.x);
    out->y = cubic2(corr.y);
    return true;
}

}  // namespace

double stereo_mismatch(const Rig& rig, int base_cam, const Vec2& pixel, const Vec2& display_px,
                       const CorrespondenceMap& other_corr, double t) {
    const int other_cam = 1 - base_cam;
    const Ray ray = rig.cameras[base_cam].backproject(pixel.x, pixel.y);
    const Vec3 p = ray.at(t);
    const UnitVec3 n = normal_from_correspondence(rig, base_cam, p, display_px);

    const Vec3 to_p = p - rig.cameras[other_cam].center();
    const double d2n = dot(to_p / norm(to_p), n.vec());
    if (d2n >= -1e-6) return kBadMismatch;  // second camera sees the back side
    const UnitVec3 reflected = reflect(UnitVec3(to_p), n);
    const auto display_hit = ray_plane_intersect(Ray{p, reflected}, rig.display.plane());
    if (!display_hit) return kBadMismatch;
    const Vec2 predicted = rig.display.world_to_pixel(display_hit->point);

    const auto projected = rig.cameras[other_cam].project(p);
    if (!projected) return kBadMismatch;
    Vec2 observed;
    if (!sample_corr(other_corr, projected->x, projected->y, &observed)) return kBadMismatch;
    return norm(predicted - observed);
}

namespace {

// Depth search at one pixel: coarse scan + golden-section refinement.
// Returns false when the pixel has no usable (unique) minimum.
bool resolve_anchor(const CorrespondenceMap& corr0, const CorrespondenceMap& corr1,
                    const RegionMask& mask0, const Rig& rig, const AnchorOptions& options,
                    double t_min, double t_max, int px, int py, AnchorResult* result) {
    const Vec2 pixel{static_cast<double>(px), static_cast<double>(py)};
    const size_t i = corr0.index(px, py);
    const Vec2 display_px{corr0.x[i], corr0.y[i]};

    const int n_coarse = std::max(16, options.coarse_samples);
    const double dt = (t_max - t_min) / (n_coarse - 1);
    std::vector<double> curve(n_coarse);
    int best = -1;
    for (int k = 0; k < n_coarse; ++k) {
        curve[k] = stereo_mismatch(rig, 0, pixel, display_px, corr1, t_min + k * dt);
        if (curve[k] < kBadMismatch && (best < 0 || curve[k] < curve[best])) best = k;
    }
    if (best < 0) {
        ++result->dropped_no_overlap;
        return false;
    }
    // uniqueness: a separated local minimum nearly as deep means the 1D
    // search cannot be trusted at this pixel
    for (int k = 1; k + 1 < n_coarse; ++k) {
        if (std::abs(k - best) <= 3) continue;
        if (curve[k] >= kBadMismatch) continue;
        if (curve[k] <= curve[k - 1] && curve[k] <= curve[k + 1] &&
            curve[k] < 2.0 * curve[best] + 0.1) {
            ++result->dropped_non_unique;
            return false;
        }
    }

    double a = t_min + std::max(0, best - 1) * dt;
    double b = t_min + std::min(n_coarse - 1, best + 1) * dt;
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
    double f1 = stereo_mismatch(rig, 0, pixel, display_px, corr1, x1);
    double f2 = stereo_mismatch(rig, 0, pixel, display_px, corr1, x2);
    while (b - a > options.golden_tolerance_mm) {
        if (f1 < f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - gr * (b - a);
            f1 = stereo_mismatch(rig, 0, pixel, display_px, corr1, x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + gr * (b - a);
            f2 = stereo_mismatch(rig, 0, pixel, display_px, corr1, x2);
        }
    }
    const double t_star = 0.5 * (a + b);
    if (std::min(f1, f2) > options.max_mismatch_px) {
        ++result->dropped_no_overlap;
        return false;
    }

    SurfaceSample s;
    s.camera_id = 0;
    s.pixel = pixel;
    s.point = rig.cameras[0].backproject(pixel.x, pixel.y).at(t_star);
    s.normal = normal_from_correspondence(rig, 0, s.point, display_px);
    s.region = mask0.at(px, py) == RegionLabel::Cornea ? Region::Cornea : Region::Sclera;
    result->samples.push_back(s);
    return true;
}

}  // namespace

AnchorResult stereo_anchors(const CorrespondenceMap& corr0, const CorrespondenceMap& corr1,
                            const RegionMask& mask0, const RegionMask& mask1, const Rig& rig,
                            const AnchorOptions& options) {
    (void)mask1;
    AnchorResult result;
    double t_min = options.t_min, t_max = options.t_max;
    if (t_min <= 0.0 || t_max <= t_min) {
        const double nominal = rig.nominal_standoff();
        t_min = nominal - 30.0;
        t_max = nominal + 30.0;
    }

    std::vector<std::pair<int, int>> pool;
    for (int y = 0; y < corr0.height; ++y)
        for (int x = 0; x < corr0.width; ++x)
            if (corr0.is_valid(x, y) && mask0.measurable(x, y)) pool.emplace_back(x, y);
    if (pool.empty()) throw PipelineError("stereo_anchors", "no measurable pixels in camera 0");

    std::mt19937_64 gen(options.seed);
    std::shuffle(pool.begin(), pool.end(), gen);

    std::array<long, 3> per_region{0, 0, 0};
    for (const auto& [px, py] : pool) {
        if (static_cast<int>(result.samples.size()) >= options.count) break;
        if (resolve_anchor(corr0, corr1, mask0, rig, options, t_min, t_max, px, py, &result))
            ++per_region[static_cast<int>(result.samples.back().region)];
    }

    // top up underrepresented regions with a targeted pass
    for (Region region : {Region::Cornea, Region::Sclera}) {
        const RegionLabel want =
            region == Region::Cornea ? RegionLabel::Cornea : RegionLabel::Sclera;
        if (per_region[static_cast<int>(region)] >= options.min_per_region) continue;
        for (const auto& [px, py] : pool) {
            if (per_region[static_cast<int>(region)] >= options.min_per_region) break;
            if (mask0.at(px, py) != want) continue;
            bool already = false;
            for (const SurfaceSample& s : result.samples)
                if (static_cast<int>(s.pixel.x) == px && static_cast<int>(s.pixel.y) == py)
                    already = true;
            if (already) continue;
            if (resolve_anchor(corr0, corr1, mask0, rig, options, t_min, t_max, px, py, &result))
                ++per_region[static_cast<int>(region)];
        }
    }

    if (result.samples.empty())
        throw PipelineError("stereo_anchors", "empty overlap between the cameras");
    return result;
}

SphereFit fit_sphere_from_normals(std::span<const SurfaceSample> samples) {
    if (samples.size() < 10)
        throw DegenerateGeometry("fit_sphere_from_normals: need at least 10 samples");
    std::vector<Line3> lines;
    lines.reserve(samples.size());
    for (const SurfaceSample& s : samples) lines.emplace_back(s.point, -s.normal);
    const PointFit fit = best_fit_point(lines);

    SphereFit out;
    out.sphere.center = fit.point;
    out.rms_line_distance = fit.rms_distance;
    out.sample_count = static_cast<int>(samples.size());
    double radius = 0.0;
    std::vector<double> line_dists;
    line_dists.reserve(samples.size());
    for (const Line3& l : lines) line_dists.push_back(l.distance_to(fit.point));
    for (const SurfaceSample& s : samples) radius += norm(s.point - fit.point);
    out.sphere.radius = radius / static_cast<double>(samples.size());
    out.scatter_std = stddev_population(line_dists);
    return out;
}

SphereSet SphereSet::from_eye(const TwoSphereEye& eye) {
    return SphereSet{eye.cornea(), eye.sclera(), false};
}

SphereSet SphereSet::from_sphere(const Sphere& s) { return SphereSet{s, s, true}; }

TwoSphereEye SphereSet::to_eye() const {
    return TwoSphereEye{cornea.center, sclera.center, cornea.radius, sclera.radius};
}

LossTerms LossTerms::build(const std::array<CorrespondenceMap, 2>& corr,
                           const std::array<RegionMask, 2>& masks, const Rig& rig,
                           int max_pixels, uint64_t seed) {
    LossTerms out;
    std::vector<std::tuple<int, int, int>> candidates;  // cam, x, y
    for (int c = 0; c < 2; ++c)
        for (int y = 0; y < corr[c].height; ++y)
            for (int x = 0; x < corr[c].width; ++x)
                if (corr[c].is_valid(x, y) && masks[c].measurable(x, y))
                    candidates.emplace_back(c, x, y);
    if (max_pixels > 0 && static_cast<int>(candidates.size()) > max_pixels) {
        std::mt19937_64 gen(seed);
        std::shuffle(candidates.begin(), candidates.end(), gen);
        candidates.resize(max_pixels);
        std::sort(candidates.begin(), candidates.end());  // deterministic reduction order
    }
    out.terms.reserve(candidates.size());
    for (const auto& [c, x, y] : candidates) {
        const size_t i = corr[c].index(x, y);
        Term t;
        t.ray = rig.cameras[c].backproject(x, y);
        t.display_point = rig.display.pixel_to_world(corr[c].x[i], corr[c].y[i]);
        t.region = masks[c].at(x, y) == RegionLabel::Cornea ? Region::Cornea : Region::Sclera;
        out.terms.push_back(t);
    }
    return out;
}

double angular_loss(const SphereSet& model, const LossTerms& terms, long* misses) {
    const long long n = static_cast<long long>(terms.terms.size());
    const long long block = 4096;
    const long long blocks = (n + block - 1) / block;
    std::vector<double> partial(static_cast<size_t>(blocks), 0.0);
    std::vector<long> partial_count(static_cast<size_t>(blocks), 0);

#pragma omp parallel for schedule(static)
    for (long long b = 0; b < blocks; ++b) {
        double acc = 0.0;
        long cnt = 0;
        const long long end = std::min(n, (b + 1) * block);
        for (long long i = b * block; i < end; ++i) {
            const LossTerms::Term& t = terms.terms[i];
            const auto hit = ray_sphere_intersect(t.ray, model.sphere_for(t.region));
            if (!hit) continue;
            const Vec3 incident = hit->point - t.ray.origin;
            const Vec3 to_display = t.display_point - hit->point;
            const Vec3 half = to_display / norm(to_display) - incident / norm(incident);
            // |arccos(n . n_s)| evaluated as atan2(|n x n_s|, n . n_s), which
            // stays accurate at the sub-1e-9 angles the noiseless case reaches
            acc += std::abs(angle_between(half, hit->normal.vec()));
            ++cnt;
        }
        partial[b] = acc;
        partial_count[b] = cnt;
    }
    double total = 0.0;
    long count = 0;
    for (long long b = 0; b < blocks; ++b) {
        total += partial[b];
        count += partial_count[b];
    }
    if (misses) *misses = static_cast<long>(n) - count;
    if (count == 0) return kPi;  // nothing intersects: worst possible loss
    return total / static_cast<double>(count);
}

namespace {

struct ParamVector {
    // cornea center xyz, cornea radius, sclera center xyz, sclera radius
    std::array<double, 8> v;
    bool single;

    static ParamVector from(const SphereSet& m) {
        ParamVector p;
        p.single = m.single;
        p.v = {m.cornea.center.x, m.cornea.center.y, m.cornea.center.z, m.cornea.radius,
               m.sclera.center.x, m.sclera.center.y, m.sclera.center.z, m.sclera.radius};
        return p;
    }
    SphereSet to_model() const {
        SphereSet m;
        m.single = single;
        m.cornea = {{v[0], v[1], v[2]}, v[3]};
        m.sclera = {{v[4], v[5], v[6]}, v[7]};
        if (single) m.cornea = m.sclera;
        return m;
    }
    int dof() const { return single ? 4 : 8; }
    double& at(int k) { return v[single ? 4 + k : k]; }
};

bool model_valid(const SphereSet& m) {
    if (!(m.sclera.radius > 0.5)) return false;
    if (m.single) return true;
    if (!(m.cornea.radius > 0.5)) return false;
    const TwoSphereEye eye = m.to_eye();
    const double d = eye.center_gap();
    return eye.cornea_radius < eye.sclera_radius && d > 1e-6 && d < eye.sclera_radius &&
           d + eye.cornea_radius > eye.sclera_radius;
}

OptimResult optimize_model(const SphereSet& init, const std::array<CorrespondenceMap, 2>& corr,
                           const std::array<RegionMask, 2>& masks, const Rig& rig,
                           const OptimOptions& options) {
    const LossTerms terms = LossTerms::build(corr, masks, rig, options.max_pixels, options.seed);

    OptimResult result;
    result.term_count = static_cast<long>(terms.terms.size());
    ParamVector x = ParamVector::from(init);
    long misses = 0;
    double loss = angular_loss(x.to_model(), terms, &misses);
    result.loss_history.push_back(loss);

    const int dof = x.dof();
    // per-parameter curvature estimates precondition the descent direction;
    // the depth/radius valley is badly scaled otherwise
    std::array<double, 8> curvature{};
    curvature.fill(1.0);
    double step_scale = 1.0;

    for (int iter = 0; iter < options.max_iterations; ++iter) {
        result.iterations = iter + 1;

        std::array<double, 8> grad{};
        double grad_norm = 0.0;
        const double fd = options.fd_step_mm;
        if (iter % 4 == 0) {
            const double cd = 10.0 * fd;
            double max_h = 0.0;
            for (int k = 0; k < dof; ++k) {
                ParamVector xp = x, xm = x;
                xp.at(k) += cd;
                xm.at(k) -= cd;
                const double h =
                    (angular_loss(xp.to_model(), terms) - 2.0 * loss +
                     angular_loss(xm.to_model(), terms)) /
                    (cd * cd);
                curvature[k] = h;
                max_h = std::max(max_h, std::abs(h));
            }
            for (int k = 0; k < dof; ++k)
                curvature[k] = std::max(std::abs(curvature[k]), 1e-3 * max_h + 1e-12);
        }
        for (int k = 0; k < dof; ++k) {
            ParamVector xp = x, xm = x;
            xp.at(k) += fd;
            xm.at(k) -= fd;
            const double lp = angular_loss(xp.to_model(), terms);
            const double lm = angular_loss(xm.to_model(), terms);
            grad[k] = (lp - lm) / (2.0 * fd);
            grad_norm += grad[k] * grad[k];
        }
        grad_norm = std::sqrt(grad_norm);
        if (grad_norm < 1e-16) {
            result.converged = true;
            break;
        }

        // backtracking line search along the preconditioned descent direction
        bool accepted = false;
        double alpha = step_scale;
        for (int bt = 0; bt < 48; ++bt) {
            ParamVector xn = x;
            for (int k = 0; k < dof; ++k) xn.at(k) -= alpha * grad[k] / curvature[k];
            const SphereSet candidate = xn.to_model();
            if (model_valid(candidate)) {
                const double ln = angular_loss(candidate, terms);
                if (ln < loss) {
                    const double improvement = loss - ln;
                    x = xn;
                    loss = ln;
                    result.loss_history.push_back(loss);
                    step_scale = std::min(alpha * 1.7, 1.0);
                    accepted = true;
                    if (improvement < options.loss_tolerance) result.converged = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if (!accepted) {
            result.converged = true;
            break;
        }
        if (result.converged) break;
    }

    result.model = x.to_model();
    result.loss = angular_loss(result.model, terms, &misses);
    result.miss_count = misses;
    return result;
}

}  // namespace

OptimResult optimize_two_sphere(const TwoSphereEye& init,
                                const std::array<CorrespondenceMap, 2>& corr,
                                const std::array<RegionMask, 2>& masks, const Rig& rig,
                                const OptimOptions& options) {
    init.validate();
    return optimize_model(SphereSet::from_eye(init), corr, masks, rig, options);
}

OptimResult optimize_single_sphere(const Sphere& init,
                                   const std::array<CorrespondenceMap, 2>& corr,
                                   const std::array<RegionMask, 2>& masks, const Rig& rig,
                                   const OptimOptions& options) {
    if (!(init.radius > 0)) throw ConfigError("sphere radius must be positive");
    return optimize_model(SphereSet::from_sphere(init), corr, masks, rig, options);
}

namespace {

// deterministic blocked dot product (identical result for any thread count)
double blocked_dot(const std::vector<double>& a, const std::vector<double>& b) {
    const long long n = static_cast<long long>(a.size());
    const long long block = 8192;
    const long long blocks = (n + block - 1) / block;
    std::vector<double> partial(static_cast<size_t>(blocks), 0.0);
#pragma omp parallel for schedule(static)
    for (long long k = 0; k < blocks; ++k) {
        double acc = 0.0;
        const long long end = std::min(n, (k + 1) * block);
        for (long long i = k * block; i < end; ++i) acc += a[i] * b[i];
        partial[k] = acc;
    }
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

struct PairEq {
    int i, j;       // unknown indices
    double ci, cj;  // coefficients: ci * t_i + cj * t_j = 0
};

struct CameraField {
    std::vector<int> pixel_of_unknown;  // flattened pixel index
    std::vector<int> unknown_of_pixel;  // -1 where not solved
    std::vector<Ray> rays;
    std::vector<Vec2> display_px;
    std::vector<Region> region;
    std::vector<double> t;
    std::vector<double> anchor_t;  // per-unknown, <0 if none
};

}  // namespace

RefineResult integrate_refine(const SphereSet& model,
                              const std::array<CorrespondenceMap, 2>& corr,
                              const std::array<RegionMask, 2>& masks, const Rig& rig,
                              std::span<const SurfaceSample> anchors,
                              const RefineOptions& options) {
    RefineResult result;
    std::array<CameraField, 2> fields;

    for (int c = 0; c < 2; ++c) {
        CameraField& f = fields[c];
        const CorrespondenceMap& cm = corr[c];
        f.unknown_of_pixel.assign(cm.valid.size(), -1);
        for (int y = 0; y < cm.height; ++y)
            for (int x = 0; x < cm.width; ++x) {
                if (!cm.is_valid(x, y) || !masks[c].measurable(x, y)) continue;
                const size_t i = cm.index(x, y);
                const Ray ray = rig.cameras[c].backproject(x, y);
                const Region region = masks[c].at(x, y) == RegionLabel::Cornea
                                          ? Region::Cornea
                                          : Region::Sclera;
                const auto hit = ray_sphere_intersect(ray, model.sphere_for(region));
                if (!hit) continue;
                f.unknown_of_pixel[i] = static_cast<int>(f.pixel_of_unknown.size());
                f.pixel_of_unknown.push_back(static_cast<int>(i));
                f.rays.push_back(ray);
                f.display_px.push_back({cm.x[i], cm.y[i]});
                f.region.push_back(region);
                f.t.push_back(hit->t);
            }
        f.anchor_t.assign(f.pixel_of_unknown.size(), -1.0);
    }

    // anchor heights: each anchor pins the pixel it lands on in either camera;
    // the pixel ray is intersected with the anchor's tangent plane so the
    // half-pixel snap does not leak the local surface slope into the height
    for (const SurfaceSample& a : anchors) {
        for (int c = 0; c < 2; ++c) {
            const auto px = rig.cameras[c].project(a.point);
            if (!px) continue;
            const int xi = static_cast<int>(std::lround(px->x));
            const int yi = static_cast<int>(std::lround(px->y));
            if (xi < 0 || yi < 0 || xi >= corr[c].width || yi >= corr[c].height) continue;
            const int u = fields[c].unknown_of_pixel[corr[c].index(xi, yi)];
            if (u < 0) continue;
            const Ray& ray = fields[c].rays[u];
            const double denom = dot(ray.direction.vec(), a.normal.vec());
            if (std::abs(denom) < 0.2) continue;  // grazing, unreliable extrapolation
            const double t = dot(a.point - ray.origin, a.normal.vec()) / denom;
            if (t > 0) fields[c].anchor_t[u] = t;
        }
    }

    double prev_change = -1.0;
    int grew_in_a_row = 0;
    result.converged = false;

    for (int outer = 0; outer < options.max_outer; ++outer) {
        result.outer_iterations = outer + 1;
        double change_ss = 0.0;
        long change_n = 0;

        for (int c = 0; c < 2; ++c) {
            CameraField& f = fields[c];
            const size_t nu = f.pixel_of_unknown.size();
            if (nu == 0) continue;
            const int w = corr[c].width;

            // (a) normals with respect to the current heights
            std::vector<Vec3> normals(nu);
#pragma omp parallel for schedule(static)
            for (long long u = 0; u < static_cast<long long>(nu); ++u) {
                const Vec3 p = f.rays[u].at(f.t[u]);
                normals[u] = normal_from_correspondence(rig, c, p, f.display_px[u]).vec();
            }

            // (b) zonal integration: tangency equations between 4-neighbors
            std::vector<PairEq> eqs;
            eqs.reserve(2 * nu);
            for (size_t u = 0; u < nu; ++u) {
                const int i = f.pixel_of_unknown[u];
                const int x = i % w;
                for (const int di : {1, w}) {
                    if (di == 1 && x + 1 >= w) continue;
                    const size_t jn = static_cast<size_t>(i) + di;
                    if (jn >= f.unknown_of_pixel.size()) continue;
                    const int v = f.unknown_of_pixel[jn];
                    if (v < 0 || f.region[v] != f.region[u]) continue;
                    Vec3 nbar = normals[u] + normals[v];
                    const double nn = norm(nbar);
                    if (nn < 1e-9) continue;
                    nbar = nbar / nn;
                    eqs.push_back({static_cast<int>(u), v, -dot(nbar, f.rays[u].direction.vec()),
                                   dot(nbar, f.rays[v].direction.vec())});
                }
            }
            if (eqs.empty()) continue;

            // Connected components of the tangency graph each carry their own
            // scale freedom (the cornea island and the sclera region are
            // separate); every component is pinned and anchored on its own.
            std::vector<int> comp(nu);
            std::iota(comp.begin(), comp.end(), 0);
            {
                std::function<int(int)> find = [&](int a) {
                    while (comp[a] != a) {
                        comp[a] = comp[comp[a]];
                        a = comp[a];
                    }
                    return a;
                };
                for (const PairEq& e : eqs) {
                    const int a = find(e.i), b = find(e.j);
                    if (a != b) comp[a] = b;
                }
                for (size_t u = 0; u < nu; ++u) comp[u] = find(static_cast<int>(u));
            }
            // per-component anchor means
            std::vector<double> comp_anchor_sum(nu, 0.0);
            std::vector<long> comp_anchor_n(nu, 0);
            for (size_t u = 0; u < nu; ++u) {
                if (f.anchor_t[u] > 0) {
                    comp_anchor_sum[comp[u]] += f.anchor_t[u];
                    ++comp_anchor_n[comp[u]];
                }
            }

            // Jacobi-preconditioned CG on the homogeneous normal equations,
            // warm-started at the current heights. The system's null space is
            // per-component scaling; CG updates stay orthogonal to it, so the
            // warm start carries the scale through and the anchors set it
            // exactly afterwards.
            std::vector<double> t_new = f.t;
            {
                const size_t ne = eqs.size();
                std::vector<double> diag(nu, 1e-300);
                for (const PairEq& e : eqs) {
                    diag[e.i] += e.ci * e.ci;
                    diag[e.j] += e.cj * e.cj;
                }

                std::vector<double> resid(ne);
                auto apply_AtA = [&](const std::vector<double>& x, std::vector<double>& y) {
                    std::fill(y.begin(), y.end(), 0.0);
#pragma omp parallel for schedule(static)
                    for (long long e = 0; e < static_cast<long long>(ne); ++e)
                        resid[e] = eqs[e].ci * x[eqs[e].i] + eqs[e].cj * x[eqs[e].j];
                    for (size_t e = 0; e < ne; ++e) {
                        y[eqs[e].i] += eqs[e].ci * resid[e];
                        y[eqs[e].j] += eqs[e].cj * resid[e];
                    }
                };

                std::vector<double> r(nu), z(nu), p(nu), ap(nu);
                apply_AtA(t_new, ap);
                for (size_t u = 0; u < nu; ++u) r[u] = -ap[u];
                for (size_t u = 0; u < nu; ++u) z[u] = r[u] / diag[u];
                p = z;
                double rz = blocked_dot(r, z);
                const double r0_norm = std::sqrt(blocked_dot(r, r)) + 1e-300;
                for (int it = 0; it < options.cg_max_iterations; ++it) {
                    apply_AtA(p, ap);
                    const double pap = blocked_dot(p, ap);
                    if (pap <= 0) break;
                    const double alpha = rz / pap;
                    for (size_t u = 0; u < nu; ++u) {
                        t_new[u] += alpha * p[u];
                        r[u] -= alpha * ap[u];
                    }
                    if (std::sqrt(blocked_dot(r, r)) < options.cg_tolerance * r0_norm) break;
                    for (size_t u = 0; u < nu; ++u) z[u] = r[u] / diag[u];
                    const double rz_new = blocked_dot(r, z);
                    const double beta = rz_new / rz;
                    rz = rz_new;
                    for (size_t u = 0; u < nu; ++u) p[u] = z[u] + beta * p[u];
                }

                // exact per-component mean-anchor enforcement: the tangency
                // equations are scale invariant (including sign), so rescaling
                // stays optimal
                std::vector<double> comp_now(nu, 0.0);
                for (size_t u = 0; u < nu; ++u)
                    if (f.anchor_t[u] > 0) comp_now[comp[u]] += t_new[u];
                for (size_t u = 0; u < nu; ++u) {
                    const int c0 = comp[u];
                    if (comp_anchor_n[c0] > 0 && std::abs(comp_now[c0]) > 1e-9)
                        t_new[u] *= comp_anchor_sum[c0] / comp_now[c0];
                }
            }

            for (size_t u = 0; u < nu; ++u) {
                const double d = t_new[u] - f.t[u];
                change_ss += d * d;
            }
            change_n += static_cast<long>(nu);
            f.t = std::move(t_new);
        }

        const double rms_change = change_n ? std::sqrt(change_ss / change_n) : 0.0;
        result.final_rms_change_mm = rms_change;
        if (rms_change < options.height_tol_mm) {
            result.converged = true;
            break;
        }
        if (prev_change >= 0 && rms_change > prev_change) {
            if (++grew_in_a_row >= 2)
                throw NonConvergence("integrate_refine: height updates diverging", rms_change);
        } else {
            grew_in_a_row = 0;
        }
        prev_change = rms_change;
    }

    // final normals and sample emission
    for (int c = 0; c < 2; ++c) {
        CameraField& f = fields[c];
        HeightField& hf = result.heights[c];
        hf.width = corr[c].width;
        hf.height = corr[c].height;
        hf.t.assign(corr[c].valid.size(), 0.0);
        hf.valid.assign(corr[c].valid.size(), 0);
        for (size_t u = 0; u < f.pixel_of_unknown.size(); ++u) {
            const int i = f.pixel_of_unknown[u];
            hf.t[i] = f.t[u];
            hf.valid[i] = 1;

            SurfaceSample s;
            s.camera_id = c;
            s.pixel = {static_cast<double>(i % hf.width), static_cast<double>(i / hf.width)};
            s.point = f.rays[u].at(f.t[u]);
            const auto model_hit = ray_sphere_intersect(f.rays[u], model.sphere_for(f.region[u]));
            if (model_hit) {
                s.normal = normal_from_correspondence(rig, c, model_hit->point, f.display_px[u]);
                s.model_normal = model_hit->normal;
                s.has_model_normal = true;
            } else {
                s.normal = normal_from_correspondence(rig, c, s.point, f.display_px[u]);
            }
            s.refined_normal = normal_from_correspondence(rig, c, s.point, f.display_px[u]);
            s.has_refined_normal = true;
            s.region = f.region[u];
            result.samples.push_back(s);
        }
    }
    return result;
}

void write_ply(const std::string& path, std::span<const SurfaceSample> samples) {
    std::ofstream f(path);
    if (!f) throw Error("cannot open for writing: " + path);
    f << "ply\nformat ascii 1.0\nelement vertex " << samples.size()
      << "\nproperty float x\nproperty float y\nproperty float z\n"
         "property float nx\nproperty float ny\nproperty float nz\nend_header\n";
    char line[256];
    for (const SurfaceSample& s : samples) {
        const Vec3 n = s.has_refined_normal ? s.refined_normal.vec() : s.normal.vec();
        std::snprintf(line, sizeof(line), "%.6f %.6f %.6f %.6f %.6f %.6f\n", s.point.x, s.point.y,
                      s.point.z, n.x, n.y, n.z);
        f << line;
    }
    if (!f) throw Error("write failed: " + path);
}

}  // namespace defleye
