#include "defleye/scene.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace defleye {

void TwoSphereEye::validate() const {
    if (!(cornea_radius > 0 && sclera_radius > 0))
        throw ConfigError("eye radii must be positive");
    if (!(cornea_radius < sclera_radius))
        throw ConfigError("cornea radius must be smaller than sclera radius");
    const double d = center_gap();
    if (!(d > 0 && d < sclera_radius))
        throw ConfigError("cornea center must lie strictly inside the sclera sphere");
    if (!(d + cornea_radius > sclera_radius))
        throw ConfigError("cornea cap must protrude from the sclera sphere");
}

Pattern Pattern::uniform(double level) {
    Pattern p;
    p.kind = Kind::Uniform;
    p.uniform_level = level;
    p.validate();
    return p;
}

Pattern Pattern::sinusoid(FringeDirection dir, double period, double phase_offset, double bias,
                          double amplitude) {
    Pattern p;
    p.kind = Kind::Sinusoid;
    p.direction = dir;
    p.period = period;
    p.phase_offset = phase_offset;
    p.bias = bias;
    p.amplitude = amplitude;
    p.validate();
    return p;
}

Pattern Pattern::cross(double period_x, double period_y, double bias, double amplitude) {
    Pattern p;
    p.kind = Kind::Cross;
    p.period_x = period_x;
    p.period_y = period_y;
    p.bias = bias;
    p.amplitude = amplitude;
    p.validate();
    return p;
}

Pattern Pattern::checker(double cell, double bias, double amplitude) {
    Pattern p;
    p.kind = Kind::Checker;
    p.checker_cell = cell;
    p.bias = bias;
    p.amplitude = amplitude;
    p.validate();
    return p;
}

Pattern Pattern::parse(const std::string& spec) {
    const size_t colon = spec.find(':');
    const std::string kind = spec.substr(0, colon);
    std::vector<std::string> args;
    if (colon != std::string::npos) {
        std::istringstream in(spec.substr(colon + 1));
        std::string item;
        while (std::getline(in, item, ',')) args.push_back(item);
    }
    auto num = [&args, &spec](size_t i, double fallback) {
        if (i >= args.size() || args[i].empty()) return fallback;
        try {
            return std::stod(args[i]);
        } catch (...) {
            throw ConfigError("bad pattern spec: " + spec);
        }
    };
    if (kind == "uniform") return uniform(num(0, 0.5));
    if (kind == "cross") return cross(num(0, 40.0), num(1, 40.0), num(2, 0.5), num(3, 0.25));
    if (kind == "checker") return checker(num(0, 8.0), num(1, 0.5), num(2, 0.5));
    if (kind == "sin") {
        if (args.empty() || (args[0] != "x" && args[0] != "y"))
            throw ConfigError("sin pattern needs direction x|y: " + spec);
        const FringeDirection dir = args[0] == "x" ? FringeDirection::X : FringeDirection::Y;
        return sinusoid(dir, num(1, 40.0), num(2, 0.0), num(3, 0.5), num(4, 0.5));
    }
    throw ConfigError("unknown pattern kind: " + spec);
}

void Pattern::validate() const {
    auto in01 = [](double v) { return v >= -1e-12 && v <= 1.0 + 1e-12; };
    switch (kind) {
        case Kind::Uniform:
            if (!in01(uniform_level)) throw ConfigError("uniform level outside [0,1]");
            break;
        case Kind::Sinusoid:
            if (period <= 0) throw ConfigError("sinusoid period must be positive");
            if (!in01(bias + amplitude) || !in01(bias - amplitude))
                throw ConfigError("sinusoid bias/amplitude leave [0,1]");
            break;
        case Kind::Cross:
            if (period_x <= 0 || period_y <= 0) throw ConfigError("cross periods must be positive");
            if (!in01(bias + 2 * amplitude) || !in01(bias - 2 * amplitude))
                throw ConfigError("cross bias/amplitude leave [0,1]");
            break;
        case Kind::Checker:
            if (checker_cell <= 0) throw ConfigError("checker cell must be positive");
            if (!in01(bias + amplitude) || !in01(bias - amplitude))
                throw ConfigError("checker bias/amplitude leave [0,1]");
            break;
    }
}

double Pattern::value_at_pixel(int i, int j) const {
    constexpr double two_pi = 2.0 * kPi;
    switch (kind) {
        case Kind::Uniform:
            return uniform_level;
        case Kind::Sinusoid: {
            const double c = direction == FringeDirection::X ? i : j;
            return bias + amplitude * std::cos(two_pi * c / period + phase_offset);
        }
        case Kind::Cross:
            return bias + amplitude * (std::cos(two_pi * i / period_x) +
                                       std::cos(two_pi * j / period_y));
        case Kind::Checker: {
            const long long a = static_cast<long long>(std::floor(i / checker_cell));
            const long long b = static_cast<long long>(std::floor(j / checker_cell));
            return bias + (((a + b) & 1) ? -amplitude : amplitude);
        }
    }
    return 0.0;
}

double Pattern::sample(double x, double y) const {
    const int i0 = static_cast<int>(std::floor(x));
    const int j0 = static_cast<int>(std::floor(y));
    const double fx = x - i0, fy = y - j0;
    const double v00 = value_at_pixel(i0, j0), v10 = value_at_pixel(i0 + 1, j0);
    const double v01 = value_at_pixel(i0, j0 + 1), v11 = value_at_pixel(i0 + 1, j0 + 1);
    return (1 - fx) * (1 - fy) * v00 + fx * (1 - fy) * v10 + (1 - fx) * fy * v01 + fx * fy * v11;
}

namespace {

// Catmull-Rom tangents with one-sided differences at the ends.
double profile_tangent(const std::vector<double>& z, const std::vector<double>& r, size_t i) {
    const size_t n = z.size();
    if (i == 0) return (r[1] - r[0]) / (z[1] - z[0]);
    if (i == n - 1) return (r[n - 1] - r[n - 2]) / (z[n - 1] - z[n - 2]);
    return (r[i + 1] - r[i - 1]) / (z[i + 1] - z[i - 1]);
}

}  // namespace

double EggProfile::rho(double z) const {
    const auto& zs = knot_z;
    const auto& rs = knot_rho;
    if (z <= zs.front()) return rs.front();
    if (z >= zs.back()) return rs.back();
    const size_t hi = std::upper_bound(zs.begin(), zs.end(), z) - zs.begin();
    const size_t i = hi - 1;
    const double h = zs[hi] - zs[i];
    const double t = (z - zs[i]) / h;
    const double m0 = profile_tangent(zs, rs, i) * h;
    const double m1 = profile_tangent(zs, rs, hi) * h;
    const double t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * rs[i] + (t3 - 2 * t2 + t) * m0 +
           (-2 * t3 + 3 * t2) * rs[hi] + (t3 - t2) * m1;
}

double EggProfile::drho_dz(double z) const {
    const auto& zs = knot_z;
    const auto& rs = knot_rho;
    if (z <= zs.front() || z >= zs.back()) return 0.0;
    const size_t hi = std::upper_bound(zs.begin(), zs.end(), z) - zs.begin();
    const size_t i = hi - 1;
    const double h = zs[hi] - zs[i];
    const double t = (z - zs[i]) / h;
    const double m0 = profile_tangent(zs, rs, i) * h;
    const double m1 = profile_tangent(zs, rs, hi) * h;
    const double t2 = t * t;
    return ((6 * t2 - 6 * t) * rs[i] + (3 * t2 - 4 * t + 1) * m0 + (-6 * t2 + 6 * t) * rs[hi] +
            (3 * t2 - 2 * t) * m1) /
           h;
}

EggProfile EggProfile::from_two_sphere(const TwoSphereEye& eye, int knots_per_degree,
                                       double radial_modulation) {
    EggProfile p;
    const double gap = eye.center_gap();
    const double limbus_h = eye.limbus_axial_offset();
    // polar angles of the limbus on each sphere
    const double beta_limbus =
        std::acos(std::clamp((limbus_h - gap) / eye.cornea_radius, -1.0, 1.0));
    const double gamma_limbus = std::acos(std::clamp(limbus_h / eye.sclera_radius, -1.0, 1.0));

    const double step = deg_to_rad(1.0 / std::max(1, knots_per_degree));
    std::vector<std::pair<double, double>> pts;  // (z, rho), descending z
    for (double b = deg_to_rad(1.0); b < beta_limbus - 0.5 * step; b += step)
        pts.emplace_back(gap + eye.cornea_radius * std::cos(b), eye.cornea_radius * std::sin(b));
    for (double g = gamma_limbus; g < deg_to_rad(140.0); g += step)
        pts.emplace_back(eye.sclera_radius * std::cos(g), eye.sclera_radius * std::sin(g));

    std::reverse(pts.begin(), pts.end());  // ascending z
    const double z_lo = pts.front().first, z_hi = pts.back().first;
    for (auto& [z, r] : pts) {
        if (radial_modulation != 0.0)
            r *= 1.0 + radial_modulation * std::sin(kPi * (z - z_lo) / (z_hi - z_lo));
        p.knot_z.push_back(z);
        p.knot_rho.push_back(r);
    }
    p.limbus_z = limbus_h;
    p.validate();
    return p;
}

void EggProfile::validate() const {
    if (knot_z.size() < 4 || knot_z.size() != knot_rho.size())
        throw ConfigError("egg profile needs >= 4 (z, rho) knots");
    for (size_t i = 1; i < knot_z.size(); ++i)
        if (!(knot_z[i] > knot_z[i - 1])) throw ConfigError("egg profile z must be ascending");
    // strict positivity, including between knots
    const double z0 = z_min(), z1 = z_max();
    for (int i = 0; i <= 400; ++i)
        if (!(rho(z0 + (z1 - z0) * i / 400.0) > 0.0))
            throw ConfigError("egg profile radius must stay positive");
}

namespace {

std::optional<RegionHit> intersect_two_sphere_local(const Ray& ray, const TwoSphereEye& eye) {
    const double h = eye.limbus_axial_offset();
    std::optional<RegionHit> best;
    auto consider = [&](const Sphere& s, Region region, bool want_above) {
        const Vec3 oc = ray.origin - s.center;
        const double b = dot(oc, ray.direction.vec());
        const double c = norm_sq(oc) - s.radius * s.radius;
        const double disc = b * b - c;
        if (disc < 0) return;
        const double sq = std::sqrt(disc);
        for (double t : {-b - sq, -b + sq}) {
            if (t <= 1e-9) continue;
            const Vec3 p = ray.at(t);
            const bool above = p.z >= h;
            if (above != want_above) continue;
            if (!best || t < best->t)
                best = RegionHit{p, UnitVec3((p - s.center) / s.radius), t, region};
            break;  // nearer valid root wins; the farther one is behind it
        }
    };
    consider(eye.cornea(), Region::Cornea, true);
    consider(eye.sclera(), Region::Sclera, false);
    return best;
}

std::optional<RegionHit> intersect_egg_local(const Ray& ray, const EggProfile& egg) {
    // bracket the ray against a bounding sphere of the profile band
    const double zc = 0.5 * (egg.z_min() + egg.z_max());
    double r_max = 0.0;
    for (double r : egg.knot_rho) r_max = std::max(r_max, r);
    const double half_span = 0.5 * (egg.z_max() - egg.z_min());
    const Sphere bound{{0, 0, zc}, std::hypot(r_max, half_span) + 1.0};

    const Vec3 oc = ray.origin - bound.center;
    const double b = dot(oc, ray.direction.vec());
    const double c = norm_sq(oc) - bound.radius * bound.radius;
    const double disc = b * b - c;
    if (disc < 0) return std::nullopt;
    const double t0 = std::max(1e-9, -b - std::sqrt(disc));
    const double t1 = -b + std::sqrt(disc);
    if (t1 <= t0) return std::nullopt;

    auto f = [&](double t, bool& defined) {
        const Vec3 p = ray.at(t);
        defined = p.z >= egg.z_min() && p.z <= egg.z_max();
        if (!defined) return 0.0;
        return std::hypot(p.x, p.y) - egg.rho(p.z);
    };

    const double dt = 0.1;
    bool prev_def = false;
    double prev_t = t0, prev_f = 0.0;
    for (double t = t0; t <= t1 + dt; t += dt) {
        bool def = false;
        const double ft = f(t, def);
        if (def && prev_def && prev_f > 0.0 && ft <= 0.0) {
            double lo = prev_t, hi = t;
            for (int i = 0; i < 80; ++i) {
                const double mid = 0.5 * (lo + hi);
                bool d = false;
                if (f(mid, d) > 0.0)
                    lo = mid;
                else
                    hi = mid;
            }
            const double th = 0.5 * (lo + hi);
            const Vec3 p = ray.at(th);
            const double rr = std::hypot(p.x, p.y);
            if (rr < 1e-9) return std::nullopt;  // on-axis graze
            const Vec3 grad{p.x / rr, p.y / rr, -egg.drho_dz(p.z)};
            const Region region = p.z >= egg.limbus_z ? Region::Cornea : Region::Sclera;
            return std::optional<RegionHit>(RegionHit{p, UnitVec3(grad), th, region});
        }
        prev_def = def;
        prev_t = t;
        prev_f = ft;
    }
    return std::nullopt;
}

}  // namespace

std::optional<RegionHit> EyeSurface::intersect(const Ray& world_ray) const {
    const Ray local{pose.apply_inverse(world_ray.origin),
                    UnitVec3(pose.apply_inverse_dir(world_ray.direction.vec()))};
    std::optional<RegionHit> hit;
    switch (kind) {
        case Kind::TwoSphere:
            hit = intersect_two_sphere_local(local, eye);
            break;
        case Kind::SingleSphere:
            if (auto s = ray_sphere_intersect(local, Sphere{{0, 0, 0}, sphere_radius}))
                hit = RegionHit{s->point, s->normal, s->t, Region::Sclera};
            break;
        case Kind::Egg:
            hit = intersect_egg_local(local, egg);
            break;
        case Kind::Mirror:
            if (auto s = ray_plane_intersect(local, Plane{{0, 0, 0}, UnitVec3(0, 0, 1)}))
                hit = RegionHit{s->point, s->normal, s->t, Region::Sclera};
            break;
    }
    if (!hit) return std::nullopt;
    hit->point = pose.apply(hit->point);
    hit->normal = UnitVec3(pose.apply_dir(hit->normal.vec()));
    return hit;
}

void EyeSurface::validate() const {
    if (!pose.is_rigid(1e-8)) throw ConfigError("surface pose is not rigid");
    switch (kind) {
        case Kind::TwoSphere:
            eye.validate();
            break;
        case Kind::SingleSphere:
            if (!(sphere_radius > 0)) throw ConfigError("sphere radius must be positive");
            break;
        case Kind::Egg:
            egg.validate();
            break;
        case Kind::Mirror:
            break;
    }
}

void DisplayModel::validate() const {
    if (!(pixel_pitch > 0)) throw ConfigError("display pixel pitch must be positive");
    if (width_px < 2 || height_px < 2) throw ConfigError("display too small");
    if (!pose.is_rigid(1e-8)) throw ConfigError("display pose is not rigid");
}

void NoiseModel::validate() const {
    if (intensity_sigma < 0) throw ConfigError("noise sigma must be >= 0");
    if (quantize_bits != 0 && quantize_bits != 8 && quantize_bits != 10 && quantize_bits != 12 &&
        quantize_bits != 16)
        throw ConfigError("quantize_bits must be one of 8, 10, 12, 16");
}

void Scene::validate() const {
    if (cameras.empty()) throw ConfigError("scene needs at least one camera");
    for (const auto& cam : cameras) cam.validate();
    display.validate();
    surface.validate();
    noise.validate();
    if (!(background_level >= 0 && background_level <= 1))
        throw ConfigError("background level outside [0,1]");
}

namespace {

PinholeCamera make_rig_camera(double y_mm, double scale) {
    PinholeCamera cam;
    cam.width = static_cast<int>(std::lround(1280 * scale));
    cam.height = static_cast<int>(std::lround(960 * scale));
    cam.fx = cam.fy = 2400.0 * scale;
    cam.cx = 0.5 * (cam.width - 1);
    cam.cy = 0.5 * (cam.height - 1);
    // stereo baseline runs vertically: the per-camera sclera shadow (the far
    // arc whose reflection leaves at grazing angles) then falls on the
    // display's short axis, and both cameras share the wide +-x sclera arcs
    cam.pose = look_at({0.0, y_mm, 85.0}, {0.0, 0.0, 9.0}, {0.0, 1.0, 0.0});
    return cam;
}

DisplayModel make_rig_display() {
    DisplayModel d;
    d.width_px = 2532;
    d.height_px = 1170;
    d.pixel_pitch = 0.0578;
    // Centered on the eye axis, facing the eye; display x runs with world +x
    // and display y downward so both fringe axes track the camera image axes.
    const Mat3 rot = Mat3::from_columns({1, 0, 0}, {0, -1, 0}, {0, 0, -1});
    const double half_w = 0.5 * (d.width_px - 1) * d.pixel_pitch;
    const double half_h = 0.5 * (d.height_px - 1) * d.pixel_pitch;
    const Vec3 center{0.0, 0.0, 20.0};
    const Vec3 origin = center - half_w * rot.col(0) - half_h * rot.col(1);
    d.pose = Pose{rot, origin};
    return d;
}

Scene make_rig_scene(double scale) {
    Scene s;
    s.cameras = {make_rig_camera(-30.0, scale), make_rig_camera(30.0, scale)};
    s.display = make_rig_display();
    s.background_level = 0.05;
    return s;
}

}  // namespace

Scene make_default_scene(double scale) {
    Scene s = make_rig_scene(scale);
    s.surface.kind = EyeSurface::Kind::TwoSphere;
    s.surface.eye = TwoSphereEye{};
    s.validate();
    return s;
}

Scene make_ball_scene(double scale) {
    Scene s = make_rig_scene(scale);
    s.surface.kind = EyeSurface::Kind::SingleSphere;
    s.surface.sphere_radius = 12.0;
    s.validate();
    return s;
}

Scene make_egg_scene(double scale, double radial_modulation) {
    Scene s = make_rig_scene(scale);
    s.surface.kind = EyeSurface::Kind::Egg;
    s.surface.egg = EggProfile::from_two_sphere(TwoSphereEye{}, 2, radial_modulation);
    s.validate();
    return s;
}

Scene load_scene(const std::string& path_or_builtin) {
    if (path_or_builtin.rfind("builtin:", 0) == 0) {
        std::string name = path_or_builtin.substr(8);
        double scale = 1.0;
        const size_t at = name.find('@');
        if (at != std::string::npos) {
            scale = std::stod(name.substr(at + 1));
            name = name.substr(0, at);
        }
        if (name == "default") return make_default_scene(scale);
        if (name == "ball") return make_ball_scene(scale);
        if (name == "egg") return make_egg_scene(scale);
        throw ConfigError("unknown builtin scene: " + name);
    }
    return scene_from_config(Config::parse_file(path_or_builtin));
}

namespace {

Pose pose_from_config(const Config& cfg, const std::string& section) {
    const auto r = cfg.get_list(section, "rotation");
    const auto t = cfg.get_list(section, "translation");
    if (r.size() != 9 || t.size() != 3)
        throw ConfigError("[" + section + "] pose needs rotation[9] and translation[3]");
    Pose p;
    std::copy(r.begin(), r.end(), p.rotation.m.begin());
    p.translation = {t[0], t[1], t[2]};
    if (!p.is_rigid(1e-6)) throw ConfigError("[" + section + "] rotation is not orthonormal");
    p.rotation = orthonormalized(p.rotation);
    return p;
}

void pose_to_config(Config& cfg, const std::string& section, const Pose& p) {
    cfg.set(section, "rotation", std::vector<double>(p.rotation.m.begin(), p.rotation.m.end()));
    cfg.set(section, "translation",
            std::vector<double>{p.translation.x, p.translation.y, p.translation.z});
}

}  // namespace

Scene scene_from_config(const Config& cfg) {
    Scene s;
    for (const auto& sec : cfg.sections_matching("camera.")) {
        PinholeCamera cam;
        cam.fx = cfg.get_double(sec, "fx");
        cam.fy = cfg.get_double(sec, "fy");
        cam.cx = cfg.get_double(sec, "cx");
        cam.cy = cfg.get_double(sec, "cy");
        cam.width = cfg.get_int(sec, "width");
        cam.height = cfg.get_int(sec, "height");
        cam.pose = pose_from_config(cfg, sec);
        s.cameras.push_back(cam);
    }
    s.display.width_px = cfg.get_int("display", "width_px");
    s.display.height_px = cfg.get_int("display", "height_px");
    s.display.pixel_pitch = cfg.get_double("display", "pixel_pitch_mm");
    s.display.pose = pose_from_config(cfg, "display");

    const std::string kind = cfg.get_string("surface", "type");
    s.surface.pose = pose_from_config(cfg, "surface");
    if (kind == "two_sphere") {
        s.surface.kind = EyeSurface::Kind::TwoSphere;
        const auto oc = cfg.get_list("surface", "cornea_center", {0, 0, 5.5});
        s.surface.eye.cornea_center = {oc[0], oc[1], oc[2]};
        s.surface.eye.sclera_center = {0, 0, 0};
        s.surface.eye.cornea_radius = cfg.get_double("surface", "cornea_radius", 7.8);
        s.surface.eye.sclera_radius = cfg.get_double("surface", "sclera_radius", 12.0);
    } else if (kind == "single_sphere") {
        s.surface.kind = EyeSurface::Kind::SingleSphere;
        s.surface.sphere_radius = cfg.get_double("surface", "radius");
    } else if (kind == "egg") {
        s.surface.kind = EyeSurface::Kind::Egg;
        s.surface.egg.knot_z = cfg.get_list("surface", "knots_z");
        s.surface.egg.knot_rho = cfg.get_list("surface", "knots_rho");
        s.surface.egg.limbus_z = cfg.get_double("surface", "limbus_z", 0.0);
    } else if (kind == "mirror") {
        s.surface.kind = EyeSurface::Kind::Mirror;
    } else {
        throw ConfigError("unknown surface type: " + kind);
    }

    s.background_level = cfg.get_double("render", "background_level", 0.05);
    s.noise.intensity_sigma = cfg.get_double("noise", "intensity_sigma", 0.0);
    s.noise.quantize_bits = cfg.get_int("noise", "quantize_bits", 0);
    s.validate();
    return s;
}

Config scene_to_config(const Scene& scene) {
    Config cfg;
    for (size_t i = 0; i < scene.cameras.size(); ++i) {
        const std::string sec = "camera." + std::to_string(i);
        const auto& cam = scene.cameras[i];
        cfg.set(sec, "fx", cam.fx);
        cfg.set(sec, "fy", cam.fy);
        cfg.set(sec, "cx", cam.cx);
        cfg.set(sec, "cy", cam.cy);
        cfg.set(sec, "width", static_cast<double>(cam.width));
        cfg.set(sec, "height", static_cast<double>(cam.height));
        pose_to_config(cfg, sec, cam.pose);
    }
    cfg.set("display", "width_px", static_cast<double>(scene.display.width_px));
    cfg.set("display", "height_px", static_cast<double>(scene.display.height_px));
    cfg.set("display", "pixel_pitch_mm", scene.display.pixel_pitch);
    pose_to_config(cfg, "display", scene.display.pose);

    switch (scene.surface.kind) {
        case EyeSurface::Kind::TwoSphere: {
            cfg.set("surface", "type", "two_sphere");
            const auto& eye = scene.surface.eye;
            cfg.set("surface", "cornea_center",
                    std::vector<double>{eye.cornea_center.x, eye.cornea_center.y,
                                        eye.cornea_center.z});
            cfg.set("surface", "cornea_radius", eye.cornea_radius);
            cfg.set("surface", "sclera_radius", eye.sclera_radius);
            break;
        }
        case EyeSurface::Kind::SingleSphere:
            cfg.set("surface", "type", "single_sphere");
            cfg.set("surface", "radius", scene.surface.sphere_radius);
            break;
        case EyeSurface::Kind::Egg:
            cfg.set("surface", "type", "egg");
            cfg.set("surface", "knots_z", scene.surface.egg.knot_z);
            cfg.set("surface", "knots_rho", scene.surface.egg.knot_rho);
            cfg.set("surface", "limbus_z", scene.surface.egg.limbus_z);
            break;
        case EyeSurface::Kind::Mirror:
            cfg.set("surface", "type", "mirror");
            break;
    }
    pose_to_config(cfg, "surface", scene.surface.pose);

    cfg.set("render", "background_level", scene.background_level);
    cfg.set("noise", "intensity_sigma", scene.noise.intensity_sigma);
    cfg.set("noise", "quantize_bits", static_cast<double>(scene.noise.quantize_bits));
    return cfg;
}

}  // namespace defleye
