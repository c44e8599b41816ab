#pragma once

#include <optional>
#include <string>
#include <vector>

#include "defleye/config.hpp"
#include "defleye/geometry.hpp"
#include "defleye/image.hpp"

namespace defleye {

/// Cornea/sclera two-sphere eye model. Coordinates are in the frame the
/// caller chooses; the simulator keeps the sclera center at the local origin
/// with the optical axis along +z.
struct TwoSphereEye {
    Vec3 cornea_center{0, 0, 5.5};
    Vec3 sclera_center{0, 0, 0};
    double cornea_radius = 7.8;
    double sclera_radius = 12.0;

    UnitVec3 axis() const { return UnitVec3(cornea_center - sclera_center); }
    double center_gap() const { return norm(cornea_center - sclera_center); }

    /// Distance from the sclera center, along the axis, of the plane holding
    /// the cornea/sclera intersection circle (the limbus).
    double limbus_axial_offset() const {
        const double d = center_gap();
        return (d * d + sclera_radius * sclera_radius - cornea_radius * cornea_radius) / (2.0 * d);
    }
    double limbus_ring_radius() const {
        const double h = limbus_axial_offset();
        return std::sqrt(std::max(0.0, sclera_radius * sclera_radius - h * h));
    }

    Sphere cornea() const { return {cornea_center, cornea_radius}; }
    Sphere sclera() const { return {sclera_center, sclera_radius}; }

    void validate() const;
};

enum class FringeDirection { X, Y };  // X: carrier along display x (vertical stripes)

struct Pattern {
    enum class Kind { Uniform, Sinusoid, Cross, Checker };

    Kind kind = Kind::Uniform;
    double bias = 0.5;       // A
    double amplitude = 0.25; // B
    FringeDirection direction = FringeDirection::X;
    double period = 40.0;        // sinusoid, display px
    double phase_offset = 0.0;   // rad
    double period_x = 40.0, period_y = 40.0;  // cross
    double checker_cell = 8.0;
    double uniform_level = 0.5;

    static Pattern uniform(double level);
    static Pattern sinusoid(FringeDirection dir, double period, double phase_offset = 0.0,
                            double bias = 0.5, double amplitude = 0.5);
    static Pattern cross(double period_x, double period_y, double bias = 0.5,
                         double amplitude = 0.25);
    static Pattern checker(double cell, double bias = 0.5, double amplitude = 0.5);

    /// Parses CLI pattern specs like "cross:40,40", "sin:x,40,0", "uniform:0.5",
    /// "checker:8".
    static Pattern parse(const std::string& spec);

    double value_at_pixel(int i, int j) const;
    /// Bilinear interpolation of the pixel-center values at a continuous
    /// display position (px units).
    double sample(double x, double y) const;

    void validate() const;
};

/// Rotationally symmetric profile surface: radius from the +z axis as a
/// function of axial position, interpolated with Catmull-Rom cubics.
struct EggProfile {
    std::vector<double> knot_z;    // ascending, mm
    std::vector<double> knot_rho;  // > 0, mm
    double limbus_z = 0.0;         // hits with z above this are labeled cornea

    double rho(double z) const;
    double drho_dz(double z) const;
    double z_min() const { return knot_z.front(); }
    double z_max() const { return knot_z.back(); }

    /// Samples a two-sphere eye meridian. `radial_modulation` adds a smooth
    /// rotationally symmetric deviation (fraction of local radius) so the
    /// result is egg-like rather than exactly two spheres.
    static EggProfile from_two_sphere(const TwoSphereEye& eye, int knots_per_degree = 1,
                                      double radial_modulation = 0.0);

    void validate() const;
};

enum class Region : uint8_t { Background = 0, Cornea = 1, Sclera = 2 };

struct RegionHit {
    Vec3 point;
    UnitVec3 normal;
    double t = 0.0;
    Region region = Region::Sclera;
};

struct EyeSurface {
    enum class Kind { TwoSphere, SingleSphere, Egg, Mirror };

    Kind kind = Kind::TwoSphere;
    Pose pose;            // local-to-world
    TwoSphereEye eye;     // TwoSphere (local: sclera center at origin, axis +z)
    double sphere_radius = 12.0;  // SingleSphere (local: center at origin)
    EggProfile egg;       // Egg (local axis +z)

    /// Nearest intersection with the posed surface, world frame.
    std::optional<RegionHit> intersect(const Ray& world_ray) const;

    void validate() const;
};

struct DisplayModel {
    Pose pose;  // local-to-world; pixels live on the local z=0 plane
    int width_px = 2532, height_px = 1170;
    double pixel_pitch = 0.0578;  // mm/px

    Plane plane() const { return Plane{pose.translation, UnitVec3(pose.rotation.col(2))}; }
    Vec3 pixel_to_world(double x, double y) const {
        return pose.apply(Vec3{x * pixel_pitch, y * pixel_pitch, 0.0});
    }
    /// Display pixel coordinates of a world point assumed on the plane.
    Vec2 world_to_pixel(const Vec3& p) const {
        const Vec3 local = pose.apply_inverse(p);
        return {local.x / pixel_pitch, local.y / pixel_pitch};
    }
    bool in_bounds(const Vec2& px) const {
        return px.x >= 0.0 && px.x <= width_px - 1 && px.y >= 0.0 && px.y <= height_px - 1;
    }

    void validate() const;
};

struct NoiseModel {
    double intensity_sigma = 0.0;  // fraction of full scale
    int quantize_bits = 0;         // 0 = none; else one of 8, 10, 12, 16
    std::optional<Image> occlusion_mask;

    void validate() const;
};

struct Scene {
    std::vector<PinholeCamera> cameras;  // exactly 2 for the stereo pipeline
    DisplayModel display;
    EyeSurface surface;
    double background_level = 0.05;
    NoiseModel noise;

    void validate() const;
};

/// The desk-scale stereo rig used by the experiments: two 1280x960 cameras
/// (fx = fy = 2400 px) on a 60 mm baseline 85 mm from the eye, and the
/// 2532x1170 display centered on the eye axis 20 mm in front of it so the
/// reflection covers cornea, limbus and sclera for both cameras. `scale`
/// shrinks the camera resolution (and focal length with it) for faster runs.
Scene make_default_scene(double scale = 1.0);
/// Same rig around a 12 mm bearing ball.
Scene make_ball_scene(double scale = 1.0);
/// Same rig around an egg-like surface derived from the default eye.
Scene make_egg_scene(double scale = 1.0, double radial_modulation = 0.01);
/// Resolves "builtin:<name>[@scale]" or reads a scene config file.
Scene load_scene(const std::string& path_or_builtin);

Scene scene_from_config(const Config& cfg);
Config scene_to_config(const Scene& scene);

}  // namespace defleye
