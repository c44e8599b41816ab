#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "defleye/phase.hpp"
#include "defleye/render.hpp"
#include "defleye/scene.hpp"

namespace defleye {

/// The geometric calibration the reconstruction needs: two posed cameras and
/// the display. Built from a Scene (oracle rig) or a calibration result.
struct Rig {
    std::array<PinholeCamera, 2> cameras;
    DisplayModel display;

    static Rig from_scene(const Scene& scene);

    /// Nominal working distance: where the two camera axes pass closest.
    double nominal_standoff() const;
};

struct NoLimbusFound : Error {
    using Error::Error;
};

enum class RegionLabel : uint8_t { Invalid = 0, Cornea = 1, Sclera = 2, LimbusExcluded = 3 };

struct RegionMask {
    int width = 0, height = 0;
    std::vector<uint8_t> label;

    // fitted limbus circle in image coordinates, when detection succeeded
    bool limbus_found = false;
    double limbus_cx = 0.0, limbus_cy = 0.0, limbus_r = 0.0;

    size_t index(int x, int y) const { return static_cast<size_t>(y) * width + x; }
    RegionLabel at(int x, int y) const { return static_cast<RegionLabel>(label[index(x, y)]); }
    bool measurable(int x, int y) const {
        const RegionLabel l = at(x, y);
        return l == RegionLabel::Cornea || l == RegionLabel::Sclera;
    }
    long count(RegionLabel l) const;

    /// Whole valid area labeled sclera (single-sphere fallback).
    static RegionMask all_sclera(const CorrespondenceMap& corr);
};

struct SegmentOptions {
    double gradient_k = 4.0;      // band threshold: k x median gradient magnitude
    double exclusion_px = 2.0;    // annulus widening beyond the detected band
    int min_band_pixels = 60;
    int min_region_pixels = 200;
};

/// Splits a correspondence map into cornea / sclera by the abrupt change of
/// fringe deformation at the limbus: pixels whose correspondence gradient
/// exceeds k x median form the band, a circle fitted to the band locates the
/// ring, and a closed annulus around it becomes limbus_excluded. Throws
/// NoLimbusFound for smooth maps (single-sphere targets).
RegionMask segment_limbus(const CorrespondenceMap& corr, const SegmentOptions& options = {});

/// One reconstructed surface point.
struct SurfaceSample {
    int camera_id = 0;
    Vec2 pixel;
    Vec3 point;                // mm, world
    UnitVec3 normal;           // deflectometry normal n
    UnitVec3 model_normal;     // sphere-model normal n_s
    UnitVec3 refined_normal;   // n_r after integration
    bool has_model_normal = false;
    bool has_refined_normal = false;
    Region region = Region::Sclera;
};

/// Surface normal implied by a camera ray hitting `point` and the display
/// pixel it sees there (the half-vector of the reflection).
UnitVec3 normal_from_correspondence(const Rig& rig, int camera_id, const Vec3& point,
                                    const Vec2& display_px);

/// Display-coordinate mismatch (px) of the second camera's prediction when the
/// surface point is placed at depth t along `base_cam`'s pixel ray. The curve's
/// minimum over t resolves the depth-normal ambiguity. Returns a large value
/// when the configuration is invalid at this t.
double stereo_mismatch(const Rig& rig, int base_cam, const Vec2& pixel, const Vec2& display_px,
                       const CorrespondenceMap& other_corr, double t);

struct AnchorOptions {
    int count = 500;
    uint64_t seed = 1;
    double t_min = 0.0, t_max = 0.0;  // 0 = auto: nominal standoff +- 30 mm
    int coarse_samples = 120;
    double golden_tolerance_mm = 1e-4;
    double max_mismatch_px = 2.0;     // reject anchors worse than this at the optimum
    // uniform sampling underrepresents the smaller region's sliver of the
    // stereo overlap; a targeted second pass tops it up to this many
    int min_per_region = 40;
};

struct AnchorResult {
    std::vector<SurfaceSample> samples;
    int dropped_non_unique = 0;
    int dropped_no_overlap = 0;
};

/// Resolves depth and normal at sparse anchor pixels of camera 0 via the
/// 1D depth search against camera 1 (coarse scan + golden-section refinement).
/// Throws PipelineError when the overlap region is empty.
AnchorResult stereo_anchors(const CorrespondenceMap& corr0, const CorrespondenceMap& corr1,
                            const RegionMask& mask0, const RegionMask& mask1, const Rig& rig,
                            const AnchorOptions& options = {});

struct SphereFit {
    Sphere sphere;
    double rms_line_distance = 0.0;  // best-fit-point residual
    double scatter_std = 0.0;        // std of back-traced normal distances to the center
    int sample_count = 0;
};

/// Sphere from back-traced normals: center = best-fit intersection of the
/// lines (point, -n), radius = mean distance of the points to it.
SphereFit fit_sphere_from_normals(std::span<const SurfaceSample> samples);

/// Region -> sphere model shared by the two-sphere and single-sphere paths.
struct SphereSet {
    Sphere cornea, sclera;
    bool single = false;

    static SphereSet from_eye(const TwoSphereEye& eye);
    static SphereSet from_sphere(const Sphere& s);
    const Sphere& sphere_for(Region r) const {
        return (single || r != Region::Cornea) ? sclera : cornea;
    }
    TwoSphereEye to_eye() const;
};

struct OptimOptions {
    double fd_step_mm = 1e-4;       // central-difference step
    double loss_tolerance = 1e-7;   // stop when improvement falls below this
    int max_iterations = 500;
    int max_pixels = 40000;         // subsample cap of the measurement area
    uint64_t seed = 7;
};

struct OptimResult {
    SphereSet model;
    double loss = 0.0;  // mean |angle(n, n_s)|, radians
    int iterations = 0;
    bool converged = false;
    long term_count = 0;
    long miss_count = 0;
    std::vector<double> loss_history;  // accepted iterates, non-increasing
};

/// Pixel terms of the angular-consistency loss: one per (camera, measurable
/// pixel) over both cameras' areas, including one-camera-only pixels.
struct LossTerms {
    struct Term {
        Ray ray;
        Vec3 display_point;
        Region region;
    };
    std::vector<Term> terms;

    static LossTerms build(const std::array<CorrespondenceMap, 2>& corr,
                           const std::array<RegionMask, 2>& masks, const Rig& rig,
                           int max_pixels, uint64_t seed);
};

/// Mean absolute angle between the correspondence normal and the model-sphere
/// normal over the terms (radians). Misses are skipped and counted.
double angular_loss(const SphereSet& model, const LossTerms& terms, long* misses = nullptr);

/// Gradient-descent refinement of the sphere model under the angular loss,
/// central finite differences on the 8 (or 4 for single) parameters, with a
/// backtracking line search that also rejects invariant-violating steps.
OptimResult optimize_two_sphere(const TwoSphereEye& init,
                                const std::array<CorrespondenceMap, 2>& corr,
                                const std::array<RegionMask, 2>& masks, const Rig& rig,
                                const OptimOptions& options = {});
OptimResult optimize_single_sphere(const Sphere& init,
                                   const std::array<CorrespondenceMap, 2>& corr,
                                   const std::array<RegionMask, 2>& masks, const Rig& rig,
                                   const OptimOptions& options = {});

struct HeightField {
    int width = 0, height = 0;
    std::vector<double> t;  // depth along each pixel ray, mm
    std::vector<uint8_t> valid;

    size_t index(int x, int y) const { return static_cast<size_t>(y) * width + x; }
};

struct RefineOptions {
    int max_outer = 3;
    double height_tol_mm = 1e-4;  // 0.1 um
    int cg_max_iterations = 600;
    double cg_tolerance = 1e-11;
};

struct RefineResult {
    std::array<HeightField, 2> heights;
    std::vector<SurfaceSample> samples;  // both cameras, refined normals set
    int outer_iterations = 0;
    bool converged = false;
    double final_rms_change_mm = 0.0;
};

/// Iterative slope integration: initialize heights on the sphere model, then
/// alternate (a) per-pixel normals from correspondences at the current heights
/// and (b) zonal least-squares integration of the normal field along the
/// camera rays, anchored to the mean anchor-point height. Throws NonConvergence
/// when the height change grows two outer iterations in a row.
RefineResult integrate_refine(const SphereSet& model,
                              const std::array<CorrespondenceMap, 2>& corr,
                              const std::array<RegionMask, 2>& masks, const Rig& rig,
                              std::span<const SurfaceSample> anchors,
                              const RefineOptions& options = {});

/// ASCII PLY with x y z nx ny nz per sample (refined normal when available).
void write_ply(const std::string& path, std::span<const SurfaceSample> samples);

}  // namespace defleye
