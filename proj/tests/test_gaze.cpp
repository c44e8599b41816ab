#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "defleye/pipeline.hpp"
#include "defleye/util.hpp"

using namespace defleye;

namespace {

std::vector<SurfaceSample> two_sphere_samples(const TwoSphereEye& eye, const Mat3& world_rot,
                                              uint64_t seed) {
    std::vector<SurfaceSample> samples;
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int i = 0; i < 400; ++i) {
        const bool cornea = i % 2 == 0;
        const double polar = (cornea ? 0.02 : 0.6) + 0.45 * (u(gen) + 1);
        const double az = kPi * u(gen);
        const Vec3 n_local{std::sin(polar) * std::cos(az), std::sin(polar) * std::sin(az),
                           std::cos(polar)};
        SurfaceSample s;
        s.region = cornea ? Region::Cornea : Region::Sclera;
        const Vec3 center = cornea ? eye.cornea_center : eye.sclera_center;
        const double radius = cornea ? eye.cornea_radius : eye.sclera_radius;
        s.point = world_rot * (center + radius * n_local);
        s.refined_normal = UnitVec3(world_rot * n_local);
        s.has_refined_normal = true;
        samples.push_back(s);
    }
    return samples;
}

}  // namespace

TEST_CASE("estimate_axis is rotation equivariant") {
    const TwoSphereEye eye{};
    for (int trial = 0; trial < 10; ++trial) {
        std::mt19937_64 gen(500 + trial);
        std::uniform_real_distribution<double> u(-1, 1);
        const Mat3 rot = Mat3::axis_angle(UnitVec3(u(gen), u(gen), u(gen)), 0.8 * u(gen));

        const auto base = two_sphere_samples(eye, Mat3::identity(), 42);
        const auto rotated = two_sphere_samples(eye, rot, 42);

        TwoSphereEye eye_rot = eye;
        eye_rot.cornea_center = rot * eye.cornea_center;
        eye_rot.sclera_center = rot * eye.sclera_center;

        const GazeEstimate g0 = estimate_axis(base, eye);
        const GazeEstimate g1 = estimate_axis(rotated, eye_rot);
        const Vec3 mapped = rot * g0.optical_axis.direction().vec();
        CHECK(angle_between(mapped, g1.optical_axis.direction().vec()) < 1e-9);
    }
}

TEST_CASE("estimate_axis flags single-region sample sets") {
    const TwoSphereEye eye{};
    auto samples = two_sphere_samples(eye, Mat3::identity(), 9);
    std::vector<SurfaceSample> sclera_only;
    for (const auto& s : samples)
        if (s.region == Region::Sclera) sclera_only.push_back(s);
    const GazeEstimate g = estimate_axis(sclera_only, eye);
    CHECK(g.single_region);
    // a single-sphere pencil leaves the direction degenerate
    CHECK(g.degenerate_pencil);

    std::vector<SurfaceSample> few(samples.begin(), samples.begin() + 50);
    CHECK_THROWS_AS(estimate_axis(few, eye), DegenerateGeometry);
}

TEST_CASE("calibrate_kappa: identity when axes already point at the targets") {
    const Vec3 eye_pos{0, 0, 0};
    std::vector<Vec3> targets = {{100, 0, 600}, {-100, 0, 600}, {0, 60, 600}, {0, -60, 600}};
    std::vector<Line3> axes;
    for (const Vec3& t : targets) axes.emplace_back(eye_pos, UnitVec3(t));
    const GazeTransform g = calibrate_kappa(axes, targets, eye_pos);
    CHECK(orthonormality_error(g.rotation) < 1e-12);
    CHECK(g.rotation.det() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(g.fit_residual < 1e-9);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(std::abs(g.rotation(i, j) - (i == j ? 1.0 : 0.0)) < 1e-9);
}

TEST_CASE("calibrate_kappa recovers a known 5 degree offset exactly") {
    const Mat3 kappa = Mat3::axis_angle(UnitVec3(0, 1, 0), deg_to_rad(5.0)) *
                       Mat3::axis_angle(UnitVec3(1, 0, 0), deg_to_rad(1.5));
    const Vec3 eye_pos{3, -2, 1};
    std::vector<Vec3> targets = {{120, 30, 650}, {-90, 40, 600}, {10, -70, 620}, {-40, -20, 580}};
    std::vector<Line3> axes;
    for (const Vec3& t : targets) {
        const Vec3 visual = t - eye_pos;
        // optical = kappa^T * visual since visual = kappa * optical
        axes.emplace_back(eye_pos, UnitVec3(kappa.transposed() * visual));
    }
    const GazeTransform g = calibrate_kappa(axes, targets, eye_pos);
    CHECK(g.fit_residual < 1e-9);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) CHECK(std::abs(g.rotation(i, j) - kappa(i, j)) < 1e-9);
    CHECK(orthonormality_error(g.rotation) < 1e-12);
}

TEST_CASE("calibrate_kappa under axis noise keeps sub-0.1-degree residual (Monte Carlo)") {
    std::mt19937_64 gen(321);
    std::normal_distribution<double> noise(0.0, deg_to_rad(0.05));
    const Vec3 eye_pos{0, 0, 0};
    // four corner stimuli spanning ~30 x 15 degrees at 600 mm
    std::vector<Vec3> targets = {{160, 80, 600}, {-160, 80, 600}, {160, -80, 600},
                                 {-160, -80, 600}};
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<Line3> axes;
        for (const Vec3& t : targets) {
            UnitVec3 d(t);
            const auto [e1, e2] = orthonormal_basis(d);
            axes.emplace_back(eye_pos, UnitVec3(d.vec() + noise(gen) * e1 + noise(gen) * e2));
        }
        const GazeTransform g = calibrate_kappa(axes, targets, eye_pos);
        CHECK(rad_to_deg(g.fit_residual) < 0.1);
    }
}

TEST_CASE("calibrate_kappa rejects rank-deficient target sets") {
    const Vec3 eye_pos{0, 0, 0};
    // collinear directions
    std::vector<Vec3> targets = {{0, 0, 600}, {0, 0, 700}, {0, 0, 800}};
    std::vector<Line3> axes;
    for (const Vec3& t : targets) axes.emplace_back(eye_pos, UnitVec3(t));
    CHECK_THROWS_AS(calibrate_kappa(axes, targets, eye_pos), DegenerateGeometry);
}

TEST_CASE("relative error follows its definition") {
    std::vector<AngleSeries> series;
    series.push_back({0.0, {0.0, 0.0}});
    series.push_back({4.0, {4.1, 4.1}});
    const auto eps = relative_error(series);
    CHECK(eps[0].epsilon_deg == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(eps[1].epsilon_deg == doctest::Approx(0.1).epsilon(1e-9));

    // exact positions give zero error everywhere
    std::vector<AngleSeries> exact;
    for (double a : {-4.0, -2.0, 0.0, 2.0, 4.0}) exact.push_back({a, {10.0 + a}});
    for (const auto& e : relative_error(exact)) CHECK(std::abs(e.epsilon_deg) < 1e-12);

    // Eq-form identity: epsilon at the reference position is identically zero
    CHECK(relative_error(exact)[2].epsilon_deg == 0.0);

    std::vector<AngleSeries> missing = {{2.0, {2.0}}};
    CHECK_THROWS_AS(relative_error(missing), Error);
}

TEST_CASE("precision uses the population divisor") {
    AngleSeries s{0.0, {1.0, 3.0}};
    CHECK(precision(s) == doctest::Approx(1.0).epsilon(1e-12));
    AngleSeries same{0.0, {2.5, 2.5, 2.5}};
    CHECK(precision(same) == doctest::Approx(0.0));
    AngleSeries one{0.0, {1.0}};
    CHECK_THROWS_AS(precision(one), Error);

    CHECK(accuracy_rmse(std::vector<double>{1.0, 3.0}, 2.0) ==
          doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("physical-rig reference fixtures are self-consistent") {
    // reference values from the prototype rig's model-eye run, used by the
    // experiment reports for side-by-side comparison
    const std::vector<double> ref_eps = {0.11, 0.12, 0.0, 0.03, 0.10};
    const std::vector<double> ref_sigma = {0.08, 0.06, 0.04, 0.07, 0.02};
    for (double e : ref_eps) CHECK(e <= 0.12);
    for (double s : ref_sigma) CHECK(s <= 0.08);
    CHECK(ref_eps[2] == 0.0);  // the reference position has zero relative error

    // thinning reference: precision strictly degrades with density
    const std::vector<double> ref_thin_precision = {0.28, 0.42, 0.67, 0.89, 1.20};
    const std::vector<double> densities = {1.0, 0.5, 0.25, 0.125, 0.0625};
    CHECK(spearman_rho(densities, ref_thin_precision) == doctest::Approx(-1.0));
}

TEST_CASE("projected stage angle is signed and reference-relative") {
    const UnitVec3 stage(0, 1, 0);
    const Vec3 ref{0, 0, 1};
    CHECK(projected_angle_deg(stage, ref, {0, 0, 1}) == doctest::Approx(0.0));
    // rotating +4 degrees about +y (right handed) moves the direction toward
    // +x, which is the positive angle sense
    const Vec3 d = Mat3::axis_angle(stage, deg_to_rad(4.0)) * ref;
    CHECK(projected_angle_deg(stage, ref, d) == doctest::Approx(4.0).epsilon(1e-9));
    const Vec3 d2 = Mat3::axis_angle(stage, deg_to_rad(-4.0)) * ref;
    CHECK(projected_angle_deg(stage, ref, d2) == doctest::Approx(-4.0).epsilon(1e-9));
    // a tilt component along the stage axis does not affect the angle
    const Vec3 d3 = d + Vec3{0, 0.2, 0};
    CHECK(projected_angle_deg(stage, ref, d3) == doctest::Approx(4.0).epsilon(1e-9));
}

TEST_CASE("angle series CSV has per-trial rows and summary rows") {
    std::vector<AngleSeries> series;
    series.push_back({0.0, {0.01, -0.01}});
    series.push_back({2.0, {2.05, 1.95}});
    const std::string csv = angle_series_csv(series);
    CHECK(csv.find("position_deg,trial,theta_deg,epsilon_deg,sigma_deg") == 0);
    CHECK(csv.find("summary") != std::string::npos);
    // one summary per position, one row per trial
    size_t rows = std::count(csv.begin(), csv.end(), '\n');
    CHECK(rows == 1 + 4 + 2);
}

TEST_CASE("full noisy pipeline keeps axis scatter below the physical-rig precision") {
    // intensity noise sigma = 0.01 on the renders, whole single-shot pipeline
    Scene scene = make_default_scene(0.4);
    scene.noise.intensity_sigma = 0.01;
    const Rig rig = Rig::from_scene(scene);
    PipelineOptions opts;
    std::vector<double> az_x, az_y;
    int failures = 0;
    for (int trial = 0; trial < 20; ++trial) {
        try {
            const CaptureResult res = run_capture(scene, rig, opts, 9000 + trial);
            REQUIRE(res.gaze.has_value());
            const Vec3 d = res.gaze->optical_axis.direction().vec();
            az_x.push_back(rad_to_deg(std::atan2(d.x, d.z)));
            az_y.push_back(rad_to_deg(std::atan2(d.y, d.z)));
        } catch (const PipelineError&) {
            ++failures;
        }
    }
    CHECK(failures <= 1);
    REQUIRE(az_x.size() >= 19);
    CHECK(stddev_population(az_x) < 0.08);
    CHECK(stddev_population(az_y) < 0.08);
}
