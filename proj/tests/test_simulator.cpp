#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "defleye/render.hpp"
#include "defleye/scene.hpp"

using namespace defleye;

namespace {

// Small mirror-and-display scene: camera looks down at a flat mirror, the
// display hangs above, facing down.
Scene make_mirror_scene() {
    Scene s;
    PinholeCamera cam;
    cam.width = 320;
    cam.height = 240;
    cam.fx = cam.fy = 500.0;
    cam.cx = 159.5;
    cam.cy = 119.5;
    cam.pose = look_at({5.0, 10.0, 100.0}, {0.0, 0.0, 0.0}, {0.0, 1.0, 0.0});
    s.cameras = {cam};

    s.display.width_px = 512;
    s.display.height_px = 512;
    s.display.pixel_pitch = 0.5;
    const Mat3 rot = Mat3::from_columns({1, 0, 0}, {0, -1, 0}, {0, 0, -1});
    const Vec3 center{0, 0, 150};
    const Vec3 origin = center - 0.5 * (512 - 1) * 0.5 * rot.col(0) -
                        0.5 * (512 - 1) * 0.5 * rot.col(1);
    s.display.pose = Pose{rot, origin};

    s.surface.kind = EyeSurface::Kind::Mirror;
    s.surface.pose = Pose::identity();
    s.background_level = 0.2;
    return s;
}

}  // namespace

TEST_CASE("uniform pattern over a flat mirror renders constant inside the footprint") {
    const Scene scene = make_mirror_scene();
    const Image img = render(scene, Pattern::uniform(0.5), 1, 0);
    const GroundTruth gt = ground_truth(scene, 0);
    int valid = 0;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            if (gt.is_valid(x, y)) {
                ++valid;
                CHECK(img.at(x, y) == doctest::Approx(0.5).epsilon(1e-12));
            } else {
                CHECK(img.at(x, y) == doctest::Approx(0.2).epsilon(1e-12));
            }
        }
    CHECK(valid > 1000);
}

TEST_CASE("single-pixel hand trace reproduces the cross-fringe intensity") {
    // Camera on the +z axis looking at a 10 mm sphere at the origin; the
    // display hangs behind the camera so the principal ray retro-reflects
    // into its center pixel.
    Scene s;
    PinholeCamera cam;
    cam.width = 101;
    cam.height = 101;
    cam.fx = cam.fy = 800.0;
    cam.cx = cam.cy = 50.0;
    cam.pose = Pose{Mat3::from_columns({1, 0, 0}, {0, -1, 0}, {0, 0, -1}), {0, 0, 100}};
    s.cameras = {cam};

    s.display.width_px = 2000;
    s.display.height_px = 1200;
    s.display.pixel_pitch = 0.25;
    const Mat3 rot = Mat3::from_columns({1, 0, 0}, {0, -1, 0}, {0, 0, -1});
    // place display pixel (1266, 584) exactly on the +z axis at z = 150
    const Vec3 origin = Vec3{0, 0, 150} - 1266 * 0.25 * rot.col(0) - 584 * 0.25 * rot.col(1);
    s.display.pose = Pose{rot, origin};

    s.surface.kind = EyeSurface::Kind::SingleSphere;
    s.surface.sphere_radius = 10.0;
    s.background_level = 0.0;

    const double px = 40.0, py = 36.0, A = 0.5, B = 0.25;
    const Image img = render(s, Pattern::cross(px, py, A, B), 9, 0);

    // hand trace: principal ray hits (0,0,10), normal +z, reflects straight
    // back, meets the display plane z=150 at display pixel (1266, 584)
    const double phi_x = 2.0 * kPi * 1266.0 / px;
    const double phi_y = 2.0 * kPi * 584.0 / py;
    const double expected = A + B * (std::cos(phi_x) + std::cos(phi_y));
    CHECK(img.at(50, 50) == doctest::Approx(expected).epsilon(1e-12));

    // the traced ground truth agrees with the hand trace
    const GroundTruth gt = ground_truth(s, 0);
    REQUIRE(gt.is_valid(50, 50));
    CHECK(gt.display_x[gt.index(50, 50)] == doctest::Approx(1266.0).epsilon(1e-10));
    CHECK(gt.display_y[gt.index(50, 50)] == doctest::Approx(584.0).epsilon(1e-10));
    CHECK(norm(gt.point[gt.index(50, 50)] - Vec3{0, 0, 10}) < 1e-9);
}

TEST_CASE("rendering is deterministic for a fixed seed and matches the serial path") {
    Scene scene = make_mirror_scene();
    scene.noise.intensity_sigma = 0.02;
    const Pattern p = Pattern::cross(32, 24);
    const Image a = render(scene, p, 77, 0);
    const Image b = render(scene, p, 77, 0);
    CHECK(a.data == b.data);
    const Image c = render_reference(scene, p, 77, 0);
    CHECK(a.data == c.data);
    const Image d = render(scene, p, 78, 0);
    CHECK(a.data != d.data);
}

TEST_CASE("noiseless render equals the pattern evaluated at ground-truth coordinates") {
    const Scene scene = make_default_scene(0.25);
    const Pattern p = Pattern::cross(40, 40);
    const Image img = render(scene, p, 5, 0);
    const GroundTruth gt = ground_truth(scene, 0);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            if (gt.is_valid(x, y)) {
                const size_t i = gt.index(x, y);
                CHECK(std::abs(img.at(x, y) - p.sample(gt.display_x[i], gt.display_y[i])) < 1e-9);
            }
}

TEST_CASE("reflection self-consistency at every valid ground-truth pixel") {
    const Scene scene = make_default_scene(0.25);
    const GroundTruth gt = ground_truth(scene, 1);
    const PinholeCamera& cam = scene.cameras[1];
    int checked = 0;
    for (int y = 0; y < gt.height; ++y)
        for (int x = 0; x < gt.width; ++x) {
            if (!gt.is_valid(x, y)) continue;
            const size_t i = gt.index(x, y);
            const Ray ray = cam.backproject(x, y);
            const UnitVec3 r = reflect(ray.direction, UnitVec3(gt.normal[i]));
            const Vec3 to_display =
                scene.display.pixel_to_world(gt.display_x[i], gt.display_y[i]) - gt.point[i];
            CHECK(angle_between(r.vec(), to_display) < 1e-9);
            ++checked;
        }
    CHECK(checked > 5000);
}

TEST_CASE("phase sequence satisfies the cosine sum identity without noise") {
    const Scene scene = make_default_scene(0.25);
    const auto frames = render_phase_sequence(scene, FringeDirection::Y, 40.0, 3, 0);
    for (size_t i = 0; i < frames[0].size(); ++i) {
        const double lhs = frames[0].data[i] + frames[2].data[i];
        const double rhs = frames[1].data[i] + frames[3].data[i];
        CHECK(std::abs(lhs - rhs) < 1e-9);
    }
}

TEST_CASE("ground truth of the default scene: region topology and counts") {
    const Scene scene = make_default_scene();  // full 1280x960 rig
    const GroundTruth gt = ground_truth(scene, 0);

    long cornea = 0, sclera = 0, valid = 0;
    for (size_t i = 0; i < gt.valid.size(); ++i) {
        if (gt.valid[i]) {
            ++valid;
            if (gt.region[i] == static_cast<uint8_t>(Region::Cornea)) ++cornea;
            if (gt.region[i] == static_cast<uint8_t>(Region::Sclera)) ++sclera;
        }
    }
    CHECK(valid > 40000);
    CHECK(cornea > 4000);
    CHECK(sclera > 20000);

    // cornea-labeled pixels (by hit geometry) sit strictly inside the
    // sclera-labeled annulus: every cornea pixel's image radius about the
    // cornea centroid is smaller than any sclera pixel's along the same ray
    double cu = 0, cv = 0;
    long n = 0;
    for (int y = 0; y < gt.height; ++y)
        for (int x = 0; x < gt.width; ++x)
            if (gt.region[gt.index(x, y)] == static_cast<uint8_t>(Region::Cornea)) {
                cu += x;
                cv += y;
                ++n;
            }
    cu /= n;
    cv /= n;
    // along every direction from the cornea centroid, all cornea pixels come
    // before the first sclera pixel (the projected limbus is an ellipse, so
    // compare radii per angular bin rather than globally)
    constexpr int kBins = 72;
    double max_cornea_r[kBins], min_sclera_r[kBins];
    for (int b = 0; b < kBins; ++b) {
        max_cornea_r[b] = 0;
        min_sclera_r[b] = 1e9;
    }
    for (int y = 0; y < gt.height; ++y)
        for (int x = 0; x < gt.width; ++x) {
            const double r = std::hypot(x - cu, y - cv);
            const double az = std::atan2(y - cv, x - cu);
            const int b = std::min(kBins - 1,
                                   static_cast<int>((az + kPi) / (2 * kPi) * kBins));
            const uint8_t reg = gt.region[gt.index(x, y)];
            if (reg == static_cast<uint8_t>(Region::Cornea))
                max_cornea_r[b] = std::max(max_cornea_r[b], r);
            if (reg == static_cast<uint8_t>(Region::Sclera))
                min_sclera_r[b] = std::min(min_sclera_r[b], r);
        }
    for (int b = 0; b < kBins; ++b)
        if (max_cornea_r[b] > 0 && min_sclera_r[b] < 1e9)
            CHECK(min_sclera_r[b] > max_cornea_r[b] - 1.5);
}

TEST_CASE("default rig: each camera sees most of the limbus ring, the pair sees all of it") {
    // The arc of the ring facing away from a camera reflects off at grazing
    // angles no flat display can reach; the near camera picks it up instead.
    const Scene scene = make_default_scene();
    const TwoSphereEye& eye = scene.surface.eye;
    const double h = eye.limbus_axial_offset();
    CHECK(eye.limbus_ring_radius() > 5.0);

    int union_octants[8] = {0};
    for (int c = 0; c < 2; ++c) {
        const GroundTruth gt = ground_truth(scene, c);
        const PinholeCamera& cam = scene.cameras[c];
        int octant_hits[8] = {0};
        for (int k = 0; k < 360; ++k) {
            const double az = 2 * kPi * k / 360.0;
            // a sclera point just outside the limbus ring
            const double g = std::acos(h / eye.sclera_radius) + deg_to_rad(1.5);
            const Vec3 p = scene.surface.pose.apply(
                {eye.sclera_radius * std::sin(g) * std::cos(az),
                 eye.sclera_radius * std::sin(g) * std::sin(az),
                 eye.sclera_radius * std::cos(g)});
            const auto px = cam.project(p);
            if (!px || !cam.in_image(*px, 2)) continue;
            const int xi = static_cast<int>(std::lround(px->x));
            const int yi = static_cast<int>(std::lround(px->y));
            bool any_valid = false;
            for (int dy = -3; dy <= 3 && !any_valid; ++dy)
                for (int dx = -3; dx <= 3 && !any_valid; ++dx) {
                    const int xx = xi + dx, yy = yi + dy;
                    if (xx < 0 || yy < 0 || xx >= gt.width || yy >= gt.height) continue;
                    if (gt.is_valid(xx, yy) &&
                        gt.region[gt.index(xx, yy)] == static_cast<uint8_t>(Region::Sclera))
                        any_valid = true;
                }
            if (any_valid) {
                ++octant_hits[k * 8 / 360];
                ++union_octants[k * 8 / 360];
            }
        }
        int covered = 0;
        for (int o = 0; o < 8; ++o)
            if (octant_hits[o] > 10) ++covered;
        CHECK(covered >= 6);
    }
    for (int o = 0; o < 8; ++o) CHECK(union_octants[o] > 10);
}

TEST_CASE("ball scene at full resolution exceeds the target point count") {
    const Scene scene = make_ball_scene();
    const auto counts = coverage_counts(scene);
    REQUIRE(counts.size() == 2);
    CHECK(counts[0] > 40000);
    CHECK(counts[1] > 40000);
}

TEST_CASE("rotating a rotationally symmetric surface about its axis changes nothing") {
    Scene scene = make_default_scene(0.25);
    const GroundTruth base = ground_truth(scene, 0);
    scene.surface.pose.rotation =
        scene.surface.pose.rotation * Mat3::axis_angle(UnitVec3(0, 0, 1), deg_to_rad(117.0));
    const GroundTruth rot = ground_truth(scene, 0);
    REQUIRE(base.region.size() == rot.region.size());
    long diffs = 0;
    for (size_t i = 0; i < base.region.size(); ++i)
        if (base.region[i] != rot.region[i]) ++diffs;
    CHECK(diffs == 0);
}

TEST_CASE("egg surface intersection agrees with its generating spheres away from the seam") {
    const EggProfile egg = EggProfile::from_two_sphere(TwoSphereEye{}, 2, 0.0);
    EyeSurface surf;
    surf.kind = EyeSurface::Kind::Egg;
    surf.egg = egg;
    surf.pose = Pose::identity();

    // frontal ray through the cornea apex region
    const Ray front{{1.0, 0.5, 60.0}, UnitVec3(0, 0, -1)};
    const auto hit = surf.intersect(front);
    REQUIRE(hit.has_value());
    const auto sphere_hit = ray_sphere_intersect(front, Sphere{{0, 0, 5.5}, 7.8});
    REQUIRE(sphere_hit.has_value());
    CHECK(norm(hit->point - sphere_hit->point) < 2e-3);
    CHECK(angle_between(hit->normal.vec(), sphere_hit->normal.vec()) < 2e-3);
    CHECK(hit->region == Region::Cornea);

    // oblique ray onto the sclera belt
    const Ray side{{9.0, 0.0, 60.0}, UnitVec3(-0.02, 0.0, -1.0)};
    const auto hit2 = surf.intersect(side);
    REQUIRE(hit2.has_value());
    const auto sphere_hit2 = ray_sphere_intersect(side, Sphere{{0, 0, 0}, 12.0});
    REQUIRE(sphere_hit2.has_value());
    CHECK(norm(hit2->point - sphere_hit2->point) < 2e-3);
    CHECK(hit2->region == Region::Sclera);
}

TEST_CASE("scene config round-trips through the structured text format") {
    const Scene scene = make_default_scene(0.5);
    const Config cfg = scene_to_config(scene);
    const Scene back = scene_from_config(Config::parse_string(cfg.serialize()));
    REQUIRE(back.cameras.size() == scene.cameras.size());
    CHECK(back.cameras[0].fx == scene.cameras[0].fx);
    CHECK(norm(back.cameras[1].center() - scene.cameras[1].center()) < 1e-9);
    CHECK(back.display.width_px == scene.display.width_px);
    CHECK(norm(back.display.pose.translation - scene.display.pose.translation) < 1e-9);
    CHECK(back.surface.kind == EyeSurface::Kind::TwoSphere);
    CHECK(back.surface.eye.cornea_radius == scene.surface.eye.cornea_radius);

    // quantization flows through
    Scene noisy = scene;
    noisy.noise.intensity_sigma = 0.01;
    noisy.noise.quantize_bits = 10;
    const Scene back2 = scene_from_config(Config::parse_string(scene_to_config(noisy).serialize()));
    CHECK(back2.noise.intensity_sigma == 0.01);
    CHECK(back2.noise.quantize_bits == 10);
}

TEST_CASE("quantization snaps values to the configured level grid") {
    Scene scene = make_mirror_scene();
    scene.noise.quantize_bits = 8;
    const Image img = render(scene, Pattern::uniform(0.5001), 3, 0);
    const GroundTruth gt = ground_truth(scene, 0);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            if (gt.is_valid(x, y)) {
                const double steps = img.at(x, y) * 255.0;
                CHECK(std::abs(steps - std::round(steps)) < 1e-9);
            }
}
