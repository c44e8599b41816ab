#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "defleye/image.hpp"
#include "defleye/scene.hpp"

namespace defleye {

/// Exact per-pixel trace results for one camera; the testing oracle for every
/// downstream stage. Region labels are filled whenever the surface is hit,
/// `valid` additionally requires the reflected ray to land on the display.
struct GroundTruth {
    int width = 0, height = 0;
    std::vector<Vec3> point;
    std::vector<Vec3> normal;
    std::vector<double> display_x, display_y;
    std::vector<uint8_t> region;  // Region enum
    std::vector<uint8_t> valid;

    size_t index(int x, int y) const { return static_cast<size_t>(y) * width + x; }
    bool is_valid(int x, int y) const { return valid[index(x, y)] != 0; }
};

/// Renders what `camera_index` sees: backproject, intersect the surface,
/// reflect, sample the display pattern (bilinear), then apply noise and
/// optional quantization. Pixels whose reflected ray misses the display get
/// the scene background level. Deterministic for a fixed seed; the noise
/// stream is pixel-indexed so the result does not depend on threading.
Image render(const Scene& scene, const Pattern& pattern, uint64_t seed, int camera_index,
             uint64_t frame_index = 0);

/// Serial reference implementation of render(); bit-identical by contract.
Image render_reference(const Scene& scene, const Pattern& pattern, uint64_t seed,
                       int camera_index, uint64_t frame_index = 0);

/// Renders all cameras at once.
std::vector<Image> render_all(const Scene& scene, const Pattern& pattern, uint64_t seed,
                              uint64_t frame_index = 0);

/// Four-frame temporal phase-shift sequence (shifts 0, pi/2, pi, 3pi/2) with
/// identical geometry and independent noise draws per frame.
std::array<Image, 4> render_phase_sequence(const Scene& scene, FringeDirection direction,
                                           double period, uint64_t seed, int camera_index,
                                           uint64_t first_frame_index = 0);

GroundTruth ground_truth(const Scene& scene, int camera_index);

/// Count of pixels whose reflection lands on the display, per camera.
std::vector<long> coverage_counts(const Scene& scene);

const char* region_name(Region r);

/// GroundTruth <-> "DGT1" channel container.
void write_ground_truth(const std::string& path, const GroundTruth& gt);
GroundTruth read_ground_truth(const std::string& path);

}  // namespace defleye
