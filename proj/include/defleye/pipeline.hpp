#pragma once

#include <array>
#include <optional>

#include "defleye/gaze.hpp"
#include "defleye/phase.hpp"
#include "defleye/reconstruct.hpp"
#include "defleye/render.hpp"
#include "defleye/util.hpp"

namespace defleye {

enum class PhaseSource {
    Cwt,       // single-shot cross pattern, wavelet retrieval
    FourStep,  // two four-frame temporal sequences (reference path)
    Oracle     // exact traced correspondences (testing)
};

struct PipelineOptions {
    PhaseSource phase_source = PhaseSource::Cwt;
    // the convex eye demagnifies the display roughly 4x at full resolution;
    // a 40 px display fringe keeps the camera-side carrier both unwrappable
    // and short enough that the wavelet's chirp bias stays small
    double fringe_period_x = 40.0;  // display px
    double fringe_period_y = 40.0;
    double pattern_bias = 0.5;
    double pattern_amplitude = 0.25;

    // 0 = estimate the camera-side fringe period from the traced geometry
    double cwt_expected_period_px = 0.0;
    int cwt_scale_count = 16;
    int cwt_orientation_count = 16;
    // the pipeline narrows the default scale span so the invalid border
    // (truncation_radius * scale_max) stays inside the eye footprint
    double cwt_scale_ratio = 2.2;
    // tighter envelope than the generic default: the strongly curved eye
    // reflection keeps the residual chirp bias lower this way
    double cwt_fb = 0.5;

    SegmentOptions segment;
    // widens the excluded annulus for wavelet maps (phase is unreliable within
    // a kernel radius of the discontinuity); 0 = auto from the fringe period
    double limbus_exclusion_px = 0.0;

    AnchorOptions anchors;
    OptimOptions optim;
    RefineOptions refine;
    AxisFitOptions axis;

    bool force_single_sphere = false;
    bool estimate_gaze = true;
};

struct CaptureResult {
    std::array<CorrespondenceMap, 2> corr;
    std::array<RegionMask, 2> masks;
    bool single_sphere = false;

    AnchorResult anchors;
    std::optional<SphereFit> cornea_fit;
    SphereFit sclera_fit;  // the single fit in single-sphere mode

    OptimResult optim;
    RefineResult refine;
    std::optional<GazeEstimate> gaze;

    long point_count = 0;
    StageTimings timings;
};

/// Correspondence map copied from exact traced geometry (testing oracle).
CorrespondenceMap correspondence_from_ground_truth(const GroundTruth& gt, int camera_id);

/// Median camera-side fringe period implied by the traced correspondences.
double estimate_camera_period(const GroundTruth& gt, double display_period_x,
                              double display_period_y);

/// Renders one capture of `scene` and runs the full reconstruction with the
/// given calibration. `trial_seed` drives the render noise only.
CaptureResult run_capture(const Scene& scene, const Rig& rig, const PipelineOptions& options,
                          uint64_t trial_seed);

/// Phase retrieval + unwrap + segmentation only (shared by run_capture and the
/// file-based CLI path). The ground truth provides the absolute unwrap seed.
std::array<CorrespondenceMap, 2> retrieve_correspondences(const Scene& scene,
                                                          const PipelineOptions& options,
                                                          uint64_t trial_seed,
                                                          const std::array<GroundTruth, 2>& gt);

}  // namespace defleye
