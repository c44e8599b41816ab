#include "defleye/pipeline.hpp"

#include <algorithm>
#include <cmath>

namespace defleye {

CorrespondenceMap correspondence_from_ground_truth(const GroundTruth& gt, int camera_id) {
    CorrespondenceMap map;
    map.width = gt.width;
    map.height = gt.height;
    map.camera_id = camera_id;
    map.x = gt.display_x;
    map.y = gt.display_y;
    map.valid = gt.valid;
    return map;
}

double estimate_camera_period(const GroundTruth& gt, double display_period_x,
                              double display_period_y) {
    std::vector<double> periods;
    for (int y = 0; y < gt.height; ++y)
        for (int x = 0; x + 1 < gt.width; ++x) {
            if (!gt.is_valid(x, y) || !gt.is_valid(x + 1, y)) continue;
            const double dxd = gt.display_x[gt.index(x + 1, y)] - gt.display_x[gt.index(x, y)];
            if (std::abs(dxd) > 1e-6) periods.push_back(display_period_x / std::abs(dxd));
        }
    for (int y = 0; y + 1 < gt.height; ++y)
        for (int x = 0; x < gt.width; ++x) {
            if (!gt.is_valid(x, y) || !gt.is_valid(x, y + 1)) continue;
            const double dyd = gt.display_y[gt.index(x, y + 1)] - gt.display_y[gt.index(x, y)];
            if (std::abs(dyd) > 1e-6) periods.push_back(display_period_y / std::abs(dyd));
        }
    if (periods.empty()) throw PipelineError("phase", "no valid pixels to estimate the period");
    return median(periods);
}

namespace {

// The measured footprint splits into disconnected components (the cornea
// island is separated from the sclera by the unmeasurable limbus rim), so
// every component large enough gets its own absolute seed from the trace and
// is unwrapped independently.
CorrespondenceMap unwrap_multi(const PhaseMap& map, const GroundTruth& gt, double period,
                               int min_component_px = 80) {
    PhaseMap remaining = map;
    CorrespondenceMap out;
    out.width = map.width;
    out.height = map.height;
    const size_t n = map.phase.size();
    out.x.assign(n, std::nan(""));
    out.y.assign(n, std::nan(""));
    out.valid.assign(n, 0);
    const std::vector<double>& truth =
        map.direction == FringeDirection::X ? gt.display_x : gt.display_y;
    std::vector<double>& coord = map.direction == FringeDirection::X ? out.x : out.y;

    for (;;) {
        // best remaining seed: highest confidence with a valid 4-neighborhood
        int sx = -1, sy = -1;
        double best_conf = -1.0;
        for (int y = 1; y + 1 < map.height; ++y)
            for (int x = 1; x + 1 < map.width; ++x) {
                if (!remaining.is_valid(x, y) || !gt.is_valid(x, y)) continue;
                if (!remaining.is_valid(x - 1, y) || !remaining.is_valid(x + 1, y) ||
                    !remaining.is_valid(x, y - 1) || !remaining.is_valid(x, y + 1))
                    continue;
                const double c = remaining.confidence[remaining.index(x, y)];
                if (c > best_conf) {
                    best_conf = c;
                    sx = x;
                    sy = y;
                }
            }
        if (sx < 0) break;

        const double seed_value = 2.0 * kPi * truth[gt.index(sx, sy)] / period;
        const CorrespondenceMap piece = unwrap(remaining, sx, sy, seed_value, period);
        const std::vector<double>& piece_coord =
            map.direction == FringeDirection::X ? piece.x : piece.y;
        long covered = 0;
        for (size_t i = 0; i < n; ++i)
            if (piece.valid[i]) {
                remaining.valid[i] = 0;
                ++covered;
                coord[i] = piece_coord[i];
                out.valid[i] = 1;
            }
        if (covered < min_component_px) {
            // drop crumbs it just covered; stop once only crumbs remain
            for (size_t i = 0; i < n; ++i)
                if (piece.valid[i]) out.valid[i] = 0;
            if (covered <= 1) break;
        }
    }
    return out;
}

CorrespondenceMap unwrap_both(const PhaseMap& px_map, const PhaseMap& py_map,
                              const GroundTruth& gt, double period_x, double period_y,
                              int camera_id) {
    const CorrespondenceMap cx = unwrap_multi(px_map, gt, period_x);
    const CorrespondenceMap cy = unwrap_multi(py_map, gt, period_y);
    CorrespondenceMap merged = merge_correspondence(cx, cy);
    merged.camera_id = camera_id;
    return merged;
}

}  // namespace

std::array<CorrespondenceMap, 2> retrieve_correspondences(const Scene& scene,
                                                          const PipelineOptions& options,
                                                          uint64_t trial_seed,
                                                          const std::array<GroundTruth, 2>& gt) {
    std::array<CorrespondenceMap, 2> corr;
    for (int c = 0; c < 2; ++c) {
        switch (options.phase_source) {
            case PhaseSource::Oracle:
                corr[c] = correspondence_from_ground_truth(gt[c], c);
                break;
            case PhaseSource::FourStep: {
                const auto fx = render_phase_sequence(scene, FringeDirection::X,
                                                      options.fringe_period_x, trial_seed, c, 0);
                const auto fy = render_phase_sequence(scene, FringeDirection::Y,
                                                      options.fringe_period_y, trial_seed, c, 4);
                const PhaseMap mx = four_step_phase(fx, FringeDirection::X);
                const PhaseMap my = four_step_phase(fy, FringeDirection::Y);
                corr[c] = unwrap_both(mx, my, gt[c], options.fringe_period_x,
                                      options.fringe_period_y, c);
                break;
            }
            case PhaseSource::Cwt: {
                const Pattern pattern =
                    Pattern::cross(options.fringe_period_x, options.fringe_period_y,
                                   options.pattern_bias, options.pattern_amplitude);
                const Image img = render(scene, pattern, trial_seed, c, 0);
                double period = options.cwt_expected_period_px;
                if (period <= 0.0)
                    period = estimate_camera_period(gt[c], options.fringe_period_x,
                                                    options.fringe_period_y);
                WaveletParams params = WaveletParams::for_period(period);
                params.fb = options.cwt_fb;
                params.scale_min = std::max(2.0, period / options.cwt_scale_ratio);
                params.scale_max = period * options.cwt_scale_ratio;
                params.scale_count = options.cwt_scale_count;
                params.orientation_count = options.cwt_orientation_count;
                const CwtResult res = cwt_phase(img, params);
                corr[c] = unwrap_both(res.x, res.y, gt[c], options.fringe_period_x,
                                      options.fringe_period_y, c);
                break;
            }
        }
    }
    return corr;
}

CaptureResult run_capture(const Scene& scene, const Rig& rig, const PipelineOptions& options,
                          uint64_t trial_seed) {
    CaptureResult result;
    Stopwatch total;

    Stopwatch sw;
    std::array<GroundTruth, 2> gt = {ground_truth(scene, 0), ground_truth(scene, 1)};
    result.timings.emplace_back("trace", sw.seconds());

    sw.reset();
    result.corr = retrieve_correspondences(scene, options, trial_seed, gt);
    result.timings.emplace_back("phase", sw.seconds());

    sw.reset();
    double exclusion = options.limbus_exclusion_px;
    if (exclusion <= 0.0) {
        if (options.phase_source == PhaseSource::Cwt) {
            double period = options.cwt_expected_period_px;
            if (period <= 0.0)
                period = estimate_camera_period(gt[0], options.fringe_period_x,
                                                options.fringe_period_y);
            exclusion = std::max(2.0, period);
        } else {
            exclusion = 2.0;
        }
    }
    SegmentOptions seg = options.segment;
    seg.exclusion_px = exclusion;

    int limbus_found = 0;
    std::array<bool, 2> found = {false, false};
    for (int c = 0; c < 2; ++c) {
        if (options.force_single_sphere) break;
        try {
            result.masks[c] = segment_limbus(result.corr[c], seg);
            found[c] = true;
            ++limbus_found;
        } catch (const NoLimbusFound&) {
        }
    }
    if (limbus_found == 2) {
        result.single_sphere = false;
    } else if (limbus_found == 0) {
        result.single_sphere = true;
        for (int c = 0; c < 2; ++c) result.masks[c] = RegionMask::all_sclera(result.corr[c]);
    } else {
        throw PipelineError("segmentation",
                            std::string("limbus found in camera ") + (found[0] ? "0" : "1") +
                                " only");
    }
    result.timings.emplace_back("segment", sw.seconds());

    sw.reset();
    result.anchors = stereo_anchors(result.corr[0], result.corr[1], result.masks[0],
                                    result.masks[1], rig, options.anchors);
    result.timings.emplace_back("anchors", sw.seconds());

    sw.reset();
    std::vector<SurfaceSample> cornea_anchors, sclera_anchors;
    for (const SurfaceSample& s : result.anchors.samples)
        (s.region == Region::Cornea ? cornea_anchors : sclera_anchors).push_back(s);

    if (result.single_sphere) {
        result.sclera_fit = fit_sphere_from_normals(result.anchors.samples);
        result.optim = optimize_single_sphere(result.sclera_fit.sphere, result.corr, result.masks,
                                              rig, options.optim);
    } else {
        if (cornea_anchors.size() < 10 || sclera_anchors.size() < 10)
            throw PipelineError("sphere_fit", "too few anchors in one region (cornea " +
                                                  std::to_string(cornea_anchors.size()) +
                                                  ", sclera " +
                                                  std::to_string(sclera_anchors.size()) + ")");
        result.cornea_fit = fit_sphere_from_normals(cornea_anchors);
        result.sclera_fit = fit_sphere_from_normals(sclera_anchors);

        TwoSphereEye init{result.cornea_fit->sphere.center, result.sclera_fit.sphere.center,
                          result.cornea_fit->sphere.radius, result.sclera_fit.sphere.radius};
        // keep a noisy initialization inside the model invariants
        if (init.cornea_radius >= init.sclera_radius)
            init.cornea_radius = 0.75 * init.sclera_radius;
        const double d = init.center_gap();
        if (!(d > 0) || d >= init.sclera_radius || d + init.cornea_radius <= init.sclera_radius) {
            const Vec3 axis_guess = init.cornea_center - init.sclera_center;
            const double an = norm(axis_guess);
            const Vec3 axis = an > 1e-9 ? axis_guess / an : Vec3{0, 0, 1};
            init.cornea_center =
                init.sclera_center +
                (init.sclera_radius - 0.55 * init.cornea_radius) * axis;
        }
        init.validate();
        result.optim = optimize_two_sphere(init, result.corr, result.masks, rig, options.optim);
    }
    result.timings.emplace_back("optimize", sw.seconds());

    sw.reset();
    result.refine = integrate_refine(result.optim.model, result.corr, result.masks, rig,
                                     result.anchors.samples, options.refine);
    result.point_count = static_cast<long>(result.refine.samples.size());
    result.timings.emplace_back("integrate", sw.seconds());

    if (options.estimate_gaze && !result.single_sphere) {
        sw.reset();
        result.gaze = estimate_axis(result.refine.samples, result.optim.model.to_eye(),
                                    options.axis);
        result.timings.emplace_back("axis", sw.seconds());
    }

    result.timings.emplace_back("total", total.seconds());
    return result;
}

}  // namespace defleye
