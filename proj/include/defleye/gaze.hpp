#pragma once

#include <span>
#include <string>
#include <vector>

#include "defleye/reconstruct.hpp"

namespace defleye {

struct GazeEstimate {
    Line3 optical_axis;              // oriented out of the eye (sclera -> cornea)
    double rms_axis_residual = 0.0;  // mm, line-to-line
    int sample_count = 0;
    TwoSphereEye model;              // final sphere model
    bool degenerate_pencil = false;
    bool single_region = false;      // samples covered only one region
};

/// Optical axis from back-traced refined normals, initialized with the line
/// through the model's sphere centers.
GazeEstimate estimate_axis(std::span<const SurfaceSample> samples, const TwoSphereEye& init_model,
                           const AxisFitOptions& options = {});

struct GazeTransform {
    Mat3 rotation;             // visual_dir = rotation * optical_dir
    double fit_residual = 0.0; // rms angular misfit, radians
};

/// Orthogonal Procrustes calibration of the optical-to-visual offset: the
/// rotation best mapping each axis direction onto the unit direction from
/// `eye_position` to its target (SVD, det forced to +1). Needs >= 3
/// non-collinear target directions.
GazeTransform calibrate_kappa(std::span<const Line3> axes, std::span<const Vec3> targets,
                              const Vec3& eye_position);

/// Trial angles (degrees) measured at one rotation-stage position.
struct AngleSeries {
    double position_deg = 0.0;
    std::vector<double> angles_deg;

    double mean_angle() const;
};

/// Mean relative error per position against the 0-degree reference position:
/// eps(a) = || mean(theta_a) - mean(theta_0) | - |a| |.
struct RelativeError {
    double position_deg = 0.0;
    double epsilon_deg = 0.0;
};
std::vector<RelativeError> relative_error(std::span<const AngleSeries> series,
                                          double reference_position_deg = 0.0);

/// Population standard deviation (divisor n) of the trial angles.
double precision(const AngleSeries& series);

/// RMSE of per-trial angles against a ground-truth angle.
double accuracy_rmse(std::span<const double> angles_deg, double ground_truth_deg);

/// Signed angle (degrees) of direction d projected into the plane orthogonal
/// to `stage_axis`, measured from `reference` about the axis.
double projected_angle_deg(const UnitVec3& stage_axis, const Vec3& reference, const Vec3& d);

/// CSV block: per-trial rows (position_deg, trial, theta_deg) followed by one
/// summary row per position carrying epsilon and sigma.
std::string angle_series_csv(std::span<const AngleSeries> series,
                             double reference_position_deg = 0.0);

}  // namespace defleye
