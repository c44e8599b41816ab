#include "defleye/gaze.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "defleye/util.hpp"

namespace defleye {

GazeEstimate estimate_axis(std::span<const SurfaceSample> samples, const TwoSphereEye& init_model,
                           const AxisFitOptions& options) {
    if (samples.size() < 100)
        throw DegenerateGeometry("estimate_axis: need at least 100 samples");

    std::vector<Line3> lines;
    lines.reserve(samples.size());
    bool has_cornea = false, has_sclera = false;
    for (const SurfaceSample& s : samples) {
        const UnitVec3& n = s.has_refined_normal ? s.refined_normal : s.normal;
        lines.emplace_back(s.point, -n);
        if (s.region == Region::Cornea) has_cornea = true;
        if (s.region == Region::Sclera) has_sclera = true;
    }

    const Line3 init(init_model.sclera_center, init_model.axis());
    const AxisFit fit = best_fit_axis(lines, init, options);

    GazeEstimate out;
    out.optical_axis = fit.axis;
    // orient out of the eye
    if (dot(fit.axis.direction().vec(), init_model.axis().vec()) < 0)
        out.optical_axis = Line3(fit.axis.point(), -fit.axis.direction());
    out.rms_axis_residual = fit.rms_distance;
    out.sample_count = static_cast<int>(samples.size());
    out.model = init_model;
    out.degenerate_pencil = fit.degenerate_pencil;
    out.single_region = !(has_cornea && has_sclera);
    return out;
}

GazeTransform calibrate_kappa(std::span<const Line3> axes, std::span<const Vec3> targets,
                              const Vec3& eye_position) {
    if (axes.size() != targets.size() || axes.size() < 3)
        throw DegenerateGeometry("calibrate_kappa: need >= 3 matched axis/target pairs");

    Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
    std::vector<Eigen::Vector3d> ds, ts;
    for (size_t i = 0; i < axes.size(); ++i) {
        const Vec3 d = axes[i].direction().vec();
        Vec3 t = targets[i] - eye_position;
        const double tn = norm(t);
        if (tn < 1e-9) throw DegenerateGeometry("calibrate_kappa: target at the eye position");
        t = t / tn;
        ds.emplace_back(d.x, d.y, d.z);
        ts.emplace_back(t.x, t.y, t.z);
        h += ts.back() * ds.back().transpose();
    }

    Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    if (svd.singularValues()(1) < 1e-9)
        throw DegenerateGeometry("calibrate_kappa: degenerate target directions (rank < 2)");
    Eigen::Matrix3d s = Eigen::Matrix3d::Identity();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) s(2, 2) = -1.0;
    const Eigen::Matrix3d r = svd.matrixU() * s * svd.matrixV().transpose();

    GazeTransform out;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) out.rotation(i, j) = r(i, j);

    std::vector<double> errs;
    for (size_t i = 0; i < ds.size(); ++i) {
        const Eigen::Vector3d mapped = r * ds[i];
        errs.push_back(angle_between({mapped(0), mapped(1), mapped(2)},
                                     {ts[i](0), ts[i](1), ts[i](2)}));
    }
    out.fit_residual = rms(errs);
    return out;
}

double AngleSeries::mean_angle() const { return mean(angles_deg); }

std::vector<RelativeError> relative_error(std::span<const AngleSeries> series,
                                          double reference_position_deg) {
    const AngleSeries* ref = nullptr;
    for (const AngleSeries& s : series)
        if (s.position_deg == reference_position_deg) ref = &s;
    if (!ref) throw Error("relative_error: missing reference position series");
    const double theta0 = ref->mean_angle();
    std::vector<RelativeError> out;
    for (const AngleSeries& s : series)
        out.push_back({s.position_deg,
                       std::abs(std::abs(s.mean_angle() - theta0) - std::abs(s.position_deg))});
    return out;
}

double precision(const AngleSeries& series) {
    if (series.angles_deg.size() < 2)
        throw Error("precision: need at least two trials");
    return stddev_population(series.angles_deg);
}

double accuracy_rmse(std::span<const double> angles_deg, double ground_truth_deg) {
    if (angles_deg.empty()) throw Error("accuracy_rmse: empty series");
    double ss = 0.0;
    for (double a : angles_deg) ss += (a - ground_truth_deg) * (a - ground_truth_deg);
    return std::sqrt(ss / static_cast<double>(angles_deg.size()));
}

double projected_angle_deg(const UnitVec3& stage_axis, const Vec3& reference, const Vec3& d) {
    const Vec3 a = stage_axis.vec();
    Vec3 ref = reference - dot(reference, a) * a;
    const double rn = norm(ref);
    if (rn < 1e-12) throw DegenerateGeometry("projected_angle: reference parallel to the axis");
    ref = ref / rn;
    const Vec3 w = cross(a, ref);
    const Vec3 p = d - dot(d, a) * a;
    return rad_to_deg(std::atan2(dot(p, w), dot(p, ref)));
}

std::string angle_series_csv(std::span<const AngleSeries> series,
                             double reference_position_deg) {
    const auto eps = relative_error(series, reference_position_deg);
    std::string out = "position_deg,trial,theta_deg,epsilon_deg,sigma_deg\n";
    for (size_t i = 0; i < series.size(); ++i) {
        const AngleSeries& s = series[i];
        for (size_t k = 0; k < s.angles_deg.size(); ++k)
            out += csv_number(s.position_deg, 3) + "," + std::to_string(k) + "," +
                   csv_number(s.angles_deg[k]) + ",,\n";
        out += csv_number(s.position_deg, 3) + ",summary," + csv_number(s.mean_angle()) + "," +
               csv_number(eps[i].epsilon_deg) + "," + csv_number(precision(s)) + "\n";
    }
    return out;
}

}  // namespace defleye
