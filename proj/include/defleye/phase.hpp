#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "defleye/image.hpp"
#include "defleye/scene.hpp"

namespace defleye {

/// Wrapped phase for one fringe direction; values in (-pi, pi].
/// Confidence is the local fringe amplitude estimate (B); zero iff invalid.
struct PhaseMap {
    int width = 0, height = 0;
    FringeDirection direction = FringeDirection::X;
    std::vector<double> phase;
    std::vector<double> confidence;
    std::vector<uint8_t> valid;

    size_t index(int x, int y) const { return static_cast<size_t>(y) * width + x; }
    bool is_valid(int x, int y) const { return valid[index(x, y)] != 0; }
};

/// Wrap into (-pi, pi].
double wrap_phase(double phi);

struct FourStepOptions {
    /// Fringe amplitude below this fraction of full scale marks a pixel invalid.
    double min_amplitude = 0.05;
    /// Evaluates the ratio arctan form with the (I3 - I1) denominator order as
    /// printed in some references instead of the quadrant-correct atan2
    /// convention; kept for cross-checking only.
    bool legacy_ratio_convention = false;
};

/// Temporal four-step phase retrieval from frames at shifts 0, pi/2, pi, 3pi/2:
/// phi = atan2(I4 - I2, I1 - I3), confidence = 0.5 * hypot(I4 - I2, I1 - I3).
PhaseMap four_step_phase(const std::array<Image, 4>& frames, FringeDirection direction,
                         const FourStepOptions& options = {});

struct WaveletParams {
    double f0 = 1.0;  // carrier cycles per scale unit
    double fb = 2.0;  // bandwidth parameter
    double scale_min = 6.0, scale_max = 60.0;
    int scale_count = 16;        // geometric grid over [scale_min, scale_max]
    int orientation_count = 16;  // uniform over [-pi/2, pi/2)
    double truncation_radius = 3.0;  // kernel support radius, units of s
    double min_amplitude = 0.05;     // validity threshold on the B estimate
    // A locally chirped carrier multiplies the winning response by
    // det(I - i sigma^2 H)^(-1/2) (H = phase Hessian), deflecting its argument
    // by half the sum of atan(sigma^2 lambda_i). With curved reflectors the
    // deflection reaches tenths of a radian, so it is estimated from the
    // winning-frequency field and removed.
    bool curvature_correction = true;

    /// Grid centered on the expected fringe period (camera px): scales span
    /// [period/3, period*3] * f0.
    static WaveletParams for_period(double expected_period_px);

    std::vector<double> scales() const;
    std::vector<double> orientations() const;
    void validate() const;
};

/// Single-shot phase maps for both axes plus the winning grid parameters
/// (scale in px, orientation in rad), useful for diagnostics and tests.
struct CwtResult {
    PhaseMap x, y;
    std::vector<double> scale_x, scale_y;
    std::vector<double> theta_x, theta_y;
};

/// 2D Morlet wavelet phase retrieval: for every pixel, the (orientation, scale)
/// grid response with maximal modulus picks the local carrier; phi is the
/// argument of that response. Orientations within 45 degrees of the horizontal
/// frequency axis feed phi_x, the rest (rotated by 90 degrees) feed phi_y.
/// A border of width truncation_radius * scale_max is marked invalid.
/// The filter bank is evaluated in the frequency domain; OpenMP parallel.
CwtResult cwt_phase(const Image& image, const WaveletParams& params);

/// Independent reference: direct truncated spatial convolution at selected
/// pixels (serial; for tests and benchmarks).
struct CwtPixelResult {
    int x = 0, y = 0;
    double phase_x = 0, phase_y = 0;
    double modulus_x = 0, modulus_y = 0;
    double scale_x = 0, scale_y = 0;
    double theta_x = 0, theta_y = 0;
};
std::vector<CwtPixelResult> cwt_phase_reference(const Image& image, const WaveletParams& params,
                                                const std::vector<std::pair<int, int>>& pixels);

/// Unwrapped display-camera correspondences (display px). Either axis may be
/// absent (NaN) when built from a single unwrap pass.
struct CorrespondenceMap {
    int width = 0, height = 0;
    int camera_id = -1;
    std::vector<double> x, y;
    std::vector<uint8_t> valid;

    size_t index(int px, int py) const { return static_cast<size_t>(py) * width + px; }
    bool is_valid(int px, int py) const { return valid[index(px, py)] != 0; }
};

/// Confidence-ordered flood-fill unwrapping. Pixels are admitted in decreasing
/// confidence and unwrapped against their best already-unwrapped neighbor by
/// the 2pi multiple minimizing the jump; coordinate = phase * period / 2pi.
/// Valid components not connected to the seed stay invalid.
CorrespondenceMap unwrap(const PhaseMap& phase, int seed_x, int seed_y, double seed_value,
                         double fringe_period);

/// Merges two single-axis maps into one (valid where both are).
CorrespondenceMap merge_correspondence(const CorrespondenceMap& x_map,
                                       const CorrespondenceMap& y_map);

/// PhaseMap <-> "DPM1", CorrespondenceMap <-> "DCM1" containers.
void write_phase_map(const std::string& path, const PhaseMap& map);
PhaseMap read_phase_map(const std::string& path);
void write_correspondence(const std::string& path, const CorrespondenceMap& map);
CorrespondenceMap read_correspondence(const std::string& path);

}  // namespace defleye
