#include "defleye/phase.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <map>
#include <mutex>
#include <queue>

namespace defleye {

double wrap_phase(double phi) {
    phi = std::remainder(phi, 2.0 * kPi);  // (-pi, pi] up to the -pi edge
    if (phi <= -kPi) phi += 2.0 * kPi;
    return phi;
}

PhaseMap four_step_phase(const std::array<Image, 4>& frames, FringeDirection direction,
                         const FourStepOptions& options) {
    for (int k = 1; k < 4; ++k)
        if (!frames[k].same_size(frames[0]))
            throw Error("four_step_phase: frame size mismatch");

    PhaseMap map;
    map.width = frames[0].width;
    map.height = frames[0].height;
    map.direction = direction;
    const size_t n = frames[0].size();
    map.phase.assign(n, 0.0);
    map.confidence.assign(n, 0.0);
    map.valid.assign(n, 0);

#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
        const double s = frames[3].data[i] - frames[1].data[i];  // 2B sin(phi)
        const double c = frames[0].data[i] - frames[2].data[i];  // 2B cos(phi)
        const double amplitude = 0.5 * std::hypot(s, c);
        double phi;
        if (options.legacy_ratio_convention)
            phi = std::atan(c == 0.0 ? 0.0 : s / (-c));
        else
            phi = std::atan2(s, c);
        map.phase[i] = wrap_phase(phi);
        map.confidence[i] = amplitude;
        map.valid[i] = amplitude >= options.min_amplitude ? 1 : 0;
        if (!map.valid[i]) map.confidence[i] = 0.0;
    }
    return map;
}

WaveletParams WaveletParams::for_period(double expected_period_px) {
    WaveletParams p;
    p.scale_min = expected_period_px / 3.0 * p.f0;
    p.scale_max = expected_period_px * 3.0 * p.f0;
    return p;
}

std::vector<double> WaveletParams::scales() const {
    std::vector<double> s(scale_count);
    for (int i = 0; i < scale_count; ++i)
        s[i] = scale_min * std::pow(scale_max / scale_min,
                                    static_cast<double>(i) / (scale_count - 1));
    return s;
}

std::vector<double> WaveletParams::orientations() const {
    std::vector<double> t(orientation_count);
    for (int j = 0; j < orientation_count; ++j)
        t[j] = -0.5 * kPi + kPi * static_cast<double>(j) / orientation_count;
    return t;
}

void WaveletParams::validate() const {
    if (scale_count < 8 || orientation_count < 8)
        throw ConfigError("wavelet grid needs >= 8 scales and >= 8 orientations");
    if (truncation_radius < 3.0) throw ConfigError("wavelet truncation radius must be >= 3");
    if (!(scale_min > 0 && scale_max > scale_min))
        throw ConfigError("wavelet scale range is empty");
    if (!(f0 > 0 && fb > 0)) throw ConfigError("wavelet f0 and fb must be positive");
}

namespace {

// One filter-bank entry. x-branch carriers point within 45 degrees of +x,
// y-branch entries are the same orientations rotated onto +y (the "wavelet
// rotated by 90 degrees" pass).
struct BankEntry {
    double dir_x, dir_y;
    double scale;
    double theta;  // carrier direction angle, diagnostics
    bool y_branch;
    bool edge_scale;  // first/last scale of the grid: winner is off-grid
};

std::vector<BankEntry> make_bank(const WaveletParams& params) {
    std::vector<BankEntry> bank;
    for (double theta : params.orientations()) {
        const bool y_branch = !(std::abs(theta) < 0.25 * kPi);
        double dx = std::cos(theta), dy = std::sin(theta);
        if (y_branch && dy < 0) {
            dx = -dx;
            dy = -dy;
        }
        const std::vector<double> scales = params.scales();
        for (size_t si = 0; si < scales.size(); ++si)
            bank.push_back({dx, dy, scales[si], std::atan2(dy, dx), y_branch,
                            si == 0 || si + 1 == scales.size()});
    }
    return bank;
}

// FFTW plans cached per image size; the planner is not thread safe. Plans are
// created with FFTW_ESTIMATE so results are reproducible run to run.
struct FftPlans {
    fftw_plan forward = nullptr;
    fftw_plan backward = nullptr;
};

std::mutex g_fftw_mutex;

FftPlans get_plans(int width, int height) {
    static std::map<std::pair<int, int>, FftPlans> cache;
    std::lock_guard<std::mutex> lock(g_fftw_mutex);
    auto& plans = cache[{width, height}];
    if (!plans.forward) {
        fftw_complex* a = fftw_alloc_complex(static_cast<size_t>(width) * height);
        fftw_complex* b = fftw_alloc_complex(static_cast<size_t>(width) * height);
        plans.forward = fftw_plan_dft_2d(height, width, a, b, FFTW_FORWARD, FFTW_ESTIMATE);
        plans.backward = fftw_plan_dft_2d(height, width, a, b, FFTW_BACKWARD, FFTW_ESTIMATE);
        fftw_free(a);
        fftw_free(b);
    }
    return plans;
}

struct BranchBest {
    std::vector<float> m2, re, im;
    std::vector<uint16_t> entry;
    explicit BranchBest(size_t n) : m2(n, -1.0f), re(n, 0.0f), im(n, 0.0f), entry(n, 0) {}
};

}  // namespace

CwtResult cwt_phase(const Image& image, const WaveletParams& params) {
    params.validate();
    const int w = image.width, h = image.height;
    const size_t n = image.size();
    const std::vector<BankEntry> bank = make_bank(params);

    fftw_complex* buf_in = fftw_alloc_complex(n);
    fftw_complex* spectrum = fftw_alloc_complex(n);
    fftw_complex* masked = fftw_alloc_complex(n);
    fftw_complex* response = fftw_alloc_complex(n);

    const FftPlans plans = get_plans(w, h);
    for (size_t i = 0; i < n; ++i) {
        buf_in[i][0] = image.data[i];
        buf_in[i][1] = 0.0;
    }
    fftw_execute_dft(plans.forward, buf_in, spectrum);

    BranchBest best_x(n), best_y(n);

    const double two_pi = 2.0 * kPi;
    for (size_t e = 0; e < bank.size(); ++e) {
        const BankEntry& entry = bank[e];
        const double k0 = two_pi * params.f0 / entry.scale;
        const double sigma_w = std::sqrt(2.0 / params.fb) / entry.scale;  // rad/px, per axis
        const double cx = k0 * entry.dir_x * w / two_pi;
        const double cy = k0 * entry.dir_y * h / two_pi;
        // support box clamped to one spectral period so wrapped bins are
        // written exactly once
        const double rx = std::min(5.0 * sigma_w * w / two_pi, 0.5 * (w - 1));
        const double ry = std::min(5.0 * sigma_w * h / two_pi, 0.5 * (h - 1));
        const int x_lo = static_cast<int>(std::floor(cx - rx));
        const int x_hi = static_cast<int>(std::ceil(cx + rx));
        const int y_lo = static_cast<int>(std::floor(cy - ry));
        const int y_hi = static_cast<int>(std::ceil(cy + ry));

        std::memset(masked, 0, n * sizeof(fftw_complex));
        // frequency response of the (conjugated) Morlet at this direction/scale
        const double gain = entry.scale * std::sqrt(kPi * params.fb);
        const double decay = params.fb * entry.scale * entry.scale / 4.0;

#pragma omp parallel for schedule(static)
        for (int by = y_lo; by <= y_hi; ++by) {
            const int wy = ((by % h) + h) % h;
            const double omega_y = two_pi * by / h;
            for (int bx = x_lo; bx <= x_hi; ++bx) {
                const int wx = ((bx % w) + w) % w;
                const double omega_x = two_pi * bx / w;
                const double par = omega_x * entry.dir_x + omega_y * entry.dir_y - k0;
                const double perp = -omega_x * entry.dir_y + omega_y * entry.dir_x;
                const double g = gain * std::exp(-decay * (par * par + perp * perp));
                const size_t i = static_cast<size_t>(wy) * w + wx;
                masked[i][0] = spectrum[i][0] * g;
                masked[i][1] = spectrum[i][1] * g;
            }
        }

        fftw_execute_dft(plans.backward, masked, response);

        BranchBest& best = entry.y_branch ? best_y : best_x;
        const double inv_n = 1.0 / static_cast<double>(n);
#pragma omp parallel for schedule(static)
        for (long long i = 0; i < static_cast<long long>(n); ++i) {
            const float re = static_cast<float>(response[i][0] * inv_n);
            const float im = static_cast<float>(response[i][1] * inv_n);
            const float m2 = re * re + im * im;
            if (m2 > best.m2[i]) {
                best.m2[i] = m2;
                best.re[i] = re;
                best.im[i] = im;
                best.entry[i] = static_cast<uint16_t>(e);
            }
        }
    }

    fftw_free(buf_in);
    fftw_free(spectrum);
    fftw_free(masked);
    fftw_free(response);

    CwtResult out;
    for (PhaseMap* m : {&out.x, &out.y}) {
        m->width = w;
        m->height = h;
        m->phase.assign(n, 0.0);
        m->confidence.assign(n, 0.0);
        m->valid.assign(n, 0);
    }
    out.x.direction = FringeDirection::X;
    out.y.direction = FringeDirection::Y;
    out.scale_x.assign(n, 0.0);
    out.scale_y.assign(n, 0.0);
    out.theta_x.assign(n, 0.0);
    out.theta_y.assign(n, 0.0);

    const int border = static_cast<int>(std::ceil(params.truncation_radius * params.scale_max));
    const double sqrt_pi_fb = std::sqrt(kPi * params.fb);

#pragma omp parallel for schedule(static)
    for (int y = 0; y < h; ++y) {
        const bool y_interior = y >= border && y < h - border;
        for (int x = 0; x < w; ++x) {
            const size_t i = static_cast<size_t>(y) * w + x;
            const bool interior = y_interior && x >= border && x < w - border;
            for (int b = 0; b < 2; ++b) {
                const BranchBest& best = b == 0 ? best_x : best_y;
                PhaseMap& map = b == 0 ? out.x : out.y;
                std::vector<double>& scale_map = b == 0 ? out.scale_x : out.scale_y;
                std::vector<double>& theta_map = b == 0 ? out.theta_x : out.theta_y;
                if (best.m2[i] < 0) continue;
                const BankEntry& entry = bank[best.entry[i]];
                const double modulus = std::sqrt(static_cast<double>(best.m2[i]));
                const double amplitude = 2.0 * modulus / (entry.scale * sqrt_pi_fb);
                map.phase[i] = wrap_phase(std::atan2(best.im[i], best.re[i]));
                map.confidence[i] = amplitude;
                scale_map[i] = entry.scale;
                theta_map[i] = entry.theta;
                map.valid[i] =
                    (interior && amplitude >= params.min_amplitude && !entry.edge_scale) ? 1 : 0;
                if (!interior) map.confidence[i] = 0.0;
            }
        }
    }

    if (params.curvature_correction) {
        for (int b = 0; b < 2; ++b) {
            const BranchBest& best = b == 0 ? best_x : best_y;
            PhaseMap& map = b == 0 ? out.x : out.y;

            // winning instantaneous-frequency field (credible winners only)
            std::vector<double> kx(n, 0.0), ky(n, 0.0);
            std::vector<uint8_t> k_ok(n, 0);
#pragma omp parallel for schedule(static)
            for (long long i = 0; i < static_cast<long long>(n); ++i) {
                if (best.m2[i] < 0) continue;
                if (map.confidence[i] < params.min_amplitude) continue;
                const BankEntry& entry = bank[best.entry[i]];
                const double k0 = 2.0 * kPi * params.f0 / entry.scale;
                kx[i] = k0 * entry.dir_x;
                ky[i] = k0 * entry.dir_y;
                k_ok[i] = 1;
            }
            // box smoothing tames the grid quantization of the winners
            const int sr = 5;
            std::vector<double> kxs(n, 0.0), kys(n, 0.0);
#pragma omp parallel for schedule(static)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    double ax = 0, ay = 0;
                    int count = 0;
                    for (int dy = -sr; dy <= sr; ++dy) {
                        const int yy = y + dy;
                        if (yy < 0 || yy >= h) continue;
                        for (int dx = -sr; dx <= sr; ++dx) {
                            const int xx = x + dx;
                            if (xx < 0 || xx >= w) continue;
                            const size_t j = static_cast<size_t>(yy) * w + xx;
                            if (!k_ok[j]) continue;
                            ax += kx[j];
                            ay += ky[j];
                            ++count;
                        }
                    }
                    const size_t i = static_cast<size_t>(y) * w + x;
                    if (count) {
                        kxs[i] = ax / count;
                        kys[i] = ay / count;
                    }
                }

#pragma omp parallel for schedule(static)
            for (int y = sr + 2; y < h - sr - 2; ++y)
                for (int x = sr + 2; x < w - sr - 2; ++x) {
                    const size_t i = static_cast<size_t>(y) * w + x;
                    if (best.m2[i] < 0) continue;
                    const int d = 2;
                    const double huu =
                        (kxs[i + d] - kxs[i - d]) / (2.0 * d);
                    const double hvv = (kys[i + static_cast<size_t>(d) * w] -
                                        kys[i - static_cast<size_t>(d) * w]) /
                                       (2.0 * d);
                    const double huv = 0.5 * ((kxs[i + static_cast<size_t>(d) * w] -
                                               kxs[i - static_cast<size_t>(d) * w]) /
                                                  (2.0 * d) +
                                              (kys[i + d] - kys[i - d]) / (2.0 * d));
                    const double mean_c = 0.5 * (huu + hvv);
                    const double dev = std::sqrt(0.25 * (huu - hvv) * (huu - hvv) + huv * huv);
                    const double l1 = mean_c + dev, l2 = mean_c - dev;
                    const BankEntry& entry = bank[best.entry[i]];
                    const double sigma2 = params.fb * entry.scale * entry.scale / 2.0;
                    const double bias =
                        0.5 * (std::atan(sigma2 * l1) + std::atan(sigma2 * l2));
                    map.phase[i] = wrap_phase(map.phase[i] - bias);
                    // the same chirp deflates the modulus
                    const double gain = std::pow((1.0 + sigma2 * sigma2 * l1 * l1) *
                                                     (1.0 + sigma2 * sigma2 * l2 * l2),
                                                 0.25);
                    map.confidence[i] *= gain;
                }
        }
    }
    return out;
}

std::vector<CwtPixelResult> cwt_phase_reference(const Image& image, const WaveletParams& params,
                                                const std::vector<std::pair<int, int>>& pixels) {
    params.validate();
    const std::vector<BankEntry> bank = make_bank(params);
    std::vector<CwtPixelResult> out;
    const double sqrt_pi_fb = std::sqrt(kPi * params.fb);
    for (const auto& [px, py] : pixels) {
        CwtPixelResult r;
        r.x = px;
        r.y = py;
        double best_x = -1.0, best_y = -1.0;
        for (const BankEntry& entry : bank) {
            const int radius = static_cast<int>(std::ceil(params.truncation_radius * entry.scale));
            const double norm = 1.0 / (entry.scale * sqrt_pi_fb);
            const double k0 = 2.0 * kPi * params.f0 / entry.scale;
            const double inv_fb_s2 = 1.0 / (params.fb * entry.scale * entry.scale);
            std::complex<double> acc(0.0, 0.0);
            for (int dy = -radius; dy <= radius; ++dy) {
                const int yy = py + dy;
                if (yy < 0 || yy >= image.height) continue;
                for (int dx = -radius; dx <= radius; ++dx) {
                    const int xx = px + dx;
                    if (xx < 0 || xx >= image.width) continue;
                    const double par = dx * entry.dir_x + dy * entry.dir_y;
                    const double envelope =
                        std::exp(-(static_cast<double>(dx) * dx + static_cast<double>(dy) * dy) *
                                 inv_fb_s2);
                    const std::complex<double> carrier(std::cos(k0 * par), -std::sin(k0 * par));
                    acc += image.at(xx, yy) * norm * envelope * carrier;
                }
            }
            const double m2 = std::norm(acc);
            double& best = entry.y_branch ? best_y : best_x;
            if (m2 > best) {
                best = m2;
                if (entry.y_branch) {
                    r.phase_y = wrap_phase(std::arg(acc));
                    r.modulus_y = std::abs(acc);
                    r.scale_y = entry.scale;
                    r.theta_y = entry.theta;
                } else {
                    r.phase_x = wrap_phase(std::arg(acc));
                    r.modulus_x = std::abs(acc);
                    r.scale_x = entry.scale;
                    r.theta_x = entry.theta;
                }
            }
        }
        out.push_back(r);
    }
    return out;
}

CorrespondenceMap unwrap(const PhaseMap& phase, int seed_x, int seed_y, double seed_value,
                         double fringe_period) {
    if (seed_x < 0 || seed_y < 0 || seed_x >= phase.width || seed_y >= phase.height ||
        !phase.is_valid(seed_x, seed_y))
        throw Error("unwrap: seed pixel is invalid");

    const int w = phase.width, h = phase.height;
    const size_t n = phase.phase.size();
    std::vector<double> value(n, 0.0);
    std::vector<uint8_t> state(n, 0);  // 0 unknown, 1 queued, 2 done

    struct Item {
        double confidence;
        int x, y;
        bool operator<(const Item& o) const {
            if (confidence != o.confidence) return confidence < o.confidence;
            if (y != o.y) return y > o.y;  // deterministic tie order
            return x > o.x;
        }
    };
    std::priority_queue<Item> heap;

    const size_t seed_i = phase.index(seed_x, seed_y);
    value[seed_i] = phase.phase[seed_i] +
                    2.0 * kPi * std::round((seed_value - phase.phase[seed_i]) / (2.0 * kPi));
    state[seed_i] = 2;

    const int dx[4] = {1, -1, 0, 0};
    const int dy[4] = {0, 0, 1, -1};
    auto push_neighbors = [&](int x, int y) {
        for (int k = 0; k < 4; ++k) {
            const int xx = x + dx[k], yy = y + dy[k];
            if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
            const size_t i = phase.index(xx, yy);
            if (state[i] == 0 && phase.valid[i]) {
                state[i] = 1;
                heap.push({phase.confidence[i], xx, yy});
            }
        }
    };
    push_neighbors(seed_x, seed_y);

    while (!heap.empty()) {
        const Item item = heap.top();
        heap.pop();
        const size_t i = phase.index(item.x, item.y);
        if (state[i] == 2) continue;
        double best_conf = -1.0, ref_value = 0.0;
        for (int k = 0; k < 4; ++k) {
            const int xx = item.x + dx[k], yy = item.y + dy[k];
            if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
            const size_t j = phase.index(xx, yy);
            if (state[j] == 2 && phase.confidence[j] > best_conf) {
                best_conf = phase.confidence[j];
                ref_value = value[j];
            }
        }
        value[i] = phase.phase[i] +
                   2.0 * kPi * std::round((ref_value - phase.phase[i]) / (2.0 * kPi));
        state[i] = 2;
        push_neighbors(item.x, item.y);
    }

    CorrespondenceMap map;
    map.width = w;
    map.height = h;
    map.x.assign(n, std::nan(""));
    map.y.assign(n, std::nan(""));
    map.valid.assign(n, 0);
    const double to_coord = fringe_period / (2.0 * kPi);
    std::vector<double>& coord = phase.direction == FringeDirection::X ? map.x : map.y;
    for (size_t i = 0; i < n; ++i)
        if (state[i] == 2) {
            coord[i] = value[i] * to_coord;
            map.valid[i] = 1;
        }
    return map;
}

CorrespondenceMap merge_correspondence(const CorrespondenceMap& x_map,
                                       const CorrespondenceMap& y_map) {
    if (x_map.width != y_map.width || x_map.height != y_map.height)
        throw Error("merge_correspondence: size mismatch");
    CorrespondenceMap out;
    out.width = x_map.width;
    out.height = x_map.height;
    out.camera_id = x_map.camera_id >= 0 ? x_map.camera_id : y_map.camera_id;
    const size_t n = x_map.x.size();
    out.x = x_map.x;
    out.y = y_map.y;
    out.valid.assign(n, 0);
    for (size_t i = 0; i < n; ++i) out.valid[i] = (x_map.valid[i] && y_map.valid[i]) ? 1 : 0;
    return out;
}

void write_phase_map(const std::string& path, const PhaseMap& map) {
    ChannelStack s;
    s.magic = "DPM1";
    s.width = map.width;
    s.height = map.height;
    s.add("phs ", map.phase);
    s.add("conf", map.confidence);
    s.add("vld ", std::vector<double>(map.valid.begin(), map.valid.end()));
    s.add("dir ", std::vector<double>(map.phase.size(),
                                      map.direction == FringeDirection::X ? 0.0 : 1.0));
    write_channels(path, s);
}

PhaseMap read_phase_map(const std::string& path) {
    const ChannelStack s = read_channels(path, "DPM1");
    PhaseMap map;
    map.width = s.width;
    map.height = s.height;
    map.phase = s.plane("phs ");
    map.confidence = s.plane("conf");
    const auto& v = s.plane("vld ");
    map.valid.assign(v.size(), 0);
    for (size_t i = 0; i < v.size(); ++i) map.valid[i] = v[i] != 0.0;
    map.direction = s.plane("dir ").at(0) == 0.0 ? FringeDirection::X : FringeDirection::Y;
    return map;
}

void write_correspondence(const std::string& path, const CorrespondenceMap& map) {
    ChannelStack s;
    s.magic = "DCM1";
    s.width = map.width;
    s.height = map.height;
    s.add("dspx", map.x);
    s.add("dspy", map.y);
    s.add("vld ", std::vector<double>(map.valid.begin(), map.valid.end()));
    s.add("cam ", std::vector<double>(map.x.size(), map.camera_id));
    write_channels(path, s);
}

CorrespondenceMap read_correspondence(const std::string& path) {
    const ChannelStack s = read_channels(path, "DCM1");
    CorrespondenceMap map;
    map.width = s.width;
    map.height = s.height;
    map.x = s.plane("dspx");
    map.y = s.plane("dspy");
    const auto& v = s.plane("vld ");
    map.valid.assign(v.size(), 0);
    for (size_t i = 0; i < v.size(); ++i) map.valid[i] = v[i] != 0.0;
    map.camera_id = static_cast<int>(s.plane("cam ").at(0));
    return map;
}

}  // namespace defleye
