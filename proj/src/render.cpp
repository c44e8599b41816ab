#include "defleye/render.hpp"

#include <algorithm>
#include <cmath>

#include "defleye/rng.hpp"

namespace defleye {

namespace {

struct TraceResult {
    bool surface_hit = false;
    bool display_hit = false;
    RegionHit hit;
    Vec2 display_px;
};

TraceResult trace_pixel(const Scene& scene, const PinholeCamera& cam, int x, int y) {
    TraceResult out;
    const Ray ray = cam.backproject(x, y);
    const auto hit = scene.surface.intersect(ray);
    if (!hit) return out;
    out.surface_hit = true;
    out.hit = *hit;
    const UnitVec3 reflected = reflect(ray.direction, hit->normal);
    const auto disp = ray_plane_intersect(Ray{hit->point, reflected}, scene.display.plane());
    if (!disp) return out;
    const Vec2 px = scene.display.world_to_pixel(disp->point);
    if (!scene.display.in_bounds(px)) return out;
    out.display_hit = true;
    out.display_px = px;
    return out;
}

double shade_pixel(const Scene& scene, const Pattern& pattern, const TraceResult& tr,
                   const CounterRng& rng, uint64_t stream, uint64_t pixel_index,
                   double mask_value) {
    double v = tr.display_hit ? pattern.sample(tr.display_px.x, tr.display_px.y)
                              : scene.background_level;
    if (mask_value > 0.5) v = scene.background_level;
    if (scene.noise.intensity_sigma > 0.0)
        v += scene.noise.intensity_sigma * rng.gaussian(stream, pixel_index);
    v = std::clamp(v, 0.0, 1.0);
    if (scene.noise.quantize_bits > 0) {
        const double levels = static_cast<double>((1ull << scene.noise.quantize_bits) - 1);
        v = std::round(v * levels) / levels;
    }
    return v;
}

template <bool Parallel>
Image render_impl(const Scene& scene, const Pattern& pattern, uint64_t seed, int camera_index,
                  uint64_t frame_index) {
    scene.validate();
    pattern.validate();
    const PinholeCamera& cam = scene.cameras.at(camera_index);
    Image img(cam.width, cam.height);
    const CounterRng rng(seed);
    const uint64_t stream = (frame_index << 8) | static_cast<uint64_t>(camera_index);
    const Image* mask =
        scene.noise.occlusion_mask ? &scene.noise.occlusion_mask.value() : nullptr;

#pragma omp parallel for schedule(dynamic, 8) if (Parallel)
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const TraceResult tr = trace_pixel(scene, cam, x, y);
            const uint64_t idx = static_cast<uint64_t>(y) * cam.width + x;
            const double m = mask && mask->same_size(img) ? mask->at(x, y) : 0.0;
            img.at(x, y) = shade_pixel(scene, pattern, tr, rng, stream, idx, m);
        }
    }
    return img;
}

}  // namespace

Image render(const Scene& scene, const Pattern& pattern, uint64_t seed, int camera_index,
             uint64_t frame_index) {
    return render_impl<true>(scene, pattern, seed, camera_index, frame_index);
}

Image render_reference(const Scene& scene, const Pattern& pattern, uint64_t seed,
                       int camera_index, uint64_t frame_index) {
    return render_impl<false>(scene, pattern, seed, camera_index, frame_index);
}

std::vector<Image> render_all(const Scene& scene, const Pattern& pattern, uint64_t seed,
                              uint64_t frame_index) {
    std::vector<Image> out;
    for (size_t c = 0; c < scene.cameras.size(); ++c)
        out.push_back(render(scene, pattern, seed, static_cast<int>(c), frame_index));
    return out;
}

std::array<Image, 4> render_phase_sequence(const Scene& scene, FringeDirection direction,
                                           double period, uint64_t seed, int camera_index,
                                           uint64_t first_frame_index) {
    std::array<Image, 4> frames;
    for (int k = 0; k < 4; ++k) {
        const Pattern p = Pattern::sinusoid(direction, period, 0.5 * kPi * k);
        frames[k] = render(scene, p, seed, camera_index, first_frame_index + k);
    }
    return frames;
}

GroundTruth ground_truth(const Scene& scene, int camera_index) {
    scene.validate();
    const PinholeCamera& cam = scene.cameras.at(camera_index);
    GroundTruth gt;
    gt.width = cam.width;
    gt.height = cam.height;
    const size_t n = static_cast<size_t>(cam.width) * cam.height;
    gt.point.resize(n);
    gt.normal.resize(n);
    gt.display_x.assign(n, 0.0);
    gt.display_y.assign(n, 0.0);
    gt.region.assign(n, static_cast<uint8_t>(Region::Background));
    gt.valid.assign(n, 0);

#pragma omp parallel for schedule(dynamic, 8)
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const TraceResult tr = trace_pixel(scene, cam, x, y);
            const size_t i = gt.index(x, y);
            if (!tr.surface_hit) continue;
            gt.point[i] = tr.hit.point;
            gt.normal[i] = tr.hit.normal.vec();
            gt.region[i] = static_cast<uint8_t>(tr.hit.region);
            if (tr.display_hit) {
                gt.display_x[i] = tr.display_px.x;
                gt.display_y[i] = tr.display_px.y;
                gt.valid[i] = 1;
            }
        }
    }
    return gt;
}

std::vector<long> coverage_counts(const Scene& scene) {
    std::vector<long> counts;
    for (size_t c = 0; c < scene.cameras.size(); ++c) {
        const GroundTruth gt = ground_truth(scene, static_cast<int>(c));
        counts.push_back(std::count(gt.valid.begin(), gt.valid.end(), uint8_t{1}));
    }
    return counts;
}

const char* region_name(Region r) {
    switch (r) {
        case Region::Background: return "background";
        case Region::Cornea: return "cornea";
        case Region::Sclera: return "sclera";
    }
    return "?";
}

void write_ground_truth(const std::string& path, const GroundTruth& gt) {
    ChannelStack s;
    s.magic = "DGT1";
    s.width = gt.width;
    s.height = gt.height;
    const size_t n = gt.point.size();
    std::vector<double> px(n), py(n), pz(n), nx(n), ny(n), nz(n), rg(n), vd(n);
    for (size_t i = 0; i < n; ++i) {
        px[i] = gt.point[i].x;
        py[i] = gt.point[i].y;
        pz[i] = gt.point[i].z;
        nx[i] = gt.normal[i].x;
        ny[i] = gt.normal[i].y;
        nz[i] = gt.normal[i].z;
        rg[i] = gt.region[i];
        vd[i] = gt.valid[i];
    }
    s.add("px  ", std::move(px));
    s.add("py  ", std::move(py));
    s.add("pz  ", std::move(pz));
    s.add("nx  ", std::move(nx));
    s.add("ny  ", std::move(ny));
    s.add("nz  ", std::move(nz));
    s.add("dx  ", gt.display_x);
    s.add("dy  ", gt.display_y);
    s.add("reg ", std::move(rg));
    s.add("vld ", std::move(vd));
    write_channels(path, s);
}

GroundTruth read_ground_truth(const std::string& path) {
    const ChannelStack s = read_channels(path, "DGT1");
    GroundTruth gt;
    gt.width = s.width;
    gt.height = s.height;
    const size_t n = static_cast<size_t>(s.width) * s.height;
    gt.point.resize(n);
    gt.normal.resize(n);
    gt.display_x = s.plane("dx  ");
    gt.display_y = s.plane("dy  ");
    gt.region.resize(n);
    gt.valid.resize(n);
    const auto &px = s.plane("px  "), &py = s.plane("py  "), &pz = s.plane("pz  ");
    const auto &nx = s.plane("nx  "), &ny = s.plane("ny  "), &nz = s.plane("nz  ");
    const auto &rg = s.plane("reg "), &vd = s.plane("vld ");
    for (size_t i = 0; i < n; ++i) {
        gt.point[i] = {px[i], py[i], pz[i]};
        gt.normal[i] = {nx[i], ny[i], nz[i]};
        gt.region[i] = static_cast<uint8_t>(rg[i]);
        gt.valid[i] = static_cast<uint8_t>(vd[i]);
    }
    return gt;
}

}  // namespace defleye
