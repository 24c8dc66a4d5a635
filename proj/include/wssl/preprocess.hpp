#ifndef WSSL_PREPROCESS_HPP
#define WSSL_PREPROCESS_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>

#include "wssl/core.hpp"
#include "wssl/rng.hpp"

namespace wssl::preprocess {

struct RoiSpec {
    int margin_x = 32, margin_y = 32, margin_z = 4;
    Shape3 target_shape{96, 96, 64};

    void validate() const {
        if (margin_x < 0 || margin_y < 0 || margin_z < 0)
            throw std::invalid_argument("RoiSpec: margins must be >= 0");
        if (target_shape.x < 4 || target_shape.y < 4 || target_shape.z < 4)
            throw std::invalid_argument("RoiSpec: target_shape must be >= 4");
    }
};

struct AugmentSpec {
    bool enabled = true;
    double rotation_max_deg = 15.0;          // about the z-axis only
    double scale_min = 0.9, scale_max = 1.1; // in-plane, preserves z bins
    bool flip_x = true, flip_y = true;
    double intensity_scale_min = 0.9, intensity_scale_max = 1.1;

    void validate() const {
        if (scale_min <= 0 || scale_max >= 2 || scale_min > scale_max)
            throw std::invalid_argument("AugmentSpec: scale_range must be within (0,2)");
        if (rotation_max_deg < 0)
            throw std::invalid_argument("AugmentSpec: rotation_max_deg must be >= 0");
    }
};

struct CropBox {
    int x0 = 0, x1 = 0, y0 = 0, y1 = 0, z0 = 0, z1 = 0;  // inclusive
    int nx() const { return x1 - x0 + 1; }
    int ny() const { return y1 - y0 + 1; }
    int nz() const { return z1 - z0 + 1; }
};

// Tight bounding box of the positive voxels, expanded by the ROI margins and
// clamped to the grid.
inline CropBox roi_box(const Mask& organ, const RoiSpec& spec) {
    spec.validate();
    CropBox b{organ.nx, -1, organ.ny, -1, organ.nz, -1};
    for (int z = 0; z < organ.nz; ++z)
        for (int y = 0; y < organ.ny; ++y)
            for (int x = 0; x < organ.nx; ++x)
                if (organ.at(x, y, z)) {
                    b.x0 = std::min(b.x0, x);
                    b.x1 = std::max(b.x1, x);
                    b.y0 = std::min(b.y0, y);
                    b.y1 = std::max(b.y1, y);
                    b.z0 = std::min(b.z0, z);
                    b.z1 = std::max(b.z1, z);
                }
    if (b.x1 < 0) throw std::invalid_argument("extract_roi: empty organ mask");
    b.x0 = std::max(0, b.x0 - spec.margin_x);
    b.y0 = std::max(0, b.y0 - spec.margin_y);
    b.z0 = std::max(0, b.z0 - spec.margin_z);
    b.x1 = std::min(organ.nx - 1, b.x1 + spec.margin_x);
    b.y1 = std::min(organ.ny - 1, b.y1 + spec.margin_y);
    b.z1 = std::min(organ.nz - 1, b.z1 + spec.margin_z);
    return b;
}

template <typename T>
inline Grid3<T> crop(const Grid3<T>& g, const CropBox& b) {
    Grid3<T> out(b.nx(), b.ny(), b.nz());
    for (int z = 0; z < out.nz; ++z)
        for (int y = 0; y < out.ny; ++y)
            for (int x = 0; x < out.nx; ++x)
                out.at(x, y, z) = g.at(b.x0 + x, b.y0 + y, b.z0 + z);
    return out;
}

struct RoiResult {
    Volume volume;
    Mask organ_mask;
    std::optional<Mask> tumor_mask;
    CropBox box;
};

inline RoiResult extract_roi(const Volume& volume, const Mask& organ,
                             const Mask* tumor, const RoiSpec& spec) {
    if (!volume.same_shape(organ) || (tumor && !volume.same_shape(*tumor)))
        throw std::invalid_argument("extract_roi: shape mismatch");
    CropBox b = roi_box(organ, spec);
    RoiResult r;
    r.box = b;
    r.volume = crop(volume, b);
    r.organ_mask = crop(organ, b);
    if (tumor) r.tumor_mask = crop(*tumor, b);
    return r;
}

namespace detail {

// Half-pixel-center source coordinate for destination index i.
inline double src_coord(int i, int n_dst, int n_src) {
    return (i + 0.5) * static_cast<double>(n_src) / n_dst - 0.5;
}

inline double sample_trilinear(const Volume& v, double x, double y, double z,
                               double fill) {
    if (x < -0.5 || y < -0.5 || z < -0.5 || x > v.nx - 0.5 || y > v.ny - 0.5 ||
        z > v.nz - 0.5)
        return fill;
    auto clampd = [](double t, int n) {
        return std::min(std::max(t, 0.0), static_cast<double>(n - 1));
    };
    x = clampd(x, v.nx);
    y = clampd(y, v.ny);
    z = clampd(z, v.nz);
    int x0 = static_cast<int>(x), y0 = static_cast<int>(y), z0 = static_cast<int>(z);
    int x1 = std::min(x0 + 1, v.nx - 1), y1 = std::min(y0 + 1, v.ny - 1),
        z1 = std::min(z0 + 1, v.nz - 1);
    double fx = x - x0, fy = y - y0, fz = z - z0;
    double c00 = v.at(x0, y0, z0) * (1 - fx) + v.at(x1, y0, z0) * fx;
    double c10 = v.at(x0, y1, z0) * (1 - fx) + v.at(x1, y1, z0) * fx;
    double c01 = v.at(x0, y0, z1) * (1 - fx) + v.at(x1, y0, z1) * fx;
    double c11 = v.at(x0, y1, z1) * (1 - fx) + v.at(x1, y1, z1) * fx;
    double c0 = c00 * (1 - fy) + c10 * fy;
    double c1 = c01 * (1 - fy) + c11 * fy;
    return c0 * (1 - fz) + c1 * fz;
}

}  // namespace detail

inline Volume resize_trilinear(const Volume& v, Shape3 target) {
    if (v.nx < 2 || v.ny < 2 || v.nz < 2 || target.x < 2 || target.y < 2 ||
        target.z < 2)
        throw std::invalid_argument("resize_trilinear: shapes must be >= 2 per axis");
    Volume out(target.x, target.y, target.z);
    for (int z = 0; z < target.z; ++z) {
        double sz = std::clamp(detail::src_coord(z, target.z, v.nz), 0.0,
                               static_cast<double>(v.nz - 1));
        for (int y = 0; y < target.y; ++y) {
            double sy = std::clamp(detail::src_coord(y, target.y, v.ny), 0.0,
                                   static_cast<double>(v.ny - 1));
            for (int x = 0; x < target.x; ++x) {
                double sx = std::clamp(detail::src_coord(x, target.x, v.nx), 0.0,
                                       static_cast<double>(v.nx - 1));
                out.at(x, y, z) = detail::sample_trilinear(v, sx, sy, sz, 0.0);
            }
        }
    }
    return out;
}

inline Mask resize_nearest(const Mask& m, Shape3 target) {
    if (m.nx < 2 || m.ny < 2 || m.nz < 2 || target.x < 2 || target.y < 2 ||
        target.z < 2)
        throw std::invalid_argument("resize_nearest: shapes must be >= 2 per axis");
    Mask out(target.x, target.y, target.z);
    auto nearest = [](int i, int n_dst, int n_src) {
        int s = static_cast<int>(std::floor((i + 0.5) * static_cast<double>(n_src) / n_dst));
        return std::clamp(s, 0, n_src - 1);
    };
    for (int z = 0; z < target.z; ++z) {
        int sz = nearest(z, target.z, m.nz);
        for (int y = 0; y < target.y; ++y) {
            int sy = nearest(y, target.y, m.ny);
            for (int x = 0; x < target.x; ++x)
                out.at(x, y, z) = m.at(nearest(x, target.x, m.nx), sy, sz) ? 1 : 0;
        }
    }
    return out;
}

// Zero-mean unit-variance (population) normalization in place. Returns false
// and zeroes the volume when the variance falls under the 1e-8 floor.
inline bool normalize(Volume& v) {
    double mean = 0.0;
    for (double x : v.data) mean += x;
    mean /= static_cast<double>(v.data.size());
    double var = 0.0;
    for (double x : v.data) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.data.size());
    if (var < 1e-8) {
        std::fill(v.data.begin(), v.data.end(), 0.0);
        return false;
    }
    double inv = 1.0 / std::sqrt(var);
    for (auto& x : v.data) x = (x - mean) * inv;
    return true;
}

// Random augmentation: z-axis rotation, in-plane scale, x/y flips applied to
// volume and mask through one shared inverse mapping; intensity scale applied
// to the volume only. Deterministic per seed.
inline void augment(Volume& volume, Mask& mask, const AugmentSpec& spec,
                    std::uint64_t seed) {
    if (!volume.same_shape(mask))
        throw std::invalid_argument("augment: volume/mask shape mismatch");
    if (!spec.enabled) return;
    spec.validate();

    Rng rng(seed);
    double angle = rng.uniform(-spec.rotation_max_deg, spec.rotation_max_deg) *
                   M_PI / 180.0;
    double scale = rng.uniform(spec.scale_min, spec.scale_max);
    bool fx = spec.flip_x && rng.bernoulli(0.5);
    bool fy = spec.flip_y && rng.bernoulli(0.5);
    double gain = rng.uniform(spec.intensity_scale_min, spec.intensity_scale_max);

    double fill = volume.data.empty() ? 0.0 : *std::min_element(volume.data.begin(),
                                                                volume.data.end());
    double cx = 0.5 * (volume.nx - 1), cy = 0.5 * (volume.ny - 1);
    double ca = std::cos(-angle), sa = std::sin(-angle);

    Volume out_v(volume.nx, volume.ny, volume.nz);
    Mask out_m(mask.nx, mask.ny, mask.nz);
    for (int z = 0; z < volume.nz; ++z)
        for (int y = 0; y < volume.ny; ++y)
            for (int x = 0; x < volume.nx; ++x) {
                double px = x - cx, py = y - cy;
                // inverse of (flip -> rotate -> scale)
                double qx = (ca * px - sa * py) / scale;
                double qy = (sa * px + ca * py) / scale;
                if (fx) qx = -qx;
                if (fy) qy = -qy;
                double sx = qx + cx, sy = qy + cy;
                out_v.at(x, y, z) =
                    gain * detail::sample_trilinear(volume, sx, sy, z, fill);
                int mx = static_cast<int>(std::lround(sx));
                int my = static_cast<int>(std::lround(sy));
                bool inside = mx >= 0 && mx < mask.nx && my >= 0 && my < mask.ny;
                out_m.at(x, y, z) = inside && mask.at(mx, my, z) ? 1 : 0;
            }
    volume = std::move(out_v);
    mask = std::move(out_m);
}

}  // namespace wssl::preprocess

#endif
