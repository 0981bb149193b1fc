#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>

#include "omnict/errors.hpp"
#include "omnict/tensor.hpp"

namespace omnict {

inline constexpr int kMaxOrganLabel = 117;

struct VolumeMeta {
    // (dz, dy, dx) in millimetres.
    std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
    std::string source;
};

// D x H x W intensity volume, HU before windowing, [0,1] after.
struct CTVolume {
    Tensor data;
    VolumeMeta meta;
};

// Co-registered label volume, values 0..117 (0 = background). Stored as
// integer-valued f32 so it shares the OMCT container.
struct OrganMask {
    Tensor labels;
};

inline void require_volume_shape(const Tensor& t, const char* what) {
    if (t.rank() != 3) throw ValidationError(std::string(what) + ": expected a 3-d volume");
}

// clamp((v - lo) / (hi - lo), 0, 1) elementwise.
inline CTVolume window_and_normalize(const CTVolume& v, float lo = -1000.0f, float hi = 1000.0f) {
    if (lo >= hi) throw ValidationError("window: lo must be < hi");
    require_volume_shape(v.data, "window");
    CTVolume out = v;
    const float range = hi - lo;
    for (auto& x : out.data.data) {
        x = std::clamp((x - lo) / range, 0.0f, 1.0f);
    }
    return out;
}

namespace detail {

// Align-corners source coordinate for output index i: i * (S-1) / (T-1), 0 when T == 1.
inline double align_corners_coord(std::int64_t i, std::int64_t src, std::int64_t dst) {
    if (dst == 1) return 0.0;
    return static_cast<double>(i) * static_cast<double>(src - 1) / static_cast<double>(dst - 1);
}

struct LerpIndex {
    std::int64_t lo, hi;
    double frac;
};

inline LerpIndex lerp_index(std::int64_t i, std::int64_t src, std::int64_t dst) {
    const double c = align_corners_coord(i, src, dst);
    auto lo = static_cast<std::int64_t>(std::floor(c));
    if (lo > src - 1) lo = src - 1;
    std::int64_t hi = std::min<std::int64_t>(lo + 1, src - 1);
    return {lo, hi, c - static_cast<double>(lo)};
}

// Nearest index with ties (frac exactly .5) rounding down toward the lower index.
inline std::int64_t nearest_index(std::int64_t i, std::int64_t src, std::int64_t dst) {
    const double c = align_corners_coord(i, src, dst);
    auto idx = static_cast<std::int64_t>(std::ceil(c - 0.5));
    return std::clamp<std::int64_t>(idx, 0, src - 1);
}

}  // namespace detail

inline CTVolume resample_trilinear(const CTVolume& v, std::int64_t td, std::int64_t th, std::int64_t tw) {
    require_volume_shape(v.data, "resample");
    if (td < 1 || th < 1 || tw < 1) throw ValidationError("resample: target dims must be >= 1");
    const std::int64_t sd = v.data.extent(0), sh = v.data.extent(1), sw = v.data.extent(2);

    CTVolume out;
    out.data = Tensor::zeros({td, th, tw});
    out.meta = v.meta;
    out.meta.spacing_mm[0] *= static_cast<double>(sd) / static_cast<double>(td);
    out.meta.spacing_mm[1] *= static_cast<double>(sh) / static_cast<double>(th);
    out.meta.spacing_mm[2] *= static_cast<double>(sw) / static_cast<double>(tw);

    const float* src = v.data.data.data();
    float* dst = out.data.data.data();
    for (std::int64_t z = 0; z < td; ++z) {
        const auto zi = detail::lerp_index(z, sd, td);
        for (std::int64_t y = 0; y < th; ++y) {
            const auto yi = detail::lerp_index(y, sh, th);
            for (std::int64_t x = 0; x < tw; ++x) {
                const auto xi = detail::lerp_index(x, sw, tw);
                double acc = 0.0;
                for (int cz = 0; cz < 2; ++cz) {
                    const std::int64_t zz = cz ? zi.hi : zi.lo;
                    const double wz = cz ? zi.frac : 1.0 - zi.frac;
                    if (wz == 0.0) continue;
                    for (int cy = 0; cy < 2; ++cy) {
                        const std::int64_t yy = cy ? yi.hi : yi.lo;
                        const double wy = cy ? yi.frac : 1.0 - yi.frac;
                        if (wy == 0.0) continue;
                        for (int cx = 0; cx < 2; ++cx) {
                            const std::int64_t xx = cx ? xi.hi : xi.lo;
                            const double wx = cx ? xi.frac : 1.0 - xi.frac;
                            if (wx == 0.0) continue;
                            acc += wz * wy * wx * static_cast<double>(src[(zz * sh + yy) * sw + xx]);
                        }
                    }
                }
                dst[(z * th + y) * tw + x] = static_cast<float>(acc);
            }
        }
    }
    return out;
}

inline OrganMask resample_mask_nearest(const OrganMask& m, std::int64_t td, std::int64_t th, std::int64_t tw) {
    require_volume_shape(m.labels, "resample mask");
    if (td < 1 || th < 1 || tw < 1) throw ValidationError("resample mask: target dims must be >= 1");
    const std::int64_t sd = m.labels.extent(0), sh = m.labels.extent(1), sw = m.labels.extent(2);

    OrganMask out;
    out.labels = Tensor::zeros({td, th, tw});
    const float* src = m.labels.data.data();
    float* dst = out.labels.data.data();
    for (std::int64_t z = 0; z < td; ++z) {
        const std::int64_t zz = detail::nearest_index(z, sd, td);
        for (std::int64_t y = 0; y < th; ++y) {
            const std::int64_t yy = detail::nearest_index(y, sh, th);
            for (std::int64_t x = 0; x < tw; ++x) {
                const std::int64_t xx = detail::nearest_index(x, sw, tw);
                dst[(z * th + y) * tw + x] = src[(zz * sh + yy) * sw + xx];
            }
        }
    }
    return out;
}

inline void validate_mask_labels(const Tensor& labels) {
    for (float v : labels.data) {
        if (v != std::floor(v) || v < 0.0f || v > static_cast<float>(kMaxOrganLabel))
            throw ValidationError("mask: label values must be integers in 0.." +
                                  std::to_string(kMaxOrganLabel));
    }
}

// OMCT ingestion path: 3-d f32 volume plus optional co-registered mask.
inline std::pair<CTVolume, std::optional<OrganMask>> load_raw(
    const std::filesystem::path& volume_path, const std::optional<std::filesystem::path>& mask_path) {
    CTVolume vol;
    vol.data = tensor_read(volume_path);
    require_volume_shape(vol.data, "load_raw volume");
    vol.meta.source = "omct";

    std::optional<OrganMask> mask;
    if (mask_path) {
        OrganMask m;
        m.labels = tensor_read(*mask_path);
        require_volume_shape(m.labels, "load_raw mask");
        if (m.labels.shape != vol.data.shape)
            throw ValidationError("load_raw: mask shape does not match volume shape");
        validate_mask_labels(m.labels);
        mask = std::move(m);
    }
    return {std::move(vol), std::move(mask)};
}

}  // namespace omnict
