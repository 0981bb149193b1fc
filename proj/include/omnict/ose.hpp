#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "omnict/errors.hpp"
#include "omnict/sce.hpp"
#include "omnict/tensor.hpp"
#include "omnict/volume.hpp"

namespace omnict {

// Boolean grid matching the unshuffled token grid dims.
struct TokenMask {
    std::int64_t units = 0, rows = 0, cols = 0;
    std::vector<std::uint8_t> flags;  // scan order (unit, row, col)

    std::int64_t count() const { return units * rows * cols; }
    std::int64_t true_count() const {
        std::int64_t n = 0;
        for (auto f : flags) n += f ? 1 : 0;
        return n;
    }
};

// Voxel-to-token geometry: one unshuffled token covers 3 slices x mK x mK pixels.
struct TokenGeometry {
    std::int64_t patch = 16;  // K
    std::int64_t m = 2;
    std::int64_t n_units = 0;  // N_s
};

struct AggConfig {
    std::int64_t l_c_slice = 81;
    std::int64_t l_c_volume = 90;

    std::int64_t for_modality(Modality m) const {
        return m == Modality::slice ? l_c_slice : l_c_volume;
    }
};

// A token flag is true iff any voxel carrying the organ label lies inside the
// token's receptive field. Voxels in dropped trailing slices never contribute.
inline TokenMask project_mask_to_tokens(const OrganMask& mask, int organ, const TokenGeometry& geom) {
    if (organ < 1 || organ > kMaxOrganLabel)
        throw ValidationError("organ label must be in 1.." + std::to_string(kMaxOrganLabel) +
                              ", got " + std::to_string(organ));
    require_volume_shape(mask.labels, "project_mask_to_tokens");
    const std::int64_t d = mask.labels.extent(0), h = mask.labels.extent(1), w = mask.labels.extent(2);
    const std::int64_t cell = geom.patch * geom.m;
    if (geom.n_units < 1 || d < 3 * geom.n_units || h % cell != 0 || w % cell != 0)
        throw ValidationError("project_mask_to_tokens: mask dims inconsistent with token geometry");

    TokenMask tm;
    tm.units = geom.n_units;
    tm.rows = h / cell;
    tm.cols = w / cell;
    tm.flags.assign(static_cast<std::size_t>(tm.count()), 0);

    const auto label = static_cast<float>(organ);
    const float* src = mask.labels.data.data();
    const std::int64_t zmax = 3 * geom.n_units;
    for (std::int64_t z = 0; z < zmax; ++z) {
        const std::int64_t u = z / 3;
        for (std::int64_t y = 0; y < h; ++y) {
            const std::int64_t r = y / cell;
            const float* row = src + (z * h + y) * w;
            for (std::int64_t x = 0; x < w; ++x) {
                if (row[x] == label) {
                    tm.flags[static_cast<std::size_t>((u * tm.rows + r) * tm.cols + x / cell)] = 1;
                }
            }
        }
    }
    return tm;
}

// Organ token subset in scan order. May be empty.
struct OrganTokens {
    std::int64_t count = 0;
    std::int64_t dim = 0;
    std::vector<float> data;  // count x dim
};

inline OrganTokens select_tokens(const Tensor& flat, const TokenMask& tm) {
    if (flat.rank() != 2) throw ValidationError("select_tokens: expected L x d tokens");
    if (flat.extent(0) != tm.count())
        throw ValidationError("select_tokens: token count " + std::to_string(flat.extent(0)) +
                              " does not match mask size " + std::to_string(tm.count()));
    OrganTokens out;
    out.dim = flat.extent(1);
    for (std::int64_t t = 0; t < tm.count(); ++t) {
        if (tm.flags[static_cast<std::size_t>(t)]) {
            const float* src = flat.data.data() + t * out.dim;
            out.data.insert(out.data.end(), src, src + out.dim);
            ++out.count;
        }
    }
    return out;
}

// Fixed-length aggregation: contiguous-bin mean pooling when L_o >= L_c
// (compression), nearest-index repetition when L_o < L_c (magnification),
// zeros when the organ is absent.
inline Tensor aggregate(const OrganTokens& ot, std::int64_t l_c) {
    if (l_c < 1) throw ValidationError("aggregate: L_c must be >= 1");
    if (ot.count == 0) {
        return Tensor::zeros({l_c, ot.dim > 0 ? ot.dim : 1});
    }
    Tensor out = Tensor::zeros({l_c, ot.dim});
    if (ot.count >= l_c) {
        for (std::int64_t j = 0; j < l_c; ++j) {
            const std::int64_t lo = j * ot.count / l_c;
            const std::int64_t hi = (j + 1) * ot.count / l_c;
            float* dst = out.data.data() + j * ot.dim;
            for (std::int64_t f = 0; f < ot.dim; ++f) {
                double acc = 0.0;
                for (std::int64_t t = lo; t < hi; ++t) acc += static_cast<double>(ot.data[static_cast<std::size_t>(t * ot.dim + f)]);
                dst[f] = static_cast<float>(acc / static_cast<double>(hi - lo));
            }
        }
    } else {
        for (std::int64_t j = 0; j < l_c; ++j) {
            const std::int64_t src = j * ot.count / l_c;
            std::copy(ot.data.begin() + src * ot.dim, ot.data.begin() + (src + 1) * ot.dim,
                      out.data.begin() + j * ot.dim);
        }
    }
    return out;
}

// [global ; local] row concatenation.
inline Tensor fuse_global_local(const Tensor& global, const Tensor& local) {
    if (global.rank() != 2 || local.rank() != 2)
        throw ValidationError("fuse: expected 2-d token matrices");
    if (global.extent(1) != local.extent(1))
        throw ValidationError("fuse: feature dims differ: " + std::to_string(global.extent(1)) +
                              " vs " + std::to_string(local.extent(1)));
    Tensor out = Tensor::zeros({global.extent(0) + local.extent(0), global.extent(1)});
    std::copy(global.data.begin(), global.data.end(), out.data.begin());
    std::copy(local.data.begin(), local.data.end(), out.data.begin() + global.data.size());
    return out;
}

}  // namespace omnict
