#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "omnict/errors.hpp"
#include "omnict/tensor.hpp"
#include "omnict/volume.hpp"

namespace omnict {

enum class Modality { slice, volume };

inline const char* to_string(Modality m) { return m == Modality::slice ? "slice" : "volume"; }

inline Modality modality_from_string(const std::string& s) {
    if (s == "slice") return Modality::slice;
    if (s == "volume") return Modality::volume;
    throw ValidationError("unknown modality: " + s);
}

// N_s reassembled units of 3 x H x W each.
struct UnitStack {
    Tensor units;
    Modality modality = Modality::volume;

    std::int64_t count() const { return units.extent(0); }
    std::int64_t height() const { return units.extent(2); }
    std::int64_t width() const { return units.extent(3); }
};

// Groups 3 adjacent slices along z into one 3-channel unit; the trailing
// D mod 3 slices are dropped.
inline UnitStack compose_units(const CTVolume& v) {
    require_volume_shape(v.data, "compose_units");
    const std::int64_t d = v.data.extent(0), h = v.data.extent(1), w = v.data.extent(2);
    if (d < 3) throw ValidationError("compose_units: need at least 3 slices, got " + std::to_string(d));
    const std::int64_t ns = d / 3;

    UnitStack out;
    out.modality = Modality::volume;
    out.units = Tensor::zeros({ns, 3, h, w});
    const std::int64_t plane = h * w;
    for (std::int64_t u = 0; u < ns; ++u) {
        for (std::int64_t c = 0; c < 3; ++c) {
            const float* src = v.data.data.data() + (3 * u + c) * plane;
            float* dst = out.units.data.data() + (u * 3 + c) * plane;
            std::copy(src, src + plane, dst);
        }
    }
    return out;
}

// Each source slice becomes one unit with the slice replicated on all 3 channels.
inline UnitStack replicate_slices(const Tensor& slices) {
    if (slices.rank() != 3) throw ValidationError("replicate_slices: expected n x H x W");
    const std::int64_t n = slices.extent(0), h = slices.extent(1), w = slices.extent(2);

    UnitStack out;
    out.modality = Modality::slice;
    out.units = Tensor::zeros({n, 3, h, w});
    const std::int64_t plane = h * w;
    for (std::int64_t u = 0; u < n; ++u) {
        const float* src = slices.data.data() + u * plane;
        for (std::int64_t c = 0; c < 3; ++c) {
            std::copy(src, src + plane, out.units.data.data() + (u * 3 + c) * plane);
        }
    }
    return out;
}

// Linear patch encoder: one 3 x K x K patch -> d_v token. Frozen after init.
struct EncoderParams {
    std::int64_t patch = 16;   // K
    std::int64_t d_v = 64;
    Tensor w;                  // d_v x 3K^2
    Tensor b;                  // d_v
};

// Xavier-uniform bound sqrt(6 / (fan_in + fan_out)).
inline double xavier_bound(std::int64_t fan_in, std::int64_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

inline Tensor xavier_tensor(std::vector<std::int64_t> shape, std::int64_t fan_in, std::int64_t fan_out,
                            Prng& rng, double gain = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    const double bound = gain * xavier_bound(fan_in, fan_out);
    for (auto& v : t.data) v = static_cast<float>(rng.uniform1(-bound, bound));
    return t;
}

inline EncoderParams make_encoder_params(std::int64_t patch, std::int64_t d_v, Prng& rng) {
    if (patch < 1 || d_v < 1) throw ValidationError("encoder params: patch and d_v must be >= 1");
    EncoderParams p;
    p.patch = patch;
    p.d_v = d_v;
    const std::int64_t fan_in = 3 * patch * patch;
    p.w = xavier_tensor({d_v, fan_in}, fan_in, d_v, rng);
    p.b = Tensor::zeros({d_v});
    return p;
}

enum class GridStage { encoded, positioned, unshuffled };

// N_s x H' x W' x d feature grid; d depends on the stage.
struct TokenGrid {
    Tensor data;
    GridStage stage = GridStage::encoded;
    Modality modality = Modality::volume;

    std::int64_t units() const { return data.extent(0); }
    std::int64_t rows() const { return data.extent(1); }
    std::int64_t cols() const { return data.extent(2); }
    std::int64_t dim() const { return data.extent(3); }
};

// Eq-style patch tokenization: flatten each non-overlapping 3 x K x K patch
// channel-major then row-major, apply the linear encoder.
inline TokenGrid encode_patches(const UnitStack& u, const EncoderParams& p) {
    const std::int64_t ns = u.count(), h = u.height(), w = u.width(), k = p.patch;
    if (h % k != 0 || w % k != 0)
        throw ValidationError("encode_patches: patch size " + std::to_string(k) +
                              " does not divide " + std::to_string(h) + "x" + std::to_string(w));
    const std::int64_t hp = h / k, wp = w / k, din = 3 * k * k;

    TokenGrid g;
    g.stage = GridStage::encoded;
    g.modality = u.modality;
    g.data = Tensor::zeros({ns, hp, wp, p.d_v});

    std::vector<double> patch(static_cast<std::size_t>(din));
    for (std::int64_t i = 0; i < ns; ++i) {
        for (std::int64_t r = 0; r < hp; ++r) {
            for (std::int64_t c = 0; c < wp; ++c) {
                std::size_t n = 0;
                for (std::int64_t ch = 0; ch < 3; ++ch) {
                    for (std::int64_t dr = 0; dr < k; ++dr) {
                        const float* row = u.units.data.data() +
                                           ((i * 3 + ch) * h + r * k + dr) * w + c * k;
                        for (std::int64_t dc = 0; dc < k; ++dc) patch[n++] = row[dc];
                    }
                }
                float* out = g.data.data.data() + ((i * hp + r) * wp + c) * p.d_v;
                for (std::int64_t o = 0; o < p.d_v; ++o) {
                    const float* wrow = p.w.data.data() + o * din;
                    double acc = p.b.data[static_cast<std::size_t>(o)];
                    for (std::int64_t s = 0; s < din; ++s) acc += static_cast<double>(wrow[s]) * patch[static_cast<std::size_t>(s)];
                    out[o] = static_cast<float>(acc);
                }
            }
        }
    }
    return g;
}

// Sinusoidal tables along depth, height, width of the token grid.
struct TpeTables {
    Tensor depth;   // N_s x d_z
    Tensor height;  // H' x d_y
    Tensor width;   // W' x d_x
};

namespace detail {

inline Tensor sinusoid_table(std::int64_t len, std::int64_t dim) {
    if (dim < 2 || dim % 2 != 0) throw ValidationError("tpe: axis dim must be even and >= 2");
    Tensor t = Tensor::zeros({len, dim});
    for (std::int64_t p = 0; p < len; ++p) {
        for (std::int64_t i = 0; i < dim / 2; ++i) {
            const double angle = static_cast<double>(p) /
                                 std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(dim));
            t.at({p, 2 * i}) = static_cast<float>(std::sin(angle));
            t.at({p, 2 * i + 1}) = static_cast<float>(std::cos(angle));
        }
    }
    return t;
}

}  // namespace detail

inline TpeTables build_tpe(std::int64_t ns, std::int64_t hp, std::int64_t wp, std::int64_t dz,
                           std::int64_t dy, std::int64_t dx) {
    return {detail::sinusoid_table(ns, dz), detail::sinusoid_table(hp, dy),
            detail::sinusoid_table(wp, dx)};
}

// Concatenate [features | depth PE | height PE | width PE] per token.
inline TokenGrid apply_tpe(const TokenGrid& g, const TpeTables& t) {
    if (g.stage != GridStage::encoded) throw ValidationError("apply_tpe: grid must be at the encoded stage");
    if (t.depth.extent(0) != g.units() || t.height.extent(0) != g.rows() || t.width.extent(0) != g.cols())
        throw ValidationError("apply_tpe: table lengths do not match grid dims");
    const std::int64_t dv = g.dim(), dz = t.depth.extent(1), dy = t.height.extent(1), dx = t.width.extent(1);
    const std::int64_t dout = dv + dz + dy + dx;

    TokenGrid out;
    out.stage = GridStage::positioned;
    out.modality = g.modality;
    out.data = Tensor::zeros({g.units(), g.rows(), g.cols(), dout});
    for (std::int64_t i = 0; i < g.units(); ++i) {
        for (std::int64_t r = 0; r < g.rows(); ++r) {
            for (std::int64_t c = 0; c < g.cols(); ++c) {
                float* dst = out.data.data.data() + ((i * g.rows() + r) * g.cols() + c) * dout;
                const float* src = g.data.data.data() + ((i * g.rows() + r) * g.cols() + c) * dv;
                std::copy(src, src + dv, dst);
                std::copy(t.depth.data.data() + i * dz, t.depth.data.data() + (i + 1) * dz, dst + dv);
                std::copy(t.height.data.data() + r * dy, t.height.data.data() + (r + 1) * dy, dst + dv + dz);
                std::copy(t.width.data.data() + c * dx, t.width.data.data() + (c + 1) * dx, dst + dv + dz + dy);
            }
        }
    }
    return out;
}

// Merge each m x m spatial block of tokens into one token; feature vectors of
// the block concatenate row-major. m = 1 is mandatory for slice inputs.
inline TokenGrid unshuffle(const TokenGrid& g, std::int64_t m) {
    if (g.stage != GridStage::positioned)
        throw ValidationError("unshuffle: grid must be at the positioned stage");
    if (m < 1) throw ValidationError("unshuffle: m must be >= 1");
    if (m > 1 && g.modality == Modality::slice)
        throw ValidationError("unshuffle: m must be 1 for slice inputs");
    if (g.rows() % m != 0 || g.cols() % m != 0)
        throw ValidationError("unshuffle: m does not divide the grid dims");
    const std::int64_t d = g.dim(), hr = g.rows() / m, wr = g.cols() / m;

    TokenGrid out;
    out.stage = GridStage::unshuffled;
    out.modality = g.modality;
    out.data = Tensor::zeros({g.units(), hr, wr, d * m * m});
    for (std::int64_t i = 0; i < g.units(); ++i) {
        for (std::int64_t r = 0; r < hr; ++r) {
            for (std::int64_t c = 0; c < wr; ++c) {
                float* dst = out.data.data.data() + ((i * hr + r) * wr + c) * d * m * m;
                for (std::int64_t br = 0; br < m; ++br) {
                    for (std::int64_t bc = 0; bc < m; ++bc) {
                        const float* src = g.data.data.data() +
                                           ((i * g.rows() + r * m + br) * g.cols() + c * m + bc) * d;
                        std::copy(src, src + d, dst + (br * m + bc) * d);
                    }
                }
            }
        }
    }
    return out;
}

// Exact inverse of unshuffle for the same m.
inline TokenGrid unshuffle_inverse(const TokenGrid& g, std::int64_t m) {
    if (g.stage != GridStage::unshuffled)
        throw ValidationError("unshuffle_inverse: grid must be at the unshuffled stage");
    if (m < 1 || g.dim() % (m * m) != 0)
        throw ValidationError("unshuffle_inverse: feature dim is not divisible by m^2");
    const std::int64_t d = g.dim() / (m * m);

    TokenGrid out;
    out.stage = GridStage::positioned;
    out.modality = g.modality;
    out.data = Tensor::zeros({g.units(), g.rows() * m, g.cols() * m, d});
    for (std::int64_t i = 0; i < g.units(); ++i) {
        for (std::int64_t r = 0; r < g.rows(); ++r) {
            for (std::int64_t c = 0; c < g.cols(); ++c) {
                const float* src = g.data.data.data() + ((i * g.rows() + r) * g.cols() + c) * g.dim();
                for (std::int64_t br = 0; br < m; ++br) {
                    for (std::int64_t bc = 0; bc < m; ++bc) {
                        float* dst = out.data.data.data() +
                                     ((i * g.rows() * m + r * m + br) * g.cols() * m + c * m + bc) * d;
                        std::copy(src + (br * m + bc) * d, src + (br * m + bc + 1) * d, dst);
                    }
                }
            }
        }
    }
    return out;
}

// Two-expert adapter with hard modality routing into a shared projection.
struct MhpParams {
    Tensor w_slice;   // d_f x d_in
    Tensor b_slice;   // d_f
    Tensor w_volume;  // d_f x d_in
    Tensor b_volume;  // d_f
    Tensor w_share;   // d_f x d_f
    Tensor b_share;   // d_f

    std::int64_t d_in() const { return w_slice.extent(1); }
    std::int64_t d_f() const { return w_share.extent(0); }
};

inline MhpParams make_mhp_params(std::int64_t d_in, std::int64_t d_f, Prng& rng) {
    if (d_in < 1 || d_f < 1) throw ValidationError("mhp params: dims must be >= 1");
    MhpParams p;
    p.w_slice = xavier_tensor({d_f, d_in}, d_in, d_f, rng);
    p.b_slice = Tensor::zeros({d_f});
    p.w_volume = xavier_tensor({d_f, d_in}, d_in, d_f, rng);
    p.b_volume = Tensor::zeros({d_f});
    p.w_share = xavier_tensor({d_f, d_f}, d_f, d_f, rng);
    p.b_share = Tensor::zeros({d_f});
    return p;
}

// Exact GELU: x * Phi(x) with Phi the standard normal CDF.
inline double gelu(double x) { return x * 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Flatten the grid in (unit, row, col) scan order and project each token
// through the modality expert then the shared layer.
inline Tensor mhp_project(const TokenGrid& g, const MhpParams& p, Modality modality) {
    if (g.stage != GridStage::unshuffled)
        throw ValidationError("mhp_project: grid must be at the unshuffled stage");
    if (g.dim() != p.d_in())
        throw ValidationError("mhp_project: grid feature dim " + std::to_string(g.dim()) +
                              " does not match expert input dim " + std::to_string(p.d_in()));
    const Tensor& we = modality == Modality::slice ? p.w_slice : p.w_volume;
    const Tensor& be = modality == Modality::slice ? p.b_slice : p.b_volume;
    const std::int64_t l = g.units() * g.rows() * g.cols();
    const std::int64_t din = p.d_in(), df = p.d_f();

    Tensor out = Tensor::zeros({l, df});
    std::vector<double> hidden(static_cast<std::size_t>(df));
    for (std::int64_t t = 0; t < l; ++t) {
        const float* z = g.data.data.data() + t * din;
        for (std::int64_t o = 0; o < df; ++o) {
            const float* wrow = we.data.data() + o * din;
            double acc = be.data[static_cast<std::size_t>(o)];
            for (std::int64_t s = 0; s < din; ++s) acc += static_cast<double>(wrow[s]) * z[s];
            hidden[static_cast<std::size_t>(o)] = gelu(acc);
        }
        float* dst = out.data.data() + t * df;
        for (std::int64_t o = 0; o < df; ++o) {
            const float* wrow = p.w_share.data.data() + o * df;
            double acc = p.b_share.data[static_cast<std::size_t>(o)];
            for (std::int64_t s = 0; s < df; ++s) acc += static_cast<double>(wrow[s]) * hidden[static_cast<std::size_t>(s)];
            dst[o] = static_cast<float>(acc);
        }
    }
    return out;
}

}  // namespace omnict
