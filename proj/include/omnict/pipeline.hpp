#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "omnict/config.hpp"
#include "omnict/errors.hpp"
#include "omnict/lm.hpp"
#include "omnict/ose.hpp"
#include "omnict/sce.hpp"
#include "omnict/tensor.hpp"
#include "omnict/volume.hpp"

namespace omnict {

struct TokenizeResult {
    Tensor tokens;            // final rows x d_f (fused when OSE is active)
    TokenGrid unshuffled;     // frozen prefix output, L x d_in when flattened
    nlohmann::json manifest;  // resolved config + every intermediate shape
};

namespace detail {

inline nlohmann::json shape_json(const Tensor& t) { return nlohmann::json(t.shape); }

}  // namespace detail

// Frozen tokenizer prefix: unit composition -> patch encoding -> positional
// concatenation -> regrouping. Deterministic given config seed.
inline TokenGrid tokenize_prefix(const Tensor& data, Modality modality, const PipelineConfig& cfg,
                                 const EncoderParams& enc) {
    UnitStack units;
    if (modality == Modality::volume) {
        CTVolume v;
        v.data = data;
        units = compose_units(v);
    } else {
        units = replicate_slices(data);
    }
    TokenGrid g = encode_patches(units, enc);
    TpeTables tpe = build_tpe(g.units(), g.rows(), g.cols(), cfg.d_z, cfg.d_y, cfg.d_x);
    g = apply_tpe(g, tpe);
    return unshuffle(g, cfg.m_for(modality));
}

// Full tokenization run. The mask, when present, must come with an organ
// label; OSE selects that organ's tokens and appends the aggregated local
// context after the global sequence.
inline TokenizeResult tokenize_run(const Tensor& data, const std::optional<OrganMask>& mask,
                                   std::optional<int> organ, Modality modality,
                                   const PipelineConfig& cfg) {
    validate_pipeline_config(cfg);
    if (mask.has_value() != organ.has_value())
        throw ValidationError("tokenize: --mask and --organ must be given together");
    if (mask && modality == Modality::slice)
        throw ValidationError("tokenize: organ masks are defined for volume runs only");

    Prng rng(cfg.seed);
    EncoderParams enc = make_encoder_params(cfg.patch, cfg.d_v, rng);
    MhpParams mhp = make_mhp_params(cfg.d_in_for(modality), cfg.d_f, rng);

    TokenizeResult res;
    res.unshuffled = tokenize_prefix(data, modality, cfg, enc);
    Tensor global = mhp_project(res.unshuffled, mhp, modality);

    nlohmann::json& man = res.manifest;
    man["config"] = pipeline_config_to_json(cfg);
    man["modality"] = to_string(modality);
    man["m"] = cfg.m_for(modality);
    man["input_shape"] = nlohmann::json(data.shape);
    man["unshuffled_shape"] = detail::shape_json(res.unshuffled.data);
    man["L"] = global.extent(0);
    man["d_f"] = cfg.d_f;

    if (mask) {
        TokenGeometry geom{cfg.patch, cfg.m_for(modality), res.unshuffled.units()};
        TokenMask tm = project_mask_to_tokens(*mask, *organ, geom);
        if (tm.rows != res.unshuffled.rows() || tm.cols != res.unshuffled.cols())
            throw ValidationError("tokenize: mask grid does not match token grid");
        OrganTokens ot = select_tokens(global, tm);
        const std::int64_t l_c = cfg.l_c_for(modality);
        Tensor local = aggregate(ot, l_c);
        res.tokens = fuse_global_local(global, local);
        man["organ"] = *organ;
        man["organ_tokens"] = ot.count;
        man["L_c"] = l_c;
    } else {
        res.tokens = global;
    }
    man["rows"] = res.tokens.extent(0);
    return res;
}

// Flattened f64 copy of the frozen prefix output, the LM's visual input.
inline DMat grid_to_visual(const TokenGrid& g) {
    const std::int64_t l = g.units() * g.rows() * g.cols(), d = g.dim();
    DMat m(l, d);
    for (std::int64_t i = 0; i < l * d; ++i) m.v[static_cast<std::size_t>(i)] = static_cast<double>(g.data.data[static_cast<std::size_t>(i)]);
    return m;
}

inline std::vector<std::uint8_t> organ_flags_for(const TokenGrid& g, const OrganMask& mask, int organ,
                                                 const PipelineConfig& cfg, Modality modality) {
    TokenGeometry geom{cfg.patch, cfg.m_for(modality), g.units()};
    TokenMask tm = project_mask_to_tokens(mask, organ, geom);
    if (tm.rows != g.rows() || tm.cols != g.cols())
        throw ValidationError("organ flags: mask grid does not match token grid");
    return tm.flags;
}

}  // namespace omnict
