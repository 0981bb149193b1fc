#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "omnict/errors.hpp"
#include "omnict/sce.hpp"

namespace omnict {

// Tokenizer geometry and widths. Every run manifest embeds the resolved copy
// so outputs can be replayed from the manifest alone.
struct PipelineConfig {
    std::int64_t patch = 16;  // K: 384 = 24 * 16 divides evenly
    std::int64_t d_v = 64;
    std::int64_t d_z = 16, d_y = 16, d_x = 16;
    std::int64_t d_f = 128;
    std::int64_t m_volume = 2;
    std::int64_t l_c_slice = 81;
    std::int64_t l_c_volume = 90;
    std::uint64_t seed = 0;

    std::int64_t m_for(Modality m) const { return m == Modality::slice ? 1 : m_volume; }
    std::int64_t token_dim() const { return d_v + d_z + d_y + d_x; }
    std::int64_t d_in_for(Modality m) const { return token_dim() * m_for(m) * m_for(m); }
    std::int64_t l_c_for(Modality m) const { return m == Modality::slice ? l_c_slice : l_c_volume; }
};

inline void validate_pipeline_config(const PipelineConfig& c) {
    if (c.patch < 1 || c.d_v < 1 || c.d_f < 1 || c.m_volume < 1)
        throw ValidationError("config: patch, d_v, d_f, m_volume must be >= 1");
    if (c.d_z < 2 || c.d_z % 2 || c.d_y < 2 || c.d_y % 2 || c.d_x < 2 || c.d_x % 2)
        throw ValidationError("config: positional dims must be even and >= 2");
    if (c.l_c_slice < 1 || c.l_c_volume < 1) throw ValidationError("config: L_c must be >= 1");
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw FormatError("config: expected a JSON object");
    PipelineConfig c;
    auto geti = [&](const char* key, std::int64_t& slot) {
        if (!j.contains(key)) return;
        if (!j.at(key).is_number_integer()) throw FormatError(std::string("config: key ") + key + " must be an integer");
        slot = j.at(key).get<std::int64_t>();
    };
    geti("patch", c.patch);
    geti("d_v", c.d_v);
    geti("d_z", c.d_z);
    geti("d_y", c.d_y);
    geti("d_x", c.d_x);
    geti("d_f", c.d_f);
    geti("m_volume", c.m_volume);
    geti("l_c_slice", c.l_c_slice);
    geti("l_c_volume", c.l_c_volume);
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_unsigned() && !j.at("seed").is_number_integer())
            throw FormatError("config: key seed must be an integer");
        c.seed = j.at("seed").get<std::uint64_t>();
    }
    static const char* known[] = {"patch", "d_v", "d_z", "d_y", "d_x", "d_f", "m_volume",
                                  "l_c_slice", "l_c_volume", "seed"};
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (auto* k : known) ok = ok || it.key() == k;
        if (!ok) throw FormatError("config: unknown key " + it.key());
    }
    validate_pipeline_config(c);
    return c;
}

inline nlohmann::json pipeline_config_to_json(const PipelineConfig& c) {
    return nlohmann::json{{"patch", c.patch},       {"d_v", c.d_v},
                          {"d_z", c.d_z},           {"d_y", c.d_y},
                          {"d_x", c.d_x},           {"d_f", c.d_f},
                          {"m_volume", c.m_volume}, {"l_c_slice", c.l_c_slice},
                          {"l_c_volume", c.l_c_volume}, {"seed", c.seed}};
}

}  // namespace omnict
