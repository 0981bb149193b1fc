#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "omnict/config.hpp"
#include "omnict/errors.hpp"
#include "omnict/lm.hpp"
#include "omnict/pipeline.hpp"
#include "omnict/text.hpp"
#include "omnict/volume.hpp"

namespace omnict {

// One line of a training JSONL file.
struct TrainRecord {
    std::string volume_path;
    std::optional<std::string> mask_path;
    std::optional<int> organ;
    Modality modality = Modality::volume;
    std::string prompt;
    std::string answer;
};

inline TrainRecord parse_train_record(const nlohmann::json& j, std::size_t line_no) {
    const std::string where = "training data line " + std::to_string(line_no) + ": ";
    if (!j.is_object()) throw FormatError(where + "expected a JSON object");
    TrainRecord r;
    try {
        r.volume_path = j.at("volume_path").get<std::string>();
        r.modality = modality_from_string(j.at("modality").get<std::string>());
        r.prompt = j.at("prompt").get<std::string>();
        r.answer = j.at("answer").get<std::string>();
        if (j.contains("mask_path")) r.mask_path = j.at("mask_path").get<std::string>();
        if (j.contains("organ")) r.organ = j.at("organ").get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(where + e.what());
    }
    if (r.mask_path.has_value() != r.organ.has_value())
        throw ValidationError(where + "mask_path and organ must be given together");
    return r;
}

// Token ids and loss mask for "BOS prompt answer EOS"; the loss covers the
// answer bytes and the final EOS.
inline void encode_qa(const std::string& prompt, const std::string& answer, std::vector<int>& ids,
                      std::vector<std::uint8_t>& loss_mask) {
    ids.clear();
    ids.push_back(kBos);
    for (unsigned char c : prompt) ids.push_back(static_cast<int>(c));
    const std::size_t answer_start = ids.size();
    for (unsigned char c : answer) ids.push_back(static_cast<int>(c));
    ids.push_back(kEos);
    loss_mask.assign(ids.size(), 0);
    for (std::size_t i = answer_start; i < ids.size(); ++i) loss_mask[i] = 1;
}

struct PreparedData {
    EncoderParams enc;  // frozen; shared by every record
    std::int64_t d_in = 0;
    std::vector<LmSample> samples;
};

// Runs the frozen tokenizer prefix over every record and assembles LM training
// samples. Relative volume/mask paths resolve against the JSONL directory.
inline PreparedData prepare_training_data(const std::filesystem::path& jsonl_path,
                                          const PipelineConfig& cfg) {
    std::ifstream in(jsonl_path);
    if (!in) throw IoError("training data: cannot open " + jsonl_path.string());
    const std::filesystem::path base = jsonl_path.has_parent_path()
                                           ? jsonl_path.parent_path()
                                           : std::filesystem::path(".");
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp : base / fp;
    };

    Prng rng(cfg.seed);
    PreparedData out;
    out.enc = make_encoder_params(cfg.patch, cfg.d_v, rng);

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("training data line " + std::to_string(line_no) + ": " + e.what());
        }
        TrainRecord r = parse_train_record(j, line_no);

        std::optional<std::filesystem::path> mask_path;
        if (r.mask_path) mask_path = resolve(*r.mask_path);
        auto [vol, mask] = load_raw(resolve(r.volume_path), mask_path);
        if (mask && r.modality == Modality::slice)
            throw ValidationError("training data line " + std::to_string(line_no) +
                                  ": organ masks are defined for volume records only");

        LmSample s;
        s.modality = r.modality;
        TokenGrid grid = tokenize_prefix(vol.data, r.modality, cfg, out.enc);
        s.visual = grid_to_visual(grid);
        if (out.d_in == 0) out.d_in = s.visual.cols;
        if (s.visual.cols != out.d_in)
            throw ValidationError("training data line " + std::to_string(line_no) +
                                  ": record input dim " + std::to_string(s.visual.cols) +
                                  " differs from " + std::to_string(out.d_in) +
                                  "; mixed-modality sets need m_volume=1");
        if (mask) {
            s.organ_flags = organ_flags_for(grid, *mask, *r.organ, cfg, r.modality);
            s.l_c = cfg.l_c_for(r.modality);
        }
        encode_qa(r.prompt, r.answer, s.ids, s.loss_mask);
        out.samples.push_back(std::move(s));
    }
    if (out.samples.empty()) throw ValidationError("training data: no records in " + jsonl_path.string());
    return out;
}

}  // namespace omnict
