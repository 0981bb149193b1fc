#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "omnict/errors.hpp"
#include "omnict/lm.hpp"
#include "omnict/sce.hpp"
#include "omnict/tensor.hpp"

namespace omnict {

struct TrainConfig {
    int stage = 1;
    std::int64_t steps = 100;
    std::int64_t batch_size = 8;
    double lr_adapter = 2e-4;
    double lr_llm = 5e-5;
    double warmup_ratio = 0.03;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
    std::int64_t max_seq_len = 2048;
    bool freeze_text_embed = false;
    std::uint64_t seed = 0;
};

inline TrainConfig train_config_for_stage(int stage) {
    if (stage != 1 && stage != 2) throw ValidationError("train: stage must be 1 or 2");
    TrainConfig c;
    c.stage = stage;
    if (stage == 1) {
        c.lr_adapter = 2e-4;  // adapter only; everything else frozen
    } else {
        c.lr_adapter = 5e-5;
        c.lr_llm = 5e-5;
    }
    return c;
}

inline void validate_train_config(const TrainConfig& c) {
    if (c.stage != 1 && c.stage != 2) throw ValidationError("train: stage must be 1 or 2");
    if (c.steps < 1) throw ValidationError("train: steps must be >= 1");
    if (c.batch_size < 1) throw ValidationError("train: batch_size must be >= 1");
    if (c.warmup_ratio < 0.0 || c.warmup_ratio > 1.0) throw ValidationError("train: warmup_ratio must be in [0,1]");
}

// Linear warmup to the peak rate over max(1, floor(ratio*steps)) steps, then
// cosine decay to zero. `step` is zero-based; the multiplier is applied to
// every parameter group's peak rate.
inline double lr_multiplier(const TrainConfig& c, std::int64_t step) {
    const std::int64_t warm = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(c.warmup_ratio * static_cast<double>(c.steps))));
    if (step < warm) return static_cast<double>(step + 1) / static_cast<double>(warm);
    if (c.steps <= warm) return 1.0;
    const double progress = static_cast<double>(step - warm) / static_cast<double>(c.steps - warm);
    return 0.5 * (1.0 + std::cos(std::acos(-1.0) * progress));
}

// Peak learning rate for a parameter group under the staged recipe. A zero
// rate means the group is frozen and its state must not move at all.
inline double group_peak_lr(const TrainConfig& c, ParamGroup g) {
    if (c.stage == 1) return g == ParamGroup::adapter ? c.lr_adapter : 0.0;
    switch (g) {
        case ParamGroup::adapter: return c.lr_adapter;
        case ParamGroup::text_embed: return c.freeze_text_embed ? 0.0 : c.lr_llm;
        case ParamGroup::decoder: return c.lr_llm;
    }
    return 0.0;
}

struct AdamW {
    LmParamSet m;
    LmParamSet v;
    std::int64_t t = 0;

    explicit AdamW(LmParamSet& params) : m(zeros_like(params)), v(zeros_like(params)) {}

    void step(LmParamSet& params, LmParamSet& grads, const TrainConfig& cfg, std::int64_t sched_step) {
        ++t;
        const double mult = lr_multiplier(cfg, sched_step);
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
        auto prefs = params.refs();
        auto grefs = grads.refs();
        auto mrefs = m.refs();
        auto vrefs = v.refs();
        for (std::size_t i = 0; i < prefs.size(); ++i) {
            const double lr = mult * group_peak_lr(cfg, prefs[i].group);
            if (lr == 0.0) continue;  // frozen group: moments untouched, values bit-identical
            DMat& p = *prefs[i].mat;
            const DMat& g = *grefs[i].mat;
            DMat& m1 = *mrefs[i].mat;
            DMat& m2 = *vrefs[i].mat;
            for (std::size_t k = 0; k < p.v.size(); ++k) {
                m1.v[k] = cfg.beta1 * m1.v[k] + (1.0 - cfg.beta1) * g.v[k];
                m2.v[k] = cfg.beta2 * m2.v[k] + (1.0 - cfg.beta2) * g.v[k] * g.v[k];
                const double mhat = m1.v[k] / bc1;
                const double vhat = m2.v[k] / bc2;
                p.v[k] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * p.v[k]);
            }
        }
    }
};

struct TrainResult {
    std::vector<double> losses;
};

inline std::int64_t sample_seq_len(const LmSample& s) {
    std::int64_t rows = s.visual.rows;
    if (!s.organ_flags.empty()) rows += s.l_c;
    return rows + static_cast<std::int64_t>(s.ids.size());
}

// Deterministic optimisation loop: batches cycle through the dataset in order,
// so two runs from the same seed and data are bit-identical.
inline TrainResult train(LmModel& model, const std::vector<LmSample>& data, const TrainConfig& cfg) {
    validate_train_config(cfg);
    if (data.empty()) throw ValidationError("train: empty dataset");
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto len = sample_seq_len(data[i]);
        if (len > cfg.max_seq_len)
            throw ValidationError("train: sample " + std::to_string(i) + " has sequence length " +
                                  std::to_string(len) + " > max_seq_len " + std::to_string(cfg.max_seq_len));
    }

    AdamW opt(model.p);
    TrainResult result;
    const std::int64_t n = static_cast<std::int64_t>(data.size());
    for (std::int64_t step = 0; step < cfg.steps; ++step) {
        std::vector<LmSample> batch;
        batch.reserve(static_cast<std::size_t>(cfg.batch_size));
        for (std::int64_t b = 0; b < cfg.batch_size; ++b)
            batch.push_back(data[static_cast<std::size_t>((step * cfg.batch_size + b) % n)]);
        LmParamSet grads = zeros_like(model.p);
        const double loss = lm_batch_loss(model, batch, &grads);
        opt.step(model.p, grads, cfg, step);
        result.losses.push_back(loss);
    }
    return result;
}

// --- checkpoints ------------------------------------------------------------
// A checkpoint directory holds one .omct tensor per parameter (float32) plus a
// manifest.json describing names, shapes and run metadata. The frozen patch
// encoder is stored alongside so a checkpoint is self-contained.

inline Tensor dmat_to_tensor(const DMat& m) {
    Tensor t = Tensor::zeros({m.rows, m.cols});
    for (std::size_t i = 0; i < m.v.size(); ++i) t.data[i] = static_cast<float>(m.v[i]);
    return t;
}

inline DMat tensor_to_dmat(const Tensor& t) {
    if (t.rank() != 2) throw FormatError("checkpoint: expected rank-2 tensor, got rank " + std::to_string(t.rank()));
    DMat m(t.shape[0], t.shape[1]);
    for (std::size_t i = 0; i < t.data.size(); ++i) m.v[i] = static_cast<double>(t.data[i]);
    return m;
}

inline void save_checkpoint(const std::string& dir, const EncoderParams& enc, const LmModel& model,
                            int stage, std::int64_t step, std::uint64_t seed,
                            const nlohmann::json& extra = nlohmann::json::object()) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("checkpoint: cannot create directory " + dir);

    nlohmann::json manifest = extra;
    manifest["stage"] = stage;
    manifest["step"] = step;
    manifest["seed"] = seed;
    manifest["d_in"] = model.d_in;
    manifest["d_f"] = model.d_f;
    manifest["encoder"] = {{"patch", enc.patch}, {"d_v", enc.d_v}};

    nlohmann::json names = nlohmann::json::array();
    nlohmann::json shapes = nlohmann::json::object();

    auto put = [&](const std::string& name, const Tensor& t) {
        tensor_write(t, dir + "/" + name + ".omct");
        names.push_back(name);
        shapes[name] = t.shape;
    };
    put("enc_w", enc.w);
    put("enc_b", enc.b);
    for (const auto& r : const_cast<LmModel&>(model).p.refs()) put(r.name, dmat_to_tensor(*r.mat));

    manifest["names"] = names;
    manifest["shapes"] = shapes;
    std::ofstream out(dir + "/manifest.json");
    if (!out) throw IoError("checkpoint: cannot write " + dir + "/manifest.json");
    out << manifest.dump(2) << "\n";
}

struct Checkpoint {
    EncoderParams enc;
    LmModel model;
    nlohmann::json manifest;
};

inline Checkpoint load_checkpoint(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw IoError("checkpoint: cannot open " + dir + "/manifest.json");
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("checkpoint: bad manifest.json: ") + e.what());
    }

    Checkpoint ck;
    ck.manifest = manifest;
    ck.enc.patch = manifest.at("encoder").at("patch").get<std::int64_t>();
    ck.enc.d_v = manifest.at("encoder").at("d_v").get<std::int64_t>();
    ck.enc.w = tensor_read(dir + "/enc_w.omct");
    ck.enc.b = tensor_read(dir + "/enc_b.omct");

    const auto d_in = manifest.at("d_in").get<std::int64_t>();
    const auto d_f = manifest.at("d_f").get<std::int64_t>();
    ck.model = make_lm_model(d_in, d_f, 0);  // shapes only; values overwritten below
    for (auto& r : ck.model.p.refs()) {
        Tensor t = tensor_read(dir + "/" + r.name + ".omct");
        DMat loaded = tensor_to_dmat(t);
        if (loaded.rows != r.mat->rows || loaded.cols != r.mat->cols)
            throw FormatError(std::string("checkpoint: tensor ") + r.name + " has unexpected shape");
        *r.mat = std::move(loaded);
    }
    return ck;
}

}  // namespace omnict
