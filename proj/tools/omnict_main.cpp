// omnict: file-based pipeline driver.
// Exit codes: 0 success, 1 I/O, 2 validation/format/usage, 3 numerical check failed.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "omnict/config.hpp"
#include "omnict/dataset.hpp"
#include "omnict/errors.hpp"
#include "omnict/gradcheck.hpp"
#include "omnict/nifti.hpp"
#include "omnict/pipeline.hpp"
#include "omnict/report.hpp"
#include "omnict/tensor.hpp"
#include "omnict/train.hpp"
#include "omnict/volume.hpp"

namespace {

using nlohmann::json;

void write_json(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw omnict::IoError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw omnict::IoError("cannot write " + path.string());
    out << text;
}

void make_out_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw omnict::IoError("cannot create directory " + dir);
}

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw omnict::IoError("cannot open " + path);
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw omnict::FormatError(path + ": " + e.what());
    }
}

// Seed precedence: --seed flag, then config file, then OMNICT_SEED, then 0.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag_seed, const json* config_json) {
    if (flag_seed) return *flag_seed;
    if (config_json && config_json->contains("seed")) return config_json->at("seed").get<std::uint64_t>();
    if (const char* env = std::getenv("OMNICT_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw omnict::ValidationError(std::string("OMNICT_SEED is not an integer: ") + env);
        }
    }
    return 0;
}

struct PreprocessArgs {
    std::string in_path, format = "raw", out_dir;
    std::optional<std::string> mask_path;
    std::vector<double> window = {-1000.0, 1000.0};
    std::vector<std::int64_t> size = {32, 384, 384};
};

int cmd_preprocess(const PreprocessArgs& a) {
    omnict::CTVolume vol;
    std::optional<omnict::OrganMask> mask;
    if (a.format == "nifti") {
        vol = omnict::load_nifti(a.in_path);
        if (a.mask_path) {
            omnict::CTVolume m = omnict::load_nifti(*a.mask_path);
            omnict::OrganMask om;
            om.labels = std::move(m.data);
            omnict::validate_mask_labels(om.labels);
            mask = std::move(om);
        }
    } else if (a.format == "raw") {
        std::optional<std::filesystem::path> mp;
        if (a.mask_path) mp = *a.mask_path;
        auto [v, m] = omnict::load_raw(a.in_path, mp);
        vol = std::move(v);
        mask = std::move(m);
    } else {
        throw omnict::ValidationError("unknown format: " + a.format + " (expected nifti or raw)");
    }
    if (mask && mask->labels.shape != vol.data.shape)
        throw omnict::ValidationError("mask shape does not match volume shape");

    if (a.window.size() != 2) throw omnict::ValidationError("--window expects two values");
    if (a.size.size() != 3) throw omnict::ValidationError("--size expects three values");
    const auto in_shape = vol.data.shape;
    vol = omnict::window_and_normalize(vol, static_cast<float>(a.window[0]), static_cast<float>(a.window[1]));
    vol = omnict::resample_trilinear(vol, a.size[0], a.size[1], a.size[2]);
    if (mask) *mask = omnict::resample_mask_nearest(*mask, a.size[0], a.size[1], a.size[2]);

    make_out_dir(a.out_dir);
    omnict::tensor_write(vol.data, a.out_dir + "/volume.omct");
    if (mask) omnict::tensor_write(mask->labels, a.out_dir + "/mask.omct");

    json manifest;
    manifest["command"] = "preprocess";
    manifest["input"] = a.in_path;
    manifest["format"] = a.format;
    manifest["window"] = a.window;
    manifest["input_shape"] = in_shape;
    manifest["output_shape"] = vol.data.shape;
    manifest["spacing_mm"] = {vol.meta.spacing_mm[0], vol.meta.spacing_mm[1], vol.meta.spacing_mm[2]};
    manifest["source"] = vol.meta.source;
    manifest["mask"] = mask.has_value();
    write_json(a.out_dir + "/manifest.json", manifest);
    return 0;
}

struct TokenizeArgs {
    std::string volume_path, config_path, out_dir, modality = "volume";
    std::optional<std::string> mask_path;
    std::optional<int> organ;
};

int cmd_tokenize(const TokenizeArgs& a) {
    if (a.mask_path.has_value() != a.organ.has_value())
        throw omnict::ValidationError("--mask and --organ must be given together");
    const omnict::PipelineConfig cfg = omnict::pipeline_config_from_json(load_json_file(a.config_path));
    const omnict::Modality modality = omnict::modality_from_string(a.modality);

    std::optional<std::filesystem::path> mp;
    if (a.mask_path) mp = *a.mask_path;
    auto [vol, mask] = omnict::load_raw(a.volume_path, mp);

    omnict::TokenizeResult res = omnict::tokenize_run(vol.data, mask, a.organ, modality, cfg);
    make_out_dir(a.out_dir);
    omnict::tensor_write(res.tokens, a.out_dir + "/tokens.omct");
    res.manifest["command"] = "tokenize";
    res.manifest["input"] = a.volume_path;
    write_json(a.out_dir + "/manifest.json", res.manifest);
    return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
    omnict::GradCheckInstance gi = omnict::make_gradcheck_instance(seed);
    omnict::GradCheckReport rep = omnict::grad_check(gi.model, gi.batch, 1e-4, 64, seed);
    std::cout << "gradcheck seed " << seed << "\n";
    for (const auto& e : rep.entries)
        std::cout << "  " << e.name << " sampled=" << e.sampled << " max_rel_err=" << e.max_rel_err
                  << "\n";
    std::cout << "max_rel_err " << rep.max_rel_err << "\n";
    if (rep.max_rel_err > 1e-4) {
        std::cout << "FAIL: tolerance 1e-4 exceeded\n";
        return 3;
    }
    std::cout << "OK\n";
    return 0;
}

struct TrainArgs {
    int stage = 1;
    std::string data_path, out_dir;
    std::optional<std::string> config_path, init_dir;
    std::optional<std::int64_t> steps, batch_size;
    std::optional<std::uint64_t> seed;
    bool freeze_text_embed = false;
    std::int64_t d_f_override = 0;
};

int cmd_train(const TrainArgs& a) {
    std::optional<json> cfg_json;
    if (a.config_path) cfg_json = load_json_file(*a.config_path);
    omnict::PipelineConfig pcfg =
        cfg_json ? omnict::pipeline_config_from_json(*cfg_json) : omnict::PipelineConfig{};
    pcfg.seed = resolve_seed(a.seed, cfg_json ? &*cfg_json : nullptr);
    if (a.d_f_override > 0) pcfg.d_f = a.d_f_override;

    omnict::TrainConfig tcfg = omnict::train_config_for_stage(a.stage);
    if (a.steps) tcfg.steps = *a.steps;
    if (a.batch_size) tcfg.batch_size = *a.batch_size;
    tcfg.freeze_text_embed = a.freeze_text_embed;
    tcfg.seed = pcfg.seed;

    omnict::PreparedData data = omnict::prepare_training_data(a.data_path, pcfg);
    omnict::LmModel model;
    omnict::EncoderParams enc = data.enc;
    if (a.init_dir) {
        omnict::Checkpoint ck = omnict::load_checkpoint(*a.init_dir);
        if (ck.model.d_in != data.d_in)
            throw omnict::ValidationError("checkpoint input dim " + std::to_string(ck.model.d_in) +
                                          " does not match data dim " + std::to_string(data.d_in));
        model = std::move(ck.model);
        enc = std::move(ck.enc);
    } else {
        model = omnict::make_lm_model(data.d_in, pcfg.d_f, pcfg.seed);
    }

    omnict::TrainResult tr = omnict::train(model, data.samples, tcfg);

    json extra;
    extra["command"] = "train";
    extra["config"] = omnict::pipeline_config_to_json(pcfg);
    extra["data"] = a.data_path;
    extra["steps"] = tcfg.steps;
    extra["batch_size"] = tcfg.batch_size;
    extra["freeze_text_embed"] = tcfg.freeze_text_embed;
    extra["losses"] = tr.losses;
    extra["final_loss"] = tr.losses.back();
    make_out_dir(a.out_dir);
    omnict::save_checkpoint(a.out_dir, enc, model, a.stage, tcfg.steps, pcfg.seed, extra);
    std::cout << "final_loss " << tr.losses.back() << "\n";
    return 0;
}

struct EvaluateArgs {
    std::string pred_path, out_dir;
};

int cmd_evaluate(const EvaluateArgs& a) {
    const std::vector<omnict::EvalSample> samples = omnict::load_eval_samples(a.pred_path);
    std::vector<omnict::ScoredSample> scored;
    scored.reserve(samples.size());
    for (const auto& s : samples) scored.push_back(omnict::score_sample(s));
    const omnict::StratifiedReport rep = omnict::stratified_report(scored);

    make_out_dir(a.out_dir);
    write_json(a.out_dir + "/report.json", omnict::report_to_json(rep));
    write_text(a.out_dir + "/report.txt", omnict::report_to_text(rep));
    json manifest;
    manifest["command"] = "evaluate";
    manifest["input"] = a.pred_path;
    manifest["count"] = rep.total;
    write_json(a.out_dir + "/manifest.json", manifest);
    std::cout << "overall " << rep.overall << " over " << rep.total << " samples\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unified CT tokenization pipeline"};
    app.require_subcommand(1);

    PreprocessArgs pre;
    auto* sp = app.add_subcommand("preprocess", "window and resample a CT volume");
    sp->add_option("--in", pre.in_path, "input volume")->required();
    sp->add_option("--format", pre.format, "nifti or raw")->check(CLI::IsMember({"nifti", "raw"}));
    sp->add_option("--mask", pre.mask_path, "co-registered organ mask");
    sp->add_option("--out", pre.out_dir, "output directory")->required();
    sp->add_option("--window", pre.window, "HU window lo hi")->expected(2);
    sp->add_option("--size", pre.size, "target D H W")->expected(3);

    TokenizeArgs tok;
    auto* st = app.add_subcommand("tokenize", "run the token pipeline over a volume");
    st->add_option("--volume", tok.volume_path, "preprocessed volume (.omct)")->required();
    st->add_option("--mask", tok.mask_path, "organ mask (.omct)");
    st->add_option("--organ", tok.organ, "organ label for the mask");
    st->add_option("--modality", tok.modality, "slice or volume")
        ->check(CLI::IsMember({"slice", "volume"}));
    st->add_option("--config", tok.config_path, "pipeline config json")->required();
    st->add_option("--out", tok.out_dir, "output directory")->required();

    std::optional<std::uint64_t> gc_seed;
    std::optional<std::string> gc_config;
    auto* sg = app.add_subcommand("gradcheck", "verify analytic gradients by central differences");
    sg->add_option("--seed", gc_seed, "instance seed");
    sg->add_option("--config", gc_config, "config json supplying a default seed");

    TrainArgs tra;
    auto* str = app.add_subcommand("train", "run a training stage");
    str->add_option("--stage", tra.stage, "1 or 2")->required();
    str->add_option("--data", tra.data_path, "training JSONL")->required();
    str->add_option("--out", tra.out_dir, "checkpoint directory")->required();
    str->add_option("--config", tra.config_path, "pipeline config json");
    str->add_option("--init", tra.init_dir, "checkpoint to start from");
    str->add_option("--steps", tra.steps, "optimisation steps");
    str->add_option("--batch-size", tra.batch_size, "batch size");
    str->add_option("--seed", tra.seed, "run seed");
    str->add_option("--d-f", tra.d_f_override, "feature width override");
    str->add_flag("--freeze-text-embed", tra.freeze_text_embed, "keep the embedding table frozen in stage 2");

    EvaluateArgs ev;
    auto* se = app.add_subcommand("evaluate", "score predictions and emit a stratified report");
    se->add_option("--pred", ev.pred_path, "predictions JSONL")->required();
    se->add_option("--out", ev.out_dir, "report directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (sp->parsed()) return cmd_preprocess(pre);
        if (st->parsed()) return cmd_tokenize(tok);
        if (sg->parsed()) {
            std::optional<json> cfg_json;
            if (gc_config) cfg_json = load_json_file(*gc_config);
            return cmd_gradcheck(resolve_seed(gc_seed, cfg_json ? &*cfg_json : nullptr));
        }
        if (str->parsed()) return cmd_train(tra);
        if (se->parsed()) return cmd_evaluate(ev);
    } catch (const omnict::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const omnict::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 2;
}
