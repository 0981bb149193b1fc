#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "omnict/errors.hpp"
#include "omnict/metrics.hpp"

namespace omnict {

inline const std::array<std::string, 13>& organ_names() {
    static const std::array<std::string, 13> names = {
        "lungs",   "heart",     "liver",   "spleen",  "kidneys", "pancreas", "stomach",
        "bowel",   "esophagus", "trachea", "vessels", "spine",   "others"};
    return names;
}

inline const std::array<std::string, 4>& category_names() {
    static const std::array<std::string, 4> names = {"GIR", "MAI", "AII", "CRD"};
    return names;
}

inline const std::array<std::string, 7>& task_type_names() {
    static const std::array<std::string, 7> names = {"multiple_choice", "judgment", "short_answer",
                                                     "free_form",       "report",   "caption",
                                                     "dialogue"};
    return names;
}

struct EvalSample {
    std::string id;
    std::string modality;   // slice | volume
    std::string organ;      // one of organ_names()
    std::string category;   // one of category_names()
    std::string task_type;  // one of task_type_names()
    std::string prediction;
    std::string reference;
};

namespace detail {

template <std::size_t N>
inline void require_member(const std::array<std::string, N>& allowed, const std::string& value,
                           const char* field, const std::string& where) {
    for (const auto& a : allowed)
        if (a == value) return;
    throw ValidationError(where + "unknown " + field + ": " + value);
}

}  // namespace detail

inline EvalSample parse_eval_sample(const nlohmann::json& j, std::size_t line_no) {
    const std::string where = "eval data line " + std::to_string(line_no) + ": ";
    if (!j.is_object()) throw FormatError(where + "expected a JSON object");
    EvalSample s;
    try {
        s.id = j.at("id").get<std::string>();
        s.modality = j.at("modality").get<std::string>();
        s.organ = j.at("organ").get<std::string>();
        s.category = j.at("category").get<std::string>();
        s.task_type = j.at("task_type").get<std::string>();
        s.prediction = j.at("prediction").get<std::string>();
        s.reference = j.at("reference").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(where + e.what());
    }
    if (s.modality != "slice" && s.modality != "volume")
        throw ValidationError(where + "unknown modality: " + s.modality);
    detail::require_member(organ_names(), s.organ, "organ", where);
    detail::require_member(category_names(), s.category, "category", where);
    detail::require_member(task_type_names(), s.task_type, "task_type", where);
    return s;
}

inline std::vector<EvalSample> load_eval_samples(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("eval data: cannot open " + path);
    std::vector<EvalSample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("eval data line " + std::to_string(line_no) + ": " + e.what());
        }
        out.push_back(parse_eval_sample(j, line_no));
    }
    return out;
}

struct ScoredSample {
    EvalSample sample;
    double score = 0.0;
    bool choice_unparseable = false;
};

// Accuracy for the two closed-end task types, composite text score otherwise.
inline ScoredSample score_sample(const EvalSample& s, const MetricWeights& w = MetricWeights{}) {
    ScoredSample out;
    out.sample = s;
    if (s.task_type == "multiple_choice") {
        const ChoiceResult r = choice_accuracy(s.prediction, s.reference);
        out.score = r.score;
        out.choice_unparseable = !r.parseable;
    } else if (s.task_type == "judgment") {
        out.score = judgment_accuracy(s.prediction, s.reference);
    } else {
        out.score = composite_open(s.prediction, s.reference, w);
    }
    return out;
}

struct ReportCell {
    std::int64_t count = 0;
    double sum = 0.0;

    std::optional<double> mean() const {
        if (count == 0) return std::nullopt;
        return sum / static_cast<double>(count);
    }
};

struct StratifiedReport {
    std::map<std::string, ReportCell> organs;
    std::map<std::string, ReportCell> categories;
    double overall = 0.0;
    std::int64_t total = 0;
    std::int64_t unparseable_choices = 0;
};

inline StratifiedReport stratified_report(const std::vector<ScoredSample>& scored) {
    if (scored.empty()) throw ValidationError("report: no samples to aggregate");
    StratifiedReport r;
    for (const auto& name : organ_names()) r.organs[name] = ReportCell{};
    for (const auto& name : category_names()) r.categories[name] = ReportCell{};
    double sum = 0.0;
    for (const auto& s : scored) {
        auto& oc = r.organs[s.sample.organ];
        auto& cc = r.categories[s.sample.category];
        ++oc.count;
        oc.sum += s.score;
        ++cc.count;
        cc.sum += s.score;
        sum += s.score;
        if (s.choice_unparseable) ++r.unparseable_choices;
        ++r.total;
    }
    r.overall = sum / static_cast<double>(r.total);
    return r;
}

inline nlohmann::json report_to_json(const StratifiedReport& r, const MetricWeights& w = MetricWeights{}) {
    auto cells = [](const std::map<std::string, ReportCell>& m) {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [name, cell] : m) {
            const auto mean = cell.mean();
            j[name] = {{"count", cell.count},
                       {"mean", mean ? nlohmann::json(*mean) : nlohmann::json(nullptr)}};
        }
        return j;
    };
    nlohmann::json j;
    j["overall"] = r.overall;
    j["count"] = r.total;
    j["unparseable_choices"] = r.unparseable_choices;
    j["organs"] = cells(r.organs);
    j["categories"] = cells(r.categories);
    j["metadata"] = {{"bleu_smoothing", "add-one on clipped counts for n >= 2"},
                     {"weights",
                      {{"bleu", w.bleu}, {"rouge_l", w.rouge_l}, {"token_f1", w.token_f1},
                       {"embedding", w.embedding}}}};
    return j;
}

// Fixed-width table: organ block, category block, overall row.
inline std::string report_to_text(const StratifiedReport& r) {
    std::ostringstream os;
    os << std::left;
    auto row = [&](const std::string& name, const ReportCell& cell) {
        os << "  " << std::setw(12) << name << std::right << std::setw(8) << cell.count << "  ";
        const auto mean = cell.mean();
        if (mean)
            os << std::fixed << std::setprecision(6) << *mean;
        else
            os << "null";
        os << std::defaultfloat << std::left << "\n";
    };
    os << "organ           count  mean\n";
    for (const auto& name : organ_names()) row(name, r.organs.at(name));
    os << "category        count  mean\n";
    for (const auto& name : category_names()) row(name, r.categories.at(name));
    os << "overall         " << std::right << std::setw(5) << r.total << "  " << std::fixed
       << std::setprecision(6) << r.overall << "\n";
    return os.str();
}

}  // namespace omnict
