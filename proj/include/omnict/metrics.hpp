#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "omnict/errors.hpp"

namespace omnict {

// Lowercase, drop punctuation characters, split on whitespace.
inline std::vector<std::string> tokenize_words(const std::string& text) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : text) {
        if (std::isspace(c)) {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        } else if (!std::ispunct(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

namespace detail {

inline std::map<std::vector<std::string>, std::int64_t> ngram_counts(const std::vector<std::string>& toks,
                                                                     std::size_t n) {
    std::map<std::vector<std::string>, std::int64_t> counts;
    if (toks.size() < n) return counts;
    for (std::size_t i = 0; i + n <= toks.size(); ++i)
        ++counts[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                          toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
    return counts;
}

}  // namespace detail

// Geometric mean of clipped n-gram precisions, n = 1..max_n. Orders >= 2 get
// add-one smoothing only when the raw clipped numerator is zero; a zero
// unigram precision zeroes the whole score. Brevity penalty applies when the
// candidate is shorter than the reference.
inline double bleu(const std::vector<std::string>& cand, const std::vector<std::string>& ref,
                   std::size_t max_n = 4) {
    if (cand.empty()) return 0.0;
    double log_sum = 0.0;
    for (std::size_t n = 1; n <= max_n; ++n) {
        const auto cc = detail::ngram_counts(cand, n);
        const auto rc = detail::ngram_counts(ref, n);
        std::int64_t matched = 0, total = 0;
        for (const auto& [gram, count] : cc) {
            total += count;
            auto it = rc.find(gram);
            if (it != rc.end()) matched += std::min(count, it->second);
        }
        double p;
        if (n == 1) {
            if (matched == 0) return 0.0;
            p = static_cast<double>(matched) / static_cast<double>(total);
        } else if (matched == 0) {
            p = 1.0 / static_cast<double>(total + 1);  // add-one smoothing
        } else {
            p = static_cast<double>(matched) / static_cast<double>(total);
        }
        log_sum += std::log(p);
    }
    double score = std::exp(log_sum / static_cast<double>(max_n));
    if (cand.size() < ref.size())
        score *= std::exp(1.0 - static_cast<double>(ref.size()) / static_cast<double>(cand.size()));
    return score;
}

inline double rouge_l(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
    if (cand.empty() || ref.empty()) return 0.0;
    const std::size_t nc = cand.size(), nr = ref.size();
    std::vector<std::int64_t> prev(nr + 1, 0), cur(nr + 1, 0);
    for (std::size_t i = 1; i <= nc; ++i) {
        for (std::size_t j = 1; j <= nr; ++j) {
            cur[j] = cand[i - 1] == ref[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    const double lcs = static_cast<double>(prev[nr]);
    if (lcs == 0.0) return 0.0;
    const double p = lcs / static_cast<double>(nc), r = lcs / static_cast<double>(nr);
    return 2.0 * p * r / (p + r);
}

inline double token_f1(const std::vector<std::string>& cand, const std::vector<std::string>& ref) {
    if (cand.empty() || ref.empty()) return 0.0;
    std::map<std::string, std::int64_t> rc;
    for (const auto& t : ref) ++rc[t];
    std::int64_t overlap = 0;
    for (const auto& t : cand) {
        auto it = rc.find(t);
        if (it != rc.end() && it->second > 0) {
            ++overlap;
            --it->second;
        }
    }
    if (overlap == 0) return 0.0;
    const double p = static_cast<double>(overlap) / static_cast<double>(cand.size());
    const double r = static_cast<double>(overlap) / static_cast<double>(ref.size());
    return 2.0 * p * r / (p + r);
}

struct ChoiceResult {
    int score = 0;        // 1 iff parsed letter equals gold
    bool parseable = false;
};

// Normalize to the first standalone A-F letter: strip punctuation and
// whitespace, uppercase, then take the first single-letter word.
inline ChoiceResult choice_accuracy(const std::string& pred, const std::string& gold) {
    auto extract = [](const std::string& s) -> char {
        for (const auto& word : tokenize_words(s)) {
            if (word.size() == 1) {
                const char u = static_cast<char>(std::toupper(static_cast<unsigned char>(word[0])));
                if (u >= 'A' && u <= 'F') return u;
            }
        }
        return '\0';
    };
    const char g = extract(gold);
    if (g == '\0') throw ValidationError("choice: gold answer has no standalone A-F letter: " + gold);
    ChoiceResult res;
    const char p = extract(pred);
    if (p == '\0') return res;  // unparseable: scored 0, flagged
    res.parseable = true;
    res.score = p == g ? 1 : 0;
    return res;
}

// Exact match after the same normalization the text metrics use.
inline double judgment_accuracy(const std::string& pred, const std::string& gold) {
    return tokenize_words(pred) == tokenize_words(gold) ? 1.0 : 0.0;
}

// Weighted mean of the three text metrics, normalized by the weight sum. The
// embedding-similarity slot exists but defaults to zero weight and has no
// backing model here.
struct MetricWeights {
    double bleu = 1.0 / 3.0;
    double rouge_l = 1.0 / 3.0;
    double token_f1 = 1.0 / 3.0;
    double embedding = 0.0;  // reserved; no scorer wired in
};

inline double composite_open(const std::string& cand_text, const std::string& ref_text,
                             const MetricWeights& w = MetricWeights{}) {
    const double total = w.bleu + w.rouge_l + w.token_f1;
    if (!(total > 0.0)) throw ValidationError("metric weights must sum to a positive value");
    if (w.embedding != 0.0)
        throw ValidationError("embedding-similarity weight is reserved and must be 0");
    const auto cand = tokenize_words(cand_text);
    const auto ref = tokenize_words(ref_text);
    const double s =
        w.bleu * bleu(cand, ref) + w.rouge_l * rouge_l(cand, ref) + w.token_f1 * token_f1(cand, ref);
    return s / total;
}

}  // namespace omnict
