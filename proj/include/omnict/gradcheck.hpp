#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "omnict/lm.hpp"
#include "omnict/tensor.hpp"

namespace omnict {

inline double relative_error(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

struct GradCheckInstance {
    LmModel model;
    std::vector<LmSample> batch;
};

// Small pinned instance exercising every parameter: a volume sample with the
// organ path active plus a slice sample, 16 visual tokens each, d_f = 32.
inline GradCheckInstance make_gradcheck_instance(std::uint64_t seed) {
    constexpr std::int64_t kVisual = 16, kDin = 64, kDf = 32;
    GradCheckInstance gi;
    gi.model = make_lm_model(kDin, kDf, seed);
    Prng rng(seed + 1);

    LmSample vol;
    vol.modality = Modality::volume;
    vol.visual = DMat(kVisual, kDin);
    for (auto& x : vol.visual.v) x = rng.uniform1(-1.0, 1.0);
    vol.organ_flags.assign(kVisual, 0);
    for (std::int64_t t = 0; t < kVisual; ++t) vol.organ_flags[static_cast<std::size_t>(t)] = (t % 3 == 0);
    vol.l_c = 4;  // 6 selected tokens into 4 bins: compression branch
    vol.ids = {256, 'q', ':', ' ', 'l', 'u', 'n', 'g', 's', 257};
    vol.loss_mask.assign(vol.ids.size(), 0);
    for (std::size_t i = 4; i < vol.ids.size(); ++i) vol.loss_mask[i] = 1;

    LmSample sl;
    sl.modality = Modality::slice;
    sl.visual = DMat(kVisual, kDin);
    for (auto& x : sl.visual.v) x = rng.uniform1(-1.0, 1.0);
    sl.organ_flags.assign(kVisual, 0);
    sl.organ_flags[2] = sl.organ_flags[9] = 1;
    sl.l_c = 5;  // 2 selected tokens into 5 bins: magnification branch
    sl.ids = {256, 'o', 'k', 257};
    sl.loss_mask = {0, 0, 1, 1};

    gi.batch = {std::move(vol), std::move(sl)};
    return gi;
}

struct GradCheckEntry {
    std::string name;
    std::int64_t sampled = 0;
    double max_rel_err = 0.0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::vector<GradCheckEntry> entries;
};

// Central-difference verification of the analytic gradients. Samples up to
// `coords_per_tensor` coordinates per parameter tensor (all of them for small
// tensors). The frozen patch encoder is not part of the model and therefore
// never appears in the table.
inline GradCheckReport grad_check(LmModel& model, const std::vector<LmSample>& batch,
                                  double eps = 1e-4, std::int64_t coords_per_tensor = 64,
                                  std::uint64_t seed = 0) {
    LmParamSet grads = zeros_like(model.p);
    lm_batch_loss(model, batch, &grads);

    GradCheckReport report;
    Prng rng(seed);
    auto prefs = model.p.refs();
    auto grefs = grads.refs();
    for (std::size_t pi = 0; pi < prefs.size(); ++pi) {
        DMat& param = *prefs[pi].mat;
        const DMat& grad = *grefs[pi].mat;
        const std::int64_t n = param.numel();

        std::vector<std::int64_t> coords;
        if (n <= coords_per_tensor) {
            coords.resize(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
        } else {
            // distinct draws without replacement
            std::vector<std::int64_t> pool(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
            for (std::int64_t i = 0; i < coords_per_tensor; ++i) {
                const auto j = i + static_cast<std::int64_t>(rng.next_u64() % static_cast<std::uint64_t>(n - i));
                std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
                coords.push_back(pool[static_cast<std::size_t>(i)]);
            }
        }

        GradCheckEntry entry;
        entry.name = prefs[pi].name;
        entry.sampled = static_cast<std::int64_t>(coords.size());
        for (auto c : coords) {
            const double saved = param.v[static_cast<std::size_t>(c)];
            param.v[static_cast<std::size_t>(c)] = saved + eps;
            const double lp = lm_batch_loss(model, batch);
            param.v[static_cast<std::size_t>(c)] = saved - eps;
            const double lm = lm_batch_loss(model, batch);
            param.v[static_cast<std::size_t>(c)] = saved;
            const double fd = (lp - lm) / (2.0 * eps);
            entry.max_rel_err = std::max(entry.max_rel_err, relative_error(grad.v[static_cast<std::size_t>(c)], fd));
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace omnict
