#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "omnict/gradcheck.hpp"
#include "omnict/lm.hpp"
#include "omnict/text.hpp"

namespace {

using omnict::DMat;
using omnict::LmActivations;
using omnict::LmModel;
using omnict::LmParamSet;
using omnict::LmSample;
using omnict::Modality;
using omnict::Prng;
using omnict::ValidationError;

// --- byte codec -------------------------------------------------------------

TEST(Text, EncodeWrapsWithSpecials) {
    EXPECT_EQ(omnict::encode_text("ab"), (std::vector<int>{256, 97, 98, 257}));
    EXPECT_EQ(omnict::encode_text(""), (std::vector<int>{256, 257}));
}

TEST(Text, DecodeDropsSpecials) {
    EXPECT_EQ(omnict::decode_text({256, 104, 105, 257, 258}), "hi");
    EXPECT_EQ(omnict::decode_text(omnict::encode_text("round trip!")), "round trip!");
}

TEST(Text, NonAsciiBytesSurvive) {
    const std::string s = "\xc3\xa9\x00\xff";  // arbitrary bytes incl. NUL
    const std::string in(s.data(), 4);
    EXPECT_EQ(omnict::decode_text(omnict::encode_text(in)), in);
}

TEST(Text, DecodeRejectsOutOfVocab) {
    EXPECT_THROW(omnict::decode_text({259}), ValidationError);
    EXPECT_THROW(omnict::decode_text({-1}), ValidationError);
}

TEST(Text, VocabConstants) {
    EXPECT_EQ(omnict::kVocabSize, 259);
    EXPECT_EQ(omnict::kBos, 256);
    EXPECT_EQ(omnict::kEos, 257);
    EXPECT_EQ(omnict::kPad, 258);
}

// --- masked autoregressive loss ---------------------------------------------

TEST(ArLoss, UniformLogitsGiveLogVocab) {
    // zero logits over 259 classes: -log(1/259) = ln 259
    DMat logits(4, omnict::kVocabSize);
    std::vector<int> targets = {0, 5, 17, 256};
    std::vector<std::uint8_t> mask = {0, 1, 1, 1};
    const double loss = omnict::ar_loss(logits, targets, mask);
    EXPECT_NEAR(loss, 5.556828061699537, 1e-4);
}

TEST(ArLoss, PositionShift) {
    // logits at t-1 predict target t: make row 0 certain of class 3
    DMat logits(2, 5);
    logits.at(0, 3) = 50.0;
    std::vector<int> targets = {0, 3};
    std::vector<std::uint8_t> mask = {0, 1};
    EXPECT_NEAR(omnict::ar_loss(logits, targets, mask), 0.0, 1e-12);
    targets[1] = 2;  // now the certain class is wrong
    EXPECT_GT(omnict::ar_loss(logits, targets, mask), 10.0);
}

TEST(ArLoss, MeanOverMaskedOnly) {
    DMat logits(3, 4);
    logits.at(0, 1) = 100.0;  // certain and correct for t=1
    std::vector<int> targets = {0, 1, 2};
    std::vector<std::uint8_t> mask_one = {0, 1, 0};
    std::vector<std::uint8_t> mask_two = {0, 1, 1};
    const double l1 = omnict::ar_loss(logits, targets, mask_one);
    const double l2 = omnict::ar_loss(logits, targets, mask_two);
    EXPECT_NEAR(l1, 0.0, 1e-12);
    EXPECT_NEAR(l2, 0.5 * std::log(4.0), 1e-9);  // (0 + ln 4) / 2
}

TEST(ArLoss, DegenerateMasksRejected) {
    DMat logits(2, 4);
    std::vector<int> targets = {0, 1};
    EXPECT_THROW(omnict::ar_loss(logits, targets, {0, 0}), ValidationError);
    EXPECT_THROW(omnict::ar_loss(logits, targets, {1, 0}), ValidationError);
    EXPECT_THROW(omnict::ar_loss(logits, targets, {0}), ValidationError);
    EXPECT_THROW(omnict::ar_loss(logits, {0, 9}, {0, 1}), ValidationError);  // target out of range
}

TEST(ArLoss, GradientSumsToZeroPerRow) {
    DMat logits(3, 6);
    Prng rng(5);
    for (auto& v : logits.v) v = rng.uniform1(-2.0, 2.0);
    std::vector<int> targets = {0, 2, 4};
    std::vector<std::uint8_t> mask = {0, 1, 1};
    DMat g;
    omnict::ar_loss(logits, targets, mask, &g);
    for (std::int64_t i = 0; i < 2; ++i) {  // rows 0 and 1 carry gradient
        double s = 0.0;
        for (std::int64_t j = 0; j < 6; ++j) s += g.at(i, j);
        EXPECT_NEAR(s, 0.0, 1e-12);
    }
    for (std::int64_t j = 0; j < 6; ++j) EXPECT_EQ(g.at(2, j), 0.0);  // last row unused
}

// --- decoder ----------------------------------------------------------------

TEST(Decoder, CausalMasking) {
    // changing a later input row must not change earlier logits
    LmModel m = omnict::make_lm_model(8, 16, 3);
    DMat t(5, 16);
    Prng rng(4);
    for (auto& v : t.v) v = rng.uniform1(-1.0, 1.0);
    DMat base = omnict::decoder_forward(m, t);
    DMat t2 = t;
    for (std::int64_t j = 0; j < 16; ++j) t2.at(4, j) += 3.0;
    DMat bumped = omnict::decoder_forward(m, t2);
    for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t j = 0; j < omnict::kVocabSize; ++j)
            EXPECT_EQ(base.at(i, j), bumped.at(i, j)) << "row " << i;
    // the bumped row itself must change
    double diff = 0.0;
    for (std::int64_t j = 0; j < omnict::kVocabSize; ++j)
        diff += std::abs(base.at(4, j) - bumped.at(4, j));
    EXPECT_GT(diff, 0.0);
}

TEST(Decoder, ShapeValidation) {
    LmModel m = omnict::make_lm_model(8, 16, 3);
    EXPECT_THROW(omnict::decoder_forward(m, DMat(2, 8)), ValidationError);  // wrong width
}

TEST(Decoder, AttentionRowsAreDistributions) {
    LmModel m = omnict::make_lm_model(8, 16, 9);
    LmSample s;
    s.modality = Modality::volume;
    s.visual = DMat(4, 8);
    Prng rng(10);
    for (auto& v : s.visual.v) v = rng.uniform1(-1.0, 1.0);
    s.ids = {256, 'x', 257};
    s.loss_mask = {0, 1, 1};
    LmActivations a = omnict::lm_forward(m, s);
    for (std::int64_t i = 0; i < a.attn_p.rows; ++i) {
        double sum = 0.0;
        for (std::int64_t j = 0; j < a.attn_p.cols; ++j) {
            const double p = a.attn_p.at(i, j);
            EXPECT_GE(p, 0.0);
            if (j > i) EXPECT_EQ(p, 0.0);  // causal: no attention to the future
            sum += p;
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

// --- full forward/backward --------------------------------------------------

LmSample random_sample(std::int64_t l, std::int64_t d_in, Modality modality, Prng& rng,
                       bool with_ose = false) {
    LmSample s;
    s.modality = modality;
    s.visual = DMat(l, d_in);
    for (auto& v : s.visual.v) v = rng.uniform1(-1.0, 1.0);
    if (with_ose) {
        s.organ_flags.assign(static_cast<std::size_t>(l), 0);
        for (std::int64_t t = 0; t < l; t += 2) s.organ_flags[static_cast<std::size_t>(t)] = 1;
        s.l_c = 3;
    }
    s.ids = {256, 'a', 'b', 257};
    s.loss_mask = {0, 0, 1, 1};
    return s;
}

TEST(LmForward, SequenceLayout) {
    LmModel m = omnict::make_lm_model(8, 16, 11);
    Prng rng(12);
    LmSample plain = random_sample(6, 8, Modality::volume, rng);
    LmActivations a = omnict::lm_forward(m, plain);
    EXPECT_EQ(a.visual_rows, 6);
    EXPECT_EQ(a.seq.rows, 6 + 4);
    EXPECT_EQ(a.logits.rows, 10);
    EXPECT_EQ(a.logits.cols, omnict::kVocabSize);

    LmSample ose = random_sample(6, 8, Modality::volume, rng, true);
    LmActivations b = omnict::lm_forward(m, ose);
    EXPECT_EQ(b.visual_rows, 6 + 3);  // global rows + L_c aggregated rows
    EXPECT_EQ(b.selected.size(), 3u); // tokens 0, 2, 4
}

TEST(LmForward, TextRowsComeFromEmbeddingTable) {
    LmModel m = omnict::make_lm_model(4, 8, 13);
    Prng rng(14);
    LmSample s = random_sample(3, 4, Modality::slice, rng);
    LmActivations a = omnict::lm_forward(m, s);
    for (std::size_t t = 0; t < s.ids.size(); ++t)
        for (std::int64_t f = 0; f < 8; ++f)
            EXPECT_EQ(a.seq.at(a.visual_rows + static_cast<std::int64_t>(t), f),
                      m.p.e_tab.at(s.ids[t], f));
}

TEST(LmForward, Validations) {
    LmModel m = omnict::make_lm_model(4, 8, 13);
    Prng rng(15);
    LmSample s = random_sample(3, 4, Modality::slice, rng);
    LmSample bad = s;
    bad.visual = DMat(3, 5);
    EXPECT_THROW(omnict::lm_forward(m, bad), ValidationError);
    bad = s;
    bad.loss_mask.pop_back();
    EXPECT_THROW(omnict::lm_forward(m, bad), ValidationError);
    bad = s;
    bad.organ_flags.assign(2, 1);  // wrong flag count
    bad.l_c = 2;
    EXPECT_THROW(omnict::lm_forward(m, bad), ValidationError);
    bad = s;
    bad.ids[1] = 500;
    EXPECT_THROW(omnict::lm_forward(m, bad), ValidationError);
}

TEST(LmRouting, ExclusivityOnLossAndGradients) {
    LmModel m = omnict::make_lm_model(6, 12, 21);
    Prng rng(22);
    std::vector<LmSample> slice_batch = {random_sample(4, 6, Modality::slice, rng),
                                         random_sample(4, 6, Modality::slice, rng, true)};

    LmParamSet g1 = omnict::zeros_like(m.p);
    const double l1 = omnict::lm_batch_loss(m, slice_batch, &g1);

    // perturb the volume expert arbitrarily: slice losses and grads identical
    LmModel m2 = m;
    for (auto& v : m2.p.w_volume.v) v += 37.5;
    for (auto& v : m2.p.b_volume.v) v -= 4.0;
    LmParamSet g2 = omnict::zeros_like(m2.p);
    const double l2 = omnict::lm_batch_loss(m2, slice_batch, &g2);
    EXPECT_EQ(l1, l2);
    auto r1 = g1.refs();
    auto r2 = g2.refs();
    for (std::size_t i = 0; i < r1.size(); ++i)
        EXPECT_EQ(r1[i].mat->v, r2[i].mat->v) << r1[i].name;

    // unused expert's gradient is exactly zero
    for (double v : g1.w_volume.v) EXPECT_EQ(v, 0.0);
    for (double v : g1.b_volume.v) EXPECT_EQ(v, 0.0);

    // symmetric on volume batches
    std::vector<LmSample> vol_batch = {random_sample(4, 6, Modality::volume, rng)};
    LmParamSet g3 = omnict::zeros_like(m.p);
    omnict::lm_batch_loss(m, vol_batch, &g3);
    for (double v : g3.w_slice.v) EXPECT_EQ(v, 0.0);
    for (double v : g3.b_slice.v) EXPECT_EQ(v, 0.0);
}

TEST(LmInit, DeterministicAndHeadGainApplied) {
    LmModel a = omnict::make_lm_model(6, 12, 7);
    LmModel b = omnict::make_lm_model(6, 12, 7);
    auto ra = a.p.refs(), rb = b.p.refs();
    for (std::size_t i = 0; i < ra.size(); ++i) EXPECT_EQ(ra[i].mat->v, rb[i].mat->v);

    // head bound is kHeadInitGain times the hidden-layer Xavier bound
    const double base = omnict::xavier_bound(12, omnict::kVocabSize);
    double max_abs = 0.0;
    for (double v : a.p.w_out.v) max_abs = std::max(max_abs, std::abs(v));
    EXPECT_LE(max_abs, omnict::kHeadInitGain * base);
    EXPECT_GT(max_abs, base);  // would fail for a standard init
}

// --- finite differences -----------------------------------------------------

TEST(GradCheck, QuadraticToyIsExact) {
    // central differences are exact for quadratics up to roundoff
    const std::vector<double> a = {0.5, -1.25, 2.0, 3.5};
    std::vector<double> x = {1.0, -0.5, 0.25, 2.0};
    auto f = [&](const std::vector<double>& v) {
        double s = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) s += a[i] * v[i] * v[i];
        return s;
    };
    const double eps = 1e-4;
    double max_rel = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double analytic = 2.0 * a[i] * x[i];
        const double saved = x[i];
        x[i] = saved + eps;
        const double lp = f(x);
        x[i] = saved - eps;
        const double lm = f(x);
        x[i] = saved;
        max_rel = std::max(max_rel, omnict::relative_error(analytic, (lp - lm) / (2 * eps)));
    }
    EXPECT_LE(max_rel, 1e-8);
}

TEST(GradCheck, FullPipelineSmallInstance) {
    omnict::GradCheckInstance gi = omnict::make_gradcheck_instance(7);
    omnict::GradCheckReport rep = omnict::grad_check(gi.model, gi.batch, 1e-4, 64, 7);
    EXPECT_EQ(rep.entries.size(), gi.model.p.refs().size());
    for (const auto& e : rep.entries) {
        EXPECT_GE(e.sampled, std::min<std::int64_t>(64, 1));
        EXPECT_LE(e.max_rel_err, 1e-4) << e.name;
    }
    EXPECT_LE(rep.max_rel_err, 1e-4);
}

TEST(GradCheck, SmallTensorsFullyCovered) {
    omnict::GradCheckInstance gi = omnict::make_gradcheck_instance(1);
    omnict::GradCheckReport rep = omnict::grad_check(gi.model, gi.batch, 1e-4, 64, 1);
    for (const auto& e : rep.entries) {
        if (e.name == std::string("b_share")) EXPECT_EQ(e.sampled, 32);  // 1 x d_f, all coords
        if (e.name == std::string("w_out")) EXPECT_EQ(e.sampled, 64);    // sampled subset
    }
}

TEST(RelativeError, FlooredDenominator) {
    EXPECT_EQ(omnict::relative_error(0.0, 0.0), 0.0);
    EXPECT_DOUBLE_EQ(omnict::relative_error(2.0, 1.0), 0.5);
    EXPECT_DOUBLE_EQ(omnict::relative_error(0.0, 1e-15), 1e-15 / 1e-12);
}

}  // namespace
