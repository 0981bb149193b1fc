#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "omnict/errors.hpp"
#include "omnict/sce.hpp"
#include "omnict/tensor.hpp"
#include "omnict/text.hpp"

namespace omnict {

// f64 row-major matrix used throughout the trainable path. Parameters are
// stored at double precision so finite-difference checks are meaningful;
// checkpoints cast to f32 on disk.
struct DMat {
    std::int64_t rows = 0, cols = 0;
    std::vector<double> v;

    DMat() = default;
    DMat(std::int64_t r, std::int64_t c) : rows(r), cols(c), v(static_cast<std::size_t>(r * c), 0.0) {}

    double* row(std::int64_t i) { return v.data() + i * cols; }
    const double* row(std::int64_t i) const { return v.data() + i * cols; }
    double& at(std::int64_t i, std::int64_t j) { return v[static_cast<std::size_t>(i * cols + j)]; }
    double at(std::int64_t i, std::int64_t j) const { return v[static_cast<std::size_t>(i * cols + j)]; }
    std::int64_t numel() const { return rows * cols; }
    void zero() { std::fill(v.begin(), v.end(), 0.0); }
};

namespace dmat {

// Y = X W^T + b with W stored (out x in); b may be empty.
inline DMat affine(const DMat& x, const DMat& w, const DMat& b) {
    DMat y(x.rows, w.rows);
    for (std::int64_t i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        double* yi = y.row(i);
        for (std::int64_t o = 0; o < w.rows; ++o) {
            const double* wo = w.row(o);
            double acc = b.numel() ? b.v[static_cast<std::size_t>(o)] : 0.0;
            for (std::int64_t k = 0; k < x.cols; ++k) acc += xi[k] * wo[k];
            yi[o] = acc;
        }
    }
    return y;
}

// dW += dY^T X ; db += column sums of dY.
inline void affine_grad_params(const DMat& x, const DMat& dy, DMat& dw, DMat& db) {
    for (std::int64_t i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        const double* di = dy.row(i);
        for (std::int64_t o = 0; o < dy.cols; ++o) {
            const double g = di[o];
            if (g == 0.0) continue;
            double* wo = dw.row(o);
            for (std::int64_t k = 0; k < x.cols; ++k) wo[k] += g * xi[k];
            db.v[static_cast<std::size_t>(o)] += g;
        }
    }
}

// dX += dY W.
inline void affine_grad_input(const DMat& dy, const DMat& w, DMat& dx) {
    for (std::int64_t i = 0; i < dy.rows; ++i) {
        const double* di = dy.row(i);
        double* xi = dx.row(i);
        for (std::int64_t o = 0; o < dy.cols; ++o) {
            const double g = di[o];
            if (g == 0.0) continue;
            const double* wo = w.row(o);
            for (std::int64_t k = 0; k < w.cols; ++k) xi[k] += g * wo[k];
        }
    }
}

}  // namespace dmat

inline double gelu_grad(double x) {
    const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::acos(-1.0));
    return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * phi;
}

enum class ParamGroup { adapter, text_embed, decoder };

inline const char* to_string(ParamGroup g) {
    switch (g) {
        case ParamGroup::adapter: return "adapter";
        case ParamGroup::text_embed: return "text_embed";
        default: return "decoder";
    }
}

// Every trainable tensor of the toy model. Biases are 1 x d matrices.
struct LmParamSet {
    // theta_p: MoE hybrid projection
    DMat w_slice, b_slice, w_volume, b_volume, w_share, b_share;
    // theta_t: text embedding table (V x d_f)
    DMat e_tab;
    // theta_llm: one causal attention block, GELU MLP, output head
    DMat w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
    DMat w_mlp_in, b_mlp_in, w_mlp_out, b_mlp_out;
    DMat w_out, b_out;

    struct Ref {
        const char* name;
        ParamGroup group;
        DMat* mat;
    };

    std::vector<Ref> refs() {
        return {
            {"w_slice", ParamGroup::adapter, &w_slice},   {"b_slice", ParamGroup::adapter, &b_slice},
            {"w_volume", ParamGroup::adapter, &w_volume}, {"b_volume", ParamGroup::adapter, &b_volume},
            {"w_share", ParamGroup::adapter, &w_share},   {"b_share", ParamGroup::adapter, &b_share},
            {"e_tab", ParamGroup::text_embed, &e_tab},
            {"w_q", ParamGroup::decoder, &w_q},           {"b_q", ParamGroup::decoder, &b_q},
            {"w_k", ParamGroup::decoder, &w_k},           {"b_k", ParamGroup::decoder, &b_k},
            {"w_v", ParamGroup::decoder, &w_v},           {"b_v", ParamGroup::decoder, &b_v},
            {"w_o", ParamGroup::decoder, &w_o},           {"b_o", ParamGroup::decoder, &b_o},
            {"w_mlp_in", ParamGroup::decoder, &w_mlp_in}, {"b_mlp_in", ParamGroup::decoder, &b_mlp_in},
            {"w_mlp_out", ParamGroup::decoder, &w_mlp_out}, {"b_mlp_out", ParamGroup::decoder, &b_mlp_out},
            {"w_out", ParamGroup::decoder, &w_out},       {"b_out", ParamGroup::decoder, &b_out},
        };
    }
};

struct LmModel {
    std::int64_t d_in = 0;  // MHP expert input dim
    std::int64_t d_f = 0;   // shared feature width
    LmParamSet p;
};

namespace detail {

inline DMat xavier_dmat(std::int64_t rows, std::int64_t cols, std::int64_t fan_in,
                        std::int64_t fan_out, Prng& rng, double gain = 1.0) {
    DMat m(rows, cols);
    const double bound = gain * xavier_bound(fan_in, fan_out);
    for (auto& x : m.v) x = rng.uniform1(-bound, bound);
    return m;
}

}  // namespace detail

// The output head uses a 2x wider init than the hidden layers; without
// normalization layers this sets the initial logit scale.
inline constexpr double kHeadInitGain = 2.0;

inline LmModel make_lm_model(std::int64_t d_in, std::int64_t d_f, std::uint64_t seed) {
    if (d_in < 1 || d_f < 1) throw ValidationError("lm model: dims must be >= 1");
    LmModel m;
    m.d_in = d_in;
    m.d_f = d_f;
    Prng rng(seed);
    auto& p = m.p;
    p.w_slice = detail::xavier_dmat(d_f, d_in, d_in, d_f, rng);
    p.b_slice = DMat(1, d_f);
    p.w_volume = detail::xavier_dmat(d_f, d_in, d_in, d_f, rng);
    p.b_volume = DMat(1, d_f);
    p.w_share = detail::xavier_dmat(d_f, d_f, d_f, d_f, rng);
    p.b_share = DMat(1, d_f);
    p.e_tab = detail::xavier_dmat(kVocabSize, d_f, kVocabSize, d_f, rng);
    for (auto* w : {&p.w_q, &p.w_k, &p.w_v, &p.w_o})
        *w = detail::xavier_dmat(d_f, d_f, d_f, d_f, rng);
    p.b_q = DMat(1, d_f);
    p.b_k = DMat(1, d_f);
    p.b_v = DMat(1, d_f);
    p.b_o = DMat(1, d_f);
    p.w_mlp_in = detail::xavier_dmat(4 * d_f, d_f, d_f, 4 * d_f, rng);
    p.b_mlp_in = DMat(1, 4 * d_f);
    p.w_mlp_out = detail::xavier_dmat(d_f, 4 * d_f, 4 * d_f, d_f, rng);
    p.b_mlp_out = DMat(1, d_f);
    p.w_out = detail::xavier_dmat(kVocabSize, d_f, d_f, kVocabSize, rng, kHeadInitGain);
    p.b_out = DMat(1, kVocabSize);
    return m;
}

inline LmParamSet zeros_like(LmParamSet& p) {
    LmParamSet z;
    auto src = p.refs();
    auto dst = z.refs();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].mat = DMat(src[i].mat->rows, src[i].mat->cols);
    return z;
}

// One training record after the frozen visual prefix has been computed.
struct LmSample {
    DMat visual;                             // L x d_in unshuffled token features
    Modality modality = Modality::volume;
    std::vector<std::uint8_t> organ_flags;   // size L; empty => OSE disabled
    std::int64_t l_c = 0;                    // aggregated token count when OSE enabled
    std::vector<int> ids;                    // BOS + prompt + answer + EOS
    std::vector<std::uint8_t> loss_mask;     // true on answer positions (incl. final EOS)
};

struct LmActivations {
    DMat mhp_pre, mhp_hidden, global_tokens;  // L x d_f after the shared projection
    std::vector<std::int64_t> selected;       // organ token indices in scan order
    DMat fused;                               // (L + l_c) x d_f when OSE active, else global
    DMat seq;                                 // T: (visual_rows + m_text) x d_f
    DMat q, k, v, attn_p, attn_o, x1, mlp_pre, mlp_hidden, x2, logits;
    std::int64_t visual_rows = 0;
    double loss = 0.0;
};

namespace detail {

inline void softmax_row_inplace(double* p, std::int64_t n) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < n; ++j) mx = std::max(mx, p[j]);
    double sum = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
        p[j] = std::exp(p[j] - mx);
        sum += p[j];
    }
    for (std::int64_t j = 0; j < n; ++j) p[j] /= sum;
}

// Causal attention + residual, GELU MLP + residual, output head.
inline void run_decoder(const LmParamSet& p, const DMat& t, LmActivations& a) {
    const std::int64_t n = t.rows, d = t.cols;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    a.q = dmat::affine(t, p.w_q, p.b_q);
    a.k = dmat::affine(t, p.w_k, p.b_k);
    a.v = dmat::affine(t, p.w_v, p.b_v);

    a.attn_p = DMat(n, n);
    for (std::int64_t i = 0; i < n; ++i) {
        double* row = a.attn_p.row(i);
        const double* qi = a.q.row(i);
        for (std::int64_t j = 0; j <= i; ++j) {
            const double* kj = a.k.row(j);
            double acc = 0.0;
            for (std::int64_t s = 0; s < d; ++s) acc += qi[s] * kj[s];
            row[j] = acc * scale;
        }
        softmax_row_inplace(row, i + 1);  // entries past i stay zero (masked out)
    }

    a.attn_o = DMat(n, d);
    for (std::int64_t i = 0; i < n; ++i) {
        const double* pi = a.attn_p.row(i);
        double* oi = a.attn_o.row(i);
        for (std::int64_t j = 0; j <= i; ++j) {
            const double w = pi[j];
            if (w == 0.0) continue;
            const double* vj = a.v.row(j);
            for (std::int64_t s = 0; s < d; ++s) oi[s] += w * vj[s];
        }
    }

    DMat proj = dmat::affine(a.attn_o, p.w_o, p.b_o);
    a.x1 = t;
    for (std::size_t i = 0; i < a.x1.v.size(); ++i) a.x1.v[i] += proj.v[i];

    a.mlp_pre = dmat::affine(a.x1, p.w_mlp_in, p.b_mlp_in);
    a.mlp_hidden = a.mlp_pre;
    for (auto& x : a.mlp_hidden.v) x = gelu(x);
    DMat mlp = dmat::affine(a.mlp_hidden, p.w_mlp_out, p.b_mlp_out);
    a.x2 = a.x1;
    for (std::size_t i = 0; i < a.x2.v.size(); ++i) a.x2.v[i] += mlp.v[i];

    a.logits = dmat::affine(a.x2, p.w_out, p.b_out);
}

}  // namespace detail

// Standalone decoder pass: n x d_f input rows -> n x V logits.
inline DMat decoder_forward(const LmModel& m, const DMat& t) {
    if (t.rows < 1 || t.cols != m.d_f) throw ValidationError("decoder_forward: bad input shape");
    LmActivations a;
    detail::run_decoder(m.p, t, a);
    return a.logits;
}

// Mean over masked positions of -log softmax(logits[t-1])[y_t], f64 accumulation.
// dlogits, when given, receives the gradient (already divided by the count).
inline double ar_loss(const DMat& logits, const std::vector<int>& targets,
                      const std::vector<std::uint8_t>& mask, DMat* dlogits = nullptr) {
    const auto n = static_cast<std::size_t>(logits.rows);
    if (targets.size() != n || mask.size() != n)
        throw ValidationError("ar_loss: targets/mask length must equal logit rows");
    std::int64_t count = 0;
    for (auto f : mask) count += f ? 1 : 0;
    if (count == 0) throw ValidationError("ar_loss: degenerate loss, mask selects no positions");
    if (mask[0]) throw ValidationError("ar_loss: position 0 cannot be predicted");

    if (dlogits) *dlogits = DMat(logits.rows, logits.cols);
    double total = 0.0;
    std::vector<double> probs(static_cast<std::size_t>(logits.cols));
    for (std::size_t t = 1; t < n; ++t) {
        if (!mask[t]) continue;
        const int y = targets[t];
        if (y < 0 || y >= logits.cols) throw ValidationError("ar_loss: target id out of range");
        const double* row = logits.row(static_cast<std::int64_t>(t - 1));
        std::copy(row, row + logits.cols, probs.begin());
        detail::softmax_row_inplace(probs.data(), logits.cols);
        total += -std::log(std::max(probs[static_cast<std::size_t>(y)], 1e-300));
        if (dlogits) {
            double* g = dlogits->row(static_cast<std::int64_t>(t - 1));
            for (std::int64_t j = 0; j < logits.cols; ++j) g[j] += probs[static_cast<std::size_t>(j)];
            g[y] -= 1.0;
        }
    }
    total /= static_cast<double>(count);
    if (dlogits)
        for (auto& g : dlogits->v) g /= static_cast<double>(count);
    return total;
}

// Full differentiable path: MHP -> optional OSE -> embed -> decoder -> loss.
inline LmActivations lm_forward(const LmModel& m, const LmSample& s) {
    if (s.visual.cols != m.d_in) throw ValidationError("lm_forward: visual dim mismatch");
    if (s.ids.size() != s.loss_mask.size())
        throw ValidationError("lm_forward: ids/mask length mismatch");
    const bool ose = !s.organ_flags.empty();
    if (ose && static_cast<std::int64_t>(s.organ_flags.size()) != s.visual.rows)
        throw ValidationError("lm_forward: organ flag count must equal visual token count");
    if (ose && s.l_c < 1) throw ValidationError("lm_forward: L_c must be >= 1 when OSE is active");

    LmActivations a;
    const auto& p = m.p;
    const DMat& we = s.modality == Modality::slice ? p.w_slice : p.w_volume;
    const DMat& be = s.modality == Modality::slice ? p.b_slice : p.b_volume;
    a.mhp_pre = dmat::affine(s.visual, we, be);
    a.mhp_hidden = a.mhp_pre;
    for (auto& x : a.mhp_hidden.v) x = gelu(x);
    a.global_tokens = dmat::affine(a.mhp_hidden, p.w_share, p.b_share);

    const std::int64_t l = a.global_tokens.rows, d = m.d_f;
    if (ose) {
        for (std::int64_t t = 0; t < l; ++t)
            if (s.organ_flags[static_cast<std::size_t>(t)]) a.selected.push_back(t);
        const auto lo = static_cast<std::int64_t>(a.selected.size());
        a.fused = DMat(l + s.l_c, d);
        std::copy(a.global_tokens.v.begin(), a.global_tokens.v.end(), a.fused.v.begin());
        if (lo >= s.l_c && lo > 0) {
            for (std::int64_t j = 0; j < s.l_c; ++j) {
                const std::int64_t b0 = j * lo / s.l_c, b1 = (j + 1) * lo / s.l_c;
                double* dst = a.fused.row(l + j);
                for (std::int64_t t = b0; t < b1; ++t) {
                    const double* src = a.global_tokens.row(a.selected[static_cast<std::size_t>(t)]);
                    for (std::int64_t f = 0; f < d; ++f) dst[f] += src[f];
                }
                for (std::int64_t f = 0; f < d; ++f) dst[f] /= static_cast<double>(b1 - b0);
            }
        } else if (lo > 0) {
            for (std::int64_t j = 0; j < s.l_c; ++j) {
                const double* src = a.global_tokens.row(a.selected[static_cast<std::size_t>(j * lo / s.l_c)]);
                std::copy(src, src + d, a.fused.row(l + j));
            }
        }
        // lo == 0 leaves the local rows at zero
    } else {
        a.fused = a.global_tokens;
    }

    a.visual_rows = a.fused.rows;
    const auto mt = static_cast<std::int64_t>(s.ids.size());
    a.seq = DMat(a.visual_rows + mt, d);
    std::copy(a.fused.v.begin(), a.fused.v.end(), a.seq.v.begin());
    for (std::int64_t t = 0; t < mt; ++t) {
        const int id = s.ids[static_cast<std::size_t>(t)];
        if (id < 0 || id >= kVocabSize) throw ValidationError("lm_forward: text id out of vocab range");
        std::copy(p.e_tab.row(id), p.e_tab.row(id) + d, a.seq.row(a.visual_rows + t));
    }

    detail::run_decoder(p, a.seq, a);

    std::vector<int> targets(static_cast<std::size_t>(a.seq.rows), 0);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(a.seq.rows), 0);
    for (std::int64_t t = 0; t < mt; ++t) {
        targets[static_cast<std::size_t>(a.visual_rows + t)] = s.ids[static_cast<std::size_t>(t)];
        mask[static_cast<std::size_t>(a.visual_rows + t)] = s.loss_mask[static_cast<std::size_t>(t)];
    }
    a.loss = ar_loss(a.logits, targets, mask);
    return a;
}

// Analytic gradients for theta_p, theta_t, theta_llm. The frozen patch
// encoder sits upstream of LmSample::visual and never appears here.
inline LmParamSet lm_backward(const LmModel& m, const LmSample& s, const LmActivations& a,
                              LmParamSet& grads) {
    const auto& p = m.p;
    const std::int64_t n = a.seq.rows, d = m.d_f;
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    const auto mt = static_cast<std::int64_t>(s.ids.size());

    std::vector<int> targets(static_cast<std::size_t>(n), 0);
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(n), 0);
    for (std::int64_t t = 0; t < mt; ++t) {
        targets[static_cast<std::size_t>(a.visual_rows + t)] = s.ids[static_cast<std::size_t>(t)];
        mask[static_cast<std::size_t>(a.visual_rows + t)] = s.loss_mask[static_cast<std::size_t>(t)];
    }
    DMat dlogits;
    ar_loss(a.logits, targets, mask, &dlogits);

    dmat::affine_grad_params(a.x2, dlogits, grads.w_out, grads.b_out);
    DMat dx2(n, d);
    dmat::affine_grad_input(dlogits, p.w_out, dx2);

    DMat dhidden(n, 4 * d);
    dmat::affine_grad_input(dx2, p.w_mlp_out, dhidden);
    dmat::affine_grad_params(a.mlp_hidden, dx2, grads.w_mlp_out, grads.b_mlp_out);
    DMat dpre = dhidden;
    for (std::size_t i = 0; i < dpre.v.size(); ++i) dpre.v[i] *= gelu_grad(a.mlp_pre.v[i]);
    dmat::affine_grad_params(a.x1, dpre, grads.w_mlp_in, grads.b_mlp_in);
    DMat dx1 = dx2;  // residual
    dmat::affine_grad_input(dpre, p.w_mlp_in, dx1);

    DMat dattn_o(n, d);
    dmat::affine_grad_input(dx1, p.w_o, dattn_o);
    dmat::affine_grad_params(a.attn_o, dx1, grads.w_o, grads.b_o);

    DMat dq(n, d), dk(n, d), dv(n, d);
    std::vector<double> dp(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        const double* poi = a.attn_p.row(i);
        const double* doi = dattn_o.row(i);
        double dot = 0.0;
        for (std::int64_t j = 0; j <= i; ++j) {
            const double* vj = a.v.row(j);
            double acc = 0.0;
            for (std::int64_t sdim = 0; sdim < d; ++sdim) acc += doi[sdim] * vj[sdim];
            dp[static_cast<std::size_t>(j)] = acc;
            dot += acc * poi[j];
            double* dvj = dv.row(j);
            const double w = poi[j];
            for (std::int64_t sdim = 0; sdim < d; ++sdim) dvj[sdim] += w * doi[sdim];
        }
        const double* qi = a.q.row(i);
        double* dqi = dq.row(i);
        for (std::int64_t j = 0; j <= i; ++j) {
            const double ds = poi[j] * (dp[static_cast<std::size_t>(j)] - dot) * scale;
            if (ds == 0.0) continue;
            const double* kj = a.k.row(j);
            double* dkj = dk.row(j);
            for (std::int64_t sdim = 0; sdim < d; ++sdim) {
                dqi[sdim] += ds * kj[sdim];
                dkj[sdim] += ds * qi[sdim];
            }
        }
    }

    DMat dseq = dx1;  // residual into T
    dmat::affine_grad_params(a.seq, dq, grads.w_q, grads.b_q);
    dmat::affine_grad_params(a.seq, dk, grads.w_k, grads.b_k);
    dmat::affine_grad_params(a.seq, dv, grads.w_v, grads.b_v);
    dmat::affine_grad_input(dq, p.w_q, dseq);
    dmat::affine_grad_input(dk, p.w_k, dseq);
    dmat::affine_grad_input(dv, p.w_v, dseq);

    // split T gradient into fused-visual part and text part
    for (std::int64_t t = 0; t < mt; ++t) {
        const int id = s.ids[static_cast<std::size_t>(t)];
        const double* src = dseq.row(a.visual_rows + t);
        double* dst = grads.e_tab.row(id);
        for (std::int64_t f = 0; f < d; ++f) dst[f] += src[f];
    }

    const std::int64_t l = a.global_tokens.rows;
    DMat dglobal(l, d);
    for (std::int64_t t = 0; t < l; ++t)
        std::copy(dseq.row(t), dseq.row(t) + d, dglobal.row(t));
    if (!s.organ_flags.empty()) {
        const auto lo = static_cast<std::int64_t>(a.selected.size());
        if (lo >= s.l_c && lo > 0) {
            for (std::int64_t j = 0; j < s.l_c; ++j) {
                const std::int64_t b0 = j * lo / s.l_c, b1 = (j + 1) * lo / s.l_c;
                const double* dagg = dseq.row(l + j);
                for (std::int64_t t = b0; t < b1; ++t) {
                    double* dst = dglobal.row(a.selected[static_cast<std::size_t>(t)]);
                    const double inv = 1.0 / static_cast<double>(b1 - b0);
                    for (std::int64_t f = 0; f < d; ++f) dst[f] += dagg[f] * inv;
                }
            }
        } else if (lo > 0) {
            for (std::int64_t j = 0; j < s.l_c; ++j) {
                const double* dagg = dseq.row(l + j);
                double* dst = dglobal.row(a.selected[static_cast<std::size_t>(j * lo / s.l_c)]);
                for (std::int64_t f = 0; f < d; ++f) dst[f] += dagg[f];
            }
        }
    }

    dmat::affine_grad_params(a.mhp_hidden, dglobal, grads.w_share, grads.b_share);
    DMat dh(l, d);
    dmat::affine_grad_input(dglobal, p.w_share, dh);
    for (std::size_t i = 0; i < dh.v.size(); ++i) dh.v[i] *= gelu_grad(a.mhp_pre.v[i]);
    // only the routed expert receives gradient
    DMat& dwe = s.modality == Modality::slice ? grads.w_slice : grads.w_volume;
    DMat& dbe = s.modality == Modality::slice ? grads.b_slice : grads.b_volume;
    dmat::affine_grad_params(s.visual, dh, dwe, dbe);
    return grads;
}

// Mean loss over a batch; grads, when given, receive the batch-mean gradient.
inline double lm_batch_loss(const LmModel& m, const std::vector<LmSample>& batch,
                            LmParamSet* grads = nullptr) {
    if (batch.empty()) throw ValidationError("lm batch: empty batch");
    double total = 0.0;
    for (const auto& s : batch) {
        LmActivations a = lm_forward(m, s);
        total += a.loss;
        if (grads) {
            LmParamSet gs = zeros_like(const_cast<LmParamSet&>(m.p));
            lm_backward(m, s, a, gs);
            auto grefs = grads->refs();
            auto srefs = gs.refs();
            const double inv = 1.0 / static_cast<double>(batch.size());
            for (std::size_t i = 0; i < grefs.size(); ++i) {
                auto& dst = grefs[i].mat->v;
                const auto& src = srefs[i].mat->v;
                for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j] * inv;
            }
        }
    }
    return total / static_cast<double>(batch.size());
}

}  // namespace omnict
