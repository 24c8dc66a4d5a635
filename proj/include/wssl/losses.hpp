#ifndef WSSL_LOSSES_HPP
#define WSSL_LOSSES_HPP

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "wssl/core.hpp"

namespace wssl::losses {

struct LossConfig {
    double lambda = 0.01;      // teacher text-loss weight
    double alpha = 0.01;       // student text-loss weight
    double beta = 0.1;         // detection CE weight in the joint loss
    double dice_smooth = 1e-5;
    double temp_init = 0.07;   // initial value of both learnable temperatures

    void validate() const {
        if (lambda < 0 || alpha < 0 || beta < 0 || dice_smooth < 0)
            throw std::invalid_argument("loss weights must be >= 0");
        if (temp_init <= 0)
            throw std::invalid_argument("temp_init must be > 0");
    }
};

// Which text-prompt branches participate in the text loss (ablation knob).
enum class TextParts { none, det_only, loc_only, det_loc };

inline bool uses_det(TextParts p) {
    return p == TextParts::det_only || p == TextParts::det_loc;
}
inline bool uses_loc(TextParts p) {
    return p == TextParts::loc_only || p == TextParts::det_loc;
}

// ---------------------------------------------------------------------------
// Segmentation losses. seg_logits are stored channel-major: background logits
// for all V voxels first, then foreground logits ([2 x V]).
// ---------------------------------------------------------------------------

inline double dice_loss(std::span<const double> probs,
                        std::span<const std::uint8_t> mask, double smooth) {
    if (probs.size() != mask.size())
        throw std::invalid_argument("dice_loss: shape mismatch");
    double inter = 0.0, psum = 0.0, msum = 0.0;
    for (std::size_t v = 0; v < probs.size(); ++v) {
        inter += probs[v] * mask[v];
        psum += probs[v];
        msum += mask[v];
    }
    return 1.0 - (2.0 * inter + smooth) / (psum + msum + smooth);
}

namespace detail {

// Stable per-voxel 2-class softmax pieces.
struct Softmax2 {
    double p1;       // foreground probability
    double logp0, logp1;
};

inline Softmax2 softmax2(double z0, double z1) {
    double m = z0 > z1 ? z0 : z1;
    double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
    double lse = m + std::log(e0 + e1);
    return {e1 / (e0 + e1), z0 - lse, z1 - lse};
}

}  // namespace detail

inline double seg_loss(std::span<const double> seg_logits,
                       std::span<const std::uint8_t> mask, double smooth) {
    std::size_t V = mask.size();
    if (seg_logits.size() != 2 * V)
        throw std::invalid_argument("seg_loss: logits must be 2 x mask size");
    double ce = 0.0, inter = 0.0, psum = 0.0, msum = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
        auto sm = detail::softmax2(seg_logits[v], seg_logits[V + v]);
        ce -= mask[v] ? sm.logp1 : sm.logp0;
        inter += sm.p1 * mask[v];
        psum += sm.p1;
        msum += mask[v];
    }
    ce /= static_cast<double>(V);
    double dice = 1.0 - (2.0 * inter + smooth) / (psum + msum + smooth);
    return ce + dice;
}

struct SegLossGrad {
    double value = 0.0;
    std::vector<double> d_logits;  // 2 x V
};

inline SegLossGrad seg_loss_grad(std::span<const double> seg_logits,
                                 std::span<const std::uint8_t> mask,
                                 double smooth) {
    std::size_t V = mask.size();
    if (seg_logits.size() != 2 * V)
        throw std::invalid_argument("seg_loss: logits must be 2 x mask size");
    SegLossGrad out;
    out.d_logits.assign(2 * V, 0.0);
    std::vector<double> p1(V);
    double ce = 0.0, inter = 0.0, psum = 0.0, msum = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
        auto sm = detail::softmax2(seg_logits[v], seg_logits[V + v]);
        p1[v] = sm.p1;
        ce -= mask[v] ? sm.logp1 : sm.logp0;
        inter += sm.p1 * mask[v];
        psum += sm.p1;
        msum += mask[v];
    }
    ce /= static_cast<double>(V);
    double A = 2.0 * inter + smooth;
    double B = psum + msum + smooth;
    out.value = ce + 1.0 - A / B;
    for (std::size_t v = 0; v < V; ++v) {
        // CE: d/dz1 = (p1 - m)/V, d/dz0 = -(p1 - m)/V
        double g_ce = (p1[v] - mask[v]) / static_cast<double>(V);
        // Dice: d/dp1 = (A - 2 m B)/B^2; chain through the softmax pair
        double g_dice = (A - 2.0 * mask[v] * B) / (B * B);
        double g_p = g_dice * p1[v] * (1.0 - p1[v]);
        out.d_logits[V + v] = g_ce + g_p;
        out.d_logits[v] = -g_ce - g_p;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Detection cross-entropy (2-class logits).
// ---------------------------------------------------------------------------

inline double det_loss(std::span<const double> det_logits, int diagnosis) {
    if (det_logits.size() != 2)
        throw std::invalid_argument("det_loss: expected 2 logits");
    if (diagnosis != 0 && diagnosis != 1)
        throw std::invalid_argument("det_loss: diagnosis must be 0 or 1");
    auto sm = detail::softmax2(det_logits[0], det_logits[1]);
    return diagnosis ? -sm.logp1 : -sm.logp0;
}

struct Vec2Grad {
    double value = 0.0;
    double d_logits[2] = {0.0, 0.0};
};

inline Vec2Grad det_loss_grad(std::span<const double> det_logits, int diagnosis) {
    Vec2Grad out;
    out.value = det_loss(det_logits, diagnosis);
    auto sm = detail::softmax2(det_logits[0], det_logits[1]);
    out.d_logits[0] = (1.0 - sm.p1) - (diagnosis == 0 ? 1.0 : 0.0);
    out.d_logits[1] = sm.p1 - (diagnosis == 1 ? 1.0 : 0.0);
    return out;
}

// Generic K-class softmax cross-entropy (the standard location head uses
// K = 5; det_loss is the K = 2 case).
inline double ce_loss(std::span<const double> logits, int label) {
    if (label < 0 || label >= static_cast<int>(logits.size()))
        throw std::invalid_argument("ce_loss: label out of range");
    double mx = logits[0];
    for (double v : logits) mx = v > mx ? v : mx;
    double lse = 0.0;
    for (double v : logits) lse += std::exp(v - mx);
    return -(logits[static_cast<std::size_t>(label)] - mx - std::log(lse));
}

struct CeGrad {
    double value = 0.0;
    std::vector<double> d_logits;
};

inline CeGrad ce_loss_grad(std::span<const double> logits, int label) {
    CeGrad out;
    out.value = ce_loss(logits, label);
    double mx = logits[0];
    for (double v : logits) mx = v > mx ? v : mx;
    double lse = 0.0;
    for (double v : logits) lse += std::exp(v - mx);
    out.d_logits.resize(logits.size());
    for (std::size_t k = 0; k < logits.size(); ++k)
        out.d_logits[k] = std::exp(logits[k] - mx) / lse -
                          (static_cast<int>(k) == label ? 1.0 : 0.0);
    return out;
}

// ---------------------------------------------------------------------------
// Text-guided similarity losses. E is a row-major K x D matrix of frozen text
// features; s_k is the plain dot product between the projected image feature
// and row k.
// ---------------------------------------------------------------------------

inline std::vector<double> similarity(std::span<const double> i_vec,
                                      std::span<const double> E, int K) {
    if (K <= 0 || E.size() != i_vec.size() * static_cast<std::size_t>(K))
        throw std::invalid_argument("similarity: dimension mismatch");
    std::size_t D = i_vec.size();
    std::vector<double> s(static_cast<std::size_t>(K), 0.0);
    for (int k = 0; k < K; ++k) {
        double acc = 0.0;
        const double* row = E.data() + static_cast<std::size_t>(k) * D;
        for (std::size_t d = 0; d < D; ++d) acc += i_vec[d] * row[d];
        s[static_cast<std::size_t>(k)] = acc;
    }
    return s;
}

inline std::vector<double> temperature_softmax(std::span<const double> s,
                                               double T) {
    if (!(T > 0.0))
        throw std::invalid_argument("temperature_softmax: T must be > 0");
    std::vector<double> p(s.size());
    double mx = s[0];
    for (double v : s) mx = v > mx ? v : mx;
    double sum = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) {
        p[k] = std::exp((s[k] - mx) / T);
        sum += p[k];
    }
    for (auto& v : p) v /= sum;
    return p;
}

struct TextHeadGrad {
    double value = 0.0;
    std::vector<double> d_i;   // D
    double d_logT = 0.0;
};

// CE( temperature_softmax(i . E^T, exp(log_T)), one-hot label ), with
// gradients w.r.t. i and log_T. Used for both the detection (K=2) and the
// location (K=L+1) branches.
inline TextHeadGrad text_head_loss_grad(std::span<const double> i_vec,
                                        std::span<const double> E, int K,
                                        int label, double log_T) {
    if (label < 0 || label >= K)
        throw std::invalid_argument("text loss: label out of range");
    std::size_t D = i_vec.size();
    double T = std::exp(log_T);
    std::vector<double> s = similarity(i_vec, E, K);
    std::vector<double> p = temperature_softmax(s, T);

    // stable -log p_label
    double mx = s[0];
    for (double v : s) mx = v > mx ? v : mx;
    double lse = 0.0;
    for (double v : s) lse += std::exp((v - mx) / T);
    lse = std::log(lse);
    TextHeadGrad out;
    out.value = -((s[static_cast<std::size_t>(label)] - mx) / T - lse);

    out.d_i.assign(D, 0.0);
    for (int k = 0; k < K; ++k) {
        double ds = (p[static_cast<std::size_t>(k)] -
                     (k == label ? 1.0 : 0.0)) / T;
        const double* row = E.data() + static_cast<std::size_t>(k) * D;
        for (std::size_t d = 0; d < D; ++d) out.d_i[d] += ds * row[d];
        // d/dT = sum_k (p_k - y_k) * (-s_k / T^2); d/dlogT = T * d/dT
        out.d_logT -= (p[static_cast<std::size_t>(k)] -
                       (k == label ? 1.0 : 0.0)) * s[static_cast<std::size_t>(k)] / T;
    }
    return out;
}

inline double text_loc_loss(std::span<const double> i_loc,
                            std::span<const double> E_loc, int location,
                            double T_loc) {
    int K = static_cast<int>(E_loc.size() / i_loc.size());
    if (location < 0 || location >= K)
        throw std::invalid_argument("text_loc_loss: label out of range");
    return text_head_loss_grad(i_loc, E_loc, K, location, std::log(T_loc)).value;
}

inline double text_det_loss(std::span<const double> i_det,
                            std::span<const double> E_det, int diagnosis,
                            double T_det) {
    return text_head_loss_grad(i_det, E_det, 2, diagnosis, std::log(T_det)).value;
}

// ---------------------------------------------------------------------------
// Composed per-sample objectives.
// ---------------------------------------------------------------------------

// Frozen text matrices, weak labels and temperatures for one sample.
struct TextBatch {
    std::span<const double> i_det, i_loc;   // projected image features, D each
    std::span<const double> E_det, E_loc;   // 2 x D, (L+1) x D
    int diagnosis = 0;                      // {0,1}
    int location = 0;                       // [0..L]
    double log_T_det = 0.0, log_T_loc = 0.0;
    TextParts parts = TextParts::det_loc;
};

struct TextGradOut {
    double value = 0.0;
    std::vector<double> d_i_det, d_i_loc;
    double d_logT_det = 0.0, d_logT_loc = 0.0;
};

inline TextGradOut text_loss_grad(const TextBatch& b) {
    TextGradOut out;
    out.d_i_det.assign(b.i_det.size(), 0.0);
    out.d_i_loc.assign(b.i_loc.size(), 0.0);
    if (uses_loc(b.parts)) {
        int K = static_cast<int>(b.E_loc.size() / b.i_loc.size());
        auto g = text_head_loss_grad(b.i_loc, b.E_loc, K, b.location, b.log_T_loc);
        out.value += g.value;
        out.d_i_loc = std::move(g.d_i);
        out.d_logT_loc = g.d_logT;
    }
    if (uses_det(b.parts)) {
        auto g = text_head_loss_grad(b.i_det, b.E_det, 2, b.diagnosis, b.log_T_det);
        out.value += g.value;
        out.d_i_det = std::move(g.d_i);
        out.d_logT_det = g.d_logT;
    }
    return out;
}

inline double text_loss(const TextBatch& b) { return text_loss_grad(b).value; }

inline double teacher_loss(std::span<const double> seg_logits,
                           std::span<const std::uint8_t> mask,
                           const TextBatch& text, const LossConfig& cfg) {
    return seg_loss(seg_logits, mask, cfg.dice_smooth) +
           cfg.lambda * text_loss(text);
}

inline double joint_loss(std::span<const double> seg_logits,
                         std::span<const std::uint8_t> mask,
                         std::span<const double> det_logits, int diagnosis,
                         const LossConfig& cfg) {
    return seg_loss(seg_logits, mask, cfg.dice_smooth) +
           cfg.beta * det_loss(det_logits, diagnosis);
}

inline double student_loss(std::span<const double> seg_logits,
                           std::span<const std::uint8_t> mask,
                           std::span<const double> det_logits, int diagnosis,
                           const TextBatch& text, const LossConfig& cfg) {
    return joint_loss(seg_logits, mask, det_logits, diagnosis, cfg) +
           cfg.alpha * text_loss(text);
}

struct ComposedGrads {
    double value = 0.0;
    std::vector<double> d_seg_logits;       // 2 x V
    double d_det_logits[2] = {0.0, 0.0};
    std::vector<double> d_i_det, d_i_loc;   // D each
    double d_logT_det = 0.0, d_logT_loc = 0.0;
};

inline ComposedGrads teacher_loss_grad(std::span<const double> seg_logits,
                                       std::span<const std::uint8_t> mask,
                                       const TextBatch& text,
                                       const LossConfig& cfg) {
    ComposedGrads out;
    auto seg = seg_loss_grad(seg_logits, mask, cfg.dice_smooth);
    auto txt = text_loss_grad(text);
    out.value = seg.value + cfg.lambda * txt.value;
    out.d_seg_logits = std::move(seg.d_logits);
    out.d_i_det = std::move(txt.d_i_det);
    out.d_i_loc = std::move(txt.d_i_loc);
    for (auto& g : out.d_i_det) g *= cfg.lambda;
    for (auto& g : out.d_i_loc) g *= cfg.lambda;
    out.d_logT_det = cfg.lambda * txt.d_logT_det;
    out.d_logT_loc = cfg.lambda * txt.d_logT_loc;
    return out;
}

inline ComposedGrads student_loss_grad(std::span<const double> seg_logits,
                                       std::span<const std::uint8_t> mask,
                                       std::span<const double> det_logits,
                                       int diagnosis, const TextBatch& text,
                                       const LossConfig& cfg) {
    ComposedGrads out;
    auto seg = seg_loss_grad(seg_logits, mask, cfg.dice_smooth);
    auto det = det_loss_grad(det_logits, diagnosis);
    auto txt = text_loss_grad(text);
    out.value = seg.value + cfg.beta * det.value + cfg.alpha * txt.value;
    out.d_seg_logits = std::move(seg.d_logits);
    out.d_det_logits[0] = cfg.beta * det.d_logits[0];
    out.d_det_logits[1] = cfg.beta * det.d_logits[1];
    out.d_i_det = std::move(txt.d_i_det);
    out.d_i_loc = std::move(txt.d_i_loc);
    for (auto& g : out.d_i_det) g *= cfg.alpha;
    for (auto& g : out.d_i_loc) g *= cfg.alpha;
    out.d_logT_det = cfg.alpha * txt.d_logT_det;
    out.d_logT_loc = cfg.alpha * txt.d_logT_loc;
    return out;
}

}  // namespace wssl::losses

#endif
