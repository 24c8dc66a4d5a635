#ifndef WSSL_EVAL_HPP
#define WSSL_EVAL_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "wssl/core.hpp"

namespace wssl::eval {

// Per-record cancer scores with aligned binary labels.
struct ScoreSet {
    std::vector<std::string> ids;
    std::vector<double> scores;
    std::vector<int> labels;

    std::size_t size() const { return scores.size(); }

    void validate() const {
        if (scores.size() != labels.size() ||
            (!ids.empty() && ids.size() != scores.size()))
            throw std::invalid_argument("ScoreSet: misaligned fields");
        for (int l : labels)
            if (l != 0 && l != 1)
                throw std::invalid_argument("ScoreSet: labels must be 0/1");
    }

    bool both_classes() const {
        bool pos = false, neg = false;
        for (int l : labels) (l ? pos : neg) = true;
        return pos && neg;
    }
};

inline double dice_score(const Mask& pred, const Mask& gt) {
    if (!pred.same_shape(gt))
        throw std::invalid_argument("dice_score: shape mismatch");
    std::size_t inter = 0, np = 0, ng = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        bool p = pred.data[i] != 0, g = gt.data[i] != 0;
        inter += (p && g);
        np += p;
        ng += g;
    }
    if (np + ng == 0) return 1.0;  // both empty: perfect agreement
    return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

namespace detail {

// Midranks (1-based, ties averaged) of v in its own sort order.
inline std::vector<double> midranks(std::span<const double> v) {
    std::size_t n = v.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> rank(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
        double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    return rank;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Placement values of the DeLong decomposition: V10 per positive and V01 per
// negative. mean(V10) = mean(V01) = AUC.
struct Placements {
    std::vector<double> v10, v01;
    double auc = 0.0;
};

inline Placements placements(const ScoreSet& s) {
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < s.size(); ++i)
        (s.labels[i] ? pos : neg).push_back(s.scores[i]);
    std::size_t m = pos.size(), n = neg.size();
    std::vector<double> all = pos;
    all.insert(all.end(), neg.begin(), neg.end());
    auto tz = midranks(all);
    auto tx = midranks(pos);
    auto ty = midranks(neg);
    Placements out;
    out.v10.resize(m);
    out.v01.resize(n);
    for (std::size_t i = 0; i < m; ++i)
        out.v10[i] = (tz[i] - tx[i]) / static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j)
        out.v01[j] = 1.0 - (tz[m + j] - ty[j]) / static_cast<double>(m);
    double sum_rank_pos = 0.0;
    for (std::size_t i = 0; i < m; ++i) sum_rank_pos += tz[i];
    out.auc = (sum_rank_pos - 0.5 * static_cast<double>(m) * (m + 1)) /
              (static_cast<double>(m) * static_cast<double>(n));
    return out;
}

}  // namespace detail

// Rank-based Mann-Whitney AUC with ties counted 0.5.
inline double auc(const ScoreSet& s) {
    s.validate();
    if (!s.both_classes())
        throw std::domain_error("auc: needs both classes present");
    return detail::placements(s).auc;
}

// prediction = score >= cutoff
inline std::pair<double, double> sens_spec(const ScoreSet& s,
                                           double cutoff = 0.5) {
    s.validate();
    if (!s.both_classes())
        throw std::domain_error("sens_spec: needs both classes present");
    std::size_t tp = 0, fn = 0, tn = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        bool pred = s.scores[i] >= cutoff;
        if (s.labels[i]) (pred ? tp : fn)++;
        else (pred ? fp : tn)++;
    }
    return {static_cast<double>(tp) / static_cast<double>(tp + fn),
            static_cast<double>(tn) / static_cast<double>(tn + fp)};
}

inline double location_accuracy(std::span<const int> pred_bins,
                                std::span<const int> true_bins) {
    if (pred_bins.size() != true_bins.size() || pred_bins.empty())
        throw std::invalid_argument("location_accuracy: misaligned inputs");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred_bins.size(); ++i)
        hit += (pred_bins[i] == true_bins[i]);
    return static_cast<double>(hit) / static_cast<double>(pred_bins.size());
}

struct DeLongResult {
    double auc_a = 0.0, auc_b = 0.0;
    double z = 0.0;
    double p_two_sided = 1.0;
};

// Fast DeLong test for two correlated AUCs (midrank algorithm). The score
// vectors must be computed on the same records: labels have to match.
inline DeLongResult delong_test(const ScoreSet& a, const ScoreSet& b) {
    a.validate();
    b.validate();
    if (a.size() != b.size() || a.labels != b.labels)
        throw std::invalid_argument("delong_test: score sets must share records");
    if (!a.both_classes())
        throw std::domain_error("delong_test: needs both classes present");
    auto pa = detail::placements(a);
    auto pb = detail::placements(b);
    std::size_t m = pa.v10.size(), n = pa.v01.size();

    auto cov = [](std::span<const double> x, std::span<const double> y,
                  double mx, double my) {
        double acc = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i)
            acc += (x[i] - mx) * (y[i] - my);
        return x.size() > 1 ? acc / static_cast<double>(x.size() - 1) : 0.0;
    };

    // contrast variance: (s10_aa + s10_bb - 2 s10_ab)/m + same for V01 / n
    double s10 = cov(pa.v10, pa.v10, pa.auc, pa.auc) +
                 cov(pb.v10, pb.v10, pb.auc, pb.auc) -
                 2.0 * cov(pa.v10, pb.v10, pa.auc, pb.auc);
    double s01 = cov(pa.v01, pa.v01, pa.auc, pa.auc) +
                 cov(pb.v01, pb.v01, pb.auc, pb.auc) -
                 2.0 * cov(pa.v01, pb.v01, pa.auc, pb.auc);
    double var = s10 / static_cast<double>(m) + s01 / static_cast<double>(n);

    DeLongResult out;
    out.auc_a = pa.auc;
    out.auc_b = pb.auc;
    if (var <= 1e-12 && pa.auc == pb.auc) {
        out.z = 0.0;
        out.p_two_sided = 1.0;
        return out;
    }
    out.z = (pa.auc - pb.auc) / std::sqrt(var);
    out.p_two_sided = 2.0 * (1.0 - detail::normal_cdf(std::fabs(out.z)));
    return out;
}

struct RocPoint {
    double threshold = 0.0;
    double fpr = 0.0, tpr = 0.0;
};

// Staircase ROC over all distinct thresholds; starts at (0,0) with threshold
// +inf and ends at (1,1). Trapezoidal area equals the midrank AUC.
inline std::vector<RocPoint> roc_curve(const ScoreSet& s) {
    s.validate();
    if (!s.both_classes())
        throw std::domain_error("roc_curve: needs both classes present");
    std::size_t m = 0, n = 0;
    for (int l : s.labels) (l ? m : n)++;
    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return s.scores[x] > s.scores[y];
    });
    std::vector<RocPoint> pts;
    pts.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::size_t tp = 0, fp = 0, i = 0;
    auto collapse = [&]() {
        while (pts.size() >= 3) {
            const auto& a = pts[pts.size() - 3];
            const auto& b = pts[pts.size() - 2];
            const auto& c = pts[pts.size() - 1];
            bool vertical = a.fpr == b.fpr && b.fpr == c.fpr;
            bool horizontal = a.tpr == b.tpr && b.tpr == c.tpr;
            if (!vertical && !horizontal) break;
            pts.erase(pts.end() - 2);
        }
    };
    while (i < s.size()) {
        double thr = s.scores[order[i]];
        while (i < s.size() && s.scores[order[i]] == thr) {
            (s.labels[order[i]] ? tp : fp)++;
            ++i;
        }
        pts.push_back({thr, static_cast<double>(fp) / static_cast<double>(n),
                       static_cast<double>(tp) / static_cast<double>(m)});
        collapse();
    }
    return pts;
}

inline double roc_trapezoid_area(std::span<const RocPoint> pts) {
    double area = 0.0;
    for (std::size_t i = 1; i < pts.size(); ++i)
        area += (pts[i].fpr - pts[i - 1].fpr) * 0.5 * (pts[i].tpr + pts[i - 1].tpr);
    return area;
}

// Aggregated metrics for one model on one split. NaN marks "not applicable"
// (e.g. location accuracy for a model without a location predictor).
struct EvalReport {
    double dice_overall = std::numeric_limits<double>::quiet_NaN();
    double dice_eso = std::numeric_limits<double>::quiet_NaN();  // bins 1-3
    double dice_egj = std::numeric_limits<double>::quiet_NaN();  // bin 4
    double auc = std::numeric_limits<double>::quiet_NaN();
    double auc_text = std::numeric_limits<double>::quiet_NaN();
    double sensitivity = std::numeric_limits<double>::quiet_NaN();
    double specificity = std::numeric_limits<double>::quiet_NaN();
    double location_accuracy = std::numeric_limits<double>::quiet_NaN();
    double delong_p = std::numeric_limits<double>::quiet_NaN();
    std::vector<RocPoint> roc_points;
    ScoreSet scores;
};

}  // namespace wssl::eval

#endif
