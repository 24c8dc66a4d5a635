// Independent reference implementations used as test oracles. These are
// deliberately written as plain scalar loops, separate from the library code
// paths they check.
#ifndef WSSL_TESTS_ORACLES_HPP
#define WSSL_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace oracles {

// -- losses -----------------------------------------------------------------

inline double dice(const std::vector<double>& p, const std::vector<std::uint8_t>& m,
                   double eps) {
    double inter = 0, ps = 0, ms = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        inter += p[i] * m[i];
        ps += p[i];
        ms += m[i];
    }
    return 1.0 - (2.0 * inter + eps) / (ps + ms + eps);
}

inline std::vector<double> softmax(const std::vector<double>& s, double T) {
    double mx = *std::max_element(s.begin(), s.end());
    std::vector<double> p(s.size());
    long double sum = 0;
    for (std::size_t k = 0; k < s.size(); ++k) {
        p[k] = std::exp((s[k] - mx) / T);
        sum += p[k];
    }
    for (auto& v : p) v = static_cast<double>(v / sum);
    return p;
}

inline double ce(const std::vector<double>& logits, int label) {
    auto p = softmax(logits, 1.0);
    return -std::log(p[static_cast<std::size_t>(label)]);
}

// mean 2-class voxel CE + dice on the softmax foreground channel
inline double seg_loss(const std::vector<double>& logits,
                       const std::vector<std::uint8_t>& mask, double eps) {
    std::size_t V = mask.size();
    double ce_sum = 0;
    std::vector<double> fg(V);
    for (std::size_t v = 0; v < V; ++v) {
        std::vector<double> two = {logits[v], logits[V + v]};
        auto p = softmax(two, 1.0);
        fg[v] = p[1];
        ce_sum += -std::log(p[mask[v] ? 1 : 0]);
    }
    return ce_sum / static_cast<double>(V) + dice(fg, mask, eps);
}

inline std::vector<double> dots(const std::vector<double>& i,
                                const std::vector<double>& E, int K) {
    std::size_t D = i.size();
    std::vector<double> s(static_cast<std::size_t>(K), 0.0);
    for (int k = 0; k < K; ++k)
        for (std::size_t d = 0; d < D; ++d)
            s[static_cast<std::size_t>(k)] += i[d] * E[static_cast<std::size_t>(k) * D + d];
    return s;
}

inline double text_head_loss(const std::vector<double>& i,
                             const std::vector<double>& E, int K, int label,
                             double T) {
    auto p = softmax(dots(i, E, K), T);
    return -std::log(p[static_cast<std::size_t>(label)]);
}

// -- metrics ----------------------------------------------------------------

inline double auc_pairwise(const std::vector<double>& scores,
                           const std::vector<int>& labels) {
    double num = 0;
    std::size_t m = 0, n = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) continue;
        ++m;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j]) continue;
            if (scores[i] > scores[j]) num += 1.0;
            else if (scores[i] == scores[j]) num += 0.5;
        }
    }
    for (int l : labels) n += (l == 0);
    return num / (static_cast<double>(m) * static_cast<double>(n));
}

// DeLong placement values by brute-force pairwise indicators
struct Placements {
    std::vector<double> v10, v01;
};

inline Placements placements_pairwise(const std::vector<double>& scores,
                                      const std::vector<int>& labels) {
    std::vector<double> pos, neg;
    for (std::size_t i = 0; i < scores.size(); ++i)
        (labels[i] ? pos : neg).push_back(scores[i]);
    Placements out;
    for (double x : pos) {
        double acc = 0;
        for (double y : neg) acc += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
        out.v10.push_back(acc / static_cast<double>(neg.size()));
    }
    for (double y : neg) {
        double acc = 0;
        for (double x : pos) acc += x > y ? 1.0 : (x == y ? 0.5 : 0.0);
        out.v01.push_back(acc / static_cast<double>(pos.size()));
    }
    return out;
}

inline double cov(const std::vector<double>& a, const std::vector<double>& b) {
    double ma = 0, mb = 0;
    for (double x : a) ma += x;
    for (double x : b) mb += x;
    ma /= static_cast<double>(a.size());
    mb /= static_cast<double>(b.size());
    double acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - ma) * (b[i] - mb);
    return a.size() > 1 ? acc / static_cast<double>(a.size() - 1) : 0.0;
}

// -- geometry ---------------------------------------------------------------

struct Box {
    int x0, x1, y0, y1, z0, z1;
};

template <typename MaskT>
inline Box bbox_bruteforce(const MaskT& m) {
    Box b{m.nx, -1, m.ny, -1, m.nz, -1};
    for (int z = 0; z < m.nz; ++z)
        for (int y = 0; y < m.ny; ++y)
            for (int x = 0; x < m.nx; ++x)
                if (m.at(x, y, z)) {
                    b.x0 = std::min(b.x0, x);
                    b.x1 = std::max(b.x1, x);
                    b.y0 = std::min(b.y0, y);
                    b.y1 = std::max(b.y1, y);
                    b.z0 = std::min(b.z0, z);
                    b.z1 = std::max(b.z1, z);
                }
    return b;
}

}  // namespace oracles

#endif
