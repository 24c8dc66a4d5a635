#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "wssl/losses.hpp"

using namespace wssl;
using Catch::Approx;

namespace {

std::mt19937 gen(20240901);

std::vector<double> rand_vec(std::size_t n, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = d(gen);
    return v;
}

std::vector<std::uint8_t> rand_mask(std::size_t n, double p = 0.4) {
    std::bernoulli_distribution d(p);
    std::vector<std::uint8_t> v(n);
    for (auto& x : v) x = d(gen) ? 1 : 0;
    return v;
}

// central finite difference of f at x[i]
template <typename F>
double fdiff(F f, std::vector<double>& x, std::size_t i, double h = 1e-4) {
    double keep = x[i];
    x[i] = keep + h;
    double fp = f();
    x[i] = keep - h;
    double fm = f();
    x[i] = keep;
    return (fp - fm) / (2 * h);
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

TEST_CASE("dice loss endpoints and oracle") {
    std::vector<std::uint8_t> m = {1, 0, 1, 1, 0, 0, 1, 0};
    std::vector<double> exact(m.begin(), m.end());
    CHECK(losses::dice_loss(exact, m, 1e-5) < 1e-5);

    std::vector<double> inverted(m.size());
    for (std::size_t i = 0; i < m.size(); ++i) inverted[i] = 1.0 - m[i];
    CHECK(losses::dice_loss(inverted, m, 1e-5) == Approx(1.0).margin(1e-4));

    for (int t = 0; t < 100; ++t) {
        auto p = rand_vec(64, 0.0, 1.0);
        auto mask = rand_mask(64);
        CHECK(std::abs(losses::dice_loss(p, mask, 1e-5) -
                       oracles::dice(p, mask, 1e-5)) < 1e-12);
    }
    CHECK_THROWS_AS(losses::dice_loss(rand_vec(3, 0, 1), rand_mask(4), 1e-5),
                    std::invalid_argument);
}

TEST_CASE("seg loss: perfect, uniform and oracle cases") {
    std::size_t V = 16;
    auto mask = rand_mask(V, 0.5);
    std::vector<double> logits(2 * V, 0.0);
    for (std::size_t v = 0; v < V; ++v) {
        logits[v] = mask[v] ? -20.0 : 20.0;
        logits[V + v] = mask[v] ? 20.0 : -20.0;
    }
    CHECK(losses::seg_loss(logits, mask, 1e-5) < 1e-6);

    // balanced mask, uniform logits: CE term = ln 2
    std::vector<std::uint8_t> balanced(V);
    for (std::size_t v = 0; v < V; ++v) balanced[v] = v % 2;
    std::vector<double> uniform(2 * V, 0.3);
    double dice_part = oracles::dice(std::vector<double>(V, 0.5), balanced, 1e-5);
    CHECK(losses::seg_loss(uniform, balanced, 1e-5) ==
          Approx(std::log(2.0) + dice_part).epsilon(1e-10));

    for (int t = 0; t < 100; ++t) {
        auto l = rand_vec(2 * 64, -4, 4);
        auto m = rand_mask(64);
        CHECK(std::abs(losses::seg_loss(l, m, 1e-5) -
                       oracles::seg_loss(l, m, 1e-5)) < 1e-10);
    }
}

TEST_CASE("seg loss gradient matches finite differences") {
    std::size_t V = 27;
    auto mask = rand_mask(V);
    auto logits = rand_vec(2 * V, -2, 2);
    auto g = losses::seg_loss_grad(logits, mask, 1e-5);
    CHECK(g.value == Approx(losses::seg_loss(logits, mask, 1e-5)));
    for (std::size_t i : {std::size_t{0}, V / 2, V, V + 3, 2 * V - 1}) {
        double num = fdiff([&] { return losses::seg_loss(logits, mask, 1e-5); },
                           logits, i);
        CHECK(rel_err(g.d_logits[i], num) < 1e-6);
    }
}

TEST_CASE("detection CE closed form and gradient") {
    std::vector<double> perfect = {-15.0, 15.0};
    CHECK(losses::det_loss(perfect, 1) < 1e-6);
    std::vector<double> uniform = {0.7, 0.7};
    CHECK(losses::det_loss(uniform, 0) == Approx(std::log(2.0)));

    for (int t = 0; t < 100; ++t) {
        auto l = rand_vec(2, -6, 6);
        int y = t % 2;
        double closed = y == 1 ? std::log(1.0 + std::exp(l[0] - l[1]))
                               : std::log(1.0 + std::exp(l[1] - l[0]));
        CHECK(std::abs(losses::det_loss(l, y) - closed) < 1e-12);
        auto g = losses::det_loss_grad(l, y);
        for (std::size_t i : {std::size_t{0}, std::size_t{1}}) {
            double num = fdiff([&] { return losses::det_loss(l, y); }, l, i);
            CHECK(rel_err(g.d_logits[i], num) < 1e-6);
        }
    }
    CHECK_THROWS_AS(losses::det_loss(std::vector<double>{1, 2}, 2),
                    std::invalid_argument);
}

TEST_CASE("generic multiclass CE agrees with oracle") {
    for (int t = 0; t < 50; ++t) {
        auto l = rand_vec(5, -4, 4);
        int y = t % 5;
        CHECK(std::abs(losses::ce_loss(l, y) - oracles::ce(l, y)) < 1e-12);
        auto g = losses::ce_loss_grad(l, y);
        for (std::size_t i = 0; i < 5; ++i) {
            double num = fdiff([&] { return losses::ce_loss(l, y); }, l, i);
            CHECK(rel_err(g.d_logits[i], num) < 1e-6);
        }
    }
}

TEST_CASE("similarity is a plain dot product") {
    std::vector<double> E = {1, 0, 0, 0, 1, 0, 0, 0, 1};  // orthonormal rows
    std::vector<double> i0 = {1, 0, 0};
    auto s = losses::similarity(i0, E, 3);
    CHECK(s == std::vector<double>{1, 0, 0});
    std::vector<double> zero = {0, 0, 0};
    for (double v : losses::similarity(zero, E, 3)) CHECK(v == 0.0);

    for (int t = 0; t < 100; ++t) {
        auto i = rand_vec(8, -2, 2);
        auto Em = rand_vec(5 * 8, -2, 2);
        auto got = losses::similarity(i, Em, 5);
        auto want = oracles::dots(i, Em, 5);
        for (int k = 0; k < 5; ++k)
            CHECK(std::abs(got[static_cast<std::size_t>(k)] -
                           want[static_cast<std::size_t>(k)]) < 1e-12);
    }
    CHECK_THROWS_AS(losses::similarity(rand_vec(3, 0, 1), rand_vec(8, 0, 1), 3),
                    std::invalid_argument);
}

TEST_CASE("temperature softmax: normalization, closed form, invariants") {
    std::vector<double> s = {1.0, 0.0};
    auto p = losses::temperature_softmax(s, 1.0);
    CHECK(p[0] == Approx(std::exp(1.0) / (std::exp(1.0) + 1.0)).epsilon(1e-12));
    CHECK(p[1] == Approx(1.0 / (std::exp(1.0) + 1.0)).epsilon(1e-12));

    std::vector<double> flat = {3.3, 3.3, 3.3, 3.3};
    for (double v : losses::temperature_softmax(flat, 0.2))
        CHECK(v == Approx(0.25).epsilon(1e-12));

    for (int t = 0; t < 200; ++t) {
        auto v = rand_vec(6, -50, 50);
        for (double T : {0.01, 0.07, 1.0, 10.0}) {
            auto q = losses::temperature_softmax(v, T);
            double sum = 0;
            std::size_t am_p = 0, am_s = 0;
            for (std::size_t k = 0; k < q.size(); ++k) {
                sum += q[k];
                if (q[k] > q[am_p]) am_p = k;
                if (v[k] > v[am_s]) am_s = k;
            }
            CHECK(std::abs(sum - 1.0) < 1e-6);
            CHECK(am_p == am_s);
            // shift invariance
            auto shifted = v;
            for (auto& x : shifted) x += 17.5;
            auto q2 = losses::temperature_softmax(shifted, T);
            for (std::size_t k = 0; k < q.size(); ++k)
                CHECK(std::abs(q[k] - q2[k]) < 1e-6);
        }
    }
    CHECK_THROWS_AS(losses::temperature_softmax(s, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(losses::temperature_softmax(s, -1.0), std::invalid_argument);
}

TEST_CASE("text head losses: saturation, uniform, oracle, gradients") {
    int D = 8, K = 5;
    // orthonormal-ish E: unit rows
    std::vector<double> E(static_cast<std::size_t>(K * D), 0.0);
    for (int k = 0; k < K; ++k) E[static_cast<std::size_t>(k * D + k)] = 1.0;

    std::vector<double> aligned(static_cast<std::size_t>(D), 0.0);
    aligned[2] = 1.0;
    CHECK(losses::text_loc_loss(aligned, E, 2, 0.01) < 1e-6);

    std::vector<double> zero(static_cast<std::size_t>(D), 0.0);
    CHECK(losses::text_loc_loss(zero, E, 3, 0.07) == Approx(std::log(5.0)));
    std::vector<double> E2(static_cast<std::size_t>(2 * D), 0.0);
    E2[0] = 1.0;
    E2[static_cast<std::size_t>(D) + 1] = 1.0;
    CHECK(losses::text_det_loss(zero, E2, 1, 0.07) == Approx(std::log(2.0)));

    for (int t = 0; t < 100; ++t) {
        auto i = rand_vec(static_cast<std::size_t>(D), -1, 1);
        auto Em = rand_vec(static_cast<std::size_t>(K * D), -1, 1);
        int label = t % K;
        double T = 0.05 + 0.5 * (t % 7);
        CHECK(std::abs(losses::text_loc_loss(i, Em, label, T) -
                       oracles::text_head_loss(i, Em, K, label, T)) < 1e-10);
    }

    // gradients w.r.t. i and log_T
    auto i = rand_vec(static_cast<std::size_t>(D), -1, 1);
    auto Em = rand_vec(static_cast<std::size_t>(K * D), -1, 1);
    std::vector<double> logT = {std::log(0.3)};
    auto g = losses::text_head_loss_grad(i, Em, K, 1, logT[0]);
    for (std::size_t d = 0; d < static_cast<std::size_t>(D); ++d) {
        double num = fdiff(
            [&] { return losses::text_head_loss_grad(i, Em, K, 1, logT[0]).value; },
            i, d);
        CHECK(rel_err(g.d_i[d], num) < 1e-6);
    }
    double numT = fdiff(
        [&] { return losses::text_head_loss_grad(i, Em, K, 1, logT[0]).value; },
        logT, 0);
    CHECK(rel_err(g.d_logT, numT) < 1e-6);
    CHECK_THROWS_AS(losses::text_head_loss_grad(i, Em, K, 7, 0.0),
                    std::invalid_argument);
}

TEST_CASE("text loss is the sum of its parts and branches are independent") {
    int D = 6;
    auto i_det = rand_vec(static_cast<std::size_t>(D), -1, 1);
    auto i_loc = rand_vec(static_cast<std::size_t>(D), -1, 1);
    auto E_det = rand_vec(static_cast<std::size_t>(2 * D), -1, 1);
    auto E_loc = rand_vec(static_cast<std::size_t>(5 * D), -1, 1);

    losses::TextBatch b;
    b.i_det = i_det;
    b.i_loc = i_loc;
    b.E_det = E_det;
    b.E_loc = E_loc;
    b.diagnosis = 1;
    b.location = 3;
    b.log_T_det = std::log(0.07);
    b.log_T_loc = std::log(0.07);

    double whole = losses::text_loss(b);
    double loc = losses::text_loc_loss(i_loc, E_loc, 3, 0.07);
    double det = losses::text_det_loss(i_det, E_det, 1, 0.07);
    CHECK(std::abs(whole - (loc + det)) < 1e-12);

    // gradient w.r.t. i_loc unaffected by the det branch
    auto g_full = losses::text_loss_grad(b);
    auto b_loc_only = b;
    b_loc_only.parts = losses::TextParts::loc_only;
    auto g_loc = losses::text_loss_grad(b_loc_only);
    for (std::size_t d = 0; d < i_loc.size(); ++d)
        CHECK(g_full.d_i_loc[d] == g_loc.d_i_loc[d]);

    // finite differences through the composition
    std::vector<double> il = i_loc;
    b.i_loc = il;
    auto g = losses::text_loss_grad(b);
    for (std::size_t d = 0; d < 3; ++d) {
        double num = fdiff([&] { return losses::text_loss(b); }, il, d);
        CHECK(rel_err(g.d_i_loc[d], num) < 1e-6);
    }
}

TEST_CASE("composed teacher/joint/student losses") {
    losses::LossConfig cfg;
    std::size_t V = 8;
    auto mask = rand_mask(V);
    auto seg = rand_vec(2 * V, -2, 2);
    auto det = rand_vec(2, -2, 2);
    int D = 6;
    auto i_det = rand_vec(static_cast<std::size_t>(D), -1, 1);
    auto i_loc = rand_vec(static_cast<std::size_t>(D), -1, 1);
    auto E_det = rand_vec(static_cast<std::size_t>(2 * D), -1, 1);
    auto E_loc = rand_vec(static_cast<std::size_t>(5 * D), -1, 1);
    losses::TextBatch tb;
    tb.i_det = i_det;
    tb.i_loc = i_loc;
    tb.E_det = E_det;
    tb.E_loc = E_loc;
    tb.diagnosis = 1;
    tb.location = 2;
    tb.log_T_det = std::log(0.07);
    tb.log_T_loc = std::log(0.07);

    // defaults straight from the configuration
    CHECK(cfg.lambda == 0.01);
    CHECK(cfg.alpha == 0.01);
    CHECK(cfg.beta == 0.1);

    double s = losses::seg_loss(seg, mask, cfg.dice_smooth);
    double d = losses::det_loss(det, 1);
    double tx = losses::text_loss(tb);

    auto zero_lambda = cfg;
    zero_lambda.lambda = 0.0;
    CHECK(losses::teacher_loss(seg, mask, tb, zero_lambda) == Approx(s));
    CHECK(losses::teacher_loss(seg, mask, tb, cfg) ==
          Approx(s + cfg.lambda * tx).epsilon(1e-12));

    // linearity in lambda
    auto l2 = cfg;
    l2.lambda = 0.02;
    double delta1 = losses::teacher_loss(seg, mask, tb, cfg) - s;
    double delta2 = losses::teacher_loss(seg, mask, tb, l2) - s;
    CHECK(delta2 == Approx(2.0 * delta1).epsilon(1e-9));

    auto zero_beta = cfg;
    zero_beta.beta = 0.0;
    CHECK(losses::joint_loss(seg, mask, det, 1, zero_beta) == Approx(s));
    CHECK(losses::joint_loss(seg, mask, det, 1, cfg) ==
          Approx(s + cfg.beta * d).epsilon(1e-12));

    auto zero_alpha = cfg;
    zero_alpha.alpha = 0.0;
    CHECK(losses::student_loss(seg, mask, det, 1, tb, zero_alpha) ==
          Approx(losses::joint_loss(seg, mask, det, 1, cfg)).epsilon(1e-12));
    CHECK(losses::student_loss(seg, mask, det, 1, tb, cfg) ==
          Approx(s + cfg.beta * d + cfg.alpha * tx).epsilon(1e-12));
}

TEST_CASE("student and teacher composed gradients vs finite differences") {
    losses::LossConfig cfg;
    std::mt19937 local(77);
    for (int trial = 0; trial < 20; ++trial) {
        std::size_t V = 8;
        auto mask = rand_mask(V);
        auto seg = rand_vec(2 * V, -2, 2);
        auto det = rand_vec(2, -2, 2);
        int D = 5;
        auto i_det = rand_vec(static_cast<std::size_t>(D), -1, 1);
        auto i_loc = rand_vec(static_cast<std::size_t>(D), -1, 1);
        auto E_det = rand_vec(static_cast<std::size_t>(2 * D), -1, 1);
        auto E_loc = rand_vec(static_cast<std::size_t>(5 * D), -1, 1);
        std::vector<double> logT = {std::log(0.07), std::log(0.2)};
        int diagnosis = trial % 2, location = trial % 5;

        auto make_tb = [&]() {
            losses::TextBatch tb;
            tb.i_det = i_det;
            tb.i_loc = i_loc;
            tb.E_det = E_det;
            tb.E_loc = E_loc;
            tb.diagnosis = diagnosis;
            tb.location = location;
            tb.log_T_det = logT[0];
            tb.log_T_loc = logT[1];
            return tb;
        };
        auto value = [&] {
            return losses::student_loss(seg, mask, det, diagnosis, make_tb(), cfg);
        };
        auto g = losses::student_loss_grad(seg, mask, det, diagnosis, make_tb(), cfg);
        CHECK(g.value == Approx(value()).epsilon(1e-12));

        CHECK(rel_err(g.d_seg_logits[3], fdiff(value, seg, 3)) < 1e-6);
        CHECK(rel_err(g.d_det_logits[0], fdiff(value, det, 0)) < 1e-6);
        CHECK(rel_err(g.d_i_det[1], fdiff(value, i_det, 1)) < 1e-6);
        CHECK(rel_err(g.d_i_loc[2], fdiff(value, i_loc, 2)) < 1e-6);
        CHECK(rel_err(g.d_logT_det, fdiff(value, logT, 0)) < 1e-6);
        CHECK(rel_err(g.d_logT_loc, fdiff(value, logT, 1)) < 1e-6);

        auto tvalue = [&] { return losses::teacher_loss(seg, mask, make_tb(), cfg); };
        auto tg = losses::teacher_loss_grad(seg, mask, make_tb(), cfg);
        CHECK(tg.value == Approx(tvalue()).epsilon(1e-12));
        CHECK(rel_err(tg.d_seg_logits[5], fdiff(tvalue, seg, 5)) < 1e-6);
        CHECK(rel_err(tg.d_i_loc[0], fdiff(tvalue, i_loc, 0)) < 1e-6);
        CHECK(rel_err(tg.d_logT_loc, fdiff(tvalue, logT, 1)) < 1e-6);
    }
}

TEST_CASE("similarities stay within [-1,1] for unit-normalized inputs") {
    std::mt19937 local(3);
    std::uniform_real_distribution<double> d(-1, 1);
    for (int t = 0; t < 50; ++t) {
        int D = 12;
        auto unit = [&](std::vector<double> v) {
            double n2 = 0;
            for (double x : v) n2 += x * x;
            for (auto& x : v) x /= std::sqrt(n2);
            return v;
        };
        std::vector<double> i(static_cast<std::size_t>(D));
        for (auto& x : i) x = d(local);
        i = unit(i);
        std::vector<double> E;
        for (int k = 0; k < 5; ++k) {
            std::vector<double> row(static_cast<std::size_t>(D));
            for (auto& x : row) x = d(local);
            row = unit(row);
            E.insert(E.end(), row.begin(), row.end());
        }
        for (double s : losses::similarity(i, E, 5)) {
            CHECK(s >= -1.0 - 1e-12);
            CHECK(s <= 1.0 + 1e-12);
        }
    }
}
