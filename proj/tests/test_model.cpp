#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "wssl/losses.hpp"
#include "wssl/model.hpp"
#include "wssl/text.hpp"

using namespace wssl;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

model::BackboneConfig tiny_config() {
    model::BackboneConfig cfg;
    cfg.stages = 3;
    cfg.base_channels = 2;
    cfg.input_shape = {8, 8, 8};
    cfg.text_dim = 6;
    cfg.det_channels = 3;
    cfg.loc_channels = 3;
    return cfg;
}

Volume random_volume(Shape3 s, unsigned seed) {
    Volume v(s.x, s.y, s.z);
    std::mt19937 g(seed);
    std::normal_distribution<double> n(0, 1);
    for (auto& x : v.data) x = n(g);
    return v;
}

double rel_err(double a, double b) {
    double denom = std::max(std::abs(a), std::abs(b));
    return denom == 0 ? 0.0 : std::abs(a - b) / denom;
}

}  // namespace

TEST_CASE("backbone config validation") {
    auto cfg = tiny_config();
    CHECK_NOTHROW(cfg.validate());
    auto bad = cfg;
    bad.input_shape = {10, 8, 8};  // not divisible by 4
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.stages = 1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("pyramid follows the dyadic shape schedule") {
    model::BackboneConfig cfg;
    cfg.stages = 4;
    cfg.base_channels = 8;
    cfg.input_shape = {32, 32, 32};
    cfg.text_dim = 8;
    model::Network net(cfg, 3);
    auto pyr = net.forward_backbone(random_volume(cfg.input_shape, 1));
    REQUIRE(pyr.size() == 4);
    int want_size[4] = {4, 8, 16, 32};
    int want_ch[4] = {64, 32, 16, 8};
    for (int i = 0; i < 4; ++i) {
        CHECK(pyr[static_cast<std::size_t>(i)].nx == want_size[i]);
        CHECK(pyr[static_cast<std::size_t>(i)].ny == want_size[i]);
        CHECK(pyr[static_cast<std::size_t>(i)].nz == want_size[i]);
        CHECK(pyr[static_cast<std::size_t>(i)].c == want_ch[i]);
    }
    CHECK(net.total_channels() == 120);

    Volume wrong(16, 32, 32);
    CHECK_THROWS_AS(net.forward(wrong, {true, false, false, false}),
                    std::invalid_argument);
}

TEST_CASE("forward is deterministic given parameters and input") {
    auto cfg = tiny_config();
    model::Network net(cfg, 11);
    auto v = random_volume(cfg.input_shape, 2);
    auto a = net.forward(v, {true, true, true, true});
    auto b = net.forward(v, {true, true, true, true});
    CHECK(a.seg_logits.v == b.seg_logits.v);
    CHECK(a.det_logits == b.det_logits);
    CHECK(a.i_det == b.i_det);
    CHECK(a.i_loc == b.i_loc);
}

TEST_CASE("parameter count matches the layer-by-layer formula") {
    auto cfg = tiny_config();
    model::Network net(cfg, 5);
    auto ch = [&](int s) { return cfg.base_channels << s; };
    std::size_t want = 0;
    // encoder blocks (conv + instance norm)
    want += 27 * 1 * ch(0) + ch(0) + 2 * ch(0);
    for (int s = 1; s < cfg.stages; ++s)
        want += 27 * ch(s - 1) * ch(s) + ch(s) + 2 * ch(s);
    // decoder blocks
    for (int s = 0; s <= cfg.stages - 2; ++s)
        want += 27 * (ch(s + 1) + ch(s)) * ch(s) + ch(s) + 2 * ch(s);
    int ct = 0;
    for (int s = 0; s < cfg.stages; ++s) ct += ch(s);
    want += 2 * ch(0) + 2;                                         // seg head
    want += 27 * ct * cfg.det_channels + cfg.det_channels +        // det head
            2 * cfg.det_channels + 2;
    want += 2 * (27 * ct * cfg.text_dim + cfg.text_dim +           // projectors
                 cfg.text_dim * cfg.text_dim + cfg.text_dim);
    want += 27 * ct * cfg.loc_channels + cfg.loc_channels +        // loc head
            5 * cfg.loc_channels + 5;
    want += 2;                                                     // temperatures
    CHECK(net.store().total_size() == want);
}

TEST_CASE("zeroed final decoder block produces zero feature maps") {
    auto cfg = tiny_config();
    model::Network net(cfg, 9);
    for (const char* name : {"dec0.conv.w", "dec0.conv.b"}) {
        auto* p = net.store().find(name);
        REQUIRE(p != nullptr);
        std::fill(p->w.begin(), p->w.end(), 0.0);
    }
    auto pyr = net.forward_backbone(random_volume(cfg.input_shape, 3));
    for (double v : pyr.back().v) CHECK(v == 0.0);
}

TEST_CASE("aggregation resizes and concatenates along channels") {
    std::vector<model::Tensor4> pyr;
    pyr.emplace_back(2, 4, 4, 4, 1.5);
    auto agg1 = model::aggregate_features(pyr, 4, 4, 4);
    CHECK(agg1.c == 2);
    CHECK(agg1.v == pyr[0].v);  // identity at target size

    pyr.emplace_back(3, 8, 8, 8, -2.0);
    auto agg = model::aggregate_features(pyr, 4, 4, 4);
    CHECK(agg.c == 5);
    for (int ch = 0; ch < 2; ++ch)
        for (std::size_t i = 0; i < agg.spatial(); ++i)
            CHECK(agg.channel(ch)[i] == Approx(1.5));
    for (int ch = 2; ch < 5; ++ch)
        for (std::size_t i = 0; i < agg.spatial(); ++i)
            CHECK(agg.channel(ch)[i] == Approx(-2.0));
}

TEST_CASE("seg head: uniform logits under zero weights, per-voxel softmax") {
    auto cfg = tiny_config();
    model::Network net(cfg, 13);
    auto v = random_volume(cfg.input_shape, 4);

    auto fwd = net.forward(v, {true, false, false, false});
    CHECK(fwd.seg_logits.c == 2);
    CHECK(fwd.seg_logits.nx == cfg.input_shape.x);
    std::size_t V = fwd.seg_logits.spatial();
    for (std::size_t i = 0; i < V; i += 37) {
        double z0 = fwd.seg_logits.v[i], z1 = fwd.seg_logits.v[V + i];
        double m = std::max(z0, z1);
        double p0 = std::exp(z0 - m), p1 = std::exp(z1 - m);
        CHECK(p0 / (p0 + p1) + p1 / (p0 + p1) == Approx(1.0).margin(1e-6));
    }

    for (const char* name : {"seg_head.w", "seg_head.b"}) {
        auto* p = net.store().find(name);
        std::fill(p->w.begin(), p->w.end(), 0.0);
    }
    auto zfwd = net.forward(v, {true, false, false, false});
    for (double z : zfwd.seg_logits.v) CHECK(z == 0.0);
}

TEST_CASE("head stack: GAP of constants, zero FC, translation invariance") {
    model::ParamStore ps;
    model::HeadStack head;
    head.build(ps, "h", 3, 4, 2);
    std::mt19937 g(17);
    std::normal_distribution<double> n(0, 0.5);
    for (auto& p : ps.params)
        for (auto& w : p.w) w = n(g);

    // zero conv weights, bias c: pooled value equals c
    auto* cw = ps.find("h.conv.w");
    std::fill(cw->w.begin(), cw->w.end(), 0.0);
    auto* cb = ps.find("h.conv.b");
    std::fill(cb->w.begin(), cb->w.end(), 0.75);
    model::Tensor4 x(3, 6, 6, 6);
    for (auto& v : x.v) v = n(g);
    model::HeadStack::Cache cache;
    head.forward(ps, x, cache);
    for (double p : cache.pooled) CHECK(p == Approx(0.75).margin(1e-12));

    // zero FC weights, bias b: logits equal b regardless of input
    auto* fw = ps.find("h.fc.w");
    std::fill(fw->w.begin(), fw->w.end(), 0.0);
    auto* fb = ps.find("h.fc.b");
    fb->w = {1.25, -0.5};
    auto out = head.forward(ps, x, cache);
    CHECK(out[0] == Approx(1.25));
    CHECK(out[1] == Approx(-0.5));

    // whole-voxel circular shift of border-free content leaves GAP unchanged
    for (auto& w : cw->w) w = n(g);
    model::Tensor4 content(3, 8, 8, 8, 0.0);
    for (int c = 0; c < 3; ++c)
        for (int z = 3; z < 5; ++z)
            for (int y = 3; y < 5; ++y)
                for (int x2 = 3; x2 < 5; ++x2) content.at(c, z, y, x2) = n(g);
    model::Tensor4 shifted(3, 8, 8, 8, 0.0);
    int sz = 1, sy = 2, sx = 1;
    for (int c = 0; c < 3; ++c)
        for (int z = 0; z < 8; ++z)
            for (int y = 0; y < 8; ++y)
                for (int x2 = 0; x2 < 8; ++x2)
                    shifted.at(c, (z + sz) % 8, (y + sy) % 8, (x2 + sx) % 8) =
                        content.at(c, z, y, x2);
    model::HeadStack::Cache c1, c2;
    head.forward(ps, content, c1);
    head.forward(ps, shifted, c2);
    for (std::size_t i = 0; i < c1.pooled.size(); ++i)
        CHECK(std::abs(c1.pooled[i] - c2.pooled[i]) < 1e-5);
}

TEST_CASE("projectors are independent and feed gradients to the backbone") {
    auto cfg = tiny_config();
    model::Network net(cfg, 21);
    auto v = random_volume(cfg.input_shape, 6);

    auto base = net.forward(v, {false, false, true, false});
    CHECK(base.i_det.size() == static_cast<std::size_t>(cfg.text_dim));
    CHECK(base.i_loc.size() == static_cast<std::size_t>(cfg.text_dim));

    // perturbing the det projector leaves i_loc bitwise unchanged
    auto* pw = net.store().find("proj_det.conv.w");
    pw->w[0] += 0.37;
    auto bumped = net.forward(v, {false, false, true, false});
    CHECK(bumped.i_loc == base.i_loc);
    CHECK(bumped.i_det != base.i_det);
    pw->w[0] -= 0.37;

    // loss = sum(i_det) + sum(i_loc); check one backbone weight numerically
    auto loss_of = [&]() {
        auto f = net.forward(v, {false, false, true, false});
        double s = 0;
        for (double x : f.i_det) s += x;
        for (double x : f.i_loc) s += x;
        return s;
    };
    auto fwd = net.forward(v, {false, false, true, false});
    model::Network::OutputGrads og;
    og.d_i_det.assign(fwd.i_det.size(), 1.0);
    og.d_i_loc.assign(fwd.i_loc.size(), 1.0);
    model::GradBuffer gb;
    gb.init(net.store());
    net.backward(fwd, og, gb);

    auto* enc_w = net.store().find("enc0.conv.w");
    std::size_t slot = 0;
    for (; slot < net.store().params.size(); ++slot)
        if (net.store().params[slot].name == "enc0.conv.w") break;
    const double h = 1e-5;
    double keep = enc_w->w[4];
    enc_w->w[4] = keep + h;
    double fp = loss_of();
    enc_w->w[4] = keep - h;
    double fm = loss_of();
    enc_w->w[4] = keep;
    double num = (fp - fm) / (2 * h);
    REQUIRE(std::abs(num) > 1e-8);  // gradient actually flows
    CHECK(rel_err(gb.g[slot][4], num) < 1e-4);
}

TEST_CASE("end-to-end analytic gradients match finite differences") {
    auto cfg = tiny_config();
    model::Network net(cfg, 31);
    auto vol = random_volume(cfg.input_shape, 8);

    Mask mask(cfg.input_shape.x, cfg.input_shape.y, cfg.input_shape.z, 0);
    std::mt19937 g(9);
    std::bernoulli_distribution bd(0.2);
    for (auto& m : mask.data) m = bd(g);

    auto table = text::pseudo_table(cfg.text_dim);
    auto tm = text::assemble_text_matrices(table);
    losses::LossConfig lc;
    lc.alpha = 0.5;  // exaggerated weights so every head contributes
    lc.beta = 0.7;
    const int diagnosis = 1, location = 2;

    auto loss_of = [&]() {
        auto f = net.forward(vol, {true, true, true, true});
        losses::TextBatch tb;
        tb.i_det = f.i_det;
        tb.i_loc = f.i_loc;
        tb.E_det = tm.det;
        tb.E_loc = tm.loc;
        tb.diagnosis = diagnosis;
        tb.location = location;
        tb.log_T_det = net.log_t_det();
        tb.log_T_loc = net.log_t_loc();
        return losses::student_loss(f.seg_logits.v, mask.data, f.det_logits,
                                    diagnosis, tb, lc) +
               0.3 * losses::ce_loss(f.loc_logits, location);
    };

    auto fwd = net.forward(vol, {true, true, true, true});
    losses::TextBatch tb;
    tb.i_det = fwd.i_det;
    tb.i_loc = fwd.i_loc;
    tb.E_det = tm.det;
    tb.E_loc = tm.loc;
    tb.diagnosis = diagnosis;
    tb.location = location;
    tb.log_T_det = net.log_t_det();
    tb.log_T_loc = net.log_t_loc();
    auto lg = losses::student_loss_grad(fwd.seg_logits.v, mask.data,
                                        fwd.det_logits, diagnosis, tb, lc);
    auto cg = losses::ce_loss_grad(fwd.loc_logits, location);

    model::Network::OutputGrads og;
    og.d_seg_logits = lg.d_seg_logits;
    og.d_det_logits = {lg.d_det_logits[0], lg.d_det_logits[1]};
    og.d_i_det = lg.d_i_det;
    og.d_i_loc = lg.d_i_loc;
    og.d_log_t_det = lg.d_logT_det;
    og.d_log_t_loc = lg.d_logT_loc;
    og.d_loc_logits = cg.d_logits;
    for (auto& v : og.d_loc_logits) v *= 0.3;

    model::GradBuffer gb;
    gb.init(net.store());
    net.backward(fwd, og, gb);

    // probe parameters across every layer family, including the temperatures
    struct Probe {
        const char* name;
        std::size_t index;
    };
    Probe probes[] = {{"enc0.conv.w", 7},   {"enc1.norm.gamma", 1},
                      {"enc2.conv.b", 0},   {"dec0.conv.w", 11},
                      {"dec1.norm.beta", 1}, {"seg_head.w", 3},
                      {"det_head.fc.w", 2}, {"proj_det.conv.w", 5},
                      {"proj_loc.fc.w", 9}, {"loc_head.fc.b", 2},
                      {"log_t_det", 0},     {"log_t_loc", 0}};
    int checked = 0;
    const double h = 1e-4;
    for (const auto& probe : probes) {
        std::size_t slot = 0;
        for (; slot < net.store().params.size(); ++slot)
            if (net.store().params[slot].name == probe.name) break;
        REQUIRE(slot < net.store().params.size());
        double analytic = gb.g[slot][probe.index];
        double keep = net.store()[static_cast<int>(slot)].w[probe.index];
        net.store()[static_cast<int>(slot)].w[probe.index] = keep + h;
        double fp = loss_of();
        net.store()[static_cast<int>(slot)].w[probe.index] = keep - h;
        double fm = loss_of();
        net.store()[static_cast<int>(slot)].w[probe.index] = keep;
        double numeric = (fp - fm) / (2 * h);
        if (std::abs(analytic) < 1e-6 && std::abs(numeric) < 1e-6) continue;
        INFO(probe.name << "[" << probe.index << "] analytic=" << analytic
                        << " numeric=" << numeric);
        CHECK(rel_err(analytic, numeric) < 1e-6);
        ++checked;
    }
    CHECK(checked >= 5);
}

TEST_CASE("checkpoint container round trip") {
    auto cfg = tiny_config();
    model::Network net(cfg, 41);
    auto dir = fs::temp_directory_path() / "wssl_ckpt_test";
    fs::create_directories(dir);
    auto path = dir / "m.ckpt";

    nlohmann::json meta;
    meta["epoch"] = 7;
    meta["note"] = "round trip";
    model::save_checkpoint(path, net.store(), meta);

    // keep the float32-rounded expectation, then scramble and reload
    std::vector<std::vector<double>> want;
    for (const auto& p : net.store().params) {
        std::vector<double> w(p.w.size());
        for (std::size_t i = 0; i < w.size(); ++i)
            w[i] = static_cast<double>(static_cast<float>(p.w[i]));
        want.push_back(std::move(w));
    }
    for (auto& p : net.store().params)
        for (auto& w : p.w) w += 1.0;
    auto loaded_meta = model::load_checkpoint(path, net.store());
    CHECK(loaded_meta["epoch"] == 7);
    for (std::size_t i = 0; i < want.size(); ++i)
        CHECK(net.store().params[i].w == want[i]);

    // a different architecture must refuse the file
    auto other_cfg = cfg;
    other_cfg.base_channels = 3;
    model::Network other(other_cfg, 1);
    CHECK_THROWS_AS(model::load_checkpoint(path, other.store()), ConfigError);
    fs::remove_all(dir);
}
