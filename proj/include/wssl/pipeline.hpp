#ifndef WSSL_PIPELINE_HPP
#define WSSL_PIPELINE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wssl/core.hpp"
#include "wssl/eval.hpp"
#include "wssl/io.hpp"
#include "wssl/losses.hpp"
#include "wssl/model.hpp"
#include "wssl/optim.hpp"
#include "wssl/phantom.hpp"
#include "wssl/preprocess.hpp"
#include "wssl/text.hpp"

namespace wssl::pipeline {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Training modes. The last two are the loc-only / seg+loc rows of the joint
// learning ablation; the CLI exposes them as table3-b and table3-d.
// ---------------------------------------------------------------------------
enum class Mode {
    teacher,
    student,
    weak_only_classifier,
    fully_supervised,
    joint_no_text,
    multitask_cls_loc,
    panda_like_wssl,
    loc_only_classifier,
    joint_seg_loc,
};

inline const char* to_string(Mode m) {
    switch (m) {
        case Mode::teacher: return "teacher";
        case Mode::student: return "student";
        case Mode::weak_only_classifier: return "weak_only_classifier";
        case Mode::fully_supervised: return "fully_supervised";
        case Mode::joint_no_text: return "joint_no_text";
        case Mode::multitask_cls_loc: return "multitask_cls_loc";
        case Mode::panda_like_wssl: return "panda_like_wssl";
        case Mode::loc_only_classifier: return "loc_only_classifier";
        default: return "joint_seg_loc";
    }
}

inline Mode mode_from_string(const std::string& s) {
    static const std::pair<const char*, Mode> table[] = {
        {"teacher", Mode::teacher},
        {"student", Mode::student},
        {"weak_only_classifier", Mode::weak_only_classifier},
        {"fully_supervised", Mode::fully_supervised},
        {"joint_no_text", Mode::joint_no_text},
        {"multitask_cls_loc", Mode::multitask_cls_loc},
        {"panda_like_wssl", Mode::panda_like_wssl},
        {"loc_only_classifier", Mode::loc_only_classifier},
        {"joint_seg_loc", Mode::joint_seg_loc},
    };
    for (const auto& [name, mode] : table)
        if (s == name) return mode;
    throw ConfigError("unknown mode: " + s);
}

inline const char* to_string(losses::TextParts p) {
    switch (p) {
        case losses::TextParts::none: return "none";
        case losses::TextParts::det_only: return "det";
        case losses::TextParts::loc_only: return "loc";
        default: return "det+loc";
    }
}

inline losses::TextParts text_parts_from_string(const std::string& s) {
    if (s == "none") return losses::TextParts::none;
    if (s == "det") return losses::TextParts::det_only;
    if (s == "loc") return losses::TextParts::loc_only;
    if (s == "det+loc") return losses::TextParts::det_loc;
    throw ConfigError("unknown text parts: " + s);
}

// ---------------------------------------------------------------------------
// Experiment configuration (single source of truth; config.json schema).
// Unknown keys are rejected.
// ---------------------------------------------------------------------------
struct TrainConfig {
    std::string dataset;         // dataset directory
    double full_fraction = 0.3;
    Mode mode = Mode::student;
    int epochs = 50;
    int warmup_epochs = 5;
    double lr = 5e-4;
    double weight_decay = 1e-4;
    int batch_size = 6;
    std::uint64_t seed = 0;
    losses::LossConfig loss;
    losses::TextParts text_parts = losses::TextParts::det_loc;
    model::BackboneConfig backbone;
    int roi_margin_x = 32, roi_margin_y = 32, roi_margin_z = 4;
    preprocess::AugmentSpec augment;
    std::string embedding_table;     // empty -> deterministic pseudo encoder
    double pseudo_threshold = 0.5;
    bool bosma_filter = false;       // location-matched pseudo-mask filtering

    void validate() const {
        if (epochs < 1 || warmup_epochs < 0 || warmup_epochs >= epochs)
            throw std::invalid_argument("warmup_epochs must be < epochs");
        if (!(lr > 0)) throw std::invalid_argument("lr must be > 0");
        if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
        if (!(full_fraction > 0.0) || full_fraction > 1.0)
            throw std::invalid_argument("full_fraction must be in (0,1]");
        if (pseudo_threshold < 0.0 || pseudo_threshold > 1.0)
            throw std::invalid_argument("pseudo_threshold must be in [0,1]");
        loss.validate();
        backbone.validate();
        augment.validate();
    }

    preprocess::RoiSpec roi_spec() const {
        preprocess::RoiSpec r;
        r.margin_x = roi_margin_x;
        r.margin_y = roi_margin_y;
        r.margin_z = roi_margin_z;
        r.target_shape = backbone.input_shape;
        return r;
    }
};

inline void to_json(json& j, const TrainConfig& c) {
    j = json{
        {"dataset", c.dataset},
        {"full_fraction", c.full_fraction},
        {"mode", to_string(c.mode)},
        {"epochs", c.epochs},
        {"warmup_epochs", c.warmup_epochs},
        {"lr", c.lr},
        {"weight_decay", c.weight_decay},
        {"batch_size", c.batch_size},
        {"seed", c.seed},
        {"loss",
         {{"lambda", c.loss.lambda},
          {"alpha", c.loss.alpha},
          {"beta", c.loss.beta},
          {"dice_smooth", c.loss.dice_smooth},
          {"temp_init", c.loss.temp_init}}},
        {"text_parts", to_string(c.text_parts)},
        {"backbone", c.backbone},
        {"roi_margin", {c.roi_margin_x, c.roi_margin_y, c.roi_margin_z}},
        {"augment",
         {{"enabled", c.augment.enabled},
          {"rotation_max_deg", c.augment.rotation_max_deg},
          {"scale_range", {c.augment.scale_min, c.augment.scale_max}},
          {"flip_x", c.augment.flip_x},
          {"flip_y", c.augment.flip_y},
          {"intensity_scale_range",
           {c.augment.intensity_scale_min, c.augment.intensity_scale_max}}}},
        {"embedding_table", c.embedding_table},
        {"pseudo_threshold", c.pseudo_threshold},
        {"bosma_filter", c.bosma_filter}};
}

inline void check_keys(const json& j, const std::vector<std::string>& known,
                       const std::string& where) {
    for (auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ConfigError("unknown " + where + " config key: " + key);
}

inline void from_json(const json& j, TrainConfig& c) {
    check_keys(j,
               {"dataset", "full_fraction", "mode", "epochs", "warmup_epochs",
                "lr", "weight_decay", "batch_size", "seed", "loss", "text_parts",
                "backbone", "roi_margin", "augment", "embedding_table",
                "pseudo_threshold", "bosma_filter"},
               "train");
    if (j.contains("dataset")) c.dataset = j["dataset"].get<std::string>();
    if (j.contains("full_fraction")) c.full_fraction = j["full_fraction"].get<double>();
    if (j.contains("mode")) c.mode = mode_from_string(j["mode"].get<std::string>());
    if (j.contains("epochs")) c.epochs = j["epochs"].get<int>();
    if (j.contains("warmup_epochs")) c.warmup_epochs = j["warmup_epochs"].get<int>();
    if (j.contains("lr")) c.lr = j["lr"].get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<int>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("loss")) {
        const auto& l = j["loss"];
        check_keys(l, {"lambda", "alpha", "beta", "dice_smooth", "temp_init"}, "loss");
        if (l.contains("lambda")) c.loss.lambda = l["lambda"].get<double>();
        if (l.contains("alpha")) c.loss.alpha = l["alpha"].get<double>();
        if (l.contains("beta")) c.loss.beta = l["beta"].get<double>();
        if (l.contains("dice_smooth")) c.loss.dice_smooth = l["dice_smooth"].get<double>();
        if (l.contains("temp_init")) c.loss.temp_init = l["temp_init"].get<double>();
    }
    if (j.contains("text_parts"))
        c.text_parts = text_parts_from_string(j["text_parts"].get<std::string>());
    if (j.contains("backbone")) c.backbone = j["backbone"].get<model::BackboneConfig>();
    if (j.contains("roi_margin")) {
        c.roi_margin_x = j["roi_margin"][0].get<int>();
        c.roi_margin_y = j["roi_margin"][1].get<int>();
        c.roi_margin_z = j["roi_margin"][2].get<int>();
    }
    if (j.contains("augment")) {
        const auto& a = j["augment"];
        check_keys(a,
                   {"enabled", "rotation_max_deg", "scale_range", "flip_x",
                    "flip_y", "intensity_scale_range"},
                   "augment");
        if (a.contains("enabled")) c.augment.enabled = a["enabled"].get<bool>();
        if (a.contains("rotation_max_deg"))
            c.augment.rotation_max_deg = a["rotation_max_deg"].get<double>();
        if (a.contains("scale_range")) {
            c.augment.scale_min = a["scale_range"][0].get<double>();
            c.augment.scale_max = a["scale_range"][1].get<double>();
        }
        if (a.contains("flip_x")) c.augment.flip_x = a["flip_x"].get<bool>();
        if (a.contains("flip_y")) c.augment.flip_y = a["flip_y"].get<bool>();
        if (a.contains("intensity_scale_range")) {
            c.augment.intensity_scale_min = a["intensity_scale_range"][0].get<double>();
            c.augment.intensity_scale_max = a["intensity_scale_range"][1].get<double>();
        }
    }
    if (j.contains("embedding_table"))
        c.embedding_table = j["embedding_table"].get<std::string>();
    if (j.contains("pseudo_threshold"))
        c.pseudo_threshold = j["pseudo_threshold"].get<double>();
    if (j.contains("bosma_filter")) c.bosma_filter = j["bosma_filter"].get<bool>();
}

inline std::string config_hash(const TrainConfig& c) {
    json j = c;
    return io::hex64(fnv1a64(j.dump()));
}

// ---------------------------------------------------------------------------
// Learning-rate schedule: linear warmup to lr0, then cosine decay to zero.
// ---------------------------------------------------------------------------
inline double lr_schedule(std::int64_t step, std::int64_t total_steps,
                          std::int64_t warmup_steps, double lr0) {
    if (step < 0 || step > total_steps)
        throw std::invalid_argument("lr_schedule: step out of range");
    if (step < warmup_steps)
        return lr0 * static_cast<double>(step) / static_cast<double>(warmup_steps);
    double t = static_cast<double>(step - warmup_steps) /
               static_cast<double>(total_steps - warmup_steps);
    return lr0 * 0.5 * (1.0 + std::cos(M_PI * t));
}

// ---------------------------------------------------------------------------
// Record preparation: organ-ROI crop, resize to the network input shape,
// intensity normalization. All masks travel through the same crop/resize.
// ---------------------------------------------------------------------------
struct PreparedRecord {
    std::string id;
    Volume vol;
    Mask organ;
    Mask mask;  // ground-truth or pseudo mask; empty grid when absent
    int diagnosis = 0;
    int location = 0;
    phantom::Supervision supervision = phantom::Supervision::full;
    phantom::Split split = phantom::Split::train;

    bool has_mask() const { return !mask.empty(); }
};

inline PreparedRecord prepare_record(const phantom::Manifest& man,
                                     const phantom::ManifestRecord& r,
                                     const preprocess::RoiSpec& roi,
                                     bool want_mask, bool use_hidden_mask) {
    PreparedRecord out;
    out.id = r.id;
    out.diagnosis = r.diagnosis;
    out.location = r.location;
    out.supervision = r.supervision;
    out.split = r.split;

    Volume vol = io::read_volume(man.root / r.volume_path);
    Mask organ = io::read_mask(man.root / r.organ_path);
    std::optional<Mask> mask;
    if (want_mask) {
        std::string mpath = r.mask_path;
        if (mpath.empty() && use_hidden_mask) mpath = r.hidden_mask_path;
        if (!mpath.empty()) mask = io::read_mask(man.root / mpath);
    }

    auto roi_out = preprocess::extract_roi(vol, organ, mask ? &*mask : nullptr, roi);
    out.vol = preprocess::resize_trilinear(roi_out.volume, roi.target_shape);
    out.organ = preprocess::resize_nearest(roi_out.organ_mask, roi.target_shape);
    if (roi_out.tumor_mask)
        out.mask = preprocess::resize_nearest(*roi_out.tumor_mask, roi.target_shape);
    preprocess::normalize(out.vol);
    return out;
}

template <typename Pred>
inline std::vector<PreparedRecord> prepare_records(const phantom::Manifest& man,
                                                   Pred pred,
                                                   const preprocess::RoiSpec& roi,
                                                   bool want_mask,
                                                   bool use_hidden_mask = false) {
    std::vector<const phantom::ManifestRecord*> sel;
    for (const auto& r : man.records)
        if (pred(r)) sel.push_back(&r);
    std::vector<PreparedRecord> out(sel.size());
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(sel.size()); ++i)
        out[static_cast<std::size_t>(i)] = prepare_record(
            man, *sel[static_cast<std::size_t>(i)], roi, want_mask, use_hidden_mask);
    return out;
}

// ---------------------------------------------------------------------------
// Loss wiring per mode
// ---------------------------------------------------------------------------
struct TrainFlags {
    bool seg = false, det = false, loc_head = false;
    losses::TextParts text = losses::TextParts::none;
    double det_weight = 1.0, loc_weight = 1.0, text_weight = 0.0;
    enum class Select { dice, auc, loc_acc } select = Select::auc;
};

inline TrainFlags flags_for(Mode mode, const TrainConfig& cfg) {
    TrainFlags f;
    const auto& L = cfg.loss;
    switch (mode) {
        case Mode::teacher:
            f.seg = true;
            f.text = cfg.text_parts;
            f.text_weight = L.lambda;
            f.select = TrainFlags::Select::dice;
            break;
        case Mode::student:
            f.seg = f.det = true;
            f.det_weight = L.beta;
            f.text = cfg.text_parts;
            f.text_weight = L.alpha;
            break;
        case Mode::panda_like_wssl:
            f.seg = f.det = true;
            f.det_weight = L.beta;
            break;
        case Mode::weak_only_classifier:
            f.det = true;
            break;
        case Mode::fully_supervised:
        case Mode::joint_no_text:
            f.seg = f.det = true;
            f.det_weight = L.beta;
            break;
        case Mode::multitask_cls_loc:
            f.seg = f.det = f.loc_head = true;
            f.det_weight = L.beta;
            f.loc_weight = L.beta;
            break;
        case Mode::loc_only_classifier:
            f.loc_head = true;
            f.select = TrainFlags::Select::loc_acc;
            break;
        case Mode::joint_seg_loc:
            f.seg = f.loc_head = true;
            f.loc_weight = L.beta;
            f.select = TrainFlags::Select::loc_acc;
            break;
    }
    if (f.text_weight == 0.0) f.text = losses::TextParts::none;
    if (f.text == losses::TextParts::none) f.text_weight = 0.0;
    return f;
}

inline model::HeadFlags head_flags(const TrainFlags& f) {
    return {f.seg, f.det, f.text != losses::TextParts::none, f.loc_head};
}

inline text::TextMatrices resolve_text_matrices(const TrainConfig& cfg) {
    text::TextEmbeddingTable table =
        cfg.embedding_table.empty()
            ? text::pseudo_table(cfg.backbone.text_dim)
            : text::load_embedding_table(cfg.embedding_table);
    if (table.dim != cfg.backbone.text_dim)
        throw ConfigError("embedding table dim " + std::to_string(table.dim) +
                          " does not match backbone text_dim " +
                          std::to_string(cfg.backbone.text_dim));
    return text::assemble_text_matrices(table);
}

// ---------------------------------------------------------------------------
// Per-record inference outputs used for metrics and model selection
// ---------------------------------------------------------------------------
struct RecordEval {
    double score = std::numeric_limits<double>::quiet_NaN();       // joint det prob
    double text_score = std::numeric_limits<double>::quiet_NaN();  // text det prob
    int loc_pred = -1;
    double dice = std::numeric_limits<double>::quiet_NaN();  // vs GT if present
};

inline int argmax_lowest(std::span<const double> v) {
    int best = 0;
    for (int k = 1; k < static_cast<int>(v.size()); ++k)
        if (v[static_cast<std::size_t>(k)] > v[static_cast<std::size_t>(best)]) best = k;
    return best;
}

inline Mask threshold_foreground(const model::Tensor4& seg_logits,
                                 double threshold) {
    std::size_t V = seg_logits.spatial();
    Mask m(seg_logits.nx, seg_logits.ny, seg_logits.nz);
    for (std::size_t v = 0; v < V; ++v) {
        double z0 = seg_logits.v[v], z1 = seg_logits.v[V + v];
        double p1 = 1.0 / (1.0 + std::exp(z0 - z1));
        m.data[v] = p1 > threshold ? 1 : 0;
    }
    return m;
}

inline RecordEval eval_one(const model::Network& net, const PreparedRecord& rec,
                           const text::TextMatrices& tm, const TrainFlags& flags,
                           const Mask* gt_mask) {
    auto fwd = net.forward(rec.vol, head_flags(flags));
    RecordEval out;
    if (flags.det) {
        auto p = losses::temperature_softmax(fwd.det_logits, 1.0);
        out.score = p[1];
    }
    if (flags.text != losses::TextParts::none) {
        if (losses::uses_det(flags.text)) {
            auto s = losses::similarity(fwd.i_det, tm.det, 2);
            auto p = losses::temperature_softmax(s, std::exp(net.log_t_det()));
            out.text_score = p[1];
            if (std::isnan(out.score)) out.score = out.text_score;
        }
        if (losses::uses_loc(flags.text)) {
            auto s = losses::similarity(fwd.i_loc, tm.loc, 5);
            out.loc_pred = argmax_lowest(s);
        }
    }
    if (flags.loc_head && out.loc_pred < 0)
        out.loc_pred = argmax_lowest(fwd.loc_logits);
    if (flags.seg && gt_mask && !gt_mask->empty()) {
        if (count_nonzero(*gt_mask) > 0) {
            Mask pred = threshold_foreground(fwd.seg_logits, 0.5);
            out.dice = eval::dice_score(pred, *gt_mask);
        }
    }
    return out;
}

inline std::vector<RecordEval> eval_all(const model::Network& net,
                                        const std::vector<PreparedRecord>& recs,
                                        const text::TextMatrices& tm,
                                        const TrainFlags& flags) {
    std::vector<RecordEval> out(recs.size());
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(recs.size()); ++i) {
        const auto& r = recs[static_cast<std::size_t>(i)];
        out[static_cast<std::size_t>(i)] =
            eval_one(net, r, tm, flags, r.has_mask() ? &r.mask : nullptr);
    }
    return out;
}

inline eval::EvalReport build_report(const std::vector<PreparedRecord>& recs,
                                     const std::vector<RecordEval>& evals,
                                     const TrainFlags& flags) {
    eval::EvalReport rep;
    eval::ScoreSet scores, text_scores;
    std::vector<int> loc_pred, loc_true;
    std::vector<double> dice_all, dice_eso, dice_egj;
    for (std::size_t i = 0; i < recs.size(); ++i) {
        const auto& r = recs[i];
        const auto& e = evals[i];
        if (!std::isnan(e.score)) {
            scores.ids.push_back(r.id);
            scores.scores.push_back(e.score);
            scores.labels.push_back(r.diagnosis);
        }
        if (!std::isnan(e.text_score)) {
            text_scores.scores.push_back(e.text_score);
            text_scores.labels.push_back(r.diagnosis);
        }
        if (e.loc_pred >= 0) {
            loc_pred.push_back(e.loc_pred);
            loc_true.push_back(r.location);
        }
        if (!std::isnan(e.dice)) {
            dice_all.push_back(e.dice);
            (r.location == 4 ? dice_egj : dice_eso).push_back(e.dice);
        }
    }
    auto mean = [](const std::vector<double>& v) {
        if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    rep.dice_overall = mean(dice_all);
    rep.dice_eso = mean(dice_eso);
    rep.dice_egj = mean(dice_egj);
    if (!scores.scores.empty() && scores.both_classes()) {
        rep.auc = eval::auc(scores);
        auto ss = eval::sens_spec(scores, 0.5);
        rep.sensitivity = ss.first;
        rep.specificity = ss.second;
        rep.roc_points = eval::roc_curve(scores);
    }
    if (!text_scores.scores.empty() && text_scores.both_classes())
        rep.auc_text = eval::auc(text_scores);
    if (!loc_pred.empty())
        rep.location_accuracy = eval::location_accuracy(loc_pred, loc_true);
    rep.scores = std::move(scores);
    return rep;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------
struct EpochRow {
    int epoch = 0;
    double loss = 0, seg = 0, det = 0, text = 0, loc = 0;
    double val_metric = 0;
};

struct TrainResult {
    int best_epoch = -1;
    double best_metric = -1e300;
    fs::path checkpoint;
    std::vector<EpochRow> rows;
};

namespace detail {

struct SampleLoss {
    double seg = 0, det = 0, text = 0, loc = 0;
};

inline SampleLoss train_sample(const model::Network& net,
                               const PreparedRecord& rec,
                               const TrainFlags& flags,
                               const text::TextMatrices& tm,
                               const TrainConfig& cfg, int epoch,
                               std::size_t rec_index, double grad_scale,
                               model::GradBuffer& gb) {
    Volume vol = rec.vol;
    Mask mask = rec.mask;
    if (cfg.augment.enabled) {
        if (mask.empty()) mask = Mask(vol.nx, vol.ny, vol.nz, 0);
        preprocess::augment(vol, mask, cfg.augment,
                            substream(cfg.seed, 0xA17, static_cast<std::uint64_t>(epoch),
                                      rec_index));
    }
    auto fwd = net.forward(vol, head_flags(flags));
    model::Network::OutputGrads og;
    SampleLoss sl;

    if (flags.seg) {
        if (mask.empty())
            throw ConfigError("record " + rec.id + " has no mask for seg loss");
        auto g = losses::seg_loss_grad(fwd.seg_logits.v, mask.data,
                                       cfg.loss.dice_smooth);
        sl.seg = g.value;
        og.d_seg_logits = std::move(g.d_logits);
        for (auto& v : og.d_seg_logits) v *= grad_scale;
    }
    if (flags.det) {
        auto g = losses::det_loss_grad(fwd.det_logits, rec.diagnosis);
        sl.det = g.value;
        og.d_det_logits = {g.d_logits[0] * flags.det_weight * grad_scale,
                           g.d_logits[1] * flags.det_weight * grad_scale};
    }
    if (flags.text != losses::TextParts::none) {
        losses::TextBatch tb;
        tb.i_det = fwd.i_det;
        tb.i_loc = fwd.i_loc;
        tb.E_det = tm.det;
        tb.E_loc = tm.loc;
        tb.diagnosis = rec.diagnosis;
        tb.location = rec.location;
        tb.log_T_det = net.log_t_det();
        tb.log_T_loc = net.log_t_loc();
        tb.parts = flags.text;
        auto g = losses::text_loss_grad(tb);
        sl.text = g.value;
        double s = flags.text_weight * grad_scale;
        og.d_i_det = std::move(g.d_i_det);
        og.d_i_loc = std::move(g.d_i_loc);
        for (auto& v : og.d_i_det) v *= s;
        for (auto& v : og.d_i_loc) v *= s;
        og.d_log_t_det = g.d_logT_det * s;
        og.d_log_t_loc = g.d_logT_loc * s;
    }
    if (flags.loc_head) {
        auto g = losses::ce_loss_grad(fwd.loc_logits, rec.location);
        sl.loc = g.value;
        og.d_loc_logits = std::move(g.d_logits);
        for (auto& v : og.d_loc_logits) v *= flags.loc_weight * grad_scale;
    }
    net.backward(fwd, og, gb);
    return sl;
}

inline double selection_metric(const std::vector<PreparedRecord>& val,
                               const std::vector<RecordEval>& evals,
                               const TrainFlags& flags) {
    switch (flags.select) {
        case TrainFlags::Select::dice: {
            double s = 0.0;
            int n = 0;
            for (const auto& e : evals)
                if (!std::isnan(e.dice)) {
                    s += e.dice;
                    ++n;
                }
            return n ? s / n : 0.0;
        }
        case TrainFlags::Select::loc_acc: {
            std::vector<int> p, t;
            for (std::size_t i = 0; i < evals.size(); ++i)
                if (evals[i].loc_pred >= 0) {
                    p.push_back(evals[i].loc_pred);
                    t.push_back(val[i].location);
                }
            return p.empty() ? 0.0 : eval::location_accuracy(p, t);
        }
        default: {
            eval::ScoreSet s;
            for (std::size_t i = 0; i < evals.size(); ++i)
                if (!std::isnan(evals[i].score)) {
                    s.scores.push_back(evals[i].score);
                    s.labels.push_back(val[i].diagnosis);
                }
            try {
                return eval::auc(s);
            } catch (const std::exception&) {
                return 0.5;
            }
        }
    }
}

}  // namespace detail

// Trains `net` in place, selects the best epoch on the validation metric and
// reloads the selected checkpoint before returning.
inline TrainResult train_model(model::Network& net,
                               const std::vector<PreparedRecord>& train,
                               const std::vector<PreparedRecord>& val,
                               const TrainConfig& cfg, Mode mode,
                               const text::TextMatrices& tm,
                               const fs::path& run_dir, const std::string& stage,
                               std::ostream* metrics_csv) {
    if (train.empty()) throw ConfigError("training set is empty");
    TrainFlags flags = flags_for(mode, cfg);
    if (flags.seg)
        for (const auto& r : train)
            if (!r.has_mask())
                throw ConfigError("record " + r.id + " lacks a mask for mode " +
                                  to_string(mode));

    optim::Adam adam;
    adam.weight_decay = cfg.weight_decay;
    adam.init(net.store());

    std::int64_t steps_per_epoch =
        (static_cast<std::int64_t>(train.size()) + cfg.batch_size - 1) / cfg.batch_size;
    std::int64_t total_steps = steps_per_epoch * cfg.epochs;
    std::int64_t warmup_steps = steps_per_epoch * cfg.warmup_epochs;

    fs::create_directories(run_dir / "checkpoints");
    TrainResult result;
    result.checkpoint = run_dir / "checkpoints" / (stage + "_best.ckpt");

    const double log_t_lo = std::log(1e-3), log_t_hi = std::log(10.0);
    std::int64_t step = 0;
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng perm_rng(substream(cfg.seed, 0xE70C, static_cast<std::uint64_t>(epoch)));
        perm_rng.shuffle(order);

        detail::SampleLoss epoch_loss;
        std::size_t seen = 0;
        for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t bsz = std::min(static_cast<std::size_t>(cfg.batch_size),
                                       order.size() - b0);
            double grad_scale = 1.0 / static_cast<double>(bsz);
            std::vector<model::GradBuffer> bufs(bsz);
            std::vector<detail::SampleLoss> sls(bsz);
#pragma omp parallel for schedule(dynamic)
            for (std::int64_t k = 0; k < static_cast<std::int64_t>(bsz); ++k) {
                auto& gb = bufs[static_cast<std::size_t>(k)];
                gb.init(net.store());
                std::size_t ri = order[b0 + static_cast<std::size_t>(k)];
                sls[static_cast<std::size_t>(k)] = detail::train_sample(
                    net, train[ri], flags, tm, cfg, epoch, ri, grad_scale, gb);
            }
            model::GradBuffer& total = bufs[0];
            for (std::size_t k = 1; k < bsz; ++k) total.add_scaled(bufs[k], 1.0);

            double batch_loss = 0.0;
            for (std::size_t k = 0; k < bsz; ++k) {
                const auto& s = sls[k];
                batch_loss += s.seg + flags.det_weight * s.det +
                              flags.text_weight * s.text + flags.loc_weight * s.loc;
                epoch_loss.seg += s.seg;
                epoch_loss.det += s.det;
                epoch_loss.text += s.text;
                epoch_loss.loc += s.loc;
            }
            batch_loss /= static_cast<double>(bsz);
            if (!std::isfinite(batch_loss))
                throw NumericalError("non-finite loss at epoch " +
                                     std::to_string(epoch));

            double lr = lr_schedule(step, total_steps, warmup_steps, cfg.lr);
            adam.step(net.store(), total, lr);
            ++step;

            for (int slot : {net.log_t_det_slot(), net.log_t_loc_slot()}) {
                double& lt = net.store()[slot].w[0];
                lt = std::clamp(lt, log_t_lo, log_t_hi);
            }
            seen += bsz;
        }

        auto evals = eval_all(net, val, tm, flags);
        double metric = detail::selection_metric(val, evals, flags);

        EpochRow row;
        row.epoch = epoch;
        row.seg = epoch_loss.seg / static_cast<double>(seen);
        row.det = epoch_loss.det / static_cast<double>(seen);
        row.text = epoch_loss.text / static_cast<double>(seen);
        row.loc = epoch_loss.loc / static_cast<double>(seen);
        row.loss = row.seg + flags.det_weight * row.det +
                   flags.text_weight * row.text + flags.loc_weight * row.loc;
        row.val_metric = metric;
        result.rows.push_back(row);
        if (metrics_csv)
            (*metrics_csv) << stage << ',' << epoch << ',' << row.loss << ','
                           << row.seg << ',' << row.det << ',' << row.text << ','
                           << row.loc << ',' << metric << '\n';

        if (metric > result.best_metric) {
            result.best_metric = metric;
            result.best_epoch = epoch;
            json meta;
            meta["stage"] = stage;
            meta["epoch"] = epoch;
            meta["metric"] = metric;
            meta["config_hash"] = config_hash(cfg);
            meta["mode"] = to_string(mode);
            model::save_checkpoint(result.checkpoint, net.store(), meta);
        }
    }
    model::load_checkpoint(result.checkpoint, net.store());
    return result;
}

// ---------------------------------------------------------------------------
// Pseudo masks
// ---------------------------------------------------------------------------
struct PseudoProvenance {
    std::string teacher_checkpoint_hash;
    double threshold = 0.5;
    bool filter_applied = false;

    std::string combined_hash() const {
        json j = {{"teacher", teacher_checkpoint_hash},
                  {"threshold", threshold},
                  {"filter", filter_applied}};
        return io::hex64(fnv1a64(j.dump()));
    }
};

struct PseudoLabelSet {
    std::map<std::string, Mask> masks;  // record id -> binary mask (input space)
    PseudoProvenance prov;
};

// 26-connected components of a binary mask; returns per-component voxel lists.
inline std::vector<std::vector<std::size_t>> connected_components_26(const Mask& m) {
    std::vector<std::vector<std::size_t>> comps;
    std::vector<std::uint8_t> visited(m.data.size(), 0);
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < m.data.size(); ++start) {
        if (!m.data[start] || visited[start]) continue;
        comps.emplace_back();
        auto& comp = comps.back();
        stack.assign(1, start);
        visited[start] = 1;
        while (!stack.empty()) {
            std::size_t cur = stack.back();
            stack.pop_back();
            comp.push_back(cur);
            int x = static_cast<int>(cur % static_cast<std::size_t>(m.nx));
            int y = static_cast<int>((cur / static_cast<std::size_t>(m.nx)) %
                                     static_cast<std::size_t>(m.ny));
            int z = static_cast<int>(cur / (static_cast<std::size_t>(m.nx) * m.ny));
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (!dx && !dy && !dz) continue;
                        int nx2 = x + dx, ny2 = y + dy, nz2 = z + dz;
                        if (nx2 < 0 || ny2 < 0 || nz2 < 0 || nx2 >= m.nx ||
                            ny2 >= m.ny || nz2 >= m.nz)
                            continue;
                        std::size_t ni = m.index(nx2, ny2, nz2);
                        if (m.data[ni] && !visited[ni]) {
                            visited[ni] = 1;
                            stack.push_back(ni);
                        }
                    }
        }
    }
    return comps;
}

// Removes connected components whose centroid z lies outside the z-band of
// the reported location bin (bands derived from the organ z-extent). Label 0
// removes everything.
inline Mask filter_pseudo_by_location(const Mask& pseudo, int location_label,
                                      const Mask& organ) {
    if (location_label < 0 || location_label > 4)
        throw std::invalid_argument("filter: location label out of range");
    Mask out(pseudo.nx, pseudo.ny, pseudo.nz, 0);
    if (location_label == 0) return out;
    auto [z_lo, z_hi] = phantom::mask_z_extent(organ);
    auto bins = phantom::location_bins(z_lo, z_hi);
    const auto& band = bins[static_cast<std::size_t>(location_label - 1)];
    for (const auto& comp : connected_components_26(pseudo)) {
        double cz = 0.0;
        for (std::size_t idx : comp)
            cz += static_cast<double>(idx / (static_cast<std::size_t>(pseudo.nx) * pseudo.ny));
        cz /= static_cast<double>(comp.size());
        if (cz >= band.lo && cz <= band.hi)
            for (std::size_t idx : comp) out.data[idx] = 1;
    }
    return out;
}

// Runs the teacher checkpoint over the weak records and thresholds the
// foreground probabilities. Probability maps are written next to the masks so
// the thresholding step stays auditable.
inline PseudoLabelSet generate_pseudo_masks(const fs::path& teacher_ckpt,
                                            model::Network& net,
                                            const std::vector<PreparedRecord>& weak,
                                            double threshold,
                                            const fs::path& out_dir) {
    model::load_checkpoint(teacher_ckpt, net.store());
    PseudoLabelSet set;
    set.prov.teacher_checkpoint_hash = io::hex64(io::file_hash(teacher_ckpt));
    set.prov.threshold = threshold;

    fs::create_directories(out_dir);
    std::vector<Mask> masks(weak.size());
    std::vector<Volume> probs(weak.size());
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(weak.size()); ++i) {
        const auto& rec = weak[static_cast<std::size_t>(i)];
        auto fwd = net.forward(rec.vol, {true, false, false, false});
        std::size_t V = fwd.seg_logits.spatial();
        Volume prob(fwd.seg_logits.nx, fwd.seg_logits.ny, fwd.seg_logits.nz);
        for (std::size_t v = 0; v < V; ++v)
            prob.data[v] =
                1.0 / (1.0 + std::exp(fwd.seg_logits.v[v] - fwd.seg_logits.v[V + v]));
        Mask m(prob.nx, prob.ny, prob.nz);
        for (std::size_t v = 0; v < V; ++v) m.data[v] = prob.data[v] > threshold;
        masks[static_cast<std::size_t>(i)] = std::move(m);
        probs[static_cast<std::size_t>(i)] = std::move(prob);
    }
    for (std::size_t i = 0; i < weak.size(); ++i) {
        io::write_mask(out_dir / (weak[i].id + ".pseudo.raw"), masks[i]);
        io::write_volume(out_dir / (weak[i].id + ".prob.raw"), probs[i]);
        set.masks[weak[i].id] = std::move(masks[i]);
    }
    return set;
}

inline void apply_location_filter(PseudoLabelSet& set,
                                  const std::vector<PreparedRecord>& weak) {
    for (const auto& rec : weak)
        set.masks[rec.id] =
            filter_pseudo_by_location(set.masks.at(rec.id), rec.location, rec.organ);
    set.prov.filter_applied = true;
}

inline void save_pseudo_provenance(const PseudoLabelSet& set,
                                   const fs::path& out_dir) {
    json prov;
    prov["teacher_checkpoint_hash"] = set.prov.teacher_checkpoint_hash;
    prov["threshold"] = set.prov.threshold;
    prov["filter_applied"] = set.prov.filter_applied;
    prov["combined_hash"] = set.prov.combined_hash();
    prov["space"] = "roi_resized";
    io::write_text_file(out_dir / "provenance.json", prov.dump(1) + "\n");
}

// Reloads a pseudo-label set previously written by generate_pseudo_masks
// (after any filtering); lets a student run skip step 1.
inline PseudoLabelSet load_pseudo_set(const fs::path& dir,
                                      const std::vector<PreparedRecord>& weak) {
    PseudoLabelSet set;
    std::ifstream in(dir / "provenance.json");
    if (!in) throw IoError("missing provenance.json in " + dir.string());
    json prov = json::parse(in);
    set.prov.teacher_checkpoint_hash =
        prov.at("teacher_checkpoint_hash").get<std::string>();
    set.prov.threshold = prov.at("threshold").get<double>();
    set.prov.filter_applied = prov.at("filter_applied").get<bool>();
    for (const auto& rec : weak)
        set.masks[rec.id] = io::read_mask(dir / (rec.id + ".pseudo.raw"));
    return set;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------
inline json number_or_null(double v) {
    return std::isnan(v) ? json(nullptr) : json(v);
}

inline json report_to_json(const eval::EvalReport& r) {
    json j;
    j["dice_overall"] = number_or_null(r.dice_overall);
    j["dice_eso"] = number_or_null(r.dice_eso);
    j["dice_egj"] = number_or_null(r.dice_egj);
    j["auc"] = number_or_null(r.auc);
    j["auc_text"] = number_or_null(r.auc_text);
    j["sensitivity"] = number_or_null(r.sensitivity);
    j["specificity"] = number_or_null(r.specificity);
    j["location_accuracy"] = number_or_null(r.location_accuracy);
    j["delong_p"] = number_or_null(r.delong_p);
    json roc = json::array();
    for (const auto& p : r.roc_points) roc.push_back({p.fpr, p.tpr});
    j["roc"] = roc;
    j["scores"] = {{"ids", r.scores.ids},
                   {"labels", r.scores.labels},
                   {"scores", r.scores.scores}};
    return j;
}

inline void write_roc_csv(const eval::EvalReport& r, const fs::path& path) {
    std::string csv = "threshold,fpr,tpr\n";
    for (const auto& p : r.roc_points) {
        csv += std::isinf(p.threshold) ? "inf" : std::to_string(p.threshold);
        csv += "," + std::to_string(p.fpr) + "," + std::to_string(p.tpr) + "\n";
    }
    io::write_text_file(path, csv);
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------
struct RunOutputs {
    eval::EvalReport val, test;
    json report;
    fs::path report_path;
};

inline bool is_wssl_mode(Mode m) {
    return m == Mode::student || m == Mode::panda_like_wssl;
}

// Executes one experiment: supervision assignment, training (two stages for
// the WSSL modes), evaluation on val and test, and the run-directory layout
// (config.json, checkpoints/, pseudo_masks/, logs/, report.json).
inline RunOutputs run_experiment(const TrainConfig& cfg, const fs::path& out_dir,
                                 const fs::path* reuse_pseudo_dir = nullptr) {
    cfg.validate();
    fs::create_directories(out_dir / "logs");
    json cfg_json = cfg;
    json cfg_file;
    cfg_file["config"] = cfg_json;
    cfg_file["hash"] = config_hash(cfg);
    io::write_text_file(out_dir / "config.json", cfg_file.dump(1) + "\n");

    auto manifest = phantom::load_manifest(cfg.dataset);
    manifest = phantom::assign_supervision(std::move(manifest), cfg.full_fraction,
                                           cfg.seed);
    auto roi = cfg.roi_spec();
    auto tm = resolve_text_matrices(cfg);

    auto is_split = [](phantom::Split s) {
        return [s](const phantom::ManifestRecord& r) { return r.split == s; };
    };
    auto val = prepare_records(manifest, is_split(phantom::Split::val), roi, true);
    auto test = prepare_records(manifest, is_split(phantom::Split::test), roi, true);

    std::ofstream metrics(out_dir / "logs" / "metrics.csv");
    metrics << "stage,epoch,loss,loss_seg,loss_det,loss_text,loss_loc,val_metric\n";

    TrainFlags final_flags = flags_for(cfg.mode, cfg);
    model::Network net(cfg.backbone, substream(cfg.seed, 0x0D0D), cfg.loss.temp_init);
    json stage_meta = json::object();

    if (is_wssl_mode(cfg.mode)) {
        auto train_full = prepare_records(
            manifest,
            [](const phantom::ManifestRecord& r) {
                return r.split == phantom::Split::train &&
                       r.supervision == phantom::Supervision::full;
            },
            roi, true);
        auto train_weak = prepare_records(
            manifest,
            [](const phantom::ManifestRecord& r) {
                return r.split == phantom::Split::train &&
                       r.supervision == phantom::Supervision::weak;
            },
            roi, false);
        bool has_pos = false, has_neg = false;
        for (const auto& r : train_full) (r.diagnosis ? has_pos : has_neg) = true;
        if (!has_pos || !has_neg)
            throw ConfigError("teacher needs full records of both classes");

        PseudoLabelSet pseudo;
        fs::path pseudo_dir = out_dir / "pseudo_masks";
        if (reuse_pseudo_dir) {
            // step 1 already ran elsewhere; reuse its pseudo masks verbatim
            pseudo = load_pseudo_set(*reuse_pseudo_dir, train_weak);
        } else {
            model::Network teacher(cfg.backbone, substream(cfg.seed, 0x7EAC),
                                   cfg.loss.temp_init);
            auto tr = train_model(teacher, train_full, val, cfg, Mode::teacher,
                                  tm, out_dir, "teacher", &metrics);
            stage_meta["teacher"] = {{"best_epoch", tr.best_epoch},
                                     {"best_val_dice", tr.best_metric}};
            if (!train_weak.empty()) {
                pseudo = generate_pseudo_masks(tr.checkpoint, teacher, train_weak,
                                               cfg.pseudo_threshold, pseudo_dir);
                if (cfg.bosma_filter) {
                    apply_location_filter(pseudo, train_weak);
                    for (const auto& rec : train_weak)
                        io::write_mask(pseudo_dir / (rec.id + ".pseudo.raw"),
                                       pseudo.masks.at(rec.id));
                }
                save_pseudo_provenance(pseudo, pseudo_dir);
            }
        }
        stage_meta["pseudo_provenance"] = {
            {"teacher_checkpoint_hash", pseudo.prov.teacher_checkpoint_hash},
            {"threshold", pseudo.prov.threshold},
            {"filter_applied", pseudo.prov.filter_applied},
            {"combined_hash", pseudo.prov.combined_hash()}};

        std::vector<PreparedRecord> train_all = train_full;
        for (auto& rec : train_weak) {
            PreparedRecord r = rec;
            r.mask = pseudo.masks.at(rec.id);
            train_all.push_back(std::move(r));
        }
        std::sort(train_all.begin(), train_all.end(),
                  [](const PreparedRecord& a, const PreparedRecord& b) {
                      return a.id < b.id;
                  });
        auto sr = train_model(net, train_all, val, cfg, cfg.mode, tm, out_dir,
                              "student", &metrics);
        stage_meta["student"] = {{"best_epoch", sr.best_epoch},
                                 {"best_val_auc", sr.best_metric}};
    } else {
        std::vector<PreparedRecord> train;
        if (cfg.mode == Mode::weak_only_classifier ||
            cfg.mode == Mode::loc_only_classifier) {
            // label-only training: mask files are never opened
            train = prepare_records(
                manifest,
                [](const phantom::ManifestRecord& r) {
                    return r.split == phantom::Split::train;
                },
                roi, false);
        } else {
            train = prepare_records(
                manifest,
                [](const phantom::ManifestRecord& r) {
                    return r.split == phantom::Split::train &&
                           r.supervision == phantom::Supervision::full;
                },
                roi, true);
        }
        auto tr = train_model(net, train, val, cfg, cfg.mode, tm, out_dir,
                              to_string(cfg.mode), &metrics);
        stage_meta[to_string(cfg.mode)] = {{"best_epoch", tr.best_epoch},
                                           {"best_val_metric", tr.best_metric}};
    }

    RunOutputs out;
    out.val = build_report(val, eval_all(net, val, tm, final_flags), final_flags);
    out.test = build_report(test, eval_all(net, test, tm, final_flags), final_flags);

    json rep;
    rep["config_hash"] = config_hash(cfg);
    rep["mode"] = to_string(cfg.mode);
    rep["seed"] = cfg.seed;
    rep["full_fraction"] = cfg.full_fraction;
    rep["stages"] = stage_meta;
    rep["dice_aggregation"] = "per-case mean over cases with non-empty ground truth";
    rep["val"] = report_to_json(out.val);
    rep["test"] = report_to_json(out.test);
    out.report = rep;
    out.report_path = out_dir / "report.json";
    io::write_text_file(out.report_path, rep.dump(1) + "\n");
    if (!out.test.roc_points.empty())
        write_roc_csv(out.test, out_dir / "logs" / "roc_test.csv");
    if (!out.val.roc_points.empty())
        write_roc_csv(out.val, out_dir / "logs" / "roc_val.csv");
    return out;
}

// ---------------------------------------------------------------------------
// Ablation grid: cartesian product over a subset of config axes, one run per
// grid point, aggregated CSV.
// ---------------------------------------------------------------------------
inline json run_ablation_grid(const TrainConfig& base, const json& grid,
                              const fs::path& out_dir) {
    static const std::vector<std::string> axes = {
        "alpha", "beta", "lambda", "full_fraction", "prompts", "mode"};
    check_keys(grid, axes, "grid");

    std::vector<std::pair<std::string, std::vector<json>>> dims;
    for (const auto& axis : axes)
        if (grid.contains(axis)) {
            std::vector<json> vals;
            for (const auto& v : grid[axis]) vals.push_back(v);
            if (vals.empty()) throw ConfigError("empty grid axis: " + axis);
            dims.push_back({axis, vals});
        }
    if (dims.empty()) throw ConfigError("empty ablation grid");

    fs::create_directories(out_dir);
    std::string csv =
        "run,alpha,beta,lambda,full_fraction,prompts,mode,"
        "val_auc,val_auc_text,val_dice,val_loc_acc,test_auc,test_dice\n";
    json rows = json::array();

    std::vector<std::size_t> index(dims.size(), 0);
    int run_id = 0;
    bool done = false;
    while (!done) {
        TrainConfig cfg = base;
        for (std::size_t d = 0; d < dims.size(); ++d) {
            const auto& [axis, vals] = dims[d];
            const json& v = vals[index[d]];
            if (axis == "alpha") cfg.loss.alpha = v.get<double>();
            else if (axis == "beta") cfg.loss.beta = v.get<double>();
            else if (axis == "lambda") cfg.loss.lambda = v.get<double>();
            else if (axis == "full_fraction") cfg.full_fraction = v.get<double>();
            else if (axis == "prompts")
                cfg.text_parts = text_parts_from_string(v.get<std::string>());
            else if (axis == "mode") cfg.mode = mode_from_string(v.get<std::string>());
        }
        char name[32];
        std::snprintf(name, sizeof(name), "run_%03d", run_id);
        auto out = run_experiment(cfg, out_dir / name);

        auto fmt = [](double v) {
            return std::isnan(v) ? std::string("") : std::to_string(v);
        };
        csv += std::string(name) + "," + std::to_string(cfg.loss.alpha) + "," +
               std::to_string(cfg.loss.beta) + "," + std::to_string(cfg.loss.lambda) +
               "," + std::to_string(cfg.full_fraction) + "," +
               to_string(cfg.text_parts) + "," + to_string(cfg.mode) + "," +
               fmt(out.val.auc) + "," + fmt(out.val.auc_text) + "," +
               fmt(out.val.dice_overall) + "," + fmt(out.val.location_accuracy) +
               "," + fmt(out.test.auc) + "," + fmt(out.test.dice_overall) + "\n";
        json row;
        row["run"] = name;
        row["alpha"] = cfg.loss.alpha;
        row["beta"] = cfg.loss.beta;
        row["lambda"] = cfg.loss.lambda;
        row["full_fraction"] = cfg.full_fraction;
        row["prompts"] = to_string(cfg.text_parts);
        row["mode"] = to_string(cfg.mode);
        row["val"] = report_to_json(out.val);
        row["test"] = report_to_json(out.test);
        rows.push_back(row);

        ++run_id;
        done = true;
        for (std::size_t d = dims.size(); d-- > 0;) {
            if (++index[d] < dims[d].second.size()) {
                done = false;
                break;
            }
            index[d] = 0;
        }
    }
    io::write_text_file(out_dir / "ablation.csv", csv);
    io::write_text_file(out_dir / "ablation.json", rows.dump(1) + "\n");
    return rows;
}

}  // namespace wssl::pipeline

#endif
