// wssl - text-guided weakly semi-supervised tumor detection on synthetic
// phantoms. Subcommands cover dataset generation, the two-step training
// pipeline, baselines, evaluation, ablation grids and plotting.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "wssl/eval.hpp"
#include "wssl/io.hpp"
#include "wssl/phantom.hpp"
#include "wssl/pipeline.hpp"
#include "wssl/text.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace wssl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;

json load_json_file(const std::string& path) {
    if (!fs::exists(path)) throw ConfigError("missing file: " + path);
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    return json::parse(in);
}

pipeline::TrainConfig load_train_config(const std::string& config_path) {
    pipeline::TrainConfig cfg;
    if (!config_path.empty()) cfg = load_json_file(config_path).get<pipeline::TrainConfig>();
    return cfg;
}

struct TrainCliOpts {
    std::string config, dataset, out_dir, mode, embedding_table, text_parts;
    std::string reuse_pseudo;
    double full_fraction = -1, alpha = -1, beta = -1, lambda = -1, lr = -1;
    double pseudo_threshold = -1;
    int epochs = -1, warmup = -1, batch = -1;
    long long seed = -1;
    bool bosma = false, no_augment = false;
};

void add_train_flags(CLI::App* cmd, TrainCliOpts& o, bool with_mode) {
    cmd->add_option("--config", o.config, "JSON config file");
    cmd->add_option("--dataset", o.dataset, "dataset directory");
    cmd->add_option("--out", o.out_dir, "run output directory")->required();
    cmd->add_option("--full-fraction", o.full_fraction,
                    "fraction of train records with voxel masks");
    cmd->add_option("--alpha", o.alpha, "student text-loss weight");
    cmd->add_option("--beta", o.beta, "detection loss weight");
    cmd->add_option("--lambda", o.lambda, "teacher text-loss weight");
    cmd->add_option("--lr", o.lr, "initial learning rate");
    cmd->add_option("--epochs", o.epochs, "training epochs");
    cmd->add_option("--warmup-epochs", o.warmup, "warmup epochs");
    cmd->add_option("--batch-size", o.batch, "batch size");
    cmd->add_option("--seed", o.seed, "seed override");
    cmd->add_option("--embedding-table", o.embedding_table,
                    "text embedding table JSON (default: pseudo encoder)");
    cmd->add_option("--text-parts", o.text_parts,
                    "text branches: none|det|loc|det+loc");
    cmd->add_option("--pseudo-threshold", o.pseudo_threshold,
                    "pseudo-mask probability threshold");
    cmd->add_flag("--bosma-filter", o.bosma,
                  "location-matched pseudo-mask filtering");
    cmd->add_flag("--no-augment", o.no_augment, "disable data augmentation");
    if (with_mode) cmd->add_option("--mode", o.mode, "training mode");
}

pipeline::TrainConfig resolve_train_config(const TrainCliOpts& o) {
    pipeline::TrainConfig cfg = load_train_config(o.config);
    if (!o.dataset.empty()) cfg.dataset = o.dataset;
    if (o.full_fraction >= 0) cfg.full_fraction = o.full_fraction;
    if (o.alpha >= 0) cfg.loss.alpha = o.alpha;
    if (o.beta >= 0) cfg.loss.beta = o.beta;
    if (o.lambda >= 0) cfg.loss.lambda = o.lambda;
    if (o.lr > 0) cfg.lr = o.lr;
    if (o.epochs > 0) cfg.epochs = o.epochs;
    if (o.warmup >= 0) cfg.warmup_epochs = o.warmup;
    if (o.batch > 0) cfg.batch_size = o.batch;
    if (o.seed >= 0) cfg.seed = static_cast<std::uint64_t>(o.seed);
    if (!o.embedding_table.empty()) cfg.embedding_table = o.embedding_table;
    if (!o.text_parts.empty())
        cfg.text_parts = pipeline::text_parts_from_string(o.text_parts);
    if (o.pseudo_threshold >= 0) cfg.pseudo_threshold = o.pseudo_threshold;
    if (o.bosma) cfg.bosma_filter = true;
    if (o.no_augment) cfg.augment.enabled = false;
    if (!o.mode.empty()) cfg.mode = pipeline::mode_from_string(o.mode);
    if (cfg.dataset.empty()) throw ConfigError("no dataset given");
    if (!fs::exists(cfg.dataset)) throw ConfigError("missing dataset: " + cfg.dataset);
    return cfg;
}

void print_run_summary(const pipeline::RunOutputs& out) {
    auto fmt = [](double v) {
        return std::isnan(v) ? std::string("n/a") : std::to_string(v);
    };
    std::cout << "val  auc=" << fmt(out.val.auc) << " dice=" << fmt(out.val.dice_overall)
              << " loc_acc=" << fmt(out.val.location_accuracy) << "\n";
    std::cout << "test auc=" << fmt(out.test.auc) << " dice=" << fmt(out.test.dice_overall)
              << " loc_acc=" << fmt(out.test.location_accuracy) << "\n";
    std::cout << "report: " << out.report_path.string() << "\n";
}

int cmd_gen_data(const std::string& config, const std::string& out_dir, int n,
                 double prevalence, double full_fraction, long long seed,
                 const std::vector<double>& ratios) {
    phantom::PhantomConfig cfg;
    if (!config.empty()) cfg = load_json_file(config).get<phantom::PhantomConfig>();
    if (prevalence >= 0) cfg.cancer_prevalence = prevalence;
    if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
    std::array<double, 3> r{0.64, 0.16, 0.20};
    if (!ratios.empty()) {
        if (ratios.size() != 3) throw ConfigError("--ratios needs 3 values");
        r = {ratios[0], ratios[1], ratios[2]};
    }
    auto manifest = phantom::generate_dataset(cfg, n, r, cfg.seed, out_dir);
    manifest = phantom::assign_supervision(std::move(manifest), full_fraction,
                                           cfg.seed);
    phantom::save_manifest(manifest);
    int full = 0, weak = 0;
    for (const auto& rec : manifest.records)
        if (rec.split == phantom::Split::train)
            (rec.supervision == phantom::Supervision::full ? full : weak)++;
    std::cout << "wrote " << manifest.records.size() << " records to " << out_dir
              << " (train full=" << full << " weak=" << weak << ")\n";
    return kExitOk;
}

int cmd_evaluate(const std::string& config_path, const std::string& ckpt,
                 const std::string& dataset, const std::string& split,
                 const std::string& compare, const std::string& out_path) {
    if (!fs::exists(ckpt)) throw ConfigError("missing checkpoint: " + ckpt);
    json cfg_file = load_json_file(config_path);
    pipeline::TrainConfig cfg =
        (cfg_file.contains("config") ? cfg_file["config"] : cfg_file)
            .get<pipeline::TrainConfig>();
    if (!dataset.empty()) cfg.dataset = dataset;
    if (!fs::exists(cfg.dataset)) throw ConfigError("missing dataset: " + cfg.dataset);

    auto manifest = phantom::load_manifest(cfg.dataset);
    manifest = phantom::assign_supervision(std::move(manifest), cfg.full_fraction,
                                           cfg.seed);
    auto roi = cfg.roi_spec();
    bool hidden = split == "weak-train";
    auto records = pipeline::prepare_records(
        manifest,
        [&](const phantom::ManifestRecord& r) {
            if (split == "weak-train")
                return r.split == phantom::Split::train &&
                       r.supervision == phantom::Supervision::weak;
            return std::string(phantom::to_string(r.split)) == split;
        },
        roi, true, hidden);
    if (records.empty()) throw ConfigError("no records in split: " + split);

    model::Network net(cfg.backbone, 0, cfg.loss.temp_init);
    model::load_checkpoint(ckpt, net.store());
    auto tm = pipeline::resolve_text_matrices(cfg);
    auto flags = pipeline::flags_for(cfg.mode, cfg);
    auto report = pipeline::build_report(
        records, pipeline::eval_all(net, records, tm, flags), flags);

    if (!compare.empty()) {
        json other = load_json_file(compare);
        const json& sc = other.contains("scores")
                             ? other["scores"]
                             : other.at(split == "weak-train" ? "test" : split)["scores"];
        eval::ScoreSet b;
        b.ids = sc.at("ids").get<std::vector<std::string>>();
        b.labels = sc.at("labels").get<std::vector<int>>();
        b.scores = sc.at("scores").get<std::vector<double>>();
        auto dl = eval::delong_test(report.scores, b);
        report.delong_p = dl.p_two_sided;
        std::cout << "delong: auc_a=" << dl.auc_a << " auc_b=" << dl.auc_b
                  << " z=" << dl.z << " p=" << dl.p_two_sided << "\n";
    }

    json rep = pipeline::report_to_json(report);
    rep["split"] = split;
    rep["checkpoint"] = ckpt;
    rep["config_hash"] = pipeline::config_hash(cfg);
    std::string dumped = rep.dump(1) + "\n";
    if (!out_path.empty()) io::write_text_file(out_path, dumped);
    std::cout << "auc=" << (std::isnan(report.auc) ? std::string("n/a")
                                                   : std::to_string(report.auc))
              << " dice="
              << (std::isnan(report.dice_overall)
                      ? std::string("n/a")
                      : std::to_string(report.dice_overall))
              << "\n";
    return kExitOk;
}

std::string roc_svg(const std::vector<eval::RocPoint>& pts, double auc_value) {
    const int W = 440, H = 440, M = 40;
    auto X = [&](double f) { return M + f * (W - 2 * M); };
    auto Y = [&](double t) { return H - M - t * (H - 2 * M); };
    std::string s;
    char buf[160];
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"440\" height=\"440\">\n";
    std::snprintf(buf, sizeof(buf),
                  "<rect x=\"%d\" y=\"%d\" width=\"%d\" height=\"%d\" "
                  "fill=\"white\" stroke=\"black\"/>\n",
                  M, M, W - 2 * M, H - 2 * M);
    s += buf;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" "
                  "stroke=\"#999\" stroke-dasharray=\"4\"/>\n",
                  X(0), Y(0), X(1), Y(1));
    s += buf;
    s += "<polyline fill=\"none\" stroke=\"#c33\" stroke-width=\"2\" points=\"";
    for (const auto& p : pts) {
        std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", X(p.fpr), Y(p.tpr));
        s += buf;
    }
    s += "\"/>\n";
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"%d\" font-size=\"14\">AUC = %.6f</text>\n",
                  M + 10, M + 20, auc_value);
    s += buf;
    s += "<text x=\"200\" y=\"430\" font-size=\"12\">FPR</text>\n";
    s += "<text x=\"10\" y=\"220\" font-size=\"12\">TPR</text>\n";
    s += "</svg>\n";
    return s;
}

int cmd_plot(const std::string& report_path, const std::string& ablation_path,
             const std::string& out_dir) {
    fs::create_directories(out_dir);
    if (!report_path.empty()) {
        json rep = load_json_file(report_path);
        for (const char* split : {"val", "test"}) {
            if (!rep.contains(split)) continue;
            const json& r = rep[split];
            const json& sc = r.at("scores");
            eval::ScoreSet s;
            s.ids = sc.at("ids").get<std::vector<std::string>>();
            s.labels = sc.at("labels").get<std::vector<int>>();
            s.scores = sc.at("scores").get<std::vector<double>>();
            if (s.scores.empty() || !s.both_classes()) continue;
            auto pts = eval::roc_curve(s);
            double a = eval::auc(s);
            io::write_text_file(fs::path(out_dir) / ("roc_" + std::string(split) + ".svg"),
                                roc_svg(pts, a));
        }
        std::cout << "wrote ROC SVGs to " << out_dir << "\n";
    }
    if (!ablation_path.empty()) {
        json rows = load_json_file(ablation_path);
        std::string md =
            "| run | alpha | beta | lambda | full_fraction | prompts | mode | "
            "val AUC | test AUC |\n|---|---|---|---|---|---|---|---|---|\n";
        auto cell = [](const json& v) {
            if (v.is_null()) return std::string("n/a");
            if (v.is_string()) return v.get<std::string>();
            return json(v).dump();
        };
        for (const auto& row : rows) {
            md += "| " + cell(row.at("run")) + " | " + cell(row.at("alpha")) +
                  " | " + cell(row.at("beta")) + " | " + cell(row.at("lambda")) +
                  " | " + cell(row.at("full_fraction")) + " | " +
                  cell(row.at("prompts")) + " | " + cell(row.at("mode")) + " | " +
                  cell(row.at("val").at("auc")) + " | " +
                  cell(row.at("test").at("auc")) + " |\n";
        }
        io::write_text_file(fs::path(out_dir) / "ablation.md", md);
        std::cout << "wrote ablation.md to " << out_dir << "\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"text-guided weakly semi-supervised cancer detection pipeline"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a phantom dataset");
    std::string gen_config, gen_out;
    int gen_n = 200;
    double gen_prev = -1, gen_full = 0.3;
    long long gen_seed = -1;
    std::vector<double> gen_ratios;
    gen->add_option("--config", gen_config, "phantom config JSON");
    gen->add_option("--out", gen_out)->required();
    gen->add_option("--n", gen_n, "number of patients");
    gen->add_option("--prevalence", gen_prev, "cancer prevalence");
    gen->add_option("--full-fraction", gen_full, "fully supervised train fraction");
    gen->add_option("--seed", gen_seed);
    gen->add_option("--ratios", gen_ratios, "train/val/test ratios")->expected(3);

    // gen-embeddings
    auto* genemb = app.add_subcommand("gen-embeddings",
                                      "write a pseudo-encoder embedding table");
    std::string emb_out = "embeddings/pseudo_d768.json";
    int emb_dim = 768;
    genemb->add_option("--out", emb_out);
    genemb->add_option("--dim", emb_dim);

    // training commands
    TrainCliOpts wssl_o, teacher_o, student_o, baseline_o;
    auto* runw = app.add_subcommand("run-wssl", "two-step teacher/student run");
    add_train_flags(runw, wssl_o, false);
    auto* traint = app.add_subcommand("train-teacher", "step-1 teacher only");
    add_train_flags(traint, teacher_o, false);
    auto* trains = app.add_subcommand("train-student",
                                      "step-2 student from saved pseudo masks");
    add_train_flags(trains, student_o, false);
    trains->add_option("--pseudo", student_o.reuse_pseudo,
                       "pseudo_masks directory from a previous run")
        ->required();
    auto* runb = app.add_subcommand("run-baseline", "baseline/ablation modes");
    add_train_flags(runb, baseline_o, false);
    std::string baseline_mode;
    runb->add_option("--mode", baseline_mode,
                     "weak-only|full-<pct>|wssl-no-text|table3-a..e")
        ->required();

    // pseudo-label
    auto* pl = app.add_subcommand("pseudo-label",
                                  "generate pseudo masks from a teacher checkpoint");
    TrainCliOpts pl_o;
    std::string pl_ckpt;
    add_train_flags(pl, pl_o, false);
    pl->add_option("--teacher", pl_ckpt, "teacher checkpoint")->required();

    // evaluate
    auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on a split");
    std::string ev_config, ev_ckpt, ev_dataset, ev_split = "test", ev_compare,
                ev_out;
    ev->add_option("--config", ev_config)->required();
    ev->add_option("--checkpoint", ev_ckpt)->required();
    ev->add_option("--dataset", ev_dataset, "dataset override");
    ev->add_option("--split", ev_split, "train|val|test|weak-train");
    ev->add_option("--compare", ev_compare, "report.json with scores for DeLong");
    ev->add_option("--out", ev_out, "write report JSON here");

    // ablate
    auto* ab = app.add_subcommand("ablate", "run an ablation grid");
    TrainCliOpts ab_o;
    std::string ab_grid;
    add_train_flags(ab, ab_o, true);
    ab->add_option("--grid", ab_grid, "grid JSON file")->required();

    // plot
    auto* plt = app.add_subcommand("plot", "ROC SVGs and ablation tables");
    std::string plt_report, plt_ablation, plt_out = "plots";
    plt->add_option("--report", plt_report, "report.json from a run");
    plt->add_option("--ablation", plt_ablation, "ablation.json from ablate");
    plt->add_option("--out-dir", plt_out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (gen->parsed())
            return cmd_gen_data(gen_config, gen_out, gen_n, gen_prev, gen_full,
                                gen_seed, gen_ratios);
        if (genemb->parsed()) {
            fs::create_directories(fs::path(emb_out).parent_path());
            text::save_embedding_table(emb_out, text::pseudo_table(emb_dim));
            std::cout << "wrote " << emb_out << "\n";
            return kExitOk;
        }
        if (runw->parsed()) {
            auto cfg = resolve_train_config(wssl_o);
            cfg.mode = pipeline::Mode::student;
            print_run_summary(pipeline::run_experiment(cfg, wssl_o.out_dir));
            return kExitOk;
        }
        if (traint->parsed()) {
            auto cfg = resolve_train_config(teacher_o);
            cfg.mode = pipeline::Mode::teacher;
            print_run_summary(pipeline::run_experiment(cfg, teacher_o.out_dir));
            return kExitOk;
        }
        if (trains->parsed()) {
            auto cfg = resolve_train_config(student_o);
            cfg.mode = pipeline::Mode::student;
            if (!fs::exists(student_o.reuse_pseudo))
                throw ConfigError("missing pseudo dir: " + student_o.reuse_pseudo);
            fs::path reuse = student_o.reuse_pseudo;
            print_run_summary(
                pipeline::run_experiment(cfg, student_o.out_dir, &reuse));
            return kExitOk;
        }
        if (pl->parsed()) {
            auto cfg = resolve_train_config(pl_o);
            if (!fs::exists(pl_ckpt)) throw ConfigError("missing checkpoint: " + pl_ckpt);
            auto manifest = phantom::load_manifest(cfg.dataset);
            manifest = phantom::assign_supervision(std::move(manifest),
                                                   cfg.full_fraction, cfg.seed);
            auto weak = pipeline::prepare_records(
                manifest,
                [](const phantom::ManifestRecord& r) {
                    return r.split == phantom::Split::train &&
                           r.supervision == phantom::Supervision::weak;
                },
                cfg.roi_spec(), false);
            model::Network net(cfg.backbone, 0, cfg.loss.temp_init);
            fs::path out = fs::path(pl_o.out_dir) / "pseudo_masks";
            auto set = pipeline::generate_pseudo_masks(pl_ckpt, net, weak,
                                                       cfg.pseudo_threshold, out);
            if (cfg.bosma_filter) {
                pipeline::apply_location_filter(set, weak);
                for (const auto& rec : weak)
                    io::write_mask(out / (rec.id + ".pseudo.raw"),
                                   set.masks.at(rec.id));
            }
            pipeline::save_pseudo_provenance(set, out);
            std::cout << "wrote " << set.masks.size() << " pseudo masks to "
                      << out.string() << "\n";
            return kExitOk;
        }
        if (runb->parsed()) {
            auto cfg = resolve_train_config(baseline_o);
            if (baseline_mode == "weak-only") {
                cfg.mode = pipeline::Mode::weak_only_classifier;
            } else if (baseline_mode == "wssl-no-text") {
                cfg.mode = pipeline::Mode::panda_like_wssl;
            } else if (baseline_mode.rfind("full-", 0) == 0) {
                int pct = std::stoi(baseline_mode.substr(5));
                cfg.full_fraction = pct / 100.0;
                cfg.mode = pct == 100 ? pipeline::Mode::fully_supervised
                                      : pipeline::Mode::joint_no_text;
            } else if (baseline_mode == "table3-a") {
                cfg.mode = pipeline::Mode::weak_only_classifier;
            } else if (baseline_mode == "table3-b") {
                cfg.mode = pipeline::Mode::loc_only_classifier;
            } else if (baseline_mode == "table3-c") {
                cfg.mode = pipeline::Mode::joint_no_text;
            } else if (baseline_mode == "table3-d") {
                cfg.mode = pipeline::Mode::joint_seg_loc;
            } else if (baseline_mode == "table3-e") {
                cfg.mode = pipeline::Mode::multitask_cls_loc;
            } else {
                throw ConfigError("unknown baseline mode: " + baseline_mode);
            }
            print_run_summary(pipeline::run_experiment(cfg, baseline_o.out_dir));
            return kExitOk;
        }
        if (ev->parsed())
            return cmd_evaluate(ev_config, ev_ckpt, ev_dataset, ev_split,
                                ev_compare, ev_out);
        if (ab->parsed()) {
            auto cfg = resolve_train_config(ab_o);
            json grid = load_json_file(ab_grid);
            pipeline::run_ablation_grid(cfg, grid, ab_o.out_dir);
            std::cout << "ablation grid finished: " << ab_o.out_dir << "\n";
            return kExitOk;
        }
        if (plt->parsed()) return cmd_plot(plt_report, plt_ablation, plt_out);
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kExitIo;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::domain_error& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return kExitConfig;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIo;
    }
    return kExitOk;
}
