#ifndef WSSL_PHANTOM_HPP
#define WSSL_PHANTOM_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "wssl/core.hpp"
#include "wssl/io.hpp"
#include "wssl/rng.hpp"

namespace wssl::phantom {

using json = nlohmann::json;
namespace fs = std::filesystem;

// Tumors may spill this many voxels outside the organ tube (Chebyshev
// dilation); generation clamps radii so the bound holds.
inline constexpr int kTumorMargin = 2;
inline constexpr double kOrganIntensity = 1.0;

struct PhantomConfig {
    Shape3 volume_shape{48, 48, 48};
    Spacing3 voxel_spacing{0.7, 0.7, 5.0};
    double organ_radius_min = 5.0, organ_radius_max = 7.0;
    double tumor_radius_min = 2.0, tumor_radius_max = 4.5;
    double tumor_contrast = 0.35;
    double noise_sigma = 0.4;
    double cancer_prevalence = 0.59;
    std::uint64_t seed = 0;

    void validate() const {
        if (volume_shape.x < 8 || volume_shape.y < 8 || volume_shape.z < 8)
            throw std::invalid_argument("volume_shape must be >= 8 per axis");
        if (cancer_prevalence < 0.0 || cancer_prevalence > 1.0)
            throw std::invalid_argument("cancer_prevalence must be in [0,1]");
        if (organ_radius_min <= 0 || organ_radius_max < organ_radius_min)
            throw std::invalid_argument("bad organ_radius_range");
        if (tumor_radius_min < 1.0 || tumor_radius_max < tumor_radius_min)
            throw std::invalid_argument("bad tumor_radius_range");
        if (tumor_radius_max > organ_radius_min + kTumorMargin)
            throw std::invalid_argument(
                "tumor_radius_range must fit inside organ_radius_range + margin");
        if (noise_sigma < 0)
            throw std::invalid_argument("noise_sigma must be >= 0");
    }
};

inline void to_json(json& j, const PhantomConfig& c) {
    j = json{{"volume_shape", {c.volume_shape.x, c.volume_shape.y, c.volume_shape.z}},
             {"voxel_spacing", {c.voxel_spacing.x, c.voxel_spacing.y, c.voxel_spacing.z}},
             {"organ_radius_range", {c.organ_radius_min, c.organ_radius_max}},
             {"tumor_radius_range", {c.tumor_radius_min, c.tumor_radius_max}},
             {"tumor_contrast", c.tumor_contrast},
             {"noise_sigma", c.noise_sigma},
             {"cancer_prevalence", c.cancer_prevalence},
             {"seed", c.seed}};
}

inline void from_json(const json& j, PhantomConfig& c) {
    static const std::vector<std::string> known = {
        "volume_shape", "voxel_spacing", "organ_radius_range",
        "tumor_radius_range", "tumor_contrast", "noise_sigma",
        "cancer_prevalence", "seed"};
    for (auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ConfigError("unknown phantom config key: " + key);
    if (j.contains("volume_shape")) {
        c.volume_shape = {j["volume_shape"][0].get<int>(),
                          j["volume_shape"][1].get<int>(),
                          j["volume_shape"][2].get<int>()};
    }
    if (j.contains("voxel_spacing")) {
        c.voxel_spacing = {j["voxel_spacing"][0].get<double>(),
                           j["voxel_spacing"][1].get<double>(),
                           j["voxel_spacing"][2].get<double>()};
    }
    if (j.contains("organ_radius_range")) {
        c.organ_radius_min = j["organ_radius_range"][0].get<double>();
        c.organ_radius_max = j["organ_radius_range"][1].get<double>();
    }
    if (j.contains("tumor_radius_range")) {
        c.tumor_radius_min = j["tumor_radius_range"][0].get<double>();
        c.tumor_radius_max = j["tumor_radius_range"][1].get<double>();
    }
    if (j.contains("tumor_contrast")) c.tumor_contrast = j["tumor_contrast"].get<double>();
    if (j.contains("noise_sigma")) c.noise_sigma = j["noise_sigma"].get<double>();
    if (j.contains("cancer_prevalence"))
        c.cancer_prevalence = j["cancer_prevalence"].get<double>();
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
}

enum class Supervision { full, weak };
enum class Split { train, val, test };

inline const char* to_string(Supervision s) {
    return s == Supervision::full ? "full" : "weak";
}
inline const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        default: return "test";
    }
}

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw ConfigError("unknown split: " + s);
}

// Sampled ellipsoid parameters, kept for analysis and geometry checks.
struct TumorGeom {
    double cx = 0, cy = 0, cz = 0;
    double rx = 0, ry = 0, rz = 0;
};

struct PatientRecord {
    std::string id;
    Volume volume;
    Mask mask;        // empty grid when absent
    Mask organ_mask;
    int diagnosis = 0;            // y in {0,1}
    int location = 0;             // l in [0..4], 0 = "no"
    Supervision supervision = Supervision::full;
    std::optional<TumorGeom> tumor;
};

// Axial location bins: the organ z-extent [z_lo, z_hi] is partitioned into 4
// contiguous bands. z grows downward, so bin 1 is the top (upper) quarter and
// bin 4 the bottom (esophagogastric junction).
struct BinRange {
    int lo = 0, hi = 0;
    bool contains(int z) const { return z >= lo && z <= hi; }
    bool contains(double z) const { return z >= lo - 0.5 && z <= hi + 0.5; }
};

inline std::array<BinRange, 4> location_bins(int z_lo, int z_hi) {
    int span = z_hi - z_lo + 1;
    std::array<BinRange, 4> bins;
    for (int b = 0; b < 4; ++b) {
        bins[static_cast<std::size_t>(b)].lo = z_lo + (b * span) / 4;
        bins[static_cast<std::size_t>(b)].hi = z_lo + ((b + 1) * span) / 4 - 1;
    }
    bins[3].hi = z_hi;
    return bins;
}

// z-extent of the organ tube inside a volume of depth nz.
inline std::pair<int, int> organ_z_extent(int nz) {
    return {2, nz - 3};
}

inline std::pair<int, int> mask_z_extent(const Mask& m) {
    int lo = m.nz, hi = -1;
    for (int z = 0; z < m.nz; ++z)
        for (int y = 0; y < m.ny && (lo > z || hi < z); ++y)
            for (int x = 0; x < m.nx; ++x)
                if (m.at(x, y, z)) {
                    if (lo > z) lo = z;
                    hi = z;
                    break;
                }
    if (hi < 0) throw std::invalid_argument("mask_z_extent: empty mask");
    return {lo, hi};
}

inline PatientRecord generate_patient(const PhantomConfig& cfg, bool cancer,
                                      int location_bin, std::uint64_t seed) {
    cfg.validate();
    if (cancer && (location_bin < 1 || location_bin > 4))
        throw std::invalid_argument("location_bin must be in [1..4] for cancer");
    if (!cancer && location_bin != 0)
        throw std::invalid_argument("location_bin must be 0 for normals");

    const int nx = cfg.volume_shape.x, ny = cfg.volume_shape.y,
              nz = cfg.volume_shape.z;
    Rng rng(seed);

    PatientRecord rec;
    rec.volume = Volume(nx, ny, nz, 0.0);
    rec.organ_mask = Mask(nx, ny, nz, 0);
    rec.mask = Mask(nx, ny, nz, 0);
    rec.diagnosis = cancer ? 1 : 0;
    rec.location = location_bin;

    auto [z_lo, z_hi] = organ_z_extent(nz);
    const double span = z_hi - z_lo;
    auto bins = location_bins(z_lo, z_hi);

    // organ tube: wobbling axis, modulated radius, widened cap in bin 4
    double cx0 = 0.5 * nx + rng.uniform(-2.0, 2.0);
    double cy0 = 0.5 * ny + rng.uniform(-2.0, 2.0);
    double ax = rng.uniform(0.5, 1.0), ay = rng.uniform(0.5, 1.0);
    double phx = rng.uniform(0.0, 2.0 * M_PI), phy = rng.uniform(0.0, 2.0 * M_PI);
    double fx = rng.uniform(1.0, 2.0), fy = rng.uniform(1.0, 2.0);
    double radius = rng.uniform(cfg.organ_radius_min, cfg.organ_radius_max);
    double rmodf = rng.uniform(1.0, 2.0), rmodp = rng.uniform(0.0, 2.0 * M_PI);

    auto axis_x = [&](double z) {
        return cx0 + ax * std::sin(2.0 * M_PI * fx * (z - z_lo) / span + phx);
    };
    auto axis_y = [&](double z) {
        return cy0 + ay * std::sin(2.0 * M_PI * fy * (z - z_lo) / span + phy);
    };
    auto organ_radius = [&](double z) {
        double r = radius *
                   (1.0 + 0.06 * std::sin(2.0 * M_PI * rmodf * (z - z_lo) / span + rmodp));
        const auto& b4 = bins[3];
        if (z >= b4.lo) {
            double t = (z - b4.lo + 1.0) / (b4.hi - b4.lo + 1.0);
            r *= 1.0 + 0.5 * (t < 1.0 ? t : 1.0);  // stomach cap widening
        }
        return r;
    };

    for (int z = z_lo; z <= z_hi; ++z) {
        double cx = axis_x(z), cy = axis_y(z), r = organ_radius(z);
        double r2 = r * r;
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                double dx = x - cx, dy = y - cy;
                if (dx * dx + dy * dy <= r2) rec.organ_mask.at(x, y, z) = 1;
            }
    }

    if (cancer) {
        const auto& band = bins[static_cast<std::size_t>(location_bin - 1)];
        int band_len = band.hi - band.lo + 1;
        double rx = rng.uniform(cfg.tumor_radius_min, cfg.tumor_radius_max);
        double ry = rng.uniform(cfg.tumor_radius_min, cfg.tumor_radius_max);
        double rz = rng.uniform(cfg.tumor_radius_min, cfg.tumor_radius_max);
        double rz_cap = std::max(0.49, 0.5 * (band_len - 1));
        rz = std::min(rz, rz_cap);
        int fl = static_cast<int>(std::floor(rz));
        int cz = band.lo + fl +
                 static_cast<int>(rng.uniform_int(
                     static_cast<std::uint64_t>(band_len - 2 * fl)));
        double tx = axis_x(cz), ty = axis_y(cz);
        // keep the tumor inside the organ tube (plus margin) over its z-extent
        double min_r = organ_radius(cz);
        for (int z = cz - fl; z <= cz + fl; ++z)
            min_r = std::min(min_r, organ_radius(z));
        rx = std::max(1.0, std::min(rx, min_r));
        ry = std::max(1.0, std::min(ry, min_r));

        for (int z = 0; z < nz; ++z)
            for (int y = 0; y < ny; ++y)
                for (int x = 0; x < nx; ++x) {
                    double ex = (x - tx) / rx, ey = (y - ty) / ry,
                           ez = (z - cz) / rz;
                    if (ex * ex + ey * ey + ez * ez <= 1.0)
                        rec.mask.at(x, y, z) = 1;
                }
        rec.tumor = TumorGeom{tx, ty, static_cast<double>(cz), rx, ry, rz};
    }

    // intensities: organ plateau, tumor offset, i.i.d. Gaussian noise, fixed
    // voxel order so volumes are byte-reproducible
    for (int z = 0; z < nz; ++z)
        for (int y = 0; y < ny; ++y)
            for (int x = 0; x < nx; ++x) {
                double v = cfg.noise_sigma * rng.normal();
                if (rec.organ_mask.at(x, y, z)) v += kOrganIntensity;
                if (rec.mask.at(x, y, z)) v += cfg.tumor_contrast;
                rec.volume.at(x, y, z) = v;
            }
    return rec;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct ManifestRecord {
    std::string id;
    std::string volume_path, organ_path;
    std::string mask_path;         // empty when not visible (weak supervision)
    std::string hidden_mask_path;  // on-disk mask of a weak record (analysis only)
    int diagnosis = 0;
    int location = 0;
    Supervision supervision = Supervision::full;
    Split split = Split::train;
};

struct Manifest {
    std::vector<ManifestRecord> records;
    std::array<double, 3> split_ratios{0.64, 0.16, 0.20};
    double full_fraction = 1.0;
    PhantomConfig phantom_config;
    int n = 0;
    std::uint64_t seed = 0;
    fs::path root;  // dataset directory; record paths are relative to it
};

// Largest-remainder apportionment of `total` into parts proportional to
// `weights` (sums exactly to total).
inline std::vector<int> apportion(int total, std::span<const double> weights) {
    double wsum = 0.0;
    for (double w : weights) wsum += w;
    std::vector<int> out(weights.size(), 0);
    std::vector<std::pair<double, std::size_t>> rem;
    int used = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        double exact = total * weights[i] / wsum;
        out[i] = static_cast<int>(std::floor(exact));
        used += out[i];
        rem.push_back({exact - out[i], i});
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
        return a.first > b.first;
    });
    for (int k = 0; k < total - used; ++k) out[rem[static_cast<std::size_t>(k)].second]++;
    return out;
}

inline json record_to_json(const ManifestRecord& r) {
    json j;
    j["id"] = r.id;
    j["volume"] = r.volume_path;
    j["organ_mask"] = r.organ_path;
    j["mask"] = r.mask_path.empty() ? json(nullptr) : json(r.mask_path);
    j["hidden_mask"] =
        r.hidden_mask_path.empty() ? json(nullptr) : json(r.hidden_mask_path);
    j["diagnosis"] = r.diagnosis;
    j["location"] = r.location;
    j["supervision"] = to_string(r.supervision);
    j["split"] = to_string(r.split);
    return j;
}

inline ManifestRecord record_from_json(const json& j) {
    ManifestRecord r;
    r.id = j.at("id").get<std::string>();
    r.volume_path = j.at("volume").get<std::string>();
    r.organ_path = j.at("organ_mask").get<std::string>();
    if (!j.at("mask").is_null()) r.mask_path = j["mask"].get<std::string>();
    if (!j.at("hidden_mask").is_null())
        r.hidden_mask_path = j["hidden_mask"].get<std::string>();
    r.diagnosis = j.at("diagnosis").get<int>();
    r.location = j.at("location").get<int>();
    r.supervision = j.at("supervision").get<std::string>() == "full"
                        ? Supervision::full
                        : Supervision::weak;
    r.split = split_from_string(j.at("split").get<std::string>());
    return r;
}

inline void save_manifest(const Manifest& m) {
    std::string lines;
    for (const auto& r : m.records) lines += record_to_json(r).dump() + "\n";
    io::write_text_file(m.root / "manifest.jsonl", lines);
    json meta;
    meta["n"] = m.n;
    meta["seed"] = m.seed;
    meta["split_ratios"] = m.split_ratios;
    meta["full_fraction"] = m.full_fraction;
    meta["phantom_config"] = m.phantom_config;
    io::write_text_file(m.root / "dataset.json", meta.dump(1) + "\n");
}

inline Manifest load_manifest(const fs::path& dataset_dir) {
    Manifest m;
    m.root = dataset_dir;
    std::ifstream meta_in(dataset_dir / "dataset.json");
    if (!meta_in) throw IoError("missing dataset.json in " + dataset_dir.string());
    json meta = json::parse(meta_in);
    m.n = meta.at("n").get<int>();
    m.seed = meta.at("seed").get<std::uint64_t>();
    m.split_ratios = meta.at("split_ratios").get<std::array<double, 3>>();
    m.full_fraction = meta.at("full_fraction").get<double>();
    m.phantom_config = meta.at("phantom_config").get<PhantomConfig>();
    std::ifstream in(dataset_dir / "manifest.jsonl");
    if (!in) throw IoError("missing manifest.jsonl in " + dataset_dir.string());
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        m.records.push_back(record_from_json(json::parse(line)));
    }
    return m;
}

inline Manifest generate_dataset(const PhantomConfig& cfg, int n,
                                 std::array<double, 3> split_ratios,
                                 std::uint64_t seed, const fs::path& out_dir) {
    cfg.validate();
    if (n < 20) throw std::invalid_argument("generate_dataset: n must be >= 20");
    double rsum = split_ratios[0] + split_ratios[1] + split_ratios[2];
    if (std::fabs(rsum - 1.0) > 1e-9)
        throw std::invalid_argument("split ratios must sum to 1");

    std::error_code ec;
    fs::create_directories(out_dir / "arrays", ec);
    if (!fs::is_directory(out_dir / "arrays"))
        throw IoError("cannot create dataset directory " + out_dir.string());

    int n_cancer = static_cast<int>(std::lround(cfg.cancer_prevalence * n));

    // diagnosis-stratified split assignment: global split sizes by largest
    // remainder, cancer sizes likewise, normals take the complement
    auto total_sizes = apportion(n, split_ratios);
    auto cancer_sizes = apportion(n_cancer, split_ratios);
    std::array<int, 3> normal_sizes;
    for (int k = 0; k < 3; ++k) {
        normal_sizes[static_cast<std::size_t>(k)] =
            total_sizes[static_cast<std::size_t>(k)] - cancer_sizes[static_cast<std::size_t>(k)];
        if (normal_sizes[static_cast<std::size_t>(k)] < 0)
            throw std::invalid_argument("split ratios too small for stratification");
    }

    std::vector<int> cancer_idx, normal_idx;
    for (int i = 0; i < n; ++i) (i < n_cancer ? cancer_idx : normal_idx).push_back(i);
    Rng split_rng(substream(seed, 0xC0FFEE));
    split_rng.shuffle(cancer_idx);
    split_rng.shuffle(normal_idx);

    std::vector<Split> split_of(static_cast<std::size_t>(n), Split::train);
    auto assign = [&](const std::vector<int>& idx, const auto& sizes) {
        std::size_t pos = 0;
        for (int k = 0; k < 3; ++k)
            for (int c = 0; c < sizes[static_cast<std::size_t>(k)]; ++c)
                split_of[static_cast<std::size_t>(idx[pos++])] = static_cast<Split>(k);
    };
    assign(cancer_idx, cancer_sizes);
    assign(normal_idx, normal_sizes);

    Manifest m;
    m.split_ratios = split_ratios;
    m.full_fraction = 1.0;
    m.phantom_config = cfg;
    m.n = n;
    m.seed = seed;
    m.root = out_dir;

    Rng bin_rng(substream(seed, 0xB1B5));
    for (int i = 0; i < n; ++i) {
        bool cancer = i < n_cancer;
        int bin = cancer ? 1 + static_cast<int>(bin_rng.uniform_int(4)) : 0;
        auto rec = generate_patient(cfg, cancer, bin, substream(seed, 0xFACE, static_cast<std::uint64_t>(i)));
        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "p%05d", i);
        rec.id = idbuf;

        ManifestRecord mr;
        mr.id = rec.id;
        mr.volume_path = "arrays/" + rec.id + ".vol.raw";
        mr.organ_path = "arrays/" + rec.id + ".organ.raw";
        mr.mask_path = "arrays/" + rec.id + ".mask.raw";
        mr.diagnosis = rec.diagnosis;
        mr.location = rec.location;
        mr.supervision = Supervision::full;
        mr.split = split_of[static_cast<std::size_t>(i)];

        io::write_volume(out_dir / mr.volume_path, rec.volume, cfg.voxel_spacing);
        io::write_mask(out_dir / mr.organ_path, rec.organ_mask, cfg.voxel_spacing);
        io::write_mask(out_dir / mr.mask_path, rec.mask, cfg.voxel_spacing);
        m.records.push_back(std::move(mr));
    }
    save_manifest(m);
    return m;
}

// Marks a stratified full_fraction of the train split as fully supervised and
// hides the mask paths of the remainder. Val/test records keep their masks
// for evaluation.
inline Manifest assign_supervision(Manifest m, double full_fraction,
                                   std::uint64_t seed) {
    if (!(full_fraction > 0.0) || full_fraction > 1.0)
        throw std::invalid_argument(
            "full_fraction must be in (0,1]; the teacher needs full records");

    std::vector<std::size_t> train_cancer, train_normal;
    for (std::size_t i = 0; i < m.records.size(); ++i) {
        auto& r = m.records[i];
        if (r.split != Split::train) continue;
        // reset any previous assignment
        if (!r.hidden_mask_path.empty()) {
            r.mask_path = r.hidden_mask_path;
            r.hidden_mask_path.clear();
        }
        r.supervision = Supervision::full;
        (r.diagnosis ? train_cancer : train_normal).push_back(i);
    }
    int n_train = static_cast<int>(train_cancer.size() + train_normal.size());
    int n_full = static_cast<int>(std::lround(full_fraction * n_train));
    n_full = std::max(1, std::min(n_full, n_train));
    std::array<double, 2> weights = {static_cast<double>(train_cancer.size()),
                                     static_cast<double>(train_normal.size())};
    auto per_class = apportion(n_full, weights);

    Rng rng(substream(seed, 0x5C));
    rng.shuffle(train_cancer);
    rng.shuffle(train_normal);
    auto demote = [&](std::vector<std::size_t>& idx, int keep_full) {
        for (std::size_t k = static_cast<std::size_t>(keep_full); k < idx.size(); ++k) {
            auto& r = m.records[idx[k]];
            r.supervision = Supervision::weak;
            r.hidden_mask_path = r.mask_path;
            r.mask_path.clear();
        }
    };
    demote(train_cancer, per_class[0]);
    demote(train_normal, per_class[1]);
    m.full_fraction = full_fraction;
    return m;
}

}  // namespace wssl::phantom

#endif
