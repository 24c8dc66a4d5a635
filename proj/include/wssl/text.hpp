#ifndef WSSL_TEXT_HPP
#define WSSL_TEXT_HPP

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "wssl/core.hpp"
#include "wssl/io.hpp"
#include "wssl/rng.hpp"

namespace wssl::text {

using json = nlohmann::json;

// Index order is fixed: location index 0 is the background "no" class,
// indices 1..4 run from the upper esophagus down to the junction.
inline constexpr int kNumLocations = 4;  // L

struct LabelVocabulary {
    std::array<std::string, 2> diagnostic_labels = {"no", "esophageal"};
    std::array<std::string, kNumLocations + 1> location_labels = {
        "no", "upper esophageal", "middle esophageal", "lower esophageal",
        "esophagogastric junction"};

    bool contains(const std::string& label) const {
        for (const auto& s : diagnostic_labels)
            if (s == label) return true;
        for (const auto& s : location_labels)
            if (s == label) return true;
        return false;
    }

    // The distinct vocabulary labels. The background "no" is shared by the
    // diagnostic and location vocabularies (both map to the same prompt), so
    // the 7 vocabulary slots collapse to 6 unique prompts.
    std::vector<std::string> all_labels() const {
        std::vector<std::string> out = {"no", "esophageal"};
        for (int i = 1; i <= kNumLocations; ++i)
            out.push_back(location_labels[static_cast<std::size_t>(i)]);
        return out;
    }
};

inline std::string build_prompt(const std::string& label) {
    static const LabelVocabulary vocab;
    if (!vocab.contains(label))
        throw std::invalid_argument("unknown vocabulary label: " + label);
    return "A patient with " + label + " cancer";
}

// Deterministic stand-in for a frozen text encoder: seed a counter-based
// generator with the FNV-1a 64-bit hash of the prompt bytes, draw D standard
// normals and L2-normalize.
inline std::vector<double> pseudo_encode(const std::string& prompt, int dim) {
    if (dim < 2) throw std::invalid_argument("pseudo_encode: D must be >= 2");
    Rng rng(fnv1a64(prompt));
    std::vector<double> v(static_cast<std::size_t>(dim));
    for (auto& x : v) x = rng.normal();
    double norm2 = 0.0;
    for (double x : v) norm2 += x * x;
    double inv = 1.0 / std::sqrt(norm2);
    for (auto& x : v) x *= inv;
    return v;
}

struct TextEmbeddingTable {
    std::string encoder;
    int dim = 0;
    bool normalized = false;
    std::map<std::string, std::vector<double>> rows;  // prompt -> embedding

    const std::vector<double>& row(const std::string& prompt) const {
        auto it = rows.find(prompt);
        if (it == rows.end())
            throw ConfigError("embedding table has no row for prompt: \"" +
                              prompt + "\"");
        return it->second;
    }
};

// A table containing all 7 vocabulary prompts produced by pseudo_encode.
inline TextEmbeddingTable pseudo_table(int dim,
                                       const std::string& encoder_name = "pseudo") {
    TextEmbeddingTable t;
    t.encoder = encoder_name;
    t.dim = dim;
    t.normalized = true;
    LabelVocabulary vocab;
    for (const auto& label : vocab.all_labels()) {
        std::string prompt = build_prompt(label);
        t.rows[prompt] = pseudo_encode(prompt, dim);
    }
    return t;
}

inline void save_embedding_table(const std::filesystem::path& path,
                                 const TextEmbeddingTable& t) {
    json j;
    j["encoder"] = t.encoder;
    j["dim"] = t.dim;
    j["normalized"] = t.normalized;
    json rows = json::object();
    for (const auto& [prompt, vec] : t.rows) rows[prompt] = vec;
    j["rows"] = rows;
    io::write_text_file(path, j.dump(1) + "\n");
}

inline TextEmbeddingTable load_embedding_table(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read embedding table " + path.string());
    json j = json::parse(in);
    TextEmbeddingTable t;
    t.encoder = j.at("encoder").get<std::string>();
    t.dim = j.at("dim").get<int>();
    t.normalized = j.at("normalized").get<bool>();
    for (auto& [prompt, vec] : j.at("rows").items()) {
        auto v = vec.get<std::vector<double>>();
        if (static_cast<int>(v.size()) != t.dim)
            throw ConfigError("embedding row \"" + prompt + "\" has dim " +
                              std::to_string(v.size()) + ", table says " +
                              std::to_string(t.dim));
        t.rows[prompt] = std::move(v);
    }
    LabelVocabulary vocab;
    for (const auto& label : vocab.all_labels()) {
        std::string prompt = build_prompt(label);
        if (!t.rows.count(prompt))
            throw ConfigError("embedding table missing prompt: \"" + prompt +
                              "\"");
    }
    if (t.normalized) {
        for (auto& [prompt, vec] : t.rows) {
            double norm2 = 0.0;
            for (double x : vec) norm2 += x * x;
            double norm = std::sqrt(norm2);
            if (norm < 1e-12)
                throw ConfigError("zero-norm embedding row for \"" + prompt +
                                  "\"");
            for (auto& x : vec) x /= norm;
        }
    }
    return t;
}

// Row-major K x D matrices of frozen text features.
struct TextMatrices {
    int dim = 0;
    std::vector<double> det;  // 2 x D, row 0 = "no", row 1 = "esophageal"
    std::vector<double> loc;  // (L+1) x D in vocabulary index order
};

inline TextMatrices assemble_text_matrices(const TextEmbeddingTable& table,
                                           const LabelVocabulary& vocab = {}) {
    TextMatrices m;
    m.dim = table.dim;
    for (const auto& label : vocab.diagnostic_labels) {
        const auto& row = table.row(build_prompt(label));
        m.det.insert(m.det.end(), row.begin(), row.end());
    }
    for (const auto& label : vocab.location_labels) {
        const auto& row = table.row(build_prompt(label));
        m.loc.insert(m.loc.end(), row.begin(), row.end());
    }
    return m;
}

}  // namespace wssl::text

#endif
