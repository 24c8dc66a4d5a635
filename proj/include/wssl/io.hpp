#ifndef WSSL_IO_HPP
#define WSSL_IO_HPP

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wssl/core.hpp"
#include "wssl/rng.hpp"

namespace wssl::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// File-access audit. When enabled, every dataset array opened for reading is
// recorded; the pipeline tests use this to prove hidden weak masks are never
// touched during training.
// ---------------------------------------------------------------------------
class AuditLog {
  public:
    void enable() {
        std::lock_guard<std::mutex> lk(mu_);
        enabled_ = true;
        reads_.clear();
    }
    void disable() {
        std::lock_guard<std::mutex> lk(mu_);
        enabled_ = false;
    }
    void note_read(const std::string& path) {
        std::lock_guard<std::mutex> lk(mu_);
        if (enabled_) reads_.push_back(path);
    }
    std::vector<std::string> reads() const {
        std::lock_guard<std::mutex> lk(mu_);
        return reads_;
    }
    bool was_read(const std::string& path) const {
        std::lock_guard<std::mutex> lk(mu_);
        for (const auto& r : reads_)
            if (r == path) return true;
        return false;
    }

  private:
    mutable std::mutex mu_;
    bool enabled_ = false;
    std::vector<std::string> reads_;
};

inline AuditLog& audit() {
    static AuditLog log;
    return log;
}

// ---------------------------------------------------------------------------
// Raw array files: little-endian float32 (volumes) or uint8 (masks), C-order
// with z slowest ("zyx"), plus a JSON sidecar describing shape/dtype/spacing.
// Sidecar path = array path with the extension replaced by ".json".
// ---------------------------------------------------------------------------
inline fs::path sidecar_path(const fs::path& array_path) {
    fs::path p = array_path;
    p.replace_extension(".json");
    return p;
}

inline void write_sidecar(const fs::path& array_path, const char* dtype,
                          int nx, int ny, int nz, const Spacing3& sp) {
    json side;
    side["shape"] = {nz, ny, nx};
    side["dtype"] = dtype;
    side["spacing_mm"] = {sp.z, sp.y, sp.x};
    side["order"] = "zyx";
    std::ofstream out(sidecar_path(array_path));
    if (!out) throw IoError("cannot write sidecar for " + array_path.string());
    out << side.dump() << "\n";
}

inline void write_volume(const fs::path& path, const Volume& v,
                         const Spacing3& sp = {}) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    std::vector<float> buf(v.data.size());
    for (std::size_t i = 0; i < v.data.size(); ++i)
        buf[i] = static_cast<float>(v.data[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out) throw IoError("short write on " + path.string());
    write_sidecar(path, "float32", v.nx, v.ny, v.nz, sp);
}

inline void write_mask(const fs::path& path, const Mask& m,
                       const Spacing3& sp = {}) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size()));
    if (!out) throw IoError("short write on " + path.string());
    write_sidecar(path, "uint8", m.nx, m.ny, m.nz, sp);
}

struct SidecarInfo {
    int nx = 0, ny = 0, nz = 0;
    std::string dtype;
    Spacing3 spacing;
};

inline SidecarInfo read_sidecar(const fs::path& array_path) {
    std::ifstream in(sidecar_path(array_path));
    if (!in) throw IoError("missing sidecar for " + array_path.string());
    json side = json::parse(in);
    SidecarInfo info;
    info.nz = side["shape"][0].get<int>();
    info.ny = side["shape"][1].get<int>();
    info.nx = side["shape"][2].get<int>();
    info.dtype = side["dtype"].get<std::string>();
    if (side.contains("spacing_mm")) {
        info.spacing.z = side["spacing_mm"][0].get<double>();
        info.spacing.y = side["spacing_mm"][1].get<double>();
        info.spacing.x = side["spacing_mm"][2].get<double>();
    }
    return info;
}

inline Volume read_volume(const fs::path& path) {
    audit().note_read(path.string());
    SidecarInfo info = read_sidecar(path);
    if (info.dtype != "float32")
        throw IoError("expected float32 array in " + path.string());
    Volume v(info.nx, info.ny, info.nz);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::vector<float> buf(v.data.size());
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != buf.size() * sizeof(float))
        throw IoError("short read on " + path.string());
    for (std::size_t i = 0; i < buf.size(); ++i) v.data[i] = buf[i];
    return v;
}

inline Mask read_mask(const fs::path& path) {
    audit().note_read(path.string());
    SidecarInfo info = read_sidecar(path);
    if (info.dtype != "uint8")
        throw IoError("expected uint8 array in " + path.string());
    Mask m(info.nx, info.ny, info.nz);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    in.read(reinterpret_cast<char*>(m.data.data()),
            static_cast<std::streamsize>(m.data.size()));
    if (static_cast<std::size_t>(in.gcount()) != m.data.size())
        throw IoError("short read on " + path.string());
    return m;
}

inline std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::string s((std::istreambuf_iterator<char>(in)),
                  std::istreambuf_iterator<char>());
    return s;
}

inline void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("short write on " + path.string());
}

inline std::uint64_t file_hash(const fs::path& path) {
    return fnv1a64(read_text_file(path));
}

inline std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(h));
    return std::string(buf);
}

}  // namespace wssl::io

#endif
