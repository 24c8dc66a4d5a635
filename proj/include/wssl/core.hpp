#ifndef WSSL_CORE_HPP
#define WSSL_CORE_HPP

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace wssl {

// Error taxonomy, mapped onto CLI exit codes by tools/wssl.cpp:
//   std::invalid_argument / std::domain_error / ConfigError -> 2
//   IoError -> 3, NumericalError -> 4
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};
struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense 3D grid, C-order with z as the slowest axis (storage order "zyx").
template <typename T>
struct Grid3 {
    int nx = 0, ny = 0, nz = 0;
    std::vector<T> data;

    Grid3() = default;
    Grid3(int nx_, int ny_, int nz_, T fill = T{})
        : nx(nx_), ny(ny_), nz(nz_),
          data(static_cast<std::size_t>(nx_) * ny_ * nz_, fill) {}

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    std::size_t index(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * ny + y) * nx + x;
    }
    T& at(int x, int y, int z) { return data[index(x, y, z)]; }
    const T& at(int x, int y, int z) const { return data[index(x, y, z)]; }

    template <typename U>
    bool same_shape(const Grid3<U>& o) const {
        return nx == o.nx && ny == o.ny && nz == o.nz;
    }
};

using Volume = Grid3<double>;
using Mask = Grid3<std::uint8_t>;

inline std::size_t count_nonzero(const Mask& m) {
    std::size_t n = 0;
    for (auto v : m.data) n += (v != 0);
    return n;
}

struct Shape3 {
    int x = 0, y = 0, z = 0;
    bool operator==(const Shape3&) const = default;
};

struct Spacing3 {
    double x = 1.0, y = 1.0, z = 1.0;
};

}  // namespace wssl

#endif
