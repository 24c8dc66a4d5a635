#ifndef WSSL_MODEL_HPP
#define WSSL_MODEL_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "wssl/core.hpp"
#include "wssl/io.hpp"
#include "wssl/rng.hpp"

namespace wssl::model {

using json = nlohmann::json;
namespace fs = std::filesystem;

// Channel-major 4D feature grid: layout ((c*nz + z)*ny + y)*nx + x.
struct Tensor4 {
    int c = 0, nz = 0, ny = 0, nx = 0;
    std::vector<double> v;

    Tensor4() = default;
    Tensor4(int c_, int nz_, int ny_, int nx_, double fill = 0.0)
        : c(c_), nz(nz_), ny(ny_), nx(nx_),
          v(static_cast<std::size_t>(c_) * nz_ * ny_ * nx_, fill) {}

    std::size_t spatial() const {
        return static_cast<std::size_t>(nz) * ny * nx;
    }
    std::size_t size() const { return v.size(); }
    double& at(int ch, int z, int y, int x) {
        return v[((static_cast<std::size_t>(ch) * nz + z) * ny + y) * nx + x];
    }
    double at(int ch, int z, int y, int x) const {
        return v[((static_cast<std::size_t>(ch) * nz + z) * ny + y) * nx + x];
    }
    double* channel(int ch) { return v.data() + static_cast<std::size_t>(ch) * spatial(); }
    const double* channel(int ch) const {
        return v.data() + static_cast<std::size_t>(ch) * spatial();
    }
    bool same_shape(const Tensor4& o) const {
        return c == o.c && nz == o.nz && ny == o.ny && nx == o.nx;
    }
};

// ---------------------------------------------------------------------------
// Parameter store: every learnable tensor has a stable name, shape and slot.
// Gradients live outside the store (per-worker GradBuffer) so batches can be
// processed in parallel and reduced in a fixed order.
// ---------------------------------------------------------------------------

struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<double> w;
};

struct ParamStore {
    std::vector<Param> params;

    int add(std::string name, std::vector<int> shape) {
        std::size_t n = 1;
        for (int d : shape) n *= static_cast<std::size_t>(d);
        params.push_back({std::move(name), std::move(shape),
                          std::vector<double>(n, 0.0)});
        return static_cast<int>(params.size()) - 1;
    }
    Param& operator[](int slot) { return params[static_cast<std::size_t>(slot)]; }
    const Param& operator[](int slot) const {
        return params[static_cast<std::size_t>(slot)];
    }
    Param* find(const std::string& name) {
        for (auto& p : params)
            if (p.name == name) return &p;
        return nullptr;
    }
    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& p : params) n += p.w.size();
        return n;
    }
};

struct GradBuffer {
    std::vector<std::vector<double>> g;

    void init(const ParamStore& ps) {
        g.resize(ps.params.size());
        for (std::size_t i = 0; i < g.size(); ++i)
            g[i].assign(ps.params[i].w.size(), 0.0);
    }
    void zero() {
        for (auto& v : g) std::fill(v.begin(), v.end(), 0.0);
    }
    void add_scaled(const GradBuffer& o, double s) {
        for (std::size_t i = 0; i < g.size(); ++i)
            for (std::size_t k = 0; k < g[i].size(); ++k)
                g[i][k] += s * o.g[i][k];
    }
};

// ---------------------------------------------------------------------------
// Primitive ops
// ---------------------------------------------------------------------------

namespace ops {

inline int conv_out_dim(int n, int stride) { return (n - 1) / stride + 1; }

// 3x3x3 convolution, padding 1.
inline Tensor4 conv3(const ParamStore& ps, int w_slot, int b_slot,
                     const Tensor4& x, int stride) {
    const auto& W = ps[w_slot].w;
    const auto& B = ps[b_slot].w;
    int cout = ps[w_slot].shape[0], cin = ps[w_slot].shape[1];
    int oz = conv_out_dim(x.nz, stride), oy = conv_out_dim(x.ny, stride),
        ox = conv_out_dim(x.nx, stride);
    Tensor4 out(cout, oz, oy, ox);
    for (int co = 0; co < cout; ++co) {
        double* oc = out.channel(co);
        double bias = B[static_cast<std::size_t>(co)];
        for (std::size_t i = 0; i < out.spatial(); ++i) oc[i] = bias;
        for (int ci = 0; ci < cin; ++ci) {
            const double* xc = x.channel(ci);
            const double* wk =
                &W[((static_cast<std::size_t>(co) * cin + ci) * 27)];
            for (int kz = 0; kz < 3; ++kz)
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        double w = wk[(kz * 3 + ky) * 3 + kx];
                        if (w == 0.0) continue;
                        for (int z = 0; z < oz; ++z) {
                            int iz = z * stride + kz - 1;
                            if (iz < 0 || iz >= x.nz) continue;
                            for (int y = 0; y < oy; ++y) {
                                int iy = y * stride + ky - 1;
                                if (iy < 0 || iy >= x.ny) continue;
                                const double* xrow =
                                    xc + (static_cast<std::size_t>(iz) * x.ny + iy) * x.nx;
                                double* orow =
                                    oc + (static_cast<std::size_t>(z) * oy + y) * ox;
                                int x_lo = std::max(0, (1 - kx + stride - 1) / stride);
                                for (int px = x_lo; px < ox; ++px) {
                                    int ix = px * stride + kx - 1;
                                    if (ix >= x.nx) break;
                                    orow[px] += w * xrow[ix];
                                }
                            }
                        }
                    }
        }
    }
    return out;
}

// Backward pass of conv3: accumulates dW/dB into gb and returns dX.
inline Tensor4 conv3_backward(const ParamStore& ps, int w_slot, int b_slot,
                              const Tensor4& x, const Tensor4& dy, int stride,
                              GradBuffer& gb) {
    const auto& W = ps[w_slot].w;
    auto& dW = gb.g[static_cast<std::size_t>(w_slot)];
    auto& dB = gb.g[static_cast<std::size_t>(b_slot)];
    int cout = ps[w_slot].shape[0], cin = ps[w_slot].shape[1];
    Tensor4 dx(x.c, x.nz, x.ny, x.nx);
    for (int co = 0; co < cout; ++co) {
        const double* dyc = dy.channel(co);
        double acc = 0.0;
        for (std::size_t i = 0; i < dy.spatial(); ++i) acc += dyc[i];
        dB[static_cast<std::size_t>(co)] += acc;
        for (int ci = 0; ci < cin; ++ci) {
            const double* xc = x.channel(ci);
            double* dxc = dx.channel(ci);
            const double* wk = &W[(static_cast<std::size_t>(co) * cin + ci) * 27];
            double* dwk = &dW[(static_cast<std::size_t>(co) * cin + ci) * 27];
            for (int kz = 0; kz < 3; ++kz)
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        double w = wk[(kz * 3 + ky) * 3 + kx];
                        double grad_w = 0.0;
                        for (int z = 0; z < dy.nz; ++z) {
                            int iz = z * stride + kz - 1;
                            if (iz < 0 || iz >= x.nz) continue;
                            for (int y = 0; y < dy.ny; ++y) {
                                int iy = y * stride + ky - 1;
                                if (iy < 0 || iy >= x.ny) continue;
                                const double* xrow =
                                    xc + (static_cast<std::size_t>(iz) * x.ny + iy) * x.nx;
                                double* dxrow =
                                    dxc + (static_cast<std::size_t>(iz) * x.ny + iy) * x.nx;
                                const double* dyrow =
                                    dyc + (static_cast<std::size_t>(z) * dy.ny + y) * dy.nx;
                                int x_lo = std::max(0, (1 - kx + stride - 1) / stride);
                                for (int px = x_lo; px < dy.nx; ++px) {
                                    int ix = px * stride + kx - 1;
                                    if (ix >= x.nx) break;
                                    grad_w += xrow[ix] * dyrow[px];
                                    dxrow[ix] += w * dyrow[px];
                                }
                            }
                        }
                        dwk[(kz * 3 + ky) * 3 + kx] += grad_w;
                    }
        }
    }
    return dx;
}

// 1x1x1 convolution (used by the segmentation head).
inline Tensor4 conv1(const ParamStore& ps, int w_slot, int b_slot,
                     const Tensor4& x) {
    const auto& W = ps[w_slot].w;
    const auto& B = ps[b_slot].w;
    int cout = ps[w_slot].shape[0], cin = ps[w_slot].shape[1];
    Tensor4 out(cout, x.nz, x.ny, x.nx);
    for (int co = 0; co < cout; ++co) {
        double* oc = out.channel(co);
        for (std::size_t i = 0; i < out.spatial(); ++i)
            oc[i] = B[static_cast<std::size_t>(co)];
        for (int ci = 0; ci < cin; ++ci) {
            double w = W[static_cast<std::size_t>(co) * cin + ci];
            const double* xc = x.channel(ci);
            for (std::size_t i = 0; i < out.spatial(); ++i) oc[i] += w * xc[i];
        }
    }
    return out;
}

inline Tensor4 conv1_backward(const ParamStore& ps, int w_slot, int b_slot,
                              const Tensor4& x, const Tensor4& dy,
                              GradBuffer& gb) {
    const auto& W = ps[w_slot].w;
    auto& dW = gb.g[static_cast<std::size_t>(w_slot)];
    auto& dB = gb.g[static_cast<std::size_t>(b_slot)];
    int cout = ps[w_slot].shape[0], cin = ps[w_slot].shape[1];
    Tensor4 dx(x.c, x.nz, x.ny, x.nx);
    for (int co = 0; co < cout; ++co) {
        const double* dyc = dy.channel(co);
        double acc = 0.0;
        for (std::size_t i = 0; i < dy.spatial(); ++i) acc += dyc[i];
        dB[static_cast<std::size_t>(co)] += acc;
        for (int ci = 0; ci < cin; ++ci) {
            const double* xc = x.channel(ci);
            double* dxc = dx.channel(ci);
            double w = W[static_cast<std::size_t>(co) * cin + ci];
            double gw = 0.0;
            for (std::size_t i = 0; i < dy.spatial(); ++i) {
                gw += xc[i] * dyc[i];
                dxc[i] += w * dyc[i];
            }
            dW[static_cast<std::size_t>(co) * cin + ci] += gw;
        }
    }
    return dx;
}

struct NormStats {
    std::vector<double> mean, istd;
};

// Instance normalization: per channel over the spatial dims, affine.
inline Tensor4 instance_norm(const ParamStore& ps, int gamma_slot,
                             int beta_slot, const Tensor4& x, NormStats& st,
                             double eps = 1e-5) {
    const auto& G = ps[gamma_slot].w;
    const auto& B = ps[beta_slot].w;
    std::size_t n = x.spatial();
    Tensor4 out(x.c, x.nz, x.ny, x.nx);
    st.mean.resize(static_cast<std::size_t>(x.c));
    st.istd.resize(static_cast<std::size_t>(x.c));
    for (int ch = 0; ch < x.c; ++ch) {
        const double* xc = x.channel(ch);
        double m = 0.0;
        for (std::size_t i = 0; i < n; ++i) m += xc[i];
        m /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (xc[i] - m) * (xc[i] - m);
        var /= static_cast<double>(n);
        double istd = 1.0 / std::sqrt(var + eps);
        st.mean[static_cast<std::size_t>(ch)] = m;
        st.istd[static_cast<std::size_t>(ch)] = istd;
        double g = G[static_cast<std::size_t>(ch)],
               b = B[static_cast<std::size_t>(ch)];
        double* oc = out.channel(ch);
        for (std::size_t i = 0; i < n; ++i) oc[i] = g * (xc[i] - m) * istd + b;
    }
    return out;
}

inline Tensor4 instance_norm_backward(const ParamStore& ps, int gamma_slot,
                                      int beta_slot, const Tensor4& x,
                                      const NormStats& st, const Tensor4& dy,
                                      GradBuffer& gb) {
    const auto& G = ps[gamma_slot].w;
    auto& dG = gb.g[static_cast<std::size_t>(gamma_slot)];
    auto& dB = gb.g[static_cast<std::size_t>(beta_slot)];
    std::size_t n = x.spatial();
    Tensor4 dx(x.c, x.nz, x.ny, x.nx);
    for (int ch = 0; ch < x.c; ++ch) {
        const double* xc = x.channel(ch);
        const double* dyc = dy.channel(ch);
        double* dxc = dx.channel(ch);
        double m = st.mean[static_cast<std::size_t>(ch)];
        double istd = st.istd[static_cast<std::size_t>(ch)];
        double g = G[static_cast<std::size_t>(ch)];
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double xhat = (xc[i] - m) * istd;
            sum_dy += dyc[i];
            sum_dy_xhat += dyc[i] * xhat;
        }
        dG[static_cast<std::size_t>(ch)] += sum_dy_xhat;
        dB[static_cast<std::size_t>(ch)] += sum_dy;
        double mean_dy = sum_dy / static_cast<double>(n);
        double mean_dy_xhat = sum_dy_xhat / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            double xhat = (xc[i] - m) * istd;
            dxc[i] = g * istd * (dyc[i] - mean_dy - xhat * mean_dy_xhat);
        }
    }
    return dx;
}

inline void relu_inplace(Tensor4& x) {
    for (auto& v : x.v) v = v > 0.0 ? v : 0.0;
}

// dy masked by the post-activation values (y == 0 where clamped).
inline void relu_backward_inplace(const Tensor4& y, Tensor4& dy) {
    for (std::size_t i = 0; i < y.v.size(); ++i)
        if (y.v[i] <= 0.0) dy.v[i] = 0.0;
}

// Per-axis interpolation table for half-pixel-center trilinear resizing.
struct AxisMap {
    std::vector<int> i0, i1;
    std::vector<double> f;
};

inline AxisMap make_axis(int n_dst, int n_src) {
    AxisMap a;
    a.i0.resize(static_cast<std::size_t>(n_dst));
    a.i1.resize(static_cast<std::size_t>(n_dst));
    a.f.resize(static_cast<std::size_t>(n_dst));
    for (int i = 0; i < n_dst; ++i) {
        double s = (i + 0.5) * static_cast<double>(n_src) / n_dst - 0.5;
        s = std::min(std::max(s, 0.0), static_cast<double>(n_src - 1));
        int i0 = static_cast<int>(s);
        int i1 = std::min(i0 + 1, n_src - 1);
        a.i0[static_cast<std::size_t>(i)] = i0;
        a.i1[static_cast<std::size_t>(i)] = i1;
        a.f[static_cast<std::size_t>(i)] = s - i0;
    }
    return a;
}

inline Tensor4 resize_trilinear(const Tensor4& x, int tz, int ty, int tx) {
    AxisMap az = make_axis(tz, x.nz), ay = make_axis(ty, x.ny),
            ax = make_axis(tx, x.nx);
    Tensor4 out(x.c, tz, ty, tx);
    for (int ch = 0; ch < x.c; ++ch) {
        const double* xc = x.channel(ch);
        double* oc = out.channel(ch);
        for (int z = 0; z < tz; ++z) {
            int z0 = az.i0[static_cast<std::size_t>(z)], z1 = az.i1[static_cast<std::size_t>(z)];
            double fz = az.f[static_cast<std::size_t>(z)];
            for (int y = 0; y < ty; ++y) {
                int y0 = ay.i0[static_cast<std::size_t>(y)], y1 = ay.i1[static_cast<std::size_t>(y)];
                double fy = ay.f[static_cast<std::size_t>(y)];
                for (int x2 = 0; x2 < tx; ++x2) {
                    int x0 = ax.i0[static_cast<std::size_t>(x2)], x1 = ax.i1[static_cast<std::size_t>(x2)];
                    double fx = ax.f[static_cast<std::size_t>(x2)];
                    auto v = [&](int zz, int yy, int xx) {
                        return xc[(static_cast<std::size_t>(zz) * x.ny + yy) * x.nx + xx];
                    };
                    double c00 = v(z0, y0, x0) * (1 - fx) + v(z0, y0, x1) * fx;
                    double c10 = v(z0, y1, x0) * (1 - fx) + v(z0, y1, x1) * fx;
                    double c01 = v(z1, y0, x0) * (1 - fx) + v(z1, y0, x1) * fx;
                    double c11 = v(z1, y1, x0) * (1 - fx) + v(z1, y1, x1) * fx;
                    double c0 = c00 * (1 - fy) + c10 * fy;
                    double c1 = c01 * (1 - fy) + c11 * fy;
                    oc[(static_cast<std::size_t>(z) * ty + y) * tx + x2] =
                        c0 * (1 - fz) + c1 * fz;
                }
            }
        }
    }
    return out;
}

// Adjoint of resize_trilinear (scatter of the interpolation weights).
inline Tensor4 resize_trilinear_adjoint(const Tensor4& dy, int sz, int sy,
                                        int sx) {
    AxisMap az = make_axis(dy.nz, sz), ay = make_axis(dy.ny, sy),
            ax = make_axis(dy.nx, sx);
    Tensor4 dx(dy.c, sz, sy, sx);
    for (int ch = 0; ch < dy.c; ++ch) {
        const double* dyc = dy.channel(ch);
        double* dxc = dx.channel(ch);
        for (int z = 0; z < dy.nz; ++z) {
            int z0 = az.i0[static_cast<std::size_t>(z)], z1 = az.i1[static_cast<std::size_t>(z)];
            double fz = az.f[static_cast<std::size_t>(z)];
            for (int y = 0; y < dy.ny; ++y) {
                int y0 = ay.i0[static_cast<std::size_t>(y)], y1 = ay.i1[static_cast<std::size_t>(y)];
                double fy = ay.f[static_cast<std::size_t>(y)];
                for (int x2 = 0; x2 < dy.nx; ++x2) {
                    int x0 = ax.i0[static_cast<std::size_t>(x2)], x1 = ax.i1[static_cast<std::size_t>(x2)];
                    double fx = ax.f[static_cast<std::size_t>(x2)];
                    double g = dyc[(static_cast<std::size_t>(z) * dy.ny + y) * dy.nx + x2];
                    auto add = [&](int zz, int yy, int xx, double w) {
                        dxc[(static_cast<std::size_t>(zz) * sy + yy) * sx + xx] += w * g;
                    };
                    add(z0, y0, x0, (1 - fz) * (1 - fy) * (1 - fx));
                    add(z0, y0, x1, (1 - fz) * (1 - fy) * fx);
                    add(z0, y1, x0, (1 - fz) * fy * (1 - fx));
                    add(z0, y1, x1, (1 - fz) * fy * fx);
                    add(z1, y0, x0, fz * (1 - fy) * (1 - fx));
                    add(z1, y0, x1, fz * (1 - fy) * fx);
                    add(z1, y1, x0, fz * fy * (1 - fx));
                    add(z1, y1, x1, fz * fy * fx);
                }
            }
        }
    }
    return dx;
}

inline std::vector<double> global_avg_pool(const Tensor4& x) {
    std::vector<double> out(static_cast<std::size_t>(x.c), 0.0);
    double inv = 1.0 / static_cast<double>(x.spatial());
    for (int ch = 0; ch < x.c; ++ch) {
        const double* xc = x.channel(ch);
        double acc = 0.0;
        for (std::size_t i = 0; i < x.spatial(); ++i) acc += xc[i];
        out[static_cast<std::size_t>(ch)] = acc * inv;
    }
    return out;
}

inline Tensor4 global_avg_pool_backward(std::span<const double> d_pooled,
                                        int c, int nz, int ny, int nx) {
    Tensor4 dx(c, nz, ny, nx);
    double inv = 1.0 / (static_cast<double>(nz) * ny * nx);
    for (int ch = 0; ch < c; ++ch) {
        double g = d_pooled[static_cast<std::size_t>(ch)] * inv;
        double* dxc = dx.channel(ch);
        for (std::size_t i = 0; i < dx.spatial(); ++i) dxc[i] = g;
    }
    return dx;
}

inline std::vector<double> fc(const ParamStore& ps, int w_slot, int b_slot,
                              std::span<const double> x) {
    const auto& W = ps[w_slot].w;
    const auto& B = ps[b_slot].w;
    int out_dim = ps[w_slot].shape[0], in_dim = ps[w_slot].shape[1];
    std::vector<double> y(static_cast<std::size_t>(out_dim));
    for (int o = 0; o < out_dim; ++o) {
        double acc = B[static_cast<std::size_t>(o)];
        const double* row = &W[static_cast<std::size_t>(o) * in_dim];
        for (int i = 0; i < in_dim; ++i) acc += row[i] * x[static_cast<std::size_t>(i)];
        y[static_cast<std::size_t>(o)] = acc;
    }
    return y;
}

inline std::vector<double> fc_backward(const ParamStore& ps, int w_slot,
                                       int b_slot, std::span<const double> x,
                                       std::span<const double> dy,
                                       GradBuffer& gb) {
    const auto& W = ps[w_slot].w;
    auto& dW = gb.g[static_cast<std::size_t>(w_slot)];
    auto& dB = gb.g[static_cast<std::size_t>(b_slot)];
    int out_dim = ps[w_slot].shape[0], in_dim = ps[w_slot].shape[1];
    std::vector<double> dx(static_cast<std::size_t>(in_dim), 0.0);
    for (int o = 0; o < out_dim; ++o) {
        double g = dy[static_cast<std::size_t>(o)];
        dB[static_cast<std::size_t>(o)] += g;
        const double* row = &W[static_cast<std::size_t>(o) * in_dim];
        double* drow = &dW[static_cast<std::size_t>(o) * in_dim];
        for (int i = 0; i < in_dim; ++i) {
            drow[i] += g * x[static_cast<std::size_t>(i)];
            dx[static_cast<std::size_t>(i)] += g * row[i];
        }
    }
    return dx;
}

}  // namespace ops

// ---------------------------------------------------------------------------
// Backbone + heads
// ---------------------------------------------------------------------------

struct BackboneConfig {
    int stages = 4;        // S
    int base_channels = 8; // channels double per stage
    Shape3 input_shape{32, 32, 32};
    int text_dim = 768;    // D, must match the embedding table
    int det_channels = 16; // conv width of the detection head
    int loc_channels = 16; // conv width of the standard location head

    int stage_channels(int s) const { return base_channels << s; }

    void validate() const {
        if (stages < 2) throw std::invalid_argument("backbone: stages must be >= 2");
        if (base_channels < 1)
            throw std::invalid_argument("backbone: base_channels must be >= 1");
        if (text_dim < 2) throw std::invalid_argument("backbone: text_dim must be >= 2");
        int div = 1 << (stages - 1);
        if (input_shape.x % div || input_shape.y % div || input_shape.z % div ||
            input_shape.x < div || input_shape.y < div || input_shape.z < div)
            throw std::invalid_argument(
                "backbone: input_shape must be divisible by 2^(stages-1)");
    }
};

inline void to_json(json& j, const BackboneConfig& c) {
    j = json{{"stages", c.stages},
             {"base_channels", c.base_channels},
             {"input_shape", {c.input_shape.x, c.input_shape.y, c.input_shape.z}},
             {"text_dim", c.text_dim},
             {"det_channels", c.det_channels},
             {"loc_channels", c.loc_channels}};
}

inline void from_json(const json& j, BackboneConfig& c) {
    static const std::vector<std::string> known = {
        "stages", "base_channels", "input_shape",
        "text_dim", "det_channels", "loc_channels"};
    for (auto& [key, _] : j.items())
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw ConfigError("unknown backbone config key: " + key);
    if (j.contains("stages")) c.stages = j["stages"].get<int>();
    if (j.contains("base_channels")) c.base_channels = j["base_channels"].get<int>();
    if (j.contains("input_shape"))
        c.input_shape = {j["input_shape"][0].get<int>(),
                         j["input_shape"][1].get<int>(),
                         j["input_shape"][2].get<int>()};
    if (j.contains("text_dim")) c.text_dim = j["text_dim"].get<int>();
    if (j.contains("det_channels")) c.det_channels = j["det_channels"].get<int>();
    if (j.contains("loc_channels")) c.loc_channels = j["loc_channels"].get<int>();
}

// Which heads a forward pass must produce.
struct HeadFlags {
    bool seg = true;
    bool det = true;
    bool text = true;      // the two text projectors
    bool loc_head = false; // standard (non-text) location classifier
};

// conv3 -> instance norm -> relu
struct ConvBlock {
    int cin = 0, cout = 0, stride = 1;
    int w_slot = -1, b_slot = -1, gamma_slot = -1, beta_slot = -1;

    struct Cache {
        Tensor4 conv_out;
        ops::NormStats stats;
        Tensor4 out;  // post-relu
    };

    void build(ParamStore& ps, const std::string& name, int cin_, int cout_,
               int stride_) {
        cin = cin_;
        cout = cout_;
        stride = stride_;
        w_slot = ps.add(name + ".conv.w", {cout, cin, 3, 3, 3});
        b_slot = ps.add(name + ".conv.b", {cout});
        gamma_slot = ps.add(name + ".norm.gamma", {cout});
        beta_slot = ps.add(name + ".norm.beta", {cout});
    }

    const Tensor4& forward(const ParamStore& ps, const Tensor4& x,
                           Cache& c) const {
        c.conv_out = ops::conv3(ps, w_slot, b_slot, x, stride);
        c.out = ops::instance_norm(ps, gamma_slot, beta_slot, c.conv_out, c.stats);
        ops::relu_inplace(c.out);
        return c.out;
    }

    Tensor4 backward(const ParamStore& ps, const Tensor4& x, const Cache& c,
                     Tensor4 dy, GradBuffer& gb) const {
        ops::relu_backward_inplace(c.out, dy);
        Tensor4 d_conv = ops::instance_norm_backward(ps, gamma_slot, beta_slot,
                                                     c.conv_out, c.stats, dy, gb);
        return ops::conv3_backward(ps, w_slot, b_slot, x, d_conv, stride, gb);
    }
};

// conv3 -> global average pool -> fully connected
struct HeadStack {
    int cin = 0, cmid = 0, out_dim = 0;
    int conv_w = -1, conv_b = -1, fc_w = -1, fc_b = -1;

    struct Cache {
        Tensor4 conv_out;
        std::vector<double> pooled;
        std::vector<double> out;
    };

    void build(ParamStore& ps, const std::string& name, int cin_, int cmid_,
               int out_dim_) {
        cin = cin_;
        cmid = cmid_;
        out_dim = out_dim_;
        conv_w = ps.add(name + ".conv.w", {cmid, cin, 3, 3, 3});
        conv_b = ps.add(name + ".conv.b", {cmid});
        fc_w = ps.add(name + ".fc.w", {out_dim, cmid});
        fc_b = ps.add(name + ".fc.b", {out_dim});
    }

    const std::vector<double>& forward(const ParamStore& ps, const Tensor4& x,
                                       Cache& c) const {
        c.conv_out = ops::conv3(ps, conv_w, conv_b, x, 1);
        c.pooled = ops::global_avg_pool(c.conv_out);
        c.out = ops::fc(ps, fc_w, fc_b, c.pooled);
        return c.out;
    }

    Tensor4 backward(const ParamStore& ps, const Tensor4& x, const Cache& c,
                     std::span<const double> d_out, GradBuffer& gb) const {
        auto d_pooled = ops::fc_backward(ps, fc_w, fc_b, c.pooled, d_out, gb);
        Tensor4 d_conv = ops::global_avg_pool_backward(
            d_pooled, c.conv_out.c, c.conv_out.nz, c.conv_out.ny, c.conv_out.nx);
        return ops::conv3_backward(ps, conv_w, conv_b, x, d_conv, 1, gb);
    }
};

// Multi-scale decoder features resized to a common grid and concatenated
// along the channel axis.
inline Tensor4 aggregate_features(const std::vector<Tensor4>& pyramid, int tz,
                                  int ty, int tx) {
    if (pyramid.empty())
        throw std::invalid_argument("aggregate_features: empty pyramid");
    int ctotal = 0;
    for (const auto& f : pyramid) ctotal += f.c;
    Tensor4 out(ctotal, tz, ty, tx);
    int ch = 0;
    for (const auto& f : pyramid) {
        Tensor4 r = (f.nz == tz && f.ny == ty && f.nx == tx)
                        ? f
                        : ops::resize_trilinear(f, tz, ty, tx);
        std::memcpy(out.channel(ch), r.v.data(), r.size() * sizeof(double));
        ch += f.c;
    }
    return out;
}

class Network {
  public:
    Network(const BackboneConfig& cfg, std::uint64_t init_seed,
            double temp_init = 0.07)
        : cfg_(cfg) {
        cfg_.validate();
        int S = cfg_.stages;
        enc_.resize(static_cast<std::size_t>(S));
        enc_[0].build(store_, "enc0", 1, cfg_.stage_channels(0), 1);
        for (int s = 1; s < S; ++s)
            enc_[static_cast<std::size_t>(s)].build(
                store_, "enc" + std::to_string(s), cfg_.stage_channels(s - 1),
                cfg_.stage_channels(s), 2);
        dec_.resize(static_cast<std::size_t>(S - 1));
        for (int s = S - 2; s >= 0; --s)
            dec_[static_cast<std::size_t>(s)].build(
                store_, "dec" + std::to_string(s),
                cfg_.stage_channels(s + 1) + cfg_.stage_channels(s),
                cfg_.stage_channels(s), 1);

        seg_w_ = store_.add("seg_head.w", {2, cfg_.stage_channels(0)});
        seg_b_ = store_.add("seg_head.b", {2});

        int ctotal = 0;
        for (int s = 0; s < S; ++s) ctotal += cfg_.stage_channels(s);
        c_total_ = ctotal;
        det_head_.build(store_, "det_head", ctotal, cfg_.det_channels, 2);
        proj_det_.build(store_, "proj_det", ctotal, cfg_.text_dim, cfg_.text_dim);
        proj_loc_.build(store_, "proj_loc", ctotal, cfg_.text_dim, cfg_.text_dim);
        loc_head_.build(store_, "loc_head", ctotal, cfg_.loc_channels, 5);
        log_t_det_ = store_.add("log_t_det", {1});
        log_t_loc_ = store_.add("log_t_loc", {1});

        init_params(init_seed, temp_init);
    }

    const BackboneConfig& config() const { return cfg_; }
    ParamStore& store() { return store_; }
    const ParamStore& store() const { return store_; }
    int log_t_det_slot() const { return log_t_det_; }
    int log_t_loc_slot() const { return log_t_loc_; }
    int total_channels() const { return c_total_; }

    // spatial size of the aggregation grid: the middle decoder stage
    Shape3 aggregate_shape() const {
        int down = (cfg_.stages - 1 + 1) / 2;  // ceil((S-1)/2)
        return {cfg_.input_shape.x >> down, cfg_.input_shape.y >> down,
                cfg_.input_shape.z >> down};
    }

    struct Forward {
        Tensor4 input;
        std::vector<ConvBlock::Cache> enc;
        std::vector<ConvBlock::Cache> dec;
        std::vector<Tensor4> ups;     // upsampled decoder inputs
        std::vector<Tensor4> cats;    // concatenated skip inputs
        std::vector<Tensor4> pyramid; // S decoder features, coarse -> fine
        Tensor4 aggregated;
        Tensor4 seg_logits;                 // 2 x Z x Y x X
        HeadStack::Cache det_cache, proj_det_cache, proj_loc_cache, loc_cache;
        std::vector<double> det_logits;     // 2
        std::vector<double> i_det, i_loc;   // D
        std::vector<double> loc_logits;     // 5
        HeadFlags flags;
    };

    Forward forward(const Volume& vol, HeadFlags flags) const {
        if (vol.nx != cfg_.input_shape.x || vol.ny != cfg_.input_shape.y ||
            vol.nz != cfg_.input_shape.z)
            throw std::invalid_argument("network: input shape mismatch");
        Forward f;
        f.flags = flags;
        f.input = Tensor4(1, vol.nz, vol.ny, vol.nx);
        std::memcpy(f.input.v.data(), vol.data.data(),
                    vol.data.size() * sizeof(double));
        int S = cfg_.stages;
        f.enc.resize(static_cast<std::size_t>(S));
        f.dec.resize(static_cast<std::size_t>(S - 1));
        f.ups.resize(static_cast<std::size_t>(S - 1));
        f.cats.resize(static_cast<std::size_t>(S - 1));

        for (int s = 0; s < S; ++s)
            enc_[static_cast<std::size_t>(s)].forward(
                store_, s == 0 ? f.input : f.enc[static_cast<std::size_t>(s - 1)].out,
                f.enc[static_cast<std::size_t>(s)]);

        f.pyramid.clear();
        f.pyramid.push_back(f.enc[static_cast<std::size_t>(S - 1)].out);
        const Tensor4* dcur = &f.enc[static_cast<std::size_t>(S - 1)].out;
        for (int s = S - 2; s >= 0; --s) {
            const Tensor4& skip = f.enc[static_cast<std::size_t>(s)].out;
            f.ups[static_cast<std::size_t>(s)] =
                ops::resize_trilinear(*dcur, skip.nz, skip.ny, skip.nx);
            f.cats[static_cast<std::size_t>(s)] =
                concat(f.ups[static_cast<std::size_t>(s)], skip);
            dcur = &dec_[static_cast<std::size_t>(s)].forward(
                store_, f.cats[static_cast<std::size_t>(s)],
                f.dec[static_cast<std::size_t>(s)]);
            f.pyramid.push_back(*dcur);
        }

        if (flags.seg)
            f.seg_logits = ops::conv1(store_, seg_w_, seg_b_, *dcur);

        if (flags.det || flags.text || flags.loc_head) {
            Shape3 agg = aggregate_shape();
            f.aggregated = aggregate_features(f.pyramid, agg.z, agg.y, agg.x);
            if (flags.det)
                f.det_logits = det_head_.forward(store_, f.aggregated, f.det_cache);
            if (flags.text) {
                f.i_det = proj_det_.forward(store_, f.aggregated, f.proj_det_cache);
                f.i_loc = proj_loc_.forward(store_, f.aggregated, f.proj_loc_cache);
            }
            if (flags.loc_head)
                f.loc_logits = loc_head_.forward(store_, f.aggregated, f.loc_cache);
        }
        return f;
    }

    // Gradients flowing back into a forward pass.
    struct OutputGrads {
        std::vector<double> d_seg_logits;  // 2 x V, empty if unused
        std::vector<double> d_det_logits;  // 2
        std::vector<double> d_i_det, d_i_loc;
        std::vector<double> d_loc_logits;  // 5
        double d_log_t_det = 0.0, d_log_t_loc = 0.0;
    };

    void backward(const Forward& f, const OutputGrads& og, GradBuffer& gb) const {
        int S = cfg_.stages;
        gb.g[static_cast<std::size_t>(log_t_det_)][0] += og.d_log_t_det;
        gb.g[static_cast<std::size_t>(log_t_loc_)][0] += og.d_log_t_loc;

        Tensor4 d_agg;
        bool have_agg = f.aggregated.size() > 0;
        if (have_agg)
            d_agg = Tensor4(f.aggregated.c, f.aggregated.nz, f.aggregated.ny,
                            f.aggregated.nx);
        auto add_into = [](Tensor4& dst, const Tensor4& src) {
            for (std::size_t i = 0; i < dst.v.size(); ++i) dst.v[i] += src.v[i];
        };
        if (!og.d_det_logits.empty() && f.flags.det)
            add_into(d_agg, det_head_.backward(store_, f.aggregated, f.det_cache,
                                               og.d_det_logits, gb));
        if (!og.d_i_det.empty() && f.flags.text)
            add_into(d_agg, proj_det_.backward(store_, f.aggregated,
                                               f.proj_det_cache, og.d_i_det, gb));
        if (!og.d_i_loc.empty() && f.flags.text)
            add_into(d_agg, proj_loc_.backward(store_, f.aggregated,
                                               f.proj_loc_cache, og.d_i_loc, gb));
        if (!og.d_loc_logits.empty() && f.flags.loc_head)
            add_into(d_agg, loc_head_.backward(store_, f.aggregated, f.loc_cache,
                                               og.d_loc_logits, gb));

        // split aggregation gradient back onto the pyramid
        std::vector<Tensor4> d_pyr(static_cast<std::size_t>(S));
        if (have_agg) {
            int ch = 0;
            for (int i = 0; i < S; ++i) {
                const Tensor4& p = f.pyramid[static_cast<std::size_t>(i)];
                Tensor4 slice(p.c, d_agg.nz, d_agg.ny, d_agg.nx);
                std::memcpy(slice.v.data(), d_agg.channel(ch),
                            slice.size() * sizeof(double));
                d_pyr[static_cast<std::size_t>(i)] =
                    (p.nz == d_agg.nz && p.ny == d_agg.ny && p.nx == d_agg.nx)
                        ? std::move(slice)
                        : ops::resize_trilinear_adjoint(slice, p.nz, p.ny, p.nx);
                ch += p.c;
            }
        } else {
            for (int i = 0; i < S; ++i) {
                const Tensor4& p = f.pyramid[static_cast<std::size_t>(i)];
                d_pyr[static_cast<std::size_t>(i)] = Tensor4(p.c, p.nz, p.ny, p.nx);
            }
        }

        // seg head feeds the finest decoder feature (pyramid entry S-1)
        Tensor4 d_cur = std::move(d_pyr[static_cast<std::size_t>(S - 1)]);
        if (!og.d_seg_logits.empty() && f.flags.seg) {
            const Tensor4& last = f.pyramid[static_cast<std::size_t>(S - 1)];
            Tensor4 d_seg(2, last.nz, last.ny, last.nx);
            std::memcpy(d_seg.v.data(), og.d_seg_logits.data(),
                        d_seg.size() * sizeof(double));
            add_into(d_cur, ops::conv1_backward(store_, seg_w_, seg_b_, last,
                                                d_seg, gb));
        }

        // decoder chain, fine to coarse
        std::vector<Tensor4> d_skip(static_cast<std::size_t>(S - 1));
        for (int s = 0; s <= S - 2; ++s) {
            Tensor4 d_cat = dec_[static_cast<std::size_t>(s)].backward(
                store_, f.cats[static_cast<std::size_t>(s)],
                f.dec[static_cast<std::size_t>(s)], std::move(d_cur), gb);
            const Tensor4& up = f.ups[static_cast<std::size_t>(s)];
            Tensor4 d_up(up.c, up.nz, up.ny, up.nx);
            std::memcpy(d_up.v.data(), d_cat.v.data(), d_up.size() * sizeof(double));
            Tensor4 d_skip_s(d_cat.c - up.c, d_cat.nz, d_cat.ny, d_cat.nx);
            std::memcpy(d_skip_s.v.data(), d_cat.v.data() + d_up.size(),
                        d_skip_s.size() * sizeof(double));
            d_skip[static_cast<std::size_t>(s)] = std::move(d_skip_s);
            const Tensor4& prev = s == S - 2
                                      ? f.enc[static_cast<std::size_t>(S - 1)].out
                                      : f.dec[static_cast<std::size_t>(s + 1)].out;
            d_cur = ops::resize_trilinear_adjoint(d_up, prev.nz, prev.ny, prev.nx);
            add_into(d_cur, d_pyr[static_cast<std::size_t>(S - 2 - s)]);
        }

        // encoder chain
        for (int s = S - 1; s >= 1; --s) {
            Tensor4 d_in = enc_[static_cast<std::size_t>(s)].backward(
                store_, f.enc[static_cast<std::size_t>(s - 1)].out,
                f.enc[static_cast<std::size_t>(s)], std::move(d_cur), gb);
            d_cur = std::move(d_in);
            if (s - 1 <= S - 2) add_into(d_cur, d_skip[static_cast<std::size_t>(s - 1)]);
        }
        enc_[0].backward(store_, f.input, f.enc[0], std::move(d_cur), gb);
    }

    std::vector<Tensor4> forward_backbone(const Volume& vol) const {
        HeadFlags flags{false, false, false, false};
        return forward(vol, flags).pyramid;
    }

    double log_t_det() const { return store_[log_t_det_].w[0]; }
    double log_t_loc() const { return store_[log_t_loc_].w[0]; }

  private:
    static Tensor4 concat(const Tensor4& a, const Tensor4& b) {
        Tensor4 out(a.c + b.c, a.nz, a.ny, a.nx);
        std::memcpy(out.v.data(), a.v.data(), a.size() * sizeof(double));
        std::memcpy(out.v.data() + a.size(), b.v.data(), b.size() * sizeof(double));
        return out;
    }

    void init_params(std::uint64_t seed, double temp_init) {
        for (std::size_t i = 0; i < store_.params.size(); ++i) {
            auto& p = store_.params[i];
            Rng rng(substream(seed, 0x1217, i));
            if (p.name == "log_t_det" || p.name == "log_t_loc") {
                p.w[0] = std::log(temp_init);
            } else if (p.name.ends_with(".norm.gamma")) {
                std::fill(p.w.begin(), p.w.end(), 1.0);
            } else if (p.name.ends_with(".b") || p.name.ends_with(".norm.beta")) {
                std::fill(p.w.begin(), p.w.end(), 0.0);
            } else if (p.name.ends_with(".conv.w") && p.shape.size() == 5) {
                int fan_in = p.shape[1] * 27;
                double std = std::sqrt(2.0 / fan_in);
                for (auto& w : p.w) w = std * rng.normal();
            } else {  // fc / 1x1 weights
                int fan_in = p.shape[1];
                double std = 1.0 / std::sqrt(static_cast<double>(fan_in));
                for (auto& w : p.w) w = std * rng.normal();
            }
        }
    }

    BackboneConfig cfg_;
    ParamStore store_;
    std::vector<ConvBlock> enc_, dec_;
    int seg_w_ = -1, seg_b_ = -1;
    HeadStack det_head_, proj_det_, proj_loc_, loc_head_;
    int log_t_det_ = -1, log_t_loc_ = -1;
    int c_total_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoint container: magic, little-endian u32 JSON header length, JSON
// header {"params":[{name,shape,offset,size}...],"meta":{...}}, then the
// concatenated float32 parameter data.
// ---------------------------------------------------------------------------

inline constexpr char kCkptMagic[8] = {'W', 'S', 'S', 'L', 'C', 'K', 'P', '1'};

inline void save_checkpoint(const fs::path& path, const ParamStore& store,
                            const json& meta) {
    json header;
    header["meta"] = meta;
    json plist = json::array();
    std::size_t offset = 0;
    for (const auto& p : store.params) {
        plist.push_back({{"name", p.name},
                         {"shape", p.shape},
                         {"offset", offset},
                         {"size", p.w.size()}});
        offset += p.w.size();
    }
    header["params"] = plist;
    std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(kCkptMagic, 8);
    std::uint32_t len = static_cast<std::uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&len), 4);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& p : store.params) {
        std::vector<float> buf(p.w.size());
        for (std::size_t i = 0; i < buf.size(); ++i)
            buf[i] = static_cast<float>(p.w[i]);
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!out) throw IoError("short write on checkpoint " + path.string());
}

inline json load_checkpoint(const fs::path& path, ParamStore& store) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read checkpoint " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kCkptMagic, 8) != 0)
        throw IoError("not a checkpoint file: " + path.string());
    std::uint32_t len = 0;
    in.read(reinterpret_cast<char*>(&len), 4);
    std::string hs(len, '\0');
    in.read(hs.data(), len);
    json header = json::parse(hs);

    std::size_t idx = 0;
    for (const auto& pj : header.at("params")) {
        if (idx >= store.params.size())
            throw ConfigError("checkpoint has more params than model");
        auto& p = store.params[idx++];
        if (pj.at("name").get<std::string>() != p.name ||
            pj.at("shape").get<std::vector<int>>() != p.shape)
            throw ConfigError("checkpoint param mismatch at " + p.name);
        std::vector<float> buf(pj.at("size").get<std::size_t>());
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (static_cast<std::size_t>(in.gcount()) != buf.size() * sizeof(float))
            throw IoError("truncated checkpoint " + path.string());
        for (std::size_t i = 0; i < buf.size(); ++i) p.w[i] = buf[i];
    }
    if (idx != store.params.size())
        throw ConfigError("checkpoint is missing parameters");
    return header.at("meta");
}

}  // namespace wssl::model

#endif
