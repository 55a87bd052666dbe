#pragma once

// Differentiable operations on Tensor plus the non-differentiable top-k
// selection. All forward passes are plain deterministic loops; matrix products
// go through the gemm kernels below. Every op wires its own reverse-mode rule.

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "pgpseg/tensor.hpp"

namespace pgpseg {

namespace detail {

// C (+)= A[m x k] * B[k x n], row-major. The p-middle / j-inner ordering keeps
// the inner loop contiguous so the compiler vectorizes it.
inline void gemm_nn(int m, int n, int k, const double* A, const double* B, double* C,
                    bool accumulate) {
    for (int i = 0; i < m; ++i) {
        double* ci = C + static_cast<std::int64_t>(i) * n;
        if (!accumulate)
            for (int j = 0; j < n; ++j) ci[j] = 0.0;
        const double* ai = A + static_cast<std::int64_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double a = ai[p];
            const double* bp = B + static_cast<std::int64_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += a * bp[j];
        }
    }
}

// C (+)= A[m x k] * B^T where B is [n x k].
inline void gemm_nt(int m, int n, int k, const double* A, const double* B, double* C,
                    bool accumulate) {
    for (int i = 0; i < m; ++i) {
        const double* ai = A + static_cast<std::int64_t>(i) * k;
        double* ci = C + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* bj = B + static_cast<std::int64_t>(j) * k;
            double s = 0.0;
            for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
            ci[j] = accumulate ? ci[j] + s : s;
        }
    }
}

// C (+)= A^T * B where A is [m x k], B is [m x n], C is [k x n].
inline void gemm_tn(int k, int n, int m, const double* A, const double* B, double* C,
                    bool accumulate) {
    if (!accumulate) std::fill(C, C + static_cast<std::int64_t>(k) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        const double* ai = A + static_cast<std::int64_t>(i) * k;
        const double* bi = B + static_cast<std::int64_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double a = ai[p];
            double* cp = C + static_cast<std::int64_t>(p) * n;
            for (int j = 0; j < n; ++j) cp[j] += a * bi[j];
        }
    }
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    detail::attach_node(out, {a, b}, [](const Tensor& o) {
        const auto& g = o.grad();
        auto& ps = o.node()->parents;
        if (ps[0].requires_grad()) ps[0].accumulate_grad(g);
        if (ps[1].requires_grad()) ps[1].accumulate_grad(g);
    });
    return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    detail::attach_node(out, {a, b}, [](const Tensor& o) {
        const auto& g = o.grad();
        auto& ps = o.node()->parents;
        if (ps[0].requires_grad()) ps[0].accumulate_grad(g);
        if (ps[1].requires_grad()) {
            std::vector<double> ng(g.size());
            for (size_t i = 0; i < g.size(); ++i) ng[i] = -g[i];
            ps[1].accumulate_grad(ng);
        }
    });
    return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    detail::attach_node(out, {a, b}, [](const Tensor& o) {
        const auto& g = o.grad();
        auto& ps = o.node()->parents;
        if (ps[0].requires_grad()) {
            std::vector<double> ga(g.size());
            const auto& bv2 = ps[1].data();
            for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * bv2[i];
            ps[0].accumulate_grad(ga);
        }
        if (ps[1].requires_grad()) {
            std::vector<double> gb(g.size());
            const auto& av2 = ps[0].data();
            for (size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * av2[i];
            ps[1].accumulate_grad(gb);
        }
    });
    return out;
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::check_same_shape(a, b, "div");
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.data();
    const auto& bv = b.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] / bv[i];
    detail::attach_node(out, {a, b}, [](const Tensor& o) {
        const auto& g = o.grad();
        auto& ps = o.node()->parents;
        const auto& av2 = ps[0].data();
        const auto& bv2 = ps[1].data();
        if (ps[0].requires_grad()) {
            std::vector<double> ga(g.size());
            for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] / bv2[i];
            ps[0].accumulate_grad(ga);
        }
        if (ps[1].requires_grad()) {
            std::vector<double> gb(g.size());
            for (size_t i = 0; i < g.size(); ++i) gb[i] = -g[i] * av2[i] / (bv2[i] * bv2[i]);
            ps[1].accumulate_grad(gb);
        }
    });
    return out;
}

inline Tensor scale(const Tensor& a, double s) {
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * s;
    detail::attach_node(out, {a}, [s](const Tensor& o) {
        auto& ps = o.node()->parents;
        if (!ps[0].requires_grad()) return;
        const auto& g = o.grad();
        std::vector<double> ga(g.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * s;
        ps[0].accumulate_grad(ga);
    });
    return out;
}

/// Multiplies a tensor by a learnable scalar (shape {1}) with gradients to both.
inline Tensor scale_by(const Tensor& a, const Tensor& s) {
    if (s.numel() != 1)
        throw ShapeError("scale_by: scalar required, got " + shape_str(s.shape()));
    Tensor out = Tensor::zeros(a.shape());
    const double sv = s.at(0);
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * sv;
    detail::attach_node(out, {a, s}, [](const Tensor& o) {
        auto& ps = o.node()->parents;
        const auto& g = o.grad();
        if (ps[0].requires_grad()) {
            const double sv2 = ps[1].at(0);
            std::vector<double> ga(g.size());
            for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * sv2;
            ps[0].accumulate_grad(ga);
        }
        if (ps[1].requires_grad()) {
            const auto& av2 = ps[0].data();
            double gs = 0.0;
            for (size_t i = 0; i < g.size(); ++i) gs += g[i] * av2[i];
            ps[1].accumulate_grad({gs});
        }
    });
    return out;
}

inline Tensor add_const(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + c;
    detail::attach_node(out, {a}, [](const Tensor& o) {
        auto& ps = o.node()->parents;
        if (ps[0].requires_grad()) ps[0].accumulate_grad(o.grad());
    });
    return out;
}

inline Tensor sigmoid(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = 1.0 / (1.0 + std::exp(-av[i]));
    std::vector<double> y = ov;
    detail::attach_node(out, {a}, [y = std::move(y)](const Tensor& o) {
        auto& ps = o.node()->parents;
        if (!ps[0].requires_grad()) return;
        const auto& g = o.grad();
        std::vector<double> ga(g.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * y[i] * (1.0 - y[i]);
        ps[0].accumulate_grad(ga);
    });
    return out;
}

inline Tensor relu(const Tensor& a) {
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] > 0.0 ? av[i] : 0.0;
    detail::attach_node(out, {a}, [](const Tensor& o) {
        auto& ps = o.node()->parents;
        if (!ps[0].requires_grad()) return;
        const auto& g = o.grad();
        const auto& x = ps[0].data();
        std::vector<double> ga(g.size());
        for (size_t i = 0; i < g.size(); ++i) ga[i] = x[i] > 0.0 ? g[i] : 0.0;
        ps[0].accumulate_grad(ga);
    });
    return out;
}

inline Tensor gelu(const Tensor& a) {
    // Exact erf form: 0.5 x (1 + erf(x / sqrt(2))).
    Tensor out = Tensor::zeros(a.shape());
    const auto& av = a.data();
    auto& ov = out.data();
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    for (size_t i = 0; i < ov.size(); ++i) ov[i] = 0.5 * av[i] * (1.0 + std::erf(av[i] * inv_sqrt2));
    detail::attach_node(out, {a}, [](const Tensor& o) {
        auto& ps = o.node()->parents;
        if (!ps[0].requires_grad()) return;
        const auto& g = o.grad();
        const auto& x = ps[0].data();
        constexpr double is2 = 0.70710678118654752440;
        constexpr double inv_sqrt2pi = 0.39894228040143267794;
        std::vector<double> ga(g.size());
        for (size_t i = 0; i < g.size(); ++i) {
            const double cdf = 0.5 * (1.0 + std::erf(x[i] * is2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * x[i] * x[i]);
            ga[i] = g[i] * (cdf + x[i] * pdf);
        }
        ps[0].accumulate_grad(ga);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const int m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    Tensor out = Tensor::zeros({m, n});
    detail::gemm_nn(m, n, k, a.data().data(), b.data().data(), out.data().data(), false);
    detail::attach_node(out, {a, b}, [m, n, k](const Tensor& o) {
        auto& ps = o.node()->parents;
        const double* g = o.grad().data();
        if (ps[0].requires_grad()) {
            std::vector<double> ga(static_cast<size_t>(m) * k, 0.0);
            detail::gemm_nt(m, k, n, g, ps[1].data().data(), ga.data(), false);
            ps[0].accumulate_grad(ga);
        }
        if (ps[1].requires_grad()) {
            std::vector<double> gb(static_cast<size_t>(k) * n, 0.0);
            detail::gemm_tn(k, n, m, ps[0].data().data(), g, gb.data(), false);
            ps[1].accumulate_grad(gb);
        }
    });
    return out;
}

inline Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: rank-2 required, got " + shape_str(a.shape()));
    const int r = a.shape()[0], c = a.shape()[1];
    Tensor out = Tensor::zeros({c, r});
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(j, i) = a.at(i, j);
    detail::attach_node(out, {a}, [r, c](const Tensor& o) {
        auto& ps = o.node()->parents;
        if (!ps[0].requires_grad()) return;
        std::vector<double> ga(static_cast<size_t>(r) * c);
        const auto& g = o.grad();
        for (int j = 0; j < c; ++j)
            for (int i = 0; i < r; ++i) ga[static_cast<size_t>(i) * c + j] = g[static_cast<size_t>(j) * r + i];
        ps[0].accumulate_grad(ga);
    });
    return out;
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape) +
                         " changes element count");
    Tensor out = Tensor::from(std::move(shape), a.data());
    detail::attach_node(out, {a}, [](const Tensor& o) {
        auto& ps = o.node()->parents;
        if (ps[0].requires_grad()) ps[0].accumulate_grad(o.grad());
    });
    return out;
}

/// {H,W,C} -> {C,H,W}. Used to emit class-major logit maps.
inline Tensor hwc_to_chw(const Tensor& a) {
    if (a.rank() != 3) throw ShapeError("hwc_to_chw: rank-3 required, got " + shape_str(a.shape()));
    const int H = a.shape()[0], W = a.shape()[1], C = a.shape()[2];
    Tensor out = Tensor::zeros({C, H, W});
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            for (int c = 0; c < C; ++c) out.at(c, h, w) = a.at(h, w, c);
    detail::attach_node(out, {a}, [H, W, C](const Tensor& o) {
        auto& ps = o.node()->parents;
        if (!ps[0].requires_grad()) return;
        const auto& g = o.grad();
        std::vector<double> ga(static_cast<size_t>(H) * W * C);
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h)
                for (int w = 0; w < W; ++w)
                    ga[(static_cast<size_t>(h) * W + w) * C + c] =
                        g[(static_cast<size_t>(c) * H + h) * W + w];
        ps[0].accumulate_grad(ga);
    });
    return out;
}

/// Adds a length-C row vector to every row of a [R x C] matrix.
inline Tensor add_rowvec(const Tensor& x, const Tensor& b) {
    if (x.rank() != 2 || b.rank() != 1 || x.shape()[1] != b.shape()[0])
        throw ShapeError("add_rowvec: shapes " + shape_str(x.shape()) + " vs " + shape_str(b.shape()));
    const int R = x.shape()[0], C = x.shape()[1];
    Tensor out = Tensor::zeros({R, C});
    for (int i = 0; i < R; ++i)
        for (int j = 0; j < C; ++j) out.at(i, j) = x.at(i, j) + b.at(j);
    detail::attach_node(out, {x, b}, [R, C](const Tensor& o) {
        auto& ps = o.node()->parents;
        const auto& g = o.grad();
        if (ps[0].requires_grad()) ps[0].accumulate_grad(g);
        if (ps[1].requires_grad()) {
            std::vector<double> gb(C, 0.0);
            for (int i = 0; i < R; ++i)
                for (int j = 0; j < C; ++j) gb[j] += g[static_cast<size_t>(i) * C + j];
            ps[1].accumulate_grad(gb);
        }
    });
    return out;
}

/// x [R x Cin] * w [Cin x Cout] + b [Cout].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    return add_rowvec(matmul(x, w), b);
}

// ---------------------------------------------------------------------------
// Softmax and normalization
// ---------------------------------------------------------------------------

/// Softmax along `axis` with max-subtraction. Slices along the axis sum to 1.
inline Tensor softmax(const Tensor& x, int axis) {
    if (axis < 0 || axis >= x.rank())
        throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
    for (double v : x.data())
        if (std::isnan(v)) throw NumericError("softmax: NaN input");

    const auto& s = x.shape();
    const int L = s[axis];
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (int i = axis + 1; i < x.rank(); ++i) inner *= s[i];

    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
            const std::int64_t base = o * L * inner + i;
            double m = -std::numeric_limits<double>::infinity();
            for (int l = 0; l < L; ++l) m = std::max(m, xv[base + l * inner]);
            double z = 0.0;
            for (int l = 0; l < L; ++l) {
                const double e = std::exp(xv[base + l * inner] - m);
                ov[base + l * inner] = e;
                z += e;
            }
            for (int l = 0; l < L; ++l) ov[base + l * inner] /= z;
        }
    }
    std::vector<double> y = ov;
    detail::attach_node(out, {x}, [y = std::move(y), L, outer, inner](const Tensor& o) {
        auto& ps = o.node()->parents;
        if (!ps[0].requires_grad()) return;
        const auto& g = o.grad();
        std::vector<double> ga(g.size());
        for (std::int64_t ot = 0; ot < outer; ++ot) {
            for (std::int64_t i = 0; i < inner; ++i) {
                const std::int64_t base = ot * L * inner + i;
                double dot = 0.0;
                for (int l = 0; l < L; ++l) dot += g[base + l * inner] * y[base + l * inner];
                for (int l = 0; l < L; ++l)
                    ga[base + l * inner] = y[base + l * inner] * (g[base + l * inner] - dot);
            }
        }
        ps[0].accumulate_grad(ga);
    });
    return out;
}

/// Divides every row of a [R x C] matrix by its sum.
inline Tensor normalize_rows(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError("normalize_rows: rank-2 required, got " + shape_str(x.shape()));
    const int R = x.shape()[0], C = x.shape()[1];
    Tensor out = Tensor::zeros({R, C});
    std::vector<double> sums(R);
    for (int i = 0; i < R; ++i) {
        double s = 0.0;
        for (int j = 0; j < C; ++j) s += x.at(i, j);
        sums[i] = s;
        for (int j = 0; j < C; ++j) out.at(i, j) = x.at(i, j) / s;
    }
    std::vector<double> y = out.data();
    detail::attach_node(out, {x},
                        [y = std::move(y), sums = std::move(sums), R, C](const Tensor& o) {
                            auto& ps = o.node()->parents;
                            if (!ps[0].requires_grad()) return;
                            const auto& g = o.grad();
                            std::vector<double> ga(g.size());
                            for (int i = 0; i < R; ++i) {
                                double dot = 0.0;
                                for (int j = 0; j < C; ++j)
                                    dot += g[static_cast<size_t>(i) * C + j] * y[static_cast<size_t>(i) * C + j];
                                for (int j = 0; j < C; ++j)
                                    ga[static_cast<size_t>(i) * C + j] =
                                        (g[static_cast<size_t>(i) * C + j] - dot) / sums[i];
                            }
                            ps[0].accumulate_grad(ga);
                        });
    return out;
}

/// Layer normalization over the last axis with learnable scale and shift.
inline Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
    const int C = x.shape().back();
    if (gamma.rank() != 1 || gamma.shape()[0] != C || beta.rank() != 1 || beta.shape()[0] != C)
        throw ShapeError("layer_norm: params must be (" + std::to_string(C) + "), got " +
                         shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    const std::int64_t rows = x.numel() / C;
    Tensor out = Tensor::zeros(x.shape());
    const auto& xv = x.data();
    auto& ov = out.data();
    std::vector<double> xhat(xv.size());
    std::vector<double> inv_std(rows);
    for (std::int64_t r = 0; r < rows; ++r) {
        const std::int64_t base = r * C;
        double mean = 0.0;
        for (int c = 0; c < C; ++c) mean += xv[base + c];
        mean /= C;
        double var = 0.0;
        for (int c = 0; c < C; ++c) {
            const double d = xv[base + c] - mean;
            var += d * d;
        }
        var /= C;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (int c = 0; c < C; ++c) {
            xhat[base + c] = (xv[base + c] - mean) * is;
            ov[base + c] = gamma.at(c) * xhat[base + c] + beta.at(c);
        }
    }
    detail::attach_node(
        out, {x, gamma, beta},
        [xhat = std::move(xhat), inv_std = std::move(inv_std), rows, C](const Tensor& o) {
            auto& ps = o.node()->parents;
            const auto& g = o.grad();
            const auto& gv = ps[1].data();
            if (ps[0].requires_grad()) {
                std::vector<double> ga(g.size());
                for (std::int64_t r = 0; r < rows; ++r) {
                    const std::int64_t base = r * C;
                    double mean_gg = 0.0, mean_ggx = 0.0;
                    for (int c = 0; c < C; ++c) {
                        const double gg = g[base + c] * gv[c];
                        mean_gg += gg;
                        mean_ggx += gg * xhat[base + c];
                    }
                    mean_gg /= C;
                    mean_ggx /= C;
                    for (int c = 0; c < C; ++c) {
                        const double gg = g[base + c] * gv[c];
                        ga[base + c] = inv_std[r] * (gg - mean_gg - xhat[base + c] * mean_ggx);
                    }
                }
                ps[0].accumulate_grad(ga);
            }
            if (ps[1].requires_grad()) {
                std::vector<double> ggamma(C, 0.0);
                for (std::int64_t r = 0; r < rows; ++r)
                    for (int c = 0; c < C; ++c) ggamma[c] += g[r * C + c] * xhat[r * C + c];
                ps[1].accumulate_grad(ggamma);
            }
            if (ps[2].requires_grad()) {
                std::vector<double> gbeta(C, 0.0);
                for (std::int64_t r = 0; r < rows; ++r)
                    for (int c = 0; c < C; ++c) gbeta[c] += g[r * C + c];
                ps[2].accumulate_grad(gbeta);
            }
        });
    return out;
}

// ---------------------------------------------------------------------------
// Rank-3 spatial ops
// ---------------------------------------------------------------------------

enum class Axis3 { height, width, channel };

/// Mean over one axis of a {H,W,C} tensor, keeping a singleton dimension.
inline Tensor avg_pool_axis(const Tensor& x, Axis3 axis) {
    if (x.rank() != 3) throw ShapeError("avg_pool_axis: rank-3 required, got " + shape_str(x.shape()));
    const int H = x.shape()[0], W = x.shape()[1], C = x.shape()[2];
    int ax = axis == Axis3::height ? 0 : axis == Axis3::width ? 1 : 2;
    Shape os = x.shape();
    os[ax] = 1;
    Tensor out = Tensor::zeros(os);
    const int extent = x.shape()[ax];
    const double inv = 1.0 / extent;
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            for (int c = 0; c < C; ++c) {
                const int oh = ax == 0 ? 0 : h, ow = ax == 1 ? 0 : w, oc = ax == 2 ? 0 : c;
                out.at(oh, ow, oc) += x.at(h, w, c) * inv;
            }
    detail::attach_node(out, {x}, [H, W, C, ax, inv](const Tensor& o) {
        auto& ps = o.node()->parents;
        if (!ps[0].requires_grad()) return;
        const auto& g = o.grad();
        std::vector<double> ga(static_cast<size_t>(H) * W * C);
        const int gW = ax == 1 ? 1 : W, gC = ax == 2 ? 1 : C;
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
                for (int c = 0; c < C; ++c) {
                    const int oh = ax == 0 ? 0 : h, ow = ax == 1 ? 0 : w, oc = ax == 2 ? 0 : c;
                    ga[(static_cast<size_t>(h) * W + w) * C + c] =
                        g[(static_cast<size_t>(oh) * gW + ow) * gC + oc] * inv;
                }
        ps[0].accumulate_grad(ga);
    });
    return out;
}

/// Expands singleton spatial dims of a rank-3 tensor to {H,W,C}.
inline Tensor expand3(const Tensor& x, int H, int W) {
    if (x.rank() != 3) throw ShapeError("expand3: rank-3 required, got " + shape_str(x.shape()));
    const int xh = x.shape()[0], xw = x.shape()[1], C = x.shape()[2];
    if ((xh != H && xh != 1) || (xw != W && xw != 1))
        throw ShapeError("expand3: cannot expand " + shape_str(x.shape()) + " to (" +
                         std::to_string(H) + "," + std::to_string(W) + "," + std::to_string(C) + ")");
    Tensor out = Tensor::zeros({H, W, C});
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            for (int c = 0; c < C; ++c) out.at(h, w, c) = x.at(xh == 1 ? 0 : h, xw == 1 ? 0 : w, c);
    detail::attach_node(out, {x}, [H, W, C, xh, xw](const Tensor& o) {
        auto& ps = o.node()->parents;
        if (!ps[0].requires_grad()) return;
        const auto& g = o.grad();
        std::vector<double> ga(static_cast<size_t>(xh) * xw * C, 0.0);
        for (int h = 0; h < H; ++h)
            for (int w = 0; w < W; ++w)
                for (int c = 0; c < C; ++c)
                    ga[(static_cast<size_t>(xh == 1 ? 0 : h) * xw + (xw == 1 ? 0 : w)) * C + c] +=
                        g[(static_cast<size_t>(h) * W + w) * C + c];
        ps[0].accumulate_grad(ga);
    });
    return out;
}

enum class StripDir {
    along_width,   // 1 x k kernel
    along_height,  // k x 1 kernel
    pointwise      // 1 x 1 kernel
};

/// 1-D convolution along one spatial axis of a {H,W,C} tensor with bias.
/// Zero "same" padding preserves the spatial extents. Weights are {k,Cin,Cout}.
inline Tensor strip_conv(const Tensor& x, const Tensor& w, const Tensor& b, StripDir dir) {
    if (x.rank() != 3 || w.rank() != 3)
        throw ShapeError("strip_conv: need rank-3 input/weights, got " + shape_str(x.shape()) +
                         " and " + shape_str(w.shape()));
    const int H = x.shape()[0], W = x.shape()[1], Cin = x.shape()[2];
    const int k = w.shape()[0], wc = w.shape()[1], Cout = w.shape()[2];
    if (k % 2 == 0) throw ConfigError("strip_conv: kernel size must be odd, got " + std::to_string(k));
    if (dir == StripDir::pointwise && k != 1)
        throw ConfigError("strip_conv: pointwise orientation requires k=1, got " + std::to_string(k));
    if (wc != Cin || b.rank() != 1 || b.shape()[0] != Cout)
        throw ShapeError("strip_conv: weight " + shape_str(w.shape()) + " / bias " +
                         shape_str(b.shape()) + " mismatch input " + shape_str(x.shape()));

    // im2col: rows are spatial positions, columns are (tap, channel) pairs.
    const int HW = H * W;
    const int off = k / 2;
    const bool along_w = dir != StripDir::along_height;
    std::vector<double> col(static_cast<size_t>(HW) * k * Cin, 0.0);
    for (int h = 0; h < H; ++h)
        for (int ww = 0; ww < W; ++ww) {
            double* row = col.data() + (static_cast<size_t>(h) * W + ww) * k * Cin;
            for (int t = 0; t < k; ++t) {
                const int sh = along_w ? h : h + t - off;
                const int sw = along_w ? ww + t - off : ww;
                if (sh < 0 || sh >= H || sw < 0 || sw >= W) continue;
                const double* src = &x.data()[(static_cast<size_t>(sh) * W + sw) * Cin];
                for (int c = 0; c < Cin; ++c) row[t * Cin + c] = src[c];
            }
        }

    Tensor out = Tensor::zeros({H, W, Cout});
    detail::gemm_nn(HW, Cout, k * Cin, col.data(), w.data().data(), out.data().data(), false);
    for (int p = 0; p < HW; ++p)
        for (int c = 0; c < Cout; ++c) out.data()[static_cast<size_t>(p) * Cout + c] += b.at(c);

    detail::attach_node(
        out, {x, w, b},
        [col = std::move(col), H, W, Cin, Cout, k, off, along_w](const Tensor& o) {
            auto& ps = o.node()->parents;
            const auto& g = o.grad();
            const int HW2 = H * W;
            if (ps[1].requires_grad()) {
                std::vector<double> gw(static_cast<size_t>(k) * Cin * Cout, 0.0);
                detail::gemm_tn(k * Cin, Cout, HW2, col.data(), g.data(), gw.data(), false);
                ps[1].accumulate_grad(gw);
            }
            if (ps[2].requires_grad()) {
                std::vector<double> gb(Cout, 0.0);
                for (int p = 0; p < HW2; ++p)
                    for (int c = 0; c < Cout; ++c) gb[c] += g[static_cast<size_t>(p) * Cout + c];
                ps[2].accumulate_grad(gb);
            }
            if (ps[0].requires_grad()) {
                std::vector<double> gcol(static_cast<size_t>(HW2) * k * Cin, 0.0);
                detail::gemm_nt(HW2, k * Cin, Cout, g.data(), ps[1].data().data(), gcol.data(), false);
                std::vector<double> gx(static_cast<size_t>(HW2) * Cin, 0.0);
                for (int h = 0; h < H; ++h)
                    for (int ww = 0; ww < W; ++ww) {
                        const double* row = gcol.data() + (static_cast<size_t>(h) * W + ww) * k * Cin;
                        for (int t = 0; t < k; ++t) {
                            const int sh = along_w ? h : h + t - off;
                            const int sw = along_w ? ww + t - off : ww;
                            if (sh < 0 || sh >= H || sw < 0 || sw >= W) continue;
                            double* dst = gx.data() + (static_cast<size_t>(sh) * W + sw) * Cin;
                            for (int c = 0; c < Cin; ++c) dst[c] += row[t * Cin + c];
                        }
                    }
                ps[0].accumulate_grad(gx);
            }
        });
    return out;
}

/// Convenience: 1x1 convolution over a rank-3 feature map, weights {Cin,Cout}.
inline Tensor pointwise_conv(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 3 || w.rank() != 2 || x.shape()[2] != w.shape()[0])
        throw ShapeError("pointwise_conv: shapes " + shape_str(x.shape()) + " vs " +
                         shape_str(w.shape()));
    const int H = x.shape()[0], W = x.shape()[1];
    Tensor flat = reshape(x, {H * W, x.shape()[2]});
    return reshape(linear(flat, w, b), {H, W, w.shape()[1]});
}

/// Non-overlapping patch embedding of a single-channel image {H,W,1}.
/// Weights are {p*p, C}; output is {H/p, W/p, C}.
inline Tensor patch_embed(const Tensor& img, const Tensor& w, const Tensor& b, int patch) {
    if (img.rank() != 3 || img.shape()[2] != 1)
        throw ShapeError("patch_embed: expected {H,W,1}, got " + shape_str(img.shape()));
    const int H = img.shape()[0], W = img.shape()[1];
    if (H % patch != 0 || W % patch != 0)
        throw ConfigError("patch_embed: image " + shape_str(img.shape()) +
                          " not divisible by patch " + std::to_string(patch));
    const int Ho = H / patch, Wo = W / patch, C = w.shape()[1];
    if (w.rank() != 2 || w.shape()[0] != patch * patch)
        throw ShapeError("patch_embed: weight " + shape_str(w.shape()) + " wants (" +
                         std::to_string(patch * patch) + ",C)");

    Tensor patches = Tensor::zeros({Ho * Wo, patch * patch});
    for (int i = 0; i < Ho; ++i)
        for (int j = 0; j < Wo; ++j)
            for (int di = 0; di < patch; ++di)
                for (int dj = 0; dj < patch; ++dj)
                    patches.at(i * Wo + j, di * patch + dj) = img.at(i * patch + di, j * patch + dj, 0);
    // Gradient to the image is not needed (images are data), but keep it exact
    // by attaching the node through `patches` when img requires grad.
    detail::attach_node(patches, {img}, [Ho, Wo, patch, W](const Tensor& o) {
        auto& ps = o.node()->parents;
        if (!ps[0].requires_grad()) return;
        const auto& g = o.grad();
        std::vector<double> gi(ps[0].numel(), 0.0);
        for (int i = 0; i < Ho; ++i)
            for (int j = 0; j < Wo; ++j)
                for (int di = 0; di < patch; ++di)
                    for (int dj = 0; dj < patch; ++dj)
                        gi[static_cast<size_t>(i * patch + di) * W + (j * patch + dj)] +=
                            g[(static_cast<size_t>(i) * Wo + j) * patch * patch + di * patch + dj];
        ps[0].accumulate_grad(gi);
    });
    return reshape(linear(patches, w, b), {Ho, Wo, C});
}

/// 2x2-stride-2 transposed convolution: {H,W,Cin} -> {2H,2W,Cout}.
/// Weights are {2,2,Cin,Cout} (rank-4), bias {Cout}.
inline Tensor conv_transpose_2x(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 3 || w.rank() != 4 || w.shape()[0] != 2 || w.shape()[1] != 2 ||
        w.shape()[2] != x.shape()[2])
        throw ShapeError("conv_transpose_2x: shapes " + shape_str(x.shape()) + " vs " +
                         shape_str(w.shape()));
    const int H = x.shape()[0], W = x.shape()[1], Cin = x.shape()[2], Cout = w.shape()[3];
    const int HW = H * W;
    Tensor out = Tensor::zeros({2 * H, 2 * W, Cout});
    std::vector<double> block(static_cast<size_t>(HW) * Cout);
    for (int dh = 0; dh < 2; ++dh)
        for (int dw = 0; dw < 2; ++dw) {
            const double* wk = w.data().data() + (static_cast<size_t>(dh) * 2 + dw) * Cin * Cout;
            detail::gemm_nn(HW, Cout, Cin, x.data().data(), wk, block.data(), false);
            for (int h = 0; h < H; ++h)
                for (int ww = 0; ww < W; ++ww) {
                    double* dst = &out.data()[((static_cast<size_t>(2 * h + dh)) * 2 * W + (2 * ww + dw)) * Cout];
                    const double* src = &block[(static_cast<size_t>(h) * W + ww) * Cout];
                    for (int c = 0; c < Cout; ++c) dst[c] = src[c] + b.at(c);
                }
        }
    detail::attach_node(out, {x, w, b}, [H, W, Cin, Cout](const Tensor& o) {
        auto& ps = o.node()->parents;
        const auto& g = o.grad();
        const int HW2 = H * W;
        std::vector<double> gblock(static_cast<size_t>(HW2) * Cout);
        std::vector<double> gx(ps[0].requires_grad() ? static_cast<size_t>(HW2) * Cin : 0, 0.0);
        std::vector<double> gw(ps[1].requires_grad() ? static_cast<size_t>(4) * Cin * Cout : 0, 0.0);
        std::vector<double> gb(Cout, 0.0);
        for (int dh = 0; dh < 2; ++dh)
            for (int dw = 0; dw < 2; ++dw) {
                for (int h = 0; h < H; ++h)
                    for (int ww = 0; ww < W; ++ww) {
                        const double* src =
                            &g[((static_cast<size_t>(2 * h + dh)) * 2 * W + (2 * ww + dw)) * Cout];
                        double* dst = &gblock[(static_cast<size_t>(h) * W + ww) * Cout];
                        for (int c = 0; c < Cout; ++c) dst[c] = src[c];
                    }
                if (ps[0].requires_grad()) {
                    const double* wk =
                        ps[1].data().data() + (static_cast<size_t>(dh) * 2 + dw) * Cin * Cout;
                    detail::gemm_nt(HW2, Cin, Cout, gblock.data(), wk, gx.data(), true);
                }
                if (ps[1].requires_grad())
                    detail::gemm_tn(Cin, Cout, HW2, ps[0].data().data(), gblock.data(),
                                    gw.data() + (static_cast<size_t>(dh) * 2 + dw) * Cin * Cout, true);
                for (size_t p = 0; p < static_cast<size_t>(HW2); ++p)
                    for (int c = 0; c < Cout; ++c) gb[c] += gblock[p * Cout + c];
            }
        if (ps[0].requires_grad()) ps[0].accumulate_grad(gx);
        if (ps[1].requires_grad()) ps[1].accumulate_grad(gw);
        if (ps[2].requires_grad()) ps[2].accumulate_grad(gb);
    });
    return out;
}

/// Bilinear resize of a {H,W,C} tensor to {H2,W2,C} (half-pixel centers).
inline Tensor bilinear_resize(const Tensor& x, int H2, int W2) {
    if (x.rank() != 3) throw ShapeError("bilinear_resize: rank-3 required, got " + shape_str(x.shape()));
    const int H = x.shape()[0], W = x.shape()[1], C = x.shape()[2];
    Tensor out = Tensor::zeros({H2, W2, C});
    const double sh = static_cast<double>(H) / H2, sw = static_cast<double>(W) / W2;
    // Precompute the four-tap interpolation per output pixel.
    struct Tap {
        int y0, y1, x0, x1;
        double wy, wx;
    };
    std::vector<Tap> taps(static_cast<size_t>(H2) * W2);
    for (int i = 0; i < H2; ++i)
        for (int j = 0; j < W2; ++j) {
            double fy = (i + 0.5) * sh - 0.5;
            double fx = (j + 0.5) * sw - 0.5;
            fy = std::min(std::max(fy, 0.0), static_cast<double>(H - 1));
            fx = std::min(std::max(fx, 0.0), static_cast<double>(W - 1));
            Tap t;
            t.y0 = static_cast<int>(fy);
            t.x0 = static_cast<int>(fx);
            t.y1 = std::min(t.y0 + 1, H - 1);
            t.x1 = std::min(t.x0 + 1, W - 1);
            t.wy = fy - t.y0;
            t.wx = fx - t.x0;
            taps[static_cast<size_t>(i) * W2 + j] = t;
        }
    for (int i = 0; i < H2; ++i)
        for (int j = 0; j < W2; ++j) {
            const Tap& t = taps[static_cast<size_t>(i) * W2 + j];
            for (int c = 0; c < C; ++c) {
                const double v00 = x.at(t.y0, t.x0, c), v01 = x.at(t.y0, t.x1, c);
                const double v10 = x.at(t.y1, t.x0, c), v11 = x.at(t.y1, t.x1, c);
                out.at(i, j, c) = (1 - t.wy) * ((1 - t.wx) * v00 + t.wx * v01) +
                                  t.wy * ((1 - t.wx) * v10 + t.wx * v11);
            }
        }
    detail::attach_node(out, {x}, [taps = std::move(taps), H, W, C, H2, W2](const Tensor& o) {
        auto& ps = o.node()->parents;
        if (!ps[0].requires_grad()) return;
        const auto& g = o.grad();
        std::vector<double> ga(static_cast<size_t>(H) * W * C, 0.0);
        auto at = [&](int y, int xx, int c) -> double& {
            return ga[(static_cast<size_t>(y) * W + xx) * C + c];
        };
        for (int i = 0; i < H2; ++i)
            for (int j = 0; j < W2; ++j) {
                const auto& t = taps[static_cast<size_t>(i) * W2 + j];
                for (int c = 0; c < C; ++c) {
                    const double gv = g[(static_cast<size_t>(i) * W2 + j) * C + c];
                    at(t.y0, t.x0, c) += gv * (1 - t.wy) * (1 - t.wx);
                    at(t.y0, t.x1, c) += gv * (1 - t.wy) * t.wx;
                    at(t.y1, t.x0, c) += gv * t.wy * (1 - t.wx);
                    at(t.y1, t.x1, c) += gv * t.wy * t.wx;
                }
            }
        ps[0].accumulate_grad(ga);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Concatenation, slicing, gather/scatter
// ---------------------------------------------------------------------------

/// Concatenates two matrices along columns: [R x Ca] + [R x Cb] -> [R x Ca+Cb].
inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[0] != b.shape()[0])
        throw ShapeError("concat_cols: shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int R = a.shape()[0], Ca = a.shape()[1], Cb = b.shape()[1];
    Tensor out = Tensor::zeros({R, Ca + Cb});
    for (int i = 0; i < R; ++i) {
        for (int j = 0; j < Ca; ++j) out.at(i, j) = a.at(i, j);
        for (int j = 0; j < Cb; ++j) out.at(i, Ca + j) = b.at(i, j);
    }
    detail::attach_node(out, {a, b}, [R, Ca, Cb](const Tensor& o) {
        auto& ps = o.node()->parents;
        const auto& g = o.grad();
        if (ps[0].requires_grad()) {
            std::vector<double> ga(static_cast<size_t>(R) * Ca);
            for (int i = 0; i < R; ++i)
                for (int j = 0; j < Ca; ++j) ga[static_cast<size_t>(i) * Ca + j] = g[static_cast<size_t>(i) * (Ca + Cb) + j];
            ps[0].accumulate_grad(ga);
        }
        if (ps[1].requires_grad()) {
            std::vector<double> gb(static_cast<size_t>(R) * Cb);
            for (int i = 0; i < R; ++i)
                for (int j = 0; j < Cb; ++j) gb[static_cast<size_t>(i) * Cb + j] = g[static_cast<size_t>(i) * (Ca + Cb) + Ca + j];
            ps[1].accumulate_grad(gb);
        }
    });
    return out;
}

/// Concatenates two matrices along rows: [Ra x C] + [Rb x C] -> [Ra+Rb x C].
inline Tensor concat_rows(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1])
        throw ShapeError("concat_rows: shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int Ra = a.shape()[0], Rb = b.shape()[0], C = a.shape()[1];
    Tensor out = Tensor::zeros({Ra + Rb, C});
    std::copy(a.data().begin(), a.data().end(), out.data().begin());
    std::copy(b.data().begin(), b.data().end(), out.data().begin() + static_cast<std::int64_t>(Ra) * C);
    detail::attach_node(out, {a, b}, [Ra, Rb, C](const Tensor& o) {
        auto& ps = o.node()->parents;
        const auto& g = o.grad();
        if (ps[0].requires_grad())
            ps[0].accumulate_grad(std::vector<double>(g.begin(), g.begin() + static_cast<std::int64_t>(Ra) * C));
        if (ps[1].requires_grad())
            ps[1].accumulate_grad(std::vector<double>(g.begin() + static_cast<std::int64_t>(Ra) * C, g.end()));
    });
    return out;
}

/// Concatenates two {H,W,C} maps along the channel axis.
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] || a.shape()[1] != b.shape()[1])
        throw ShapeError("concat_channels: shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const int H = a.shape()[0], W = a.shape()[1], Ca = a.shape()[2], Cb = b.shape()[2];
    Tensor fa = reshape(a, {H * W, Ca});
    Tensor fb = reshape(b, {H * W, Cb});
    return reshape(concat_cols(fa, fb), {H, W, Ca + Cb});
}

/// Slice along axis 0 of any tensor: returns element `i` with rank reduced by 1.
inline Tensor slice_axis0(const Tensor& x, int i) {
    if (x.rank() < 2) throw ShapeError("slice_axis0: rank >= 2 required, got " + shape_str(x.shape()));
    if (i < 0 || i >= x.shape()[0])
        throw ShapeError("slice_axis0: index " + std::to_string(i) + " out of " + shape_str(x.shape()));
    Shape os(x.shape().begin() + 1, x.shape().end());
    const std::int64_t block = shape_numel(os);
    Tensor out = Tensor::from(os, std::vector<double>(x.data().begin() + i * block,
                                                      x.data().begin() + (i + 1) * block));
    detail::attach_node(out, {x}, [i, block](const Tensor& o) {
        auto& ps = o.node()->parents;
        if (!ps[0].requires_grad()) return;
        std::vector<double> gx(ps[0].numel(), 0.0);
        const auto& g = o.grad();
        std::copy(g.begin(), g.end(), gx.begin() + i * block);
        ps[0].accumulate_grad(gx);
    });
    return out;
}

/// Gathers rows of a [R x C] matrix: out[j] = x[idx[j]].
inline Tensor gather_rows(const Tensor& x, const std::vector<int>& idx) {
    if (x.rank() != 2) throw ShapeError("gather_rows: rank-2 required, got " + shape_str(x.shape()));
    const int R = x.shape()[0], C = x.shape()[1];
    for (int i : idx)
        if (i < 0 || i >= R)
            throw ShapeError("gather_rows: index " + std::to_string(i) + " out of [0," +
                             std::to_string(R) + ")");
    Tensor out = Tensor::zeros({static_cast<int>(idx.size()), C});
    for (size_t j = 0; j < idx.size(); ++j)
        std::copy(x.data().begin() + static_cast<std::int64_t>(idx[j]) * C,
                  x.data().begin() + static_cast<std::int64_t>(idx[j] + 1) * C,
                  out.data().begin() + static_cast<std::int64_t>(j) * C);
    detail::attach_node(out, {x}, [idx, C](const Tensor& o) {
        auto& ps = o.node()->parents;
        if (!ps[0].requires_grad()) return;
        std::vector<double> gx(ps[0].numel(), 0.0);
        const auto& g = o.grad();
        for (size_t j = 0; j < idx.size(); ++j)
            for (int c = 0; c < C; ++c)
                gx[static_cast<size_t>(idx[j]) * C + c] += g[j * C + c];
        ps[0].accumulate_grad(gx);
    });
    return out;
}

/// base [Q x C] plus updates [M x C] scatter-added at rows idx (collisions sum).
inline Tensor scatter_add_rows(const Tensor& base, const Tensor& updates, const std::vector<int>& idx) {
    if (base.rank() != 2 || updates.rank() != 2 || base.shape()[1] != updates.shape()[1])
        throw ShapeError("scatter_add_rows: shapes " + shape_str(base.shape()) + " vs " +
                         shape_str(updates.shape()));
    if (static_cast<int>(idx.size()) != updates.shape()[0])
        throw ShapeError("scatter_add_rows: " + std::to_string(idx.size()) + " indices for " +
                         shape_str(updates.shape()));
    const int Q = base.shape()[0], C = base.shape()[1];
    for (int i : idx)
        if (i < 0 || i >= Q)
            throw std::out_of_range("scatter_add_rows: index " + std::to_string(i) + " out of [0," +
                                    std::to_string(Q) + ")");
    Tensor out = base.clone_data();
    for (size_t j = 0; j < idx.size(); ++j)
        for (int c = 0; c < C; ++c) out.at(idx[j], c) += updates.at(static_cast<int>(j), c);
    detail::attach_node(out, {base, updates}, [idx, C](const Tensor& o) {
        auto& ps = o.node()->parents;
        const auto& g = o.grad();
        if (ps[0].requires_grad()) ps[0].accumulate_grad(g);
        if (ps[1].requires_grad()) {
            std::vector<double> gu(ps[1].numel());
            for (size_t j = 0; j < idx.size(); ++j)
                for (int c = 0; c < C; ++c) gu[j * C + c] = g[static_cast<size_t>(idx[j]) * C + c];
            ps[1].accumulate_grad(gu);
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum_all(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    Tensor out = Tensor::scalar(s);
    detail::attach_node(out, {x}, [](const Tensor& o) {
        auto& ps = o.node()->parents;
        if (!ps[0].requires_grad()) return;
        ps[0].accumulate_grad(std::vector<double>(ps[0].numel(), o.grad()[0]));
    });
    return out;
}

inline Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / x.numel()); }

// ---------------------------------------------------------------------------
// Top-k cosine selection (not differentiable; indices are detached)
// ---------------------------------------------------------------------------

struct TopKResult {
    int rows = 0;
    int k = 0;
    std::vector<int> indices;     // rows x k, row-major, descending score
    std::vector<double> scores;   // rows x k, non-increasing per row
    bool degenerate = false;      // a zero-norm row was seen (similarity -> -1)

    int index(int r, int j) const { return indices[static_cast<size_t>(r) * k + j]; }
    double score(int r, int j) const { return scores[static_cast<size_t>(r) * k + j]; }
};

/// For each query row, the k pool rows with highest cosine similarity,
/// descending; exact ties broken by the lower pool index. Zero-norm rows get
/// similarity -1 and set the degenerate flag instead of producing NaN.
inline TopKResult cosine_topk(const Tensor& queries, const Tensor& pool, int k) {
    if (queries.rank() != 2 || pool.rank() != 2 || queries.shape()[1] != pool.shape()[1])
        throw ShapeError("cosine_topk: shapes " + shape_str(queries.shape()) + " vs " +
                         shape_str(pool.shape()));
    const int N = queries.shape()[0], C = queries.shape()[1], Q = pool.shape()[0];
    if (k < 1 || k > Q)
        throw ConfigError("cosine_topk: k=" + std::to_string(k) + " not in [1," + std::to_string(Q) + "]");

    TopKResult res;
    res.rows = N;
    res.k = k;
    res.indices.resize(static_cast<size_t>(N) * k);
    res.scores.resize(static_cast<size_t>(N) * k);

    std::vector<double> pool_norm(Q);
    for (int q = 0; q < Q; ++q) {
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += pool.at(q, c) * pool.at(q, c);
        pool_norm[q] = std::sqrt(s);
    }

    std::vector<double> sims(Q);
    std::vector<int> order(Q);
    for (int n = 0; n < N; ++n) {
        double qs = 0.0;
        for (int c = 0; c < C; ++c) qs += queries.at(n, c) * queries.at(n, c);
        const double qnorm = std::sqrt(qs);
        for (int q = 0; q < Q; ++q) {
            if (qnorm == 0.0 || pool_norm[q] == 0.0) {
                sims[q] = -1.0;
                res.degenerate = true;
            } else {
                double dot = 0.0;
                for (int c = 0; c < C; ++c) dot += queries.at(n, c) * pool.at(q, c);
                sims[q] = dot / (qnorm * pool_norm[q]);
            }
        }
        for (int q = 0; q < Q; ++q) order[q] = q;
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            if (sims[a] != sims[b]) return sims[a] > sims[b];
            return a < b;
        });
        for (int j = 0; j < k; ++j) {
            res.indices[static_cast<size_t>(n) * k + j] = order[j];
            res.scores[static_cast<size_t>(n) * k + j] = sims[order[j]];
        }
    }
    return res;
}

}  // namespace pgpseg
