#pragma once

// Independent brute-force oracles used by the unit and acceptance suites.
// These deliberately share no code with the library implementation: plain
// triple loops, full sorts and direct summation only.

#include <algorithm>
#include <cmath>
#include <vector>

#include "pgpseg/tensor.hpp"

namespace oracle {

using pgpseg::Tensor;

/// Triple-loop matrix product.
inline std::vector<double> matmul(const Tensor& a, const Tensor& b) {
    const int m = a.shape()[0], p = a.shape()[1], n = b.shape()[1];
    std::vector<double> c(static_cast<size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int t = 0; t < p; ++t) s += a.at(i, t) * b.at(t, j);
            c[static_cast<size_t>(i) * n + j] = s;
        }
    return c;
}

/// Loop-based mean over one axis of a {H,W,C} tensor (keepdim).
inline std::vector<double> avg_pool(const Tensor& x, int axis) {
    const int H = x.shape()[0], W = x.shape()[1], C = x.shape()[2];
    const int oh = axis == 0 ? 1 : H, ow = axis == 1 ? 1 : W, oc = axis == 2 ? 1 : C;
    std::vector<double> out(static_cast<size_t>(oh) * ow * oc, 0.0);
    for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j)
            for (int c = 0; c < oc; ++c) {
                double s = 0.0;
                int cnt = 0;
                for (int h = 0; h < H; ++h)
                    for (int w = 0; w < W; ++w)
                        for (int ch = 0; ch < C; ++ch) {
                            if (axis != 0 && h != i) continue;
                            if (axis != 1 && w != j) continue;
                            if (axis != 2 && ch != c) continue;
                            s += x.at(h, w, ch);
                            ++cnt;
                        }
                out[(static_cast<size_t>(i) * ow + j) * oc + c] = s / cnt;
            }
    return out;
}

/// Sliding-window strip convolution with zero same-padding.
/// dir: 0 = along width (1 x k), 1 = along height (k x 1).
inline std::vector<double> strip_conv(const Tensor& x, const Tensor& w, const Tensor& b, int dir) {
    const int H = x.shape()[0], W = x.shape()[1], Cin = x.shape()[2];
    const int k = w.shape()[0], Cout = w.shape()[2];
    const int off = k / 2;
    std::vector<double> out(static_cast<size_t>(H) * W * Cout, 0.0);
    for (int h = 0; h < H; ++h)
        for (int ww = 0; ww < W; ++ww)
            for (int co = 0; co < Cout; ++co) {
                double s = b.at(co);
                for (int t = 0; t < k; ++t) {
                    const int sh = dir == 1 ? h + t - off : h;
                    const int sw = dir == 0 ? ww + t - off : ww;
                    if (sh < 0 || sh >= H || sw < 0 || sw >= W) continue;
                    for (int ci = 0; ci < Cin; ++ci) s += x.at(sh, sw, ci) * w.at(t, ci, co);
                }
                out[(static_cast<size_t>(h) * W + ww) * Cout + co] = s;
            }
    return out;
}

/// Full-sort cosine top-k: returns rows x k indices (score desc, index asc).
inline std::vector<int> cosine_topk(const Tensor& queries, const Tensor& pool, int k) {
    const int N = queries.shape()[0], C = queries.shape()[1], Q = pool.shape()[0];
    std::vector<int> out(static_cast<size_t>(N) * k);
    for (int n = 0; n < N; ++n) {
        std::vector<std::pair<double, int>> sims(Q);
        double qn = 0.0;
        for (int c = 0; c < C; ++c) qn += queries.at(n, c) * queries.at(n, c);
        qn = std::sqrt(qn);
        for (int q = 0; q < Q; ++q) {
            double pn = 0.0, dot = 0.0;
            for (int c = 0; c < C; ++c) {
                pn += pool.at(q, c) * pool.at(q, c);
                dot += queries.at(n, c) * pool.at(q, c);
            }
            pn = std::sqrt(pn);
            const double sim = (qn == 0.0 || pn == 0.0) ? -1.0 : dot / (qn * pn);
            sims[q] = {sim, q};
        }
        std::sort(sims.begin(), sims.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        for (int j = 0; j < k; ++j) out[static_cast<size_t>(n) * k + j] = sims[j].second;
    }
    return out;
}

/// Dense double-loop attention readout: softmax(Q K^T / temp) rows times V.
inline std::vector<double> attention(const Tensor& q, const Tensor& kmat, const Tensor& v,
                                     double inv_temp = 1.0) {
    const int R = q.shape()[0], C = q.shape()[1], K = kmat.shape()[0], Cv = v.shape()[1];
    std::vector<double> out(static_cast<size_t>(R) * Cv, 0.0);
    for (int r = 0; r < R; ++r) {
        std::vector<double> scores(K);
        double m = -1e300;
        for (int j = 0; j < K; ++j) {
            double s = 0.0;
            for (int c = 0; c < C; ++c) s += q.at(r, c) * kmat.at(j, c);
            scores[j] = s * inv_temp;
            m = std::max(m, scores[j]);
        }
        double z = 0.0;
        for (int j = 0; j < K; ++j) {
            scores[j] = std::exp(scores[j] - m);
            z += scores[j];
        }
        for (int j = 0; j < K; ++j)
            for (int c = 0; c < Cv; ++c) out[static_cast<size_t>(r) * Cv + c] += scores[j] / z * v.at(j, c);
    }
    return out;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace oracle
