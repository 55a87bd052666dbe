#pragma once

// Progressive prototype refinement.
//
// A prototype bank holds learnable intra-class (N x C) and inter-class
// (Q x C, Q = alpha*N) prototypes. Each stage:
//   1. selects for every class the k_select most cosine-similar inter
//      prototypes (selection indices are detached from the gradient),
//   2. stacks [intra_n; selected...] into an N x (k+1) x C block,
//   3. refines the stack with a dual-path cross-attention readout against the
//      fused image/class features (class-guided weights + query weights),
//   4. scatter-adds the refined rows back onto the bank to form the stage's
//      working prototype set. The persistent bank parameters themselves are
//      only changed by the optimizer.

#include <string>
#include <vector>

#include "pgpseg/ops.hpp"
#include "pgpseg/params.hpp"

namespace pgpseg {

struct PrototypeBank {
    Tensor intra;  // {N, C}
    Tensor inter;  // {Q, C}, Q = alpha * N
    int alpha = 0;
    int k_select = 0;

    int n_classes() const { return intra.shape()[0]; }
    int channels() const { return intra.shape()[1]; }
    int pool_size() const { return inter.shape()[0]; }

    /// Registers learnable banks drawn from N(0, 0.02^2).
    static PrototypeBank create(ParamStore& store, const std::string& prefix, int n_classes,
                                int channels, int alpha, int k_select) {
        if (alpha < 1) throw ConfigError("prototype bank: alpha must be positive, got " +
                                         std::to_string(alpha));
        const int q = alpha * n_classes;
        if (k_select < 1 || k_select > q)
            throw ConfigError("prototype bank: k_select=" + std::to_string(k_select) +
                              " not in [1," + std::to_string(q) + "]");
        PrototypeBank b;
        b.alpha = alpha;
        b.k_select = k_select;
        b.intra = store.add_gaussian(prefix + ".intra", {n_classes, channels}, 0.02);
        b.inter = store.add_gaussian(prefix + ".inter", {q, channels}, 0.02);
        return b;
    }

    /// Non-owning bank around an existing working set (used by stage 2).
    static PrototypeBank from_working(Tensor intra, Tensor inter, int alpha, int k_select) {
        PrototypeBank b;
        b.intra = std::move(intra);
        b.inter = std::move(inter);
        b.alpha = alpha;
        b.k_select = k_select;
        return b;
    }
};

struct AssembledPrototypes {
    Tensor stacked;             // {N, k_select+1, C}; row 0 of each class slice is intra
    std::vector<int> selected;  // N * k_select indices into the inter bank
    bool degenerate = false;    // zero-norm prototype seen during selection

    int n_classes() const { return stacked.shape()[0]; }
    int k_select() const { return stacked.shape()[1] - 1; }
    int index(int n, int j) const { return selected[static_cast<size_t>(n) * k_select() + j]; }
};

/// Stacks every class's intra prototype with its top-k cosine-similar inter
/// prototypes. Indices come from cosine_topk and carry no gradient; the
/// gathered values do.
inline AssembledPrototypes assemble_prototypes(const PrototypeBank& bank) {
    const int n = bank.n_classes(), c = bank.channels(), k = bank.k_select;
    TopKResult top = cosine_topk(bank.intra, bank.inter, k);

    AssembledPrototypes out;
    out.selected = top.indices;
    out.degenerate = top.degenerate;

    // Gather from [intra; inter] so gradient flows into both banks.
    Tensor combined = concat_rows(bank.intra, bank.inter);
    std::vector<int> flat(static_cast<size_t>(n) * (k + 1));
    for (int i = 0; i < n; ++i) {
        flat[static_cast<size_t>(i) * (k + 1)] = i;
        for (int j = 0; j < k; ++j)
            flat[static_cast<size_t>(i) * (k + 1) + 1 + j] = n + top.index(i, j);
    }
    out.stacked = reshape(gather_rows(combined, flat), {n, k + 1, c});
    return out;
}

/// Parameters of the class-guided dual-path cross-attention. The two fully
/// connected reducers are sized by the stage's feature resolution.
struct PprParams {
    int channels = 0, n_classes = 0, k_select = 0, height = 0, width = 0;

    Tensor fi_w, fi_b;          // pointwise conv C -> 1
    Tensor fm_w, fm_b;          // pointwise conv N -> 1
    Tensor fc_i_w, fc_i_b;      // fully connected W -> 1
    Tensor fc_m_w, fc_m_b;      // fully connected H -> 1
    Tensor expand_w, expand_b;  // pointwise conv 1 -> Q' = N*(k+1)
    Tensor fuse_w, fuse_b;      // pointwise conv (C+N) -> C
    Tensor mix_a, mix_b;        // learnable mixing scalars, init 1.0

    static PprParams create(ParamStore& store, const std::string& prefix, int channels,
                            int n_classes, int k_select, int height, int width) {
        PprParams p;
        p.channels = channels;
        p.n_classes = n_classes;
        p.k_select = k_select;
        p.height = height;
        p.width = width;
        const int qp = n_classes * (k_select + 1);
        p.fi_w = store.add_uniform(prefix + ".fi.w", {channels, 1}, channels);
        p.fi_b = store.add_zeros(prefix + ".fi.b", {1});
        p.fm_w = store.add_uniform(prefix + ".fm.w", {n_classes, 1}, n_classes);
        p.fm_b = store.add_zeros(prefix + ".fm.b", {1});
        p.fc_i_w = store.add_uniform(prefix + ".fc_i.w", {width, 1}, width);
        p.fc_i_b = store.add_zeros(prefix + ".fc_i.b", {1});
        p.fc_m_w = store.add_uniform(prefix + ".fc_m.w", {height, 1}, height);
        p.fc_m_b = store.add_zeros(prefix + ".fc_m.b", {1});
        p.expand_w = store.add_uniform(prefix + ".expand.w", {1, qp}, 1);
        p.expand_b = store.add_zeros(prefix + ".expand.b", {qp});
        p.fuse_w = store.add_uniform(prefix + ".fuse.w", {channels + n_classes, channels},
                                     channels + n_classes);
        p.fuse_b = store.add_zeros(prefix + ".fuse.b", {channels});
        p.mix_a = store.add_full(prefix + ".mix_a", {1}, 1.0);
        p.mix_b = store.add_full(prefix + ".mix_b", {1}, 1.0);
        return p;
    }

    int q_prime() const { return n_classes * (k_select + 1); }
};

/// Class attention weights W_c {H,W,Q'}: axial reductions of F_I and F_M are
/// outer-multiplied into an H x W map, expanded to Q' channels by a pointwise
/// conv and softmax-normalized over the channel axis per pixel.
inline Tensor class_attention_weights(const Tensor& f_i, const Tensor& f_m, const PprParams& p) {
    if (f_i.rank() != 3 || f_m.rank() != 3 || f_i.shape()[0] != f_m.shape()[0] ||
        f_i.shape()[1] != f_m.shape()[1])
        throw ShapeError("class_attention_weights: spatial mismatch " + shape_str(f_i.shape()) +
                         " vs " + shape_str(f_m.shape()));
    const int h = f_i.shape()[0], w = f_i.shape()[1];
    Tensor fi1 = pointwise_conv(f_i, p.fi_w, p.fi_b);                        // {H,W,1}
    Tensor fm1 = pointwise_conv(f_m, p.fm_w, p.fm_b);                        // {H,W,1}
    Tensor fi2 = linear(reshape(fi1, {h, w}), p.fc_i_w, p.fc_i_b);           // {H,1}
    Tensor fm2 = linear(transpose(reshape(fm1, {h, w})), p.fc_m_w, p.fc_m_b);  // {W,1}
    Tensor outer = matmul(fi2, transpose(fm2));                              // {H,W}
    Tensor logits = pointwise_conv(reshape(outer, {h, w, 1}), p.expand_w, p.expand_b);
    return softmax(logits, 2);
}

/// Dual-path refinement readout. Both weight matrices are row-stochastic over
/// spatial positions: W_q directly from its softmax, W_c by renormalizing the
/// per-pixel class softmax along the spatial axis. Output is the refined
/// {N, k+1, C} prototype stack.
inline Tensor refine_prototypes(const AssembledPrototypes& assembled, const Tensor& f_i,
                                const Tensor& f_m, const Tensor& mix_a, const Tensor& mix_b,
                                const PprParams& p) {
    const int h = f_i.shape()[0], w = f_i.shape()[1];
    const int n = assembled.n_classes(), k1 = assembled.stacked.shape()[1];
    const int c = assembled.stacked.shape()[2];
    const int qp = n * k1;
    const int hw = h * w;

    Tensor fused = pointwise_conv(concat_channels(f_i, f_m), p.fuse_w, p.fuse_b);  // {H,W,C}
    Tensor fused_flat = reshape(fused, {hw, c});
    Tensor proto_flat = reshape(assembled.stacked, {qp, c});

    Tensor w_q = softmax(matmul(proto_flat, transpose(fused_flat)), 1);  // {Q', HW}
    Tensor w_c = class_attention_weights(f_i, f_m, p);                   // {H,W,Q'}
    w_c = normalize_rows(reshape(hwc_to_chw(w_c), {qp, hw}));            // {Q', HW}

    Tensor mixed = add(scale_by(w_c, mix_a), scale_by(w_q, mix_b));
    return reshape(matmul(mixed, fused_flat), {n, k1, c});
}

struct WorkingPrototypes {
    Tensor intra;  // {N, C}
    Tensor inter;  // {Q, C}
};

/// Adds refined rows back: intra' = intra + refined[:,0,:]; refined[n,1+j,:]
/// is scatter-added onto inter at the selection indices (collisions sum).
/// Returns the stage's working prototype set; the bank tensors themselves are
/// untouched.
inline WorkingPrototypes scatter_update(const PrototypeBank& bank, const Tensor& refined,
                                        const std::vector<int>& idx) {
    const int n = refined.shape()[0], k1 = refined.shape()[1], c = refined.shape()[2];
    const int k = k1 - 1;
    if (static_cast<int>(idx.size()) != n * k)
        throw ShapeError("scatter_update: expected " + std::to_string(n * k) + " indices, got " +
                         std::to_string(idx.size()));
    Tensor flat = reshape(refined, {n * k1, c});

    std::vector<int> intra_rows(n), inter_rows(static_cast<size_t>(n) * k);
    for (int i = 0; i < n; ++i) {
        intra_rows[i] = i * k1;
        for (int j = 0; j < k; ++j) inter_rows[static_cast<size_t>(i) * k + j] = i * k1 + 1 + j;
    }

    WorkingPrototypes out;
    out.intra = add(bank.intra, gather_rows(flat, intra_rows));
    out.inter = k > 0 ? scatter_add_rows(bank.inter, gather_rows(flat, inter_rows), idx)
                      : bank.inter;
    return out;
}

}  // namespace pgpseg
