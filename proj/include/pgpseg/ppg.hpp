#pragma once

// Prototype-based prompt generation with separated dense and sparse pipelines.
//
// Dense: inter prototypes are projected through a query construction
// (P_query = P_inter * P_intra^T, concatenated and passed through a fully
// connected layer), then attended against the enhanced features to form an
// {H,W,C} prompt map. Sparse: intra prototypes attend over spatial positions
// to produce one token per class. dense_prompt never reads the sparse
// pipeline's intra input and sparse_prompt never reads the inter projection,
// so perturbing one pipeline's prototypes leaves the other's output bitwise
// unchanged.

#include <string>

#include "pgpseg/ops.hpp"
#include "pgpseg/params.hpp"

namespace pgpseg {

struct PromptPair {
    Tensor dense;   // {H, W, C}
    Tensor sparse;  // {N, C}, one token per class
};

struct PpgParams {
    int channels = 0, n_classes = 0;

    Tensor query_fc_w, query_fc_b;  // (C+N) -> C
    Tensor dense_w1, dense_b1, dense_w2, dense_b2;    // two pointwise convs, GELU between
    Tensor sparse_w1, sparse_b1, sparse_w2, sparse_b2;
    // Direct projections used when the attention pipelines are toggled off.
    Tensor lin_dense_w, lin_dense_b;
    Tensor lin_sparse_w, lin_sparse_b;

    static PpgParams create(ParamStore& store, const std::string& prefix, int channels,
                            int n_classes) {
        PpgParams p;
        p.channels = channels;
        p.n_classes = n_classes;
        p.query_fc_w = store.add_uniform(prefix + ".query_fc.w", {channels + n_classes, channels},
                                         channels + n_classes);
        p.query_fc_b = store.add_zeros(prefix + ".query_fc.b", {channels});
        p.dense_w1 = store.add_uniform(prefix + ".dense1.w", {channels, channels}, channels);
        p.dense_b1 = store.add_zeros(prefix + ".dense1.b", {channels});
        p.dense_w2 = store.add_uniform(prefix + ".dense2.w", {channels, channels}, channels);
        p.dense_b2 = store.add_zeros(prefix + ".dense2.b", {channels});
        p.sparse_w1 = store.add_uniform(prefix + ".sparse1.w", {channels, channels}, channels);
        p.sparse_b1 = store.add_zeros(prefix + ".sparse1.b", {channels});
        p.sparse_w2 = store.add_uniform(prefix + ".sparse2.w", {channels, channels}, channels);
        p.sparse_b2 = store.add_zeros(prefix + ".sparse2.b", {channels});
        p.lin_dense_w = store.add_uniform(prefix + ".lin_dense.w", {channels, channels}, channels);
        p.lin_dense_b = store.add_zeros(prefix + ".lin_dense.b", {channels});
        p.lin_sparse_w = store.add_uniform(prefix + ".lin_sparse.w", {channels, channels}, channels);
        p.lin_sparse_b = store.add_zeros(prefix + ".lin_sparse.b", {channels});
        return p;
    }
};

namespace detail {
inline Tensor prompt_mlp(const Tensor& x, const Tensor& w1, const Tensor& b1, const Tensor& w2,
                         const Tensor& b2) {
    return linear(gelu(linear(x, w1, b1)), w2, b2);
}
}  // namespace detail

/// P_query = P_inter * P_intra^T (Q x N); concat along the feature axis and
/// project through the fully connected layer to the refreshed inter set (Q x C).
inline Tensor project_inter(const Tensor& p_inter, const Tensor& p_intra, const PpgParams& p) {
    if (p_inter.rank() != 2 || p_intra.rank() != 2 || p_inter.shape()[1] != p_intra.shape()[1])
        throw ShapeError("project_inter: widths disagree, " + shape_str(p_inter.shape()) + " vs " +
                         shape_str(p_intra.shape()));
    Tensor p_query = matmul(p_inter, transpose(p_intra));  // {Q, N}
    Tensor cat = concat_cols(p_inter, p_query);            // {Q, C+N}
    return linear(cat, p.query_fc_w, p.query_fc_b);
}

/// Dense prompt D {H,W,C}: per-pixel attention over the projected inter
/// prototypes (softmax over the Q keys), read out and passed through the MLP.
inline Tensor dense_prompt(const Tensor& f_i, const Tensor& p_inter_hat, const PpgParams& p) {
    if (f_i.rank() != 3 || f_i.shape()[2] != p_inter_hat.shape()[1])
        throw ShapeError("dense_prompt: widths disagree, " + shape_str(f_i.shape()) + " vs " +
                         shape_str(p_inter_hat.shape()));
    const int h = f_i.shape()[0], w = f_i.shape()[1], c = f_i.shape()[2];
    Tensor flat = reshape(f_i, {h * w, c});
    Tensor attn = softmax(matmul(flat, transpose(p_inter_hat)), 1);  // {HW, Q}
    Tensor read = matmul(attn, p_inter_hat);                         // {HW, C}
    return reshape(detail::prompt_mlp(read, p.dense_w1, p.dense_b1, p.dense_w2, p.dense_b2),
                   {h, w, c});
}

/// Sparse prompt S {N,C}: each intra prototype attends over spatial positions
/// (softmax over H*W), reads out image features and passes through the MLP.
inline Tensor sparse_prompt(const Tensor& f_i, const Tensor& p_intra_hat, const PpgParams& p) {
    if (f_i.rank() != 3 || f_i.shape()[2] != p_intra_hat.shape()[1])
        throw ShapeError("sparse_prompt: widths disagree, " + shape_str(f_i.shape()) + " vs " +
                         shape_str(p_intra_hat.shape()));
    const int h = f_i.shape()[0], w = f_i.shape()[1], c = f_i.shape()[2];
    Tensor flat = reshape(f_i, {h * w, c});
    Tensor attn = softmax(matmul(p_intra_hat, transpose(flat)), 1);  // {N, HW}
    Tensor read = matmul(attn, flat);                                // {N, C}
    return detail::prompt_mlp(read, p.sparse_w1, p.sparse_b1, p.sparse_w2, p.sparse_b2);
}

/// Ablation path (PPG off): prompts are direct linear projections of the
/// prototypes. The dense map is the projected mean inter prototype broadcast
/// over space; sparse tokens are per-class projections of the intra rows.
inline PromptPair direct_prompts(const Tensor& f_i, const Tensor& p_intra, const Tensor& p_inter,
                                 const PpgParams& p) {
    const int h = f_i.shape()[0], w = f_i.shape()[1], c = f_i.shape()[2];
    const int q = p_inter.shape()[0];
    Tensor mean_inter = scale(matmul(Tensor::full({1, q}, 1.0), p_inter), 1.0 / q);  // {1,C}
    Tensor d = linear(mean_inter, p.lin_dense_w, p.lin_dense_b);                     // {1,C}
    PromptPair out;
    out.dense = expand3(reshape(d, {1, 1, c}), h, w);
    out.sparse = linear(p_intra, p.lin_sparse_w, p.lin_sparse_b);
    return out;
}

}  // namespace pgpseg
