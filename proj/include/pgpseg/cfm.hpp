#pragma once

// Contextual feature modulation: residual gating of encoder features by
// sigmoid gates computed from axial (height/width) and channel-pooled context.
//
// Spatial path:  F_i * sigmoid(conv_kx1(LN+ReLU(conv_1xk(F_s))))
// Channel path:  F_i * sigmoid(conv_1x1(LN+ReLU(conv_1x1(F_c)))), gate
//                broadcast over the spatial extent.
// Output:        F_i + spatial + channel (residual form, shape-preserving).

#include <string>

#include "pgpseg/ops.hpp"
#include "pgpseg/params.hpp"

namespace pgpseg {

struct CfmParams {
    int channels = 0;
    int k = 0;  // strip kernel size, odd

    Tensor spatial_a_w, spatial_a_b;  // 1 x k strip conv, C -> C
    Tensor spatial_b_w, spatial_b_b;  // k x 1 strip conv, C -> C
    Tensor spatial_ln_g, spatial_ln_b;
    Tensor channel_a_w, channel_a_b;  // 1 x 1 conv, C -> C
    Tensor channel_b_w, channel_b_b;  // 1 x 1 conv, C -> C
    Tensor channel_ln_g, channel_ln_b;

    static CfmParams create(ParamStore& store, const std::string& prefix, int channels, int k,
                            bool trainable = true) {
        if (k % 2 == 0 || k < 1)
            throw ConfigError("cfm: strip kernel size must be odd and positive, got " +
                              std::to_string(k));
        CfmParams p;
        p.channels = channels;
        p.k = k;
        p.spatial_a_w = store.add_uniform(prefix + ".spatial_a.w", {k, channels, channels},
                                          k * channels, trainable);
        p.spatial_a_b = store.add_zeros(prefix + ".spatial_a.b", {channels}, trainable);
        p.spatial_b_w = store.add_uniform(prefix + ".spatial_b.w", {k, channels, channels},
                                          k * channels, trainable);
        p.spatial_b_b = store.add_zeros(prefix + ".spatial_b.b", {channels}, trainable);
        p.spatial_ln_g = store.add_full(prefix + ".spatial_ln.g", {channels}, 1.0, trainable);
        p.spatial_ln_b = store.add_zeros(prefix + ".spatial_ln.b", {channels}, trainable);
        p.channel_a_w = store.add_uniform(prefix + ".channel_a.w", {channels, channels}, channels,
                                          trainable);
        p.channel_a_b = store.add_zeros(prefix + ".channel_a.b", {channels}, trainable);
        p.channel_b_w = store.add_uniform(prefix + ".channel_b.w", {channels, channels}, channels,
                                          trainable);
        p.channel_b_b = store.add_zeros(prefix + ".channel_b.b", {channels}, trainable);
        p.channel_ln_g = store.add_full(prefix + ".channel_ln.g", {channels}, 1.0, trainable);
        p.channel_ln_b = store.add_zeros(prefix + ".channel_ln.b", {channels}, trainable);
        return p;
    }
};

/// F_s: height-pooled mean broadcast back over rows plus width-pooled mean
/// broadcast back over columns, keeping the full {H,W,C} shape.
inline Tensor build_spatial_context(const Tensor& f) {
    if (f.rank() != 3)
        throw ShapeError("build_spatial_context: rank-3 required, got " + shape_str(f.shape()));
    const int H = f.shape()[0], W = f.shape()[1];
    Tensor hm = avg_pool_axis(f, Axis3::height);  // {1,W,C}
    Tensor wm = avg_pool_axis(f, Axis3::width);   // {H,1,C}
    return add(expand3(hm, H, W), expand3(wm, H, W));
}

/// Spatial gate: sigmoid(conv_kx1(LN+ReLU(conv_1xk(F_s)))) applied to F_i.
inline Tensor spatial_modulate(const Tensor& f_i, const Tensor& f_s, const CfmParams& p) {
    detail::check_same_shape(f_i, f_s, "spatial_modulate");
    Tensor h = strip_conv(f_s, p.spatial_a_w, p.spatial_a_b, StripDir::along_width);
    h = relu(layer_norm(h, p.spatial_ln_g, p.spatial_ln_b));
    h = strip_conv(h, p.spatial_b_w, p.spatial_b_b, StripDir::along_height);
    return mul(f_i, sigmoid(h));
}

/// Channel gate from the {1,1,C} spatial mean, broadcast over H x W.
inline Tensor channel_modulate(const Tensor& f_i, const Tensor& f_c, const CfmParams& p) {
    if (f_c.rank() != 3 || f_c.shape()[0] != 1 || f_c.shape()[1] != 1 ||
        f_c.shape()[2] != f_i.shape()[2])
        throw ShapeError("channel_modulate: F_c must be {1,1,C}, got " + shape_str(f_c.shape()));
    Tensor h = pointwise_conv(f_c, p.channel_a_w, p.channel_a_b);
    h = relu(layer_norm(h, p.channel_ln_g, p.channel_ln_b));
    h = pointwise_conv(h, p.channel_b_w, p.channel_b_b);
    Tensor gate = expand3(sigmoid(h), f_i.shape()[0], f_i.shape()[1]);
    return mul(f_i, gate);
}

/// Context-enhanced features: F_i + spatial-modulated + channel-modulated.
/// The two modulation terms are summed before the residual so that the
/// zero-weight case F + (F/2 + F/2) reproduces 2F exactly.
inline Tensor cfm_forward(const Tensor& f_i, const CfmParams& p) {
    Tensor f_s = build_spatial_context(f_i);
    Tensor f_c = avg_pool_axis(avg_pool_axis(f_i, Axis3::height), Axis3::width);  // {1,1,C}
    Tensor mod = add(spatial_modulate(f_i, f_s, p), channel_modulate(f_i, f_c, p));
    return add(f_i, mod);
}

}  // namespace pgpseg
