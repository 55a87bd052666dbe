#pragma once

// Central finite-difference verification of reverse-mode gradients.
//
// For each checked parameter element, compares (f(x+eps) - f(x-eps)) / (2 eps)
// against the analytic gradient. The reported error is
//   |fd - grad| / max(|fd|, |grad|, 1e-3)
// so elements with tiny true gradients are judged on an absolute scale of
// 1e-3 * tolerance instead of blowing up the ratio.

#include <functional>
#include <string>
#include <vector>

#include "pgpseg/ops.hpp"
#include "pgpseg/rng.hpp"
#include "pgpseg/tensor.hpp"

namespace pgpseg {

struct GradCheckReport {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::int64_t checked = 0;
    int worst_param = -1;
    std::int64_t worst_index = -1;

    bool pass(double tol = 1e-4) const { return max_rel_err < tol; }
};

/// Verifies d f / d params against central finite differences.
///
/// `f` must be a deterministic scalar-valued computation over `params`. When
/// the total element count exceeds `subsample_limit`, a seeded random subset
/// of that size is checked instead of every element.
inline GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                                  double eps = 1e-5, std::int64_t subsample_limit = 10000,
                                  std::uint64_t subsample_seed = 0x9c0ffee) {
    for (Tensor& p : params) p.zero_grad();

    Tensor loss = f();
    if (!std::isfinite(loss.value())) throw NumericError("grad_check: non-finite loss");
    loss.backward();

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    std::int64_t total = 0;
    for (const Tensor& p : params) {
        analytic.push_back(p.has_grad() ? p.grad() : std::vector<double>(p.numel(), 0.0));
        total += p.numel();
    }

    // Flat element ids across all params, optionally subsampled.
    std::vector<std::int64_t> selected;
    if (total <= subsample_limit) {
        selected.resize(total);
        for (std::int64_t i = 0; i < total; ++i) selected[i] = i;
    } else {
        Philox rng(subsample_seed, stream_id("gradcheck-subsample"));
        std::vector<std::int64_t> all(total);
        for (std::int64_t i = 0; i < total; ++i) all[i] = i;
        rng.shuffle(all);
        selected.assign(all.begin(), all.begin() + subsample_limit);
        std::sort(selected.begin(), selected.end());
    }

    GradCheckReport rep;
    NoGradGuard ng;  // finite-difference evaluations need no graph
    size_t pi = 0;
    std::int64_t base = 0;
    for (std::int64_t flat : selected) {
        while (flat >= base + params[pi].numel()) {
            base += params[pi].numel();
            ++pi;
        }
        const std::int64_t i = flat - base;
        double& slot = params[pi].data()[i];
        const double saved = slot;

        slot = saved + eps;
        const double fp = f().value();
        slot = saved - eps;
        const double fm = f().value();
        slot = saved;

        const double fd = (fp - fm) / (2.0 * eps);
        const double an = analytic[pi][i];
        const double abs_err = std::abs(fd - an);
        const double rel = abs_err / std::max({std::abs(fd), std::abs(an), 1e-3});
        ++rep.checked;
        if (abs_err > rep.max_abs_err) rep.max_abs_err = abs_err;
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_param = static_cast<int>(pi);
            rep.worst_index = i;
        }
    }
    return rep;
}

}  // namespace pgpseg
