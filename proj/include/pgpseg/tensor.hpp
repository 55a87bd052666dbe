#pragma once

// Dense row-major tensor with reverse-mode automatic differentiation.
//
// Tensors are value-semantic handles over shared buffers: copying a Tensor
// aliases its data and grad. Ops build a static graph of GradNodes; calling
// backward() on a scalar output walks the graph in reverse topological order
// and accumulates gradients into every reachable tensor that requires grad.
// A tensor is immutable once produced by an op; gradient accumulation is the
// only mutation and happens inside a single-owner backward pass.

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "pgpseg/rng.hpp"

namespace pgpseg {

using Shape = std::vector<int>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

/// Dimension mismatch between operands; message names both shapes.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid configuration value (even kernel size, indivisible image size, ...).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Bad input data (label out of range, missing dataset, ...).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite values where finite ones are required.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// Scoped guard that disables graph construction (evaluation mode).
struct NoGradGuard {
    NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

class Tensor;

struct GradNode {
    std::vector<Tensor> parents;
    // Called with the node's own output during the reverse pass; reads
    // out.grad() and accumulates into the parents. Nodes never own their
    // output, so the graph has no ownership cycles.
    std::function<void(const Tensor& out)> backward;
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::make_shared<std::vector<double>>(shape_numel(t.shape_), 0.0);
        t.set_requires_grad(requires_grad);
        return t;
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (double& v : t.data()) v = value;
        return t;
    }

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
            throw ShapeError("Tensor::from: " + shape_str(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::make_shared<std::vector<double>>(std::move(values));
        t.set_requires_grad(requires_grad);
        return t;
    }

    static Tensor scalar(double value, bool requires_grad = false) {
        return from({1}, {value}, requires_grad);
    }

    static Tensor randn(Shape shape, Philox& rng, double stddev = 1.0, bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (double& v : t.data()) v = stddev * rng.normal();
        return t;
    }

    static Tensor rand_uniform(Shape shape, Philox& rng, double lo, double hi,
                               bool requires_grad = false) {
        Tensor t = zeros(std::move(shape), requires_grad);
        for (double& v : t.data()) v = rng.uniform(lo, hi);
        return t;
    }

    bool defined() const { return static_cast<bool>(data_); }
    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::int64_t numel() const { return data_ ? static_cast<std::int64_t>(data_->size()) : 0; }
    bool requires_grad() const { return requires_grad_; }

    std::vector<double>& data() { return *data_; }
    const std::vector<double>& data() const { return *data_; }
    std::vector<double>& grad() { return *grad_; }
    const std::vector<double>& grad() const { return *grad_; }
    bool has_grad() const { return static_cast<bool>(grad_); }

    double value() const {
        if (numel() != 1) throw ShapeError("Tensor::value: not a scalar, shape " + shape_str(shape_));
        return (*data_)[0];
    }

    double& at(int i) { return (*data_)[i]; }
    double at(int i) const { return (*data_)[i]; }
    double& at(int i, int j) { return (*data_)[static_cast<std::int64_t>(i) * shape_[1] + j]; }
    double at(int i, int j) const { return (*data_)[static_cast<std::int64_t>(i) * shape_[1] + j]; }
    double& at(int i, int j, int k) {
        return (*data_)[(static_cast<std::int64_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    double at(int i, int j, int k) const {
        return (*data_)[(static_cast<std::int64_t>(i) * shape_[1] + j) * shape_[2] + k];
    }

    /// Handle aliasing the same buffers but detached from the graph.
    Tensor detached_view() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = data_;
        t.grad_ = grad_;
        t.requires_grad_ = requires_grad_;
        return t;
    }

    /// Deep copy of the values (no grad, no node).
    Tensor clone_data() const {
        Tensor t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<double>>(*data_);
        return t;
    }

    void set_requires_grad(bool rg) {
        requires_grad_ = rg;
        if (rg && !grad_ && data_) grad_ = std::make_shared<std::vector<double>>(data_->size(), 0.0);
    }

    void zero_grad() {
        if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
    }

    void accumulate_grad(const std::vector<double>& g) {
        if (!grad_) grad_ = std::make_shared<std::vector<double>>(data_->size(), 0.0);
        for (size_t i = 0; i < g.size(); ++i) (*grad_)[i] += g[i];
    }

    /// Reverse-mode pass from a scalar output. Seeds d(out)/d(out) = 1 and
    /// accumulates into every requires-grad tensor reachable through the graph.
    void backward() {
        if (numel() != 1)
            throw ShapeError("backward: output must be scalar, got " + shape_str(shape_));
        if (!node_ && !requires_grad_) return;
        if (grad_) (*grad_)[0] += 1.0;

        // Post-order DFS; the reversed order visits each node after every node
        // that consumes its output. Holding full handles here is transient, so
        // no ownership cycle forms.
        std::vector<Tensor> order;
        std::unordered_set<GradNode*> seen;
        std::function<void(const Tensor&)> visit = [&](const Tensor& t) {
            if (!t.node_ || seen.count(t.node_.get())) return;
            seen.insert(t.node_.get());
            for (const Tensor& p : t.node_->parents) visit(p);
            order.push_back(t);
        };
        visit(*this);

        for (std::int64_t i = static_cast<std::int64_t>(order.size()) - 1; i >= 0; --i) {
            order[i].node_->backward(order[i]);
        }
    }

    // Graph wiring used by ops.
    void set_node(std::shared_ptr<GradNode> node) { node_ = std::move(node); }
    const std::shared_ptr<GradNode>& node() const { return node_; }

private:
    Shape shape_;
    std::shared_ptr<std::vector<double>> data_;
    std::shared_ptr<std::vector<double>> grad_;
    bool requires_grad_ = false;
    std::shared_ptr<GradNode> node_;
};

namespace detail {

inline bool any_requires_grad(const std::vector<Tensor>& ts) {
    for (const Tensor& t : ts)
        if (t.requires_grad()) return true;
    return false;
}

/// Wire an op output into the graph if grad mode is on and any input needs it.
inline void attach_node(Tensor& out, std::vector<Tensor> parents,
                        std::function<void(const Tensor&)> backward) {
    if (!grad_enabled() || !any_requires_grad(parents)) return;
    out.set_requires_grad(true);
    auto node = std::make_shared<GradNode>();
    node->parents = std::move(parents);
    node->backward = std::move(backward);
    out.set_node(std::move(node));
}

}  // namespace detail

}  // namespace pgpseg
