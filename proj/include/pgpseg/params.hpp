#pragma once

// Ordered, named parameter registry.
//
// Modules register their tensors here at construction time. The registry
// order is the canonical order for optimizer updates and checkpoint layout.
// Initialization draws from a Philox stream keyed by the parameter name, so
// adding or removing one parameter never shifts the values of another.

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "pgpseg/rng.hpp"
#include "pgpseg/tensor.hpp"

namespace pgpseg {

class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
        bool trainable;
    };

    explicit ParamStore(std::uint64_t seed = 0) : seed_(seed) {}

    std::uint64_t seed() const { return seed_; }

    /// Registers a tensor under a unique name. Returns a handle sharing the
    /// underlying buffers.
    Tensor add(const std::string& name, Tensor t, bool trainable = true) {
        if (index_.count(name)) throw std::logic_error("ParamStore: duplicate param " + name);
        t.set_requires_grad(trainable);
        index_[name] = entries_.size();
        entries_.push_back({name, t, trainable});
        return t;
    }

    /// Fan-in-scaled centered uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    Tensor add_uniform(const std::string& name, Shape shape, int fan_in, bool trainable = true) {
        Philox rng(seed_, stream_id("init:" + name));
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        return add(name, Tensor::rand_uniform(std::move(shape), rng, -bound, bound), trainable);
    }

    /// Centered Gaussian init with the given standard deviation.
    Tensor add_gaussian(const std::string& name, Shape shape, double stddev, bool trainable = true) {
        Philox rng(seed_, stream_id("init:" + name));
        return add(name, Tensor::randn(std::move(shape), rng, stddev), trainable);
    }

    Tensor add_zeros(const std::string& name, Shape shape, bool trainable = true) {
        return add(name, Tensor::zeros(std::move(shape)), trainable);
    }

    Tensor add_full(const std::string& name, Shape shape, double value, bool trainable = true) {
        return add(name, Tensor::full(std::move(shape), value), trainable);
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    const Tensor& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::logic_error("ParamStore: unknown param " + name);
        return entries_[it->second].tensor;
    }

    const std::vector<Entry>& entries() const { return entries_; }

    std::vector<Tensor> trainable_params() const {
        std::vector<Tensor> out;
        for (const Entry& e : entries_)
            if (e.trainable) out.push_back(e.tensor);
        return out;
    }

    std::vector<Tensor> all_params() const {
        std::vector<Tensor> out;
        for (const Entry& e : entries_) out.push_back(e.tensor);
        return out;
    }

    void zero_grad() {
        for (Entry& e : entries_)
            if (e.trainable) e.tensor.zero_grad();
    }

    std::int64_t total_elements() const {
        std::int64_t n = 0;
        for (const Entry& e : entries_) n += e.tensor.numel();
        return n;
    }

private:
    std::uint64_t seed_;
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

}  // namespace pgpseg
