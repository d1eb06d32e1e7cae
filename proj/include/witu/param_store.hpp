#pragma once

#include <cstddef>
#include <deque>
#include <string>
#include <unordered_map>

#include "witu/tensor.hpp"

namespace witu {

template <typename T>
struct Parameter {
    std::string name;
    BasicTensor<T> value;
    BasicTensor<T> grad;
    // AdamW first/second moments; empty until the first optimizer step.
    BasicTensor<T> m;
    BasicTensor<T> v;
    bool has_grad = false;
};

// Named parameters in registration order. References returned by add()/at()
// stay valid for the lifetime of the store.
template <typename T>
class ParamStore {
public:
    Parameter<T>& add(std::string name, BasicTensor<T> init) {
        if (index_.contains(name)) throw ConfigError("duplicate parameter name: " + name);
        index_.emplace(name, params_.size());
        auto& p = params_.emplace_back();
        p.name = std::move(name);
        p.grad = BasicTensor<T>(init.dims());
        p.value = std::move(init);
        return p;
    }

    Parameter<T>* find(const std::string& name) {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &params_[it->second];
    }
    const Parameter<T>* find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? nullptr : &params_[it->second];
    }
    Parameter<T>& at(const std::string& name) {
        auto* p = find(name);
        if (!p) throw ConfigError("unknown parameter: " + name);
        return *p;
    }
    const Parameter<T>& at(const std::string& name) const {
        auto* p = find(name);
        if (!p) throw ConfigError("unknown parameter: " + name);
        return *p;
    }

    std::size_t size() const { return params_.size(); }
    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.value.numel();
        return n;
    }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

    void zero_grad() {
        for (auto& p : params_) {
            p.grad.fill(T(0));
            p.has_grad = false;
        }
    }

    // Copies values (and optimizer state) into another precision.
    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& p : params_) {
            auto& q = out.add(p.name, p.value.template cast<U>());
            if (!p.m.empty()) q.m = p.m.template cast<U>();
            if (!p.v.empty()) q.v = p.v.template cast<U>();
        }
        out.step = step;
        return out;
    }

    // Optimizer steps taken so far.
    std::size_t step = 0;

private:
    std::deque<Parameter<T>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace witu
