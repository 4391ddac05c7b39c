#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "mrovseg/tape.hpp"
#include "mrovseg/tensor.hpp"

namespace mrovseg {

// Named parameters with a frozen/trainable split. Iteration order is the
// registration order, which keeps optimizer traversal and checkpoint layout
// deterministic.
template <class S>
class ParameterStoreT {
public:
    TensorT<S>& add(const std::string& name, TensorT<S> t, bool frozen = false) {
        if (params_.count(name)) throw ContractError("parameter already registered: " + name);
        t.requires_grad = !frozen;
        order_.push_back(name);
        if (frozen) frozen_.insert(name);
        return params_.emplace(name, std::move(t)).first->second;
    }

    bool has(const std::string& name) const { return params_.count(name) > 0; }

    TensorT<S>& at(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw ContractError("unknown parameter: " + name);
        return it->second;
    }
    const TensorT<S>& at(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw ContractError("unknown parameter: " + name);
        return it->second;
    }

    bool is_frozen(const std::string& name) const { return frozen_.count(name) > 0; }
    const std::vector<std::string>& names() const { return order_; }
    size_t size() const { return order_.size(); }

    void watch_trainable(TapeT<S>& tape) {
        for (const auto& n : order_)
            if (!frozen_.count(n)) tape.watch(params_.at(n));
    }

    // Gradients of all trainable parameters after backward; missing slots are
    // zero tensors (a parameter may be unused by a given loss).
    std::map<std::string, TensorT<S>> pull_grads(const TapeT<S>& tape) const {
        std::map<std::string, TensorT<S>> out;
        for (const auto& n : order_) {
            if (frozen_.count(n)) continue;
            const auto& p = params_.at(n);
            const TensorT<S>* g = tape.grad(p);
            out[n] = g ? g->detached_copy() : zeros_like(p);
        }
        return out;
    }

    int64_t count_elems(bool frozen) const {
        int64_t n = 0;
        for (const auto& name : order_)
            if (frozen_.count(name) == static_cast<size_t>(frozen ? 1 : 0)) n += params_.at(name).numel();
        return n;
    }

    // FNV-1a over raw storage bytes; used by the freeze-contract checks.
    uint64_t checksum(const std::string& name) const {
        const auto& t = at(name);
        const unsigned char* p = reinterpret_cast<const unsigned char*>(t.ptr());
        size_t nbytes = static_cast<size_t>(t.numel()) * sizeof(S);
        uint64_t h = 1469598103934665603ULL;
        for (size_t i = 0; i < nbytes; ++i) {
            h ^= p[i];
            h *= 1099511628211ULL;
        }
        return h;
    }

    uint64_t frozen_checksum() const {
        uint64_t h = 1469598103934665603ULL;
        for (const auto& n : order_) {
            if (!frozen_.count(n)) continue;
            uint64_t c = checksum(n);
            h ^= c;
            h *= 1099511628211ULL;
        }
        return h;
    }

private:
    std::vector<std::string> order_;
    std::map<std::string, TensorT<S>> params_;
    std::set<std::string> frozen_;
};

using ParameterStore = ParameterStoreT<float>;

}  // namespace mrovseg
