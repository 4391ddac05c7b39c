#pragma once

#include <atomic>
#include <functional>
#include <string>
#include <vector>

#include "mrovseg/tensor.hpp"

namespace mrovseg {

// Reverse-mode tape. One tape per training step; nodes are appended in
// execution order so reverse iteration is a valid topological order.
// Single-writer: the thread that activates a tape is the only one recording
// onto it (the active pointer is thread_local).
template <class S>
class TapeT {
public:
    struct Node {
        const char* op;
        // Receives the node's output gradient and accumulates into its inputs'
        // gradient slots. Saved values live in the closure.
        std::function<void(TapeT&, const TensorT<S>&)> backward;
    };

    TapeT() : serial_(next_serial()++) {}
    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    uint64_t serial() const { return serial_; }
    size_t size() const { return nodes_.size(); }

    static TapeT*& active() {
        thread_local TapeT* t = nullptr;
        return t;
    }

    // RAII activation; nested scopes restore the previous tape.
    class Scope {
    public:
        explicit Scope(TapeT& t) : prev_(active()) { active() = &t; }
        ~Scope() { active() = prev_; }
        Scope(const Scope&) = delete;

    private:
        TapeT* prev_;
    };

    // Registers a trainable leaf. Must be called before the tensor is used in
    // a recorded op for gradients to reach it.
    void watch(TensorT<S>& t) {
        if (!t.requires_grad)
            throw ContractError("watch() requires requires_grad=true");
        t.node = add_node("leaf", {});
        t.tape_serial = serial_;
    }

    int add_node(const char* op, std::function<void(TapeT&, const TensorT<S>&)> backward) {
        nodes_.push_back(Node{op, std::move(backward)});
        return static_cast<int>(nodes_.size()) - 1;
    }

    // Marks an op output as recorded at `id`.
    void bind(TensorT<S>& out, int id) {
        out.node = id;
        out.tape_serial = serial_;
    }

    bool has_grad(int id) const {
        return id >= 0 && id < static_cast<int>(grads_.size()) && grads_[static_cast<size_t>(id)].data;
    }

    const TensorT<S>& grad_at(int id) const { return grads_[static_cast<size_t>(id)]; }

    // Gradient of a watched/recorded tensor after backward(); nullptr if none.
    const TensorT<S>* grad(const TensorT<S>& t) const {
        if (t.tape_serial != serial_ || !has_grad(t.node)) return nullptr;
        return &grads_[static_cast<size_t>(t.node)];
    }

    void accumulate(int id, TensorT<S> g) {
        if (id < 0) return;
        auto& slot = grads_[static_cast<size_t>(id)];
        if (!slot.data) {
            // adopt the buffer; it may still be shared with an upstream slot
            // (already consumed) or a sibling input, so mutation below must
            // copy first
            g.node = -1;
            g.tape_serial = 0;
            slot = std::move(g);
            return;
        }
        if (slot.shape != g.shape)
            throw DimensionError("gradient shape mismatch: " + shape_str(slot.shape) + " vs " +
                                 shape_str(g.shape));
        if (slot.data.use_count() > 1) slot = slot.detached_copy();  // copy-on-write
        S* a = slot.ptr();
        const S* b = g.ptr();
        for (int64_t i = 0; i < slot.numel(); ++i) a[i] += b[i];
    }

    void backward(const TensorT<S>& loss) {
        if (loss.numel() != 1)
            throw ContractError("backward() requires a scalar loss, got " + shape_str(loss.shape));
        if (loss.tape_serial != serial_ || loss.node < 0)
            throw ContractError("backward() loss is not connected to this tape");
        grads_.assign(nodes_.size(), TensorT<S>{});
        grads_[static_cast<size_t>(loss.node)] = ones_like(loss);
        for (int i = loss.node; i >= 0; --i) {
            if (!grads_[static_cast<size_t>(i)].data) continue;
            auto& node = nodes_[static_cast<size_t>(i)];
            if (node.backward) node.backward(*this, grads_[static_cast<size_t>(i)]);
        }
    }

private:
    static std::atomic<uint64_t>& next_serial() {
        static std::atomic<uint64_t> s{1};
        return s;
    }

    uint64_t serial_;
    std::vector<Node> nodes_;
    std::vector<TensorT<S>> grads_;
};

using Tape = TapeT<float>;
using Tape64 = TapeT<double>;

// True when the current thread should record `t` onto the active tape.
template <class S>
bool is_tracked(const TensorT<S>& t) {
    auto* tape = TapeT<S>::active();
    return tape && t.tracked(tape->serial());
}

}  // namespace mrovseg
