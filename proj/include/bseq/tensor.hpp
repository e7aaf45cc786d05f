#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "bseq/errors.hpp"
#include "bseq/rng.hpp"

namespace bseq {

template <typename S>
class Tensor;

// One autograd node per op output. parents hold shared handles to the input
// tensors so the graph stays alive until backward() has run.
template <typename S>
struct Node {
    std::vector<Tensor<S>> parents;
    std::function<void(const Tensor<S>& out)> backward;
};

// Dense row-major tensor with shared storage. Copies alias the same buffers,
// which is what the autograd graph relies on: a parameter tensor captured as
// a parent accumulates gradient into the same buffer the optimizer reads.
template <typename S>
class Tensor {
  public:
    std::vector<int> shape;
    std::shared_ptr<std::vector<S>> data;
    std::shared_ptr<std::vector<S>> grad;  // allocated iff requires_grad
    std::shared_ptr<Node<S>> node;         // non-null for op outputs
    bool requires_grad = false;

    Tensor() = default;

    explicit Tensor(std::vector<int> shp, S fill = S(0)) : shape(std::move(shp)) {
        data = std::make_shared<std::vector<S>>(checked_numel(shape), fill);
    }

    Tensor(std::vector<int> shp, std::vector<S> values) : shape(std::move(shp)) {
        if (values.size() != checked_numel(shape)) {
            throw ShapeError("tensor: data length does not match shape");
        }
        data = std::make_shared<std::vector<S>>(std::move(values));
    }

    static Tensor zeros(std::vector<int> shp) { return Tensor(std::move(shp)); }

    static Tensor full(std::vector<int> shp, S v) { return Tensor(std::move(shp), v); }

    static Tensor scalar(S v) { return Tensor({1}, std::vector<S>{v}); }

    static Tensor uniform(std::vector<int> shp, Rng& rng, double lo, double hi) {
        Tensor t(std::move(shp));
        for (S& v : *t.data) v = static_cast<S>(rng.uniform(lo, hi));
        return t;
    }

    static Tensor randn(std::vector<int> shp, Rng& rng, double sd = 1.0) {
        Tensor t(std::move(shp));
        for (S& v : *t.data) v = static_cast<S>(sd * rng.normal());
        return t;
    }

    size_t numel() const { return data ? data->size() : 0; }

    int ndim() const { return static_cast<int>(shape.size()); }

    int rows() const {
        require_2d("rows");
        return shape[0];
    }

    int cols() const {
        require_2d("cols");
        return shape[1];
    }

    S& at(int i, int j) { return (*data)[static_cast<size_t>(i) * shape[1] + j]; }
    S at(int i, int j) const { return (*data)[static_cast<size_t>(i) * shape[1] + j]; }

    S* ptr() { return data->data(); }
    const S* ptr() const { return data->data(); }

    S item() const {
        if (numel() != 1) throw ShapeError("item: tensor is not a scalar");
        return (*data)[0];
    }

    // Marks a leaf as differentiable and allocates its gradient buffer.
    Tensor& set_requires_grad() {
        requires_grad = true;
        if (!grad) grad = std::make_shared<std::vector<S>>(numel(), S(0));
        return *this;
    }

    void zero_grad() {
        if (grad) std::fill(grad->begin(), grad->end(), S(0));
    }

    Tensor detached_copy() const {
        Tensor t;
        t.shape = shape;
        t.data = std::make_shared<std::vector<S>>(*data);
        return t;
    }

    bool all_finite() const {
        for (S v : *data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

  private:
    void require_2d(const char* who) const {
        if (shape.size() != 2) throw ShapeError(std::string(who) + ": tensor is not 2-D");
    }

    static size_t checked_numel(const std::vector<int>& shp) {
        size_t n = 1;
        for (int d : shp) {
            if (d <= 0) throw ShapeError("tensor: non-positive dimension");
            n *= static_cast<size_t>(d);
        }
        return n;
    }
};

namespace detail {

// thread-local so parallel fold runs do not interfere
inline bool& grad_enabled_flag() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

// Disables graph construction in scope; used by evaluation passes.
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Reverse-mode sweep from a scalar loss. Gradients accumulate; callers reset
// leaf gradients explicitly (zero_grads) between optimizer steps.
template <typename S>
void backward(Tensor<S>& loss) {
    if (loss.numel() != 1) throw ShapeError("backward: loss is not a scalar");
    if (!loss.node) {
        if (loss.requires_grad) {
            (*loss.grad)[0] += S(1);
            return;
        }
        throw StateError("backward: no recorded forward computation");
    }

    // iterative post-order DFS over op outputs, deduplicated by node
    std::vector<Tensor<S>> topo;
    std::unordered_set<const Node<S>*> seen;
    struct Frame {
        Tensor<S> t;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    seen.insert(loss.node.get());
    stack.push_back({loss, 0});
    while (!stack.empty()) {
        Frame& f = stack.back();
        auto& parents = f.t.node->parents;
        if (f.next_parent < parents.size()) {
            Tensor<S> p = parents[f.next_parent++];
            if (p.node && !seen.count(p.node.get())) {
                seen.insert(p.node.get());
                stack.push_back({std::move(p), 0});
            }
        } else {
            topo.push_back(f.t);
            stack.pop_back();
        }
    }

    (*loss.grad)[0] += S(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        if (it->node->backward) it->node->backward(*it);
    }
}

}  // namespace bseq
