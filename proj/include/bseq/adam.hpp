#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "bseq/tensor.hpp"

namespace bseq {

// A trainable tensor plus its Adam state. Moments are allocated lazily on
// the first step so freshly built models stay cheap to construct.
template <typename S>
struct Param {
    std::string name;
    Tensor<S> value;
    std::vector<S> adam_m;
    std::vector<S> adam_v;
    long step_count = 0;

    Param(std::string n, Tensor<S> v) : name(std::move(n)), value(std::move(v)) {
        value.set_requires_grad();
    }
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;

    void validate() const {
        if (lr < 0) throw ConfigError("adam: lr must be non-negative");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
            throw ConfigError("adam: betas must lie in [0, 1)");
        }
        if (eps <= 0) throw ConfigError("adam: eps must be positive");
        if (weight_decay < 0) throw ConfigError("adam: weight_decay must be non-negative");
    }
};

// One Adam update. L2 regularization is coupled: wd * w is added to the
// gradient before the moment updates, so the decay passes through the
// adaptive scaling.
template <typename S>
void adam_step(Param<S>& p, const AdamConfig& cfg) {
    cfg.validate();
    if (!p.value.grad) throw StateError("adam_step: parameter has no gradient buffer");
    const size_t n = p.value.numel();
    if (p.adam_m.empty()) {
        p.adam_m.assign(n, S(0));
        p.adam_v.assign(n, S(0));
    }
    p.step_count += 1;
    const S b1 = static_cast<S>(cfg.beta1);
    const S b2 = static_cast<S>(cfg.beta2);
    const S wd = static_cast<S>(cfg.weight_decay);
    const S eps = static_cast<S>(cfg.eps);
    const S bc1 = S(1) - static_cast<S>(std::pow(cfg.beta1, static_cast<double>(p.step_count)));
    const S bc2 = S(1) - static_cast<S>(std::pow(cfg.beta2, static_cast<double>(p.step_count)));
    const S step_lr = static_cast<S>(cfg.lr);
    S* w = p.value.ptr();
    S* g = p.value.grad->data();
    for (size_t i = 0; i < n; ++i) {
        const S gi = g[i] + wd * w[i];
        p.adam_m[i] = b1 * p.adam_m[i] + (S(1) - b1) * gi;
        p.adam_v[i] = b2 * p.adam_v[i] + (S(1) - b2) * gi * gi;
        const S mhat = p.adam_m[i] / bc1;
        const S vhat = p.adam_v[i] / bc2;
        w[i] -= step_lr * mhat / (std::sqrt(vhat) + eps);
    }
}

template <typename S>
void adam_step_all(std::vector<Param<S>*>& params, const AdamConfig& cfg) {
    for (Param<S>* p : params) adam_step(*p, cfg);
}

template <typename S>
void zero_grads(std::vector<Param<S>*>& params) {
    for (Param<S>* p : params) p->value.zero_grad();
}

}  // namespace bseq
