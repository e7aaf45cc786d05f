#pragma once

#include <functional>
#include <string>
#include <vector>

#include "bseq/model.hpp"
#include "bseq/ops.hpp"
#include "bseq/rng.hpp"
#include "bseq/tensor.hpp"

namespace bseq {

// Finite-difference gradient verification, always run at double precision.
// The loss function must be a deterministic map from the current tensor
// values to a scalar (stochastic pieces such as dropout masks have to be
// frozen by the caller, e.g. by reseeding an rng on every call).

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    int n_checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 1e-5;

    bool passed() const {
        for (const auto& e : entries) {
            if (!(e.max_rel_err < tolerance)) return false;
        }
        return !entries.empty();
    }

    double worst() const {
        double w = 0.0;
        for (const auto& e : entries) w = std::max(w, e.max_rel_err);
        return w;
    }
};

using LossFn = std::function<Tensor<double>()>;

struct NamedTensor {
    std::string name;
    Tensor<double>* t = nullptr;
};

// Compares analytic gradients of `loss` against central differences at up
// to n_coords sampled coordinates per tensor. One analytic backward pass
// serves all tensors.
inline GradCheckReport fd_check(const std::vector<NamedTensor>& tensors, const LossFn& loss,
                                Rng& rng, int n_coords = 100, double h = 1e-3,
                                double tolerance = 1e-5) {
    for (const auto& nt : tensors) {
        if (!nt.t->requires_grad) throw StateError("fd_check: tensor does not require grad");
        nt.t->zero_grad();
    }
    {
        Tensor<double> l = loss();
        backward(l);
    }

    auto eval = [&]() {
        NoGradGuard guard;
        return loss().item();
    };

    GradCheckReport report;
    report.tolerance = tolerance;
    for (const auto& nt : tensors) {
        Tensor<double>& t = *nt.t;
        const std::vector<double> analytic = *t.grad;
        std::vector<size_t> coords(t.numel());
        for (size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        if (static_cast<int>(coords.size()) > n_coords) {
            rng.shuffle(coords);
            coords.resize(n_coords);
        }
        GradCheckEntry entry{nt.name, 0.0, static_cast<int>(coords.size())};
        for (size_t c : coords) {
            const double orig = (*t.data)[c];
            (*t.data)[c] = orig + h;
            const double fp = eval();
            (*t.data)[c] = orig - h;
            const double fm = eval();
            (*t.data)[c] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double denom = std::max({std::abs(analytic[c]), std::abs(numeric), 0.1});
            entry.max_rel_err =
                std::max(entry.max_rel_err, std::abs(analytic[c] - numeric) / denom);
        }
        report.entries.push_back(std::move(entry));
    }
    return report;
}

inline GradCheckEntry fd_check_tensor(const std::string& name, Tensor<double>& t,
                                      const LossFn& loss, Rng& rng, int n_coords = 100,
                                      double h = 1e-3) {
    return fd_check({{name, &t}}, loss, rng, n_coords, h).entries[0];
}

// Fixed battery behind the grad-check command: one block per layer type,
// then a full model in eval mode built from cfg. Each block collapses to a
// single entry; standalone-op shapes are sized so every tensor offers at
// least n_coords coordinates.
inline GradCheckReport layer_suite(const ModelConfig& cfg, uint64_t seed = 0, int n_coords = 100,
                                   double tolerance = 1e-5) {
    cfg.validate();
    using T64 = Tensor<double>;
    GradCheckReport report;
    report.tolerance = tolerance;

    auto rand_t = [](std::vector<int> shape, Rng& rng, double sd = 1.0) {
        T64 t(std::move(shape));
        for (auto& v : *t.data) v = rng.normal() * sd;
        return t;
    };
    auto rand_w = [](size_t n, Rng& rng) {
        std::vector<double> w(n);
        for (auto& v : w) v = rng.normal();
        return w;
    };
    auto collapse = [&](const std::string& name, const GradCheckReport& sub) {
        GradCheckEntry e{name, 0.0, 0};
        for (const auto& s : sub.entries) {
            e.max_rel_err = std::max(e.max_rel_err, s.max_rel_err);
            e.n_checked += s.n_checked;
        }
        report.entries.push_back(std::move(e));
    };

    {
        Rng rng(derive_seed(seed, "gc.linear"));
        T64 x = rand_t({10, 12}, rng);
        T64 w = rand_t({12, 104}, rng);
        T64 b = rand_t({104}, rng);
        T64 target = rand_t({10, 104}, rng);
        x.set_requires_grad();
        w.set_requires_grad();
        b.set_requires_grad();
        auto loss = [&]() { return mean_all(mse_rows(linear(x, w, b), target)); };
        Rng coord(derive_seed(seed, "gc.linear.coord"));
        collapse("linear", fd_check({{"x", &x}, {"w", &w}, {"b", &b}}, loss, coord, n_coords));
    }
    {
        Rng rng(derive_seed(seed, "gc.softmax"));
        T64 logits = rand_t({52, 2}, rng);
        logits.set_requires_grad();
        std::vector<int> labels(52);
        for (size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 2);
        auto loss = [&]() { return mean_all(cross_entropy_rows(softmax_rows(logits), labels)); };
        Rng coord(derive_seed(seed, "gc.softmax.coord"));
        collapse("softmax", fd_check({{"logits", &logits}}, loss, coord, n_coords));
    }
    {
        Rng rng(derive_seed(seed, "gc.layer_norm"));
        T64 x = rand_t({8, 103}, rng);
        T64 g = rand_t({103}, rng);
        T64 b = rand_t({103}, rng);
        x.set_requires_grad();
        g.set_requires_grad();
        b.set_requires_grad();
        const auto wts = rand_w(8 * 103, rng);
        auto loss = [&]() { return weighted_sum(layer_norm_rows(x, g, b), wts); };
        Rng coord(derive_seed(seed, "gc.layer_norm.coord"));
        collapse("layer_norm",
                 fd_check({{"x", &x}, {"gamma", &g}, {"beta", &b}}, loss, coord, n_coords));
    }
    {
        Rng rng(derive_seed(seed, "gc.relu"));
        T64 x = rand_t({8, 16}, rng);
        for (auto& v : *x.data) {
            if (std::abs(v) < 0.1) v = v < 0 ? v - 0.1 : v + 0.1;
        }
        x.set_requires_grad();
        const auto wts = rand_w(8 * 16, rng);
        auto loss = [&]() { return weighted_sum(relu(x), wts); };
        Rng coord(derive_seed(seed, "gc.relu.coord"));
        collapse("relu", fd_check({{"x", &x}}, loss, coord, n_coords));
    }
    {
        Rng rng(derive_seed(seed, "gc.attention"));
        const int batch = 2, s = 6, d = 24, heads = 3;
        T64 q = rand_t({batch * s, d}, rng);
        T64 k = rand_t({batch * s, d}, rng);
        T64 v = rand_t({batch * s, d}, rng);
        q.set_requires_grad();
        k.set_requires_grad();
        v.set_requires_grad();
        const auto wts = rand_w(static_cast<size_t>(batch) * s * d, rng);
        auto loss = [&]() {
            return weighted_sum(attention_context(q, k, v, heads, s, 0.0, nullptr, false), wts);
        };
        Rng coord(derive_seed(seed, "gc.attention.coord"));
        collapse("attention", fd_check({{"q", &q}, {"k", &k}, {"v", &v}}, loss, coord, n_coords));
    }
    {
        Rng rng(derive_seed(seed, "gc.dropout"));
        T64 x = rand_t({10, 12}, rng);
        x.set_requires_grad();
        const auto wts = rand_w(10 * 12, rng);
        const uint64_t mask_seed = derive_seed(seed, "gc.dropout.mask");
        auto loss = [&]() {
            Rng mask_rng(mask_seed);  // reseeded every call so the mask is fixed
            return weighted_sum(dropout(x, 0.3, &mask_rng, true), wts);
        };
        Rng coord(derive_seed(seed, "gc.dropout.coord"));
        collapse("dropout", fd_check({{"x", &x}}, loss, coord, n_coords));
    }
    {
        Rng init(derive_seed(seed, "gc.model.init"));
        PairedSeqModel<double> model(cfg, init);
        const int batch = 2;
        Rng rng(derive_seed(seed, "gc.model.data"));
        T64 x = rand_t({batch * kSeqLen, cfg.d_model}, rng, 0.5);
        x.set_requires_grad();
        std::vector<int> ntp_labels{1, 0};
        std::vector<int> sg_labels{0, 1};
        std::vector<int> mask_rows{2, kSeqLen + 3};
        T64 targets = rand_t({2, cfg.d_model}, rng, 0.5);
        auto loss = [&]() {
            auto enc = model.encode(x, false, nullptr);
            auto e_ntp = mean_all(cross_entropy_rows(model.ntp_probs(enc), ntp_labels));
            auto e_mbm = mean_all(mse_rows(model.mbm_recon(enc, mask_rows), targets));
            auto e_sg = mean_all(cross_entropy_rows(model.sg_probs(enc), sg_labels));
            return add(add(e_ntp, e_mbm), e_sg);
        };
        std::vector<NamedTensor> tensors{{"input", &x}};
        for (auto* p : model.params()) tensors.push_back({p->name, &p->value});
        Rng coord(derive_seed(seed, "gc.model.coord"));
        collapse("full_model", fd_check(tensors, loss, coord, n_coords));
    }
    return report;
}

}  // namespace bseq
