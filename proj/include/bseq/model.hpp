#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "bseq/adam.hpp"
#include "bseq/ops.hpp"

namespace bseq {

// Input layout: [CLS, x1..x5, SEP, x6..x10], one row per position. The
// first three feature dims are reserved for the token indicators and are
// zero in every data image.
inline constexpr int kSeqLen = 12;
inline constexpr int kWindow = 5;
inline constexpr int kClsPos = 0;
inline constexpr int kSepPos = 6;
inline constexpr int kClsDim = 0;
inline constexpr int kSepDim = 1;
inline constexpr int kMskDim = 2;
inline constexpr int kReservedDims = 3;

// Data positions within a 12-row sample, i.e. everything but CLS/SEP.
inline const std::vector<int>& data_positions() {
    static const std::vector<int> pos{1, 2, 3, 4, 5, 7, 8, 9, 10, 11};
    return pos;
}

struct ModelConfig {
    int d_model = 420;
    int n_layers = 3;
    int n_heads = 2;
    int forward_expansion = 4;
    double dropout = 0.1;

    void validate() const {
        if (d_model < 4) throw ConfigError("model: d_model must be at least 4");
        if (d_model % 2 != 0) throw ConfigError("model: d_model must be even");
        if (n_heads < 1) throw ConfigError("model: n_heads must be positive");
        if (d_model % n_heads != 0) throw ConfigError("model: d_model must divide by n_heads");
        if (n_layers < 1) throw ConfigError("model: n_layers must be positive");
        if (forward_expansion < 1) throw ConfigError("model: forward_expansion must be positive");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0, 1)");
    }

    long param_count() const {
        const long d = d_model;
        const long per_layer = 4 * (d * d + d)                       // q/k/v/out projections
                               + 2 * 2 * d                           // two layer norms
                               + d * forward_expansion * d + forward_expansion * d
                               + forward_expansion * d * d + d;      // feed forward
        const long heads = (d * (d / 2) + d / 2) + ((d / 2) * 2 + 2)  // next-thought
                           + (d * 2 * d + 2 * d) + (2 * d * d + d)    // masked-brain
                           + (d * 2 + 2);                             // same-genre
        return n_layers * per_layer + heads;
    }
};

template <typename S>
Tensor<S> token_row(int token_dim, int d) {
    Tensor<S> t = Tensor<S>::zeros({1, d});
    (*t.data)[token_dim] = S(1);
    return t;
}

// Fixed sinusoidal positional encoding over all kSeqLen positions,
// including CLS and SEP.
template <typename S>
Tensor<S> positional_encoding(int d) {
    Tensor<S> pe = Tensor<S>::zeros({kSeqLen, d});
    for (int pos = 0; pos < kSeqLen; ++pos) {
        for (int i = 0; i < d; i += 2) {
            const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d);
            pe.at(pos, i) = static_cast<S>(std::sin(angle));
            if (i + 1 < d) pe.at(pos, i + 1) = static_cast<S>(std::cos(angle));
        }
    }
    return pe;
}

template <typename S>
struct LinearLayer {
    Param<S> w, b;

    LinearLayer(const std::string& prefix, int in, int out, Rng& rng)
        : w(prefix + ".w", Tensor<S>::uniform({in, out}, rng, -1.0 / std::sqrt(double(in)),
                                              1.0 / std::sqrt(double(in)))),
          b(prefix + ".b", Tensor<S>::uniform({out}, rng, -1.0 / std::sqrt(double(in)),
                                              1.0 / std::sqrt(double(in)))) {}

    Tensor<S> operator()(const Tensor<S>& x) const { return linear(x, w.value, b.value); }

    void collect(std::vector<Param<S>*>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }
};

template <typename S>
struct LayerNormLayer {
    Param<S> gamma, beta;

    LayerNormLayer(const std::string& prefix, int d)
        : gamma(prefix + ".gamma", Tensor<S>::full({d}, S(1))),
          beta(prefix + ".beta", Tensor<S>::zeros({d})) {}

    Tensor<S> operator()(const Tensor<S>& x) const {
        return layer_norm_rows(x, gamma.value, beta.value);
    }

    void collect(std::vector<Param<S>*>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }
};

// One post-norm encoder block: attention -> add & norm -> feed forward ->
// add & norm, with dropout on attention weights and on both sublayer
// outputs.
template <typename S>
struct EncoderLayer {
    int n_heads;
    double p;
    LinearLayer<S> wq, wk, wv, wo, ff1, ff2;
    LayerNormLayer<S> ln1, ln2;

    EncoderLayer(const std::string& prefix, const ModelConfig& cfg, Rng& rng)
        : n_heads(cfg.n_heads),
          p(cfg.dropout),
          wq(prefix + ".wq", cfg.d_model, cfg.d_model, rng),
          wk(prefix + ".wk", cfg.d_model, cfg.d_model, rng),
          wv(prefix + ".wv", cfg.d_model, cfg.d_model, rng),
          wo(prefix + ".wo", cfg.d_model, cfg.d_model, rng),
          ff1(prefix + ".ff1", cfg.d_model, cfg.forward_expansion * cfg.d_model, rng),
          ff2(prefix + ".ff2", cfg.forward_expansion * cfg.d_model, cfg.d_model, rng),
          ln1(prefix + ".ln1", cfg.d_model),
          ln2(prefix + ".ln2", cfg.d_model) {}

    Tensor<S> operator()(const Tensor<S>& x, bool train, Rng* rng) const {
        auto ctx = attention_context(wq(x), wk(x), wv(x), n_heads, kSeqLen, p, rng, train);
        auto h = ln1(add(x, dropout(wo(ctx), p, rng, train)));
        auto ff = ff2(relu(ff1(h)));
        return ln2(add(h, dropout(ff, p, rng, train)));
    }

    void collect(std::vector<Param<S>*>& out) {
        wq.collect(out);
        wk.collect(out);
        wv.collect(out);
        wo.collect(out);
        ff1.collect(out);
        ff2.collect(out);
        ln1.collect(out);
        ln2.collect(out);
    }
};

template <typename S>
class PairedSeqModel {
  public:
    ModelConfig cfg;

    PairedSeqModel(const ModelConfig& config, Rng& rng) : cfg(config) {
        cfg.validate();
        layers_.reserve(cfg.n_layers);
        for (int i = 0; i < cfg.n_layers; ++i) {
            layers_.emplace_back("enc" + std::to_string(i), cfg, rng);
        }
        const int d = cfg.d_model;
        ntp1_ = std::make_unique<LinearLayer<S>>("head.ntp1", d, d / 2, rng);
        ntp2_ = std::make_unique<LinearLayer<S>>("head.ntp2", d / 2, 2, rng);
        mbm1_ = std::make_unique<LinearLayer<S>>("head.mbm1", d, 2 * d, rng);
        mbm2_ = std::make_unique<LinearLayer<S>>("head.mbm2", 2 * d, d, rng);
        sg_ = std::make_unique<LinearLayer<S>>("head.sg", d, 2, rng);
        pe_ = positional_encoding<S>(d);
    }

    // x: [batch*kSeqLen, d] assembled (and, when training, masked) input.
    // Positional encoding is added here, after any masking.
    Tensor<S> encode(const Tensor<S>& x, bool train, Rng* rng) const {
        if (x.ndim() != 2 || x.cols() != cfg.d_model || x.rows() % kSeqLen != 0) {
            throw ShapeError("encode: input must be [batch*12 x d_model]");
        }
        const int batch = x.rows() / kSeqLen;
        Tensor<S> h = add(x, tiled_pe(batch));
        for (const auto& layer : layers_) h = layer(h, train, rng);
        return h;
    }

    // Rows of the CLS position for every sample in the batch.
    Tensor<S> cls_rows(const Tensor<S>& enc) const {
        std::vector<int> rows(enc.rows() / kSeqLen);
        for (size_t b = 0; b < rows.size(); ++b) rows[b] = static_cast<int>(b) * kSeqLen + kClsPos;
        return gather_rows(enc, std::move(rows));
    }

    // Output block 1: two stacked linear maps (no activation between), then
    // softmax. [batch x 2] probabilities.
    Tensor<S> ntp_probs(const Tensor<S>& enc) const {
        return softmax_rows((*ntp2_)((*ntp1_)(cls_rows(enc))));
    }

    // Output block 2: reconstruction of the given encoder rows. [n x d].
    Tensor<S> mbm_recon(const Tensor<S>& enc, std::vector<int> rows) const {
        return (*mbm2_)(relu((*mbm1_)(gather_rows(enc, std::move(rows)))));
    }

    // Output block 3: single affine map + softmax on CLS. [batch x 2].
    Tensor<S> sg_probs(const Tensor<S>& enc) const {
        return softmax_rows((*sg_)(cls_rows(enc)));
    }

    std::vector<Param<S>*> params() {
        std::vector<Param<S>*> out;
        for (auto& l : layers_) l.collect(out);
        ntp1_->collect(out);
        ntp2_->collect(out);
        mbm1_->collect(out);
        mbm2_->collect(out);
        sg_->collect(out);
        return out;
    }

    long param_count() {
        long n = 0;
        for (auto* p : params()) n += static_cast<long>(p->value.numel());
        return n;
    }

  private:
    std::vector<EncoderLayer<S>> layers_;
    std::unique_ptr<LinearLayer<S>> ntp1_, ntp2_, mbm1_, mbm2_, sg_;
    Tensor<S> pe_;
    mutable Tensor<S> pe_tiled_;

    const Tensor<S>& tiled_pe(int batch) const {
        const int rows = batch * kSeqLen;
        if (pe_tiled_.numel() == 0 || pe_tiled_.rows() != rows) {
            pe_tiled_ = Tensor<S>::zeros({rows, cfg.d_model});
            for (int b = 0; b < batch; ++b) {
                std::copy(pe_.ptr(), pe_.ptr() + pe_.numel(),
                          pe_tiled_.ptr() + static_cast<size_t>(b) * pe_.numel());
            }
        }
        return pe_tiled_;
    }
};

}  // namespace bseq
