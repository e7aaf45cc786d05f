#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <vector>

#include "bseq/tensor.hpp"

namespace bseq {

template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapM = Eigen::Map<MatRM<S>>;
template <typename S>
using CMapM = Eigen::Map<const MatRM<S>>;

namespace detail {

template <typename S>
bool track(const Tensor<S>& t) {
    return grad_enabled() && t.requires_grad;
}

template <typename S>
Tensor<S> make_output(std::vector<int> shape, bool needs_grad) {
    Tensor<S> out(std::move(shape));
    if (needs_grad) {
        out.requires_grad = true;
        out.grad = std::make_shared<std::vector<S>>(out.numel(), S(0));
        out.node = std::make_shared<Node<S>>();
    }
    return out;
}

template <typename S>
MapM<S> mat(Tensor<S>& t) {
    return MapM<S>(t.ptr(), t.rows(), t.cols());
}

template <typename S>
CMapM<S> cmat(const Tensor<S>& t) {
    return CMapM<S>(t.ptr(), t.rows(), t.cols());
}

template <typename S>
CMapM<S> cgrad(const Tensor<S>& t) {
    return CMapM<S>(t.grad->data(), t.rows(), t.cols());
}

template <typename S>
MapM<S> gradm(const Tensor<S>& t) {
    return MapM<S>(t.grad->data(), t.rows(), t.cols());
}

}  // namespace detail

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.ndim() != 2 || b.ndim() != 2) throw ShapeError("matmul: operands must be 2-D");
    if (a.cols() != b.rows()) throw ShapeError("matmul: inner dimensions disagree");
    const bool ng = detail::track(a) || detail::track(b);
    Tensor<S> out = detail::make_output<S>({a.rows(), b.cols()}, ng);
    detail::mat(out).noalias() = detail::cmat(a) * detail::cmat(b);
    if (ng) {
        out.node->parents = {a, b};
        out.node->backward = [](const Tensor<S>& o) {
            const Tensor<S>& pa = o.node->parents[0];
            const Tensor<S>& pb = o.node->parents[1];
            if (pa.grad) detail::gradm(pa).noalias() += detail::cgrad(o) * detail::cmat(pb).transpose();
            if (pb.grad) detail::gradm(pb).noalias() += detail::cmat(pa).transpose() * detail::cgrad(o);
        };
    }
    return out;
}

// y = x * w + b, with b broadcast across rows. w is [in x out], b is [out].
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    if (x.ndim() != 2 || w.ndim() != 2) throw ShapeError("linear: x and w must be 2-D");
    if (x.cols() != w.rows()) throw ShapeError("linear: input width does not match weight");
    if (b.ndim() != 1 || b.shape[0] != w.cols()) throw ShapeError("linear: bias length mismatch");
    const bool ng = detail::track(x) || detail::track(w) || detail::track(b);
    Tensor<S> out = detail::make_output<S>({x.rows(), w.cols()}, ng);
    auto om = detail::mat(out);
    om.noalias() = detail::cmat(x) * detail::cmat(w);
    om.rowwise() += Eigen::Map<const Eigen::RowVectorX<S>>(b.ptr(), b.shape[0]);
    if (ng) {
        out.node->parents = {x, w, b};
        out.node->backward = [](const Tensor<S>& o) {
            const Tensor<S>& px = o.node->parents[0];
            const Tensor<S>& pw = o.node->parents[1];
            const Tensor<S>& pb = o.node->parents[2];
            if (px.grad) detail::gradm(px).noalias() += detail::cgrad(o) * detail::cmat(pw).transpose();
            if (pw.grad) detail::gradm(pw).noalias() += detail::cmat(px).transpose() * detail::cgrad(o);
            if (pb.grad) {
                // fixed-order accumulation keeps results independent of
                // buffer alignment
                S* db = pb.grad->data();
                const int m = o.rows(), n = o.cols();
                for (int i = 0; i < m; ++i) {
                    const S* dy = o.grad->data() + static_cast<size_t>(i) * n;
                    for (int j = 0; j < n; ++j) db[j] += dy[j];
                }
            }
        };
    }
    return out;
}

// alpha*a + beta*b, elementwise on identical shapes. alpha/beta are constants.
template <typename S>
Tensor<S> axpby(const Tensor<S>& a, const Tensor<S>& b, S alpha = S(1), S beta = S(1)) {
    if (a.shape != b.shape) throw ShapeError("axpby: shape mismatch");
    const bool ng = detail::track(a) || detail::track(b);
    Tensor<S> out = detail::make_output<S>(a.shape, ng);
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) (*out.data)[i] = alpha * (*a.data)[i] + beta * (*b.data)[i];
    if (ng) {
        out.node->parents = {a, b};
        out.node->backward = [alpha, beta](const Tensor<S>& o) {
            const Tensor<S>& pa = o.node->parents[0];
            const Tensor<S>& pb = o.node->parents[1];
            const size_t m = o.numel();
            if (pa.grad) {
                for (size_t i = 0; i < m; ++i) (*pa.grad)[i] += alpha * (*o.grad)[i];
            }
            if (pb.grad) {
                for (size_t i = 0; i < m; ++i) (*pb.grad)[i] += beta * (*o.grad)[i];
            }
        };
    }
    return out;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    return axpby(a, b, S(1), S(1));
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S s) {
    const bool ng = detail::track(a);
    Tensor<S> out = detail::make_output<S>(a.shape, ng);
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) (*out.data)[i] = s * (*a.data)[i];
    if (ng) {
        out.node->parents = {a};
        out.node->backward = [s](const Tensor<S>& o) {
            const Tensor<S>& pa = o.node->parents[0];
            if (!pa.grad) return;
            const size_t m = o.numel();
            for (size_t i = 0; i < m; ++i) (*pa.grad)[i] += s * (*o.grad)[i];
        };
    }
    return out;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
    const bool ng = detail::track(x);
    Tensor<S> out = detail::make_output<S>(x.shape, ng);
    const size_t n = out.numel();
    for (size_t i = 0; i < n; ++i) (*out.data)[i] = std::max((*x.data)[i], S(0));
    if (ng) {
        out.node->parents = {x};
        out.node->backward = [](const Tensor<S>& o) {
            const Tensor<S>& px = o.node->parents[0];
            if (!px.grad) return;
            const size_t m = o.numel();
            for (size_t i = 0; i < m; ++i) {
                if ((*px.data)[i] > S(0)) (*px.grad)[i] += (*o.grad)[i];
            }
        };
    }
    return out;
}

// Row-wise softmax, stabilized by row-max subtraction.
template <typename S>
Tensor<S> softmax_rows(const Tensor<S>& x) {
    if (x.ndim() != 2) throw ShapeError("softmax_rows: input must be 2-D");
    if (!x.all_finite()) throw NumericError("softmax_rows: non-finite input");
    const bool ng = detail::track(x);
    Tensor<S> out = detail::make_output<S>(x.shape, ng);
    const int m = x.rows(), n = x.cols();
    for (int i = 0; i < m; ++i) {
        const S* xr = x.ptr() + static_cast<size_t>(i) * n;
        S* yr = out.ptr() + static_cast<size_t>(i) * n;
        S mx = xr[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
        S sum = S(0);
        for (int j = 0; j < n; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        const S inv = S(1) / sum;
        for (int j = 0; j < n; ++j) yr[j] *= inv;
    }
    if (ng) {
        out.node->parents = {x};
        out.node->backward = [](const Tensor<S>& o) {
            const Tensor<S>& px = o.node->parents[0];
            if (!px.grad) return;
            const int mm = o.rows(), nn = o.cols();
            for (int i = 0; i < mm; ++i) {
                const S* y = o.ptr() + static_cast<size_t>(i) * nn;
                const S* dy = o.grad->data() + static_cast<size_t>(i) * nn;
                S* dx = px.grad->data() + static_cast<size_t>(i) * nn;
                S dot = S(0);
                for (int j = 0; j < nn; ++j) dot += dy[j] * y[j];
                for (int j = 0; j < nn; ++j) dx[j] += y[j] * (dy[j] - dot);
            }
        };
    }
    return out;
}

// Per-row normalization to zero mean / unit variance (population), then
// affine transform by gamma/beta.
template <typename S>
Tensor<S> layer_norm_rows(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                          S eps = S(1e-5)) {
    if (x.ndim() != 2) throw ShapeError("layer_norm_rows: input must be 2-D");
    const int m = x.rows(), n = x.cols();
    if (gamma.ndim() != 1 || gamma.shape[0] != n || beta.ndim() != 1 || beta.shape[0] != n) {
        throw ShapeError("layer_norm_rows: gamma/beta length mismatch");
    }
    if (eps <= S(0)) throw ConfigError("layer_norm_rows: eps must be positive");
    const bool ng = detail::track(x) || detail::track(gamma) || detail::track(beta);
    Tensor<S> out = detail::make_output<S>(x.shape, ng);
    auto xhat = std::make_shared<std::vector<S>>(x.numel());
    auto inv_sd = std::make_shared<std::vector<S>>(m);
    const S* g = gamma.ptr();
    const S* be = beta.ptr();
    for (int i = 0; i < m; ++i) {
        const S* xr = x.ptr() + static_cast<size_t>(i) * n;
        S* yr = out.ptr() + static_cast<size_t>(i) * n;
        S* hr = xhat->data() + static_cast<size_t>(i) * n;
        S mean = S(0);
        for (int j = 0; j < n; ++j) mean += xr[j];
        mean /= S(n);
        S var = S(0);
        for (int j = 0; j < n; ++j) {
            const S d = xr[j] - mean;
            var += d * d;
        }
        var /= S(n);
        const S is = S(1) / std::sqrt(var + eps);
        (*inv_sd)[i] = is;
        for (int j = 0; j < n; ++j) {
            hr[j] = (xr[j] - mean) * is;
            yr[j] = g[j] * hr[j] + be[j];
        }
    }
    if (ng) {
        out.node->parents = {x, gamma, beta};
        out.node->backward = [xhat, inv_sd](const Tensor<S>& o) {
            const Tensor<S>& px = o.node->parents[0];
            const Tensor<S>& pg = o.node->parents[1];
            const Tensor<S>& pb = o.node->parents[2];
            const int mm = o.rows(), nn = o.cols();
            const S* g2 = pg.ptr();
            for (int i = 0; i < mm; ++i) {
                const S* dy = o.grad->data() + static_cast<size_t>(i) * nn;
                const S* hr = xhat->data() + static_cast<size_t>(i) * nn;
                if (pg.grad) {
                    for (int j = 0; j < nn; ++j) (*pg.grad)[j] += dy[j] * hr[j];
                }
                if (pb.grad) {
                    for (int j = 0; j < nn; ++j) (*pb.grad)[j] += dy[j];
                }
                if (px.grad) {
                    S mean_dh = S(0), mean_dh_h = S(0);
                    for (int j = 0; j < nn; ++j) {
                        const S dh = dy[j] * g2[j];
                        mean_dh += dh;
                        mean_dh_h += dh * hr[j];
                    }
                    mean_dh /= S(nn);
                    mean_dh_h /= S(nn);
                    S* dx = px.grad->data() + static_cast<size_t>(i) * nn;
                    const S is = (*inv_sd)[i];
                    for (int j = 0; j < nn; ++j) {
                        const S dh = dy[j] * g2[j];
                        dx[j] += is * (dh - mean_dh - hr[j] * mean_dh_h);
                    }
                }
            }
        };
    }
    return out;
}

// Train-time inverted dropout; identity at eval.
template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double p, Rng* rng, bool train) {
    if (p < 0.0 || p >= 1.0) throw ConfigError("dropout: p must be in [0, 1)");
    if (!train || p == 0.0) return x;
    if (!rng) throw StateError("dropout: train mode requires an rng");
    const bool ng = detail::track(x);
    Tensor<S> out = detail::make_output<S>(x.shape, ng);
    auto mask = std::make_shared<std::vector<S>>(x.numel());
    const S keep_scale = S(1.0 / (1.0 - p));
    const size_t n = x.numel();
    for (size_t i = 0; i < n; ++i) {
        const S mval = rng->bernoulli(p) ? S(0) : keep_scale;
        (*mask)[i] = mval;
        (*out.data)[i] = (*x.data)[i] * mval;
    }
    if (ng) {
        out.node->parents = {x};
        out.node->backward = [mask](const Tensor<S>& o) {
            const Tensor<S>& px = o.node->parents[0];
            if (!px.grad) return;
            const size_t m = o.numel();
            for (size_t i = 0; i < m; ++i) (*px.grad)[i] += (*o.grad)[i] * (*mask)[i];
        };
    }
    return out;
}

// Scaled dot-product attention over already-projected q/k/v, batched as
// [batch*seq_len x d]. Bidirectional (no mask). Optional dropout on the
// attention weights. Caches the softmax weights for backward.
template <typename S>
Tensor<S> attention_context(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v,
                            int n_heads, int seq_len, double attn_dropout_p, Rng* rng,
                            bool train) {
    if (q.shape != k.shape || q.shape != v.shape) throw ShapeError("attention: q/k/v shape mismatch");
    if (q.ndim() != 2) throw ShapeError("attention: inputs must be 2-D");
    const int d = q.cols();
    if (n_heads <= 0 || d % n_heads != 0) throw ConfigError("attention: d_model not divisible by n_heads");
    if (seq_len <= 0 || q.rows() % seq_len != 0) throw ShapeError("attention: rows not a multiple of seq_len");
    const int batch = q.rows() / seq_len;
    const int dh = d / n_heads;
    const S att_scale = S(1) / std::sqrt(static_cast<S>(dh));
    const bool drop = train && attn_dropout_p > 0.0;
    if (drop && !rng) throw StateError("attention: train-mode dropout requires an rng");

    const bool ng = detail::track(q) || detail::track(k) || detail::track(v);
    Tensor<S> out = detail::make_output<S>(q.shape, ng);
    // weights[b*H + h] holds the s x s post-softmax matrix; mult holds the
    // dropout multiplier, empty when dropout is off
    auto weights = std::make_shared<std::vector<MatRM<S>>>(static_cast<size_t>(batch) * n_heads);
    auto mult = std::make_shared<std::vector<MatRM<S>>>();
    if (drop) mult->resize(static_cast<size_t>(batch) * n_heads);
    const S keep_scale = S(1.0 / (1.0 - attn_dropout_p));

    auto qm = detail::cmat(q);
    auto km = detail::cmat(k);
    auto vm = detail::cmat(v);
    auto om = detail::mat(out);
    for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < n_heads; ++h) {
            auto qb = qm.block(b * seq_len, h * dh, seq_len, dh);
            auto kb = km.block(b * seq_len, h * dh, seq_len, dh);
            auto vb = vm.block(b * seq_len, h * dh, seq_len, dh);
            MatRM<S> scores = (qb * kb.transpose()) * att_scale;
            for (int i = 0; i < seq_len; ++i) {
                S mx = scores.row(i).maxCoeff();
                for (int j = 0; j < seq_len; ++j) scores(i, j) = std::exp(scores(i, j) - mx);
                scores.row(i) /= scores.row(i).sum();
            }
            MatRM<S>& a = (*weights)[static_cast<size_t>(b) * n_heads + h];
            a = std::move(scores);
            if (drop) {
                MatRM<S>& mm = (*mult)[static_cast<size_t>(b) * n_heads + h];
                mm.resize(seq_len, seq_len);
                for (int i = 0; i < seq_len; ++i) {
                    for (int j = 0; j < seq_len; ++j) {
                        mm(i, j) = rng->bernoulli(attn_dropout_p) ? S(0) : keep_scale;
                    }
                }
                om.block(b * seq_len, h * dh, seq_len, dh).noalias() = a.cwiseProduct(mm) * vb;
            } else {
                om.block(b * seq_len, h * dh, seq_len, dh).noalias() = a * vb;
            }
        }
    }

    if (ng) {
        out.node->parents = {q, k, v};
        out.node->backward = [weights, mult, n_heads, seq_len, att_scale](const Tensor<S>& o) {
            const Tensor<S>& pq = o.node->parents[0];
            const Tensor<S>& pk = o.node->parents[1];
            const Tensor<S>& pv = o.node->parents[2];
            const int d2 = o.cols();
            const int dh2 = d2 / n_heads;
            const int batch2 = o.rows() / seq_len;
            auto qm2 = detail::cmat(pq);
            auto km2 = detail::cmat(pk);
            auto vm2 = detail::cmat(pv);
            auto dout = detail::cgrad(o);
            const bool dropped = !mult->empty();
            for (int b = 0; b < batch2; ++b) {
                for (int h = 0; h < n_heads; ++h) {
                    const MatRM<S>& a = (*weights)[static_cast<size_t>(b) * n_heads + h];
                    auto dctx = dout.block(b * seq_len, h * dh2, seq_len, dh2);
                    auto vb = vm2.block(b * seq_len, h * dh2, seq_len, dh2);
                    MatRM<S> a_eff = dropped
                        ? MatRM<S>(a.cwiseProduct((*mult)[static_cast<size_t>(b) * n_heads + h]))
                        : a;
                    if (pv.grad) {
                        MapM<S> dv(pv.grad->data(), pv.rows(), pv.cols());
                        dv.block(b * seq_len, h * dh2, seq_len, dh2).noalias() +=
                            a_eff.transpose() * dctx;
                    }
                    if (pq.grad || pk.grad) {
                        MatRM<S> da = dctx * vb.transpose();
                        if (dropped) da = da.cwiseProduct((*mult)[static_cast<size_t>(b) * n_heads + h]);
                        // softmax backward per row
                        MatRM<S> ds(seq_len, seq_len);
                        for (int i = 0; i < seq_len; ++i) {
                            const S dot = a.row(i).dot(da.row(i));
                            for (int j = 0; j < seq_len; ++j) {
                                ds(i, j) = a(i, j) * (da(i, j) - dot) * att_scale;
                            }
                        }
                        auto qb = qm2.block(b * seq_len, h * dh2, seq_len, dh2);
                        auto kb = km2.block(b * seq_len, h * dh2, seq_len, dh2);
                        if (pq.grad) {
                            MapM<S> dq(pq.grad->data(), pq.rows(), pq.cols());
                            dq.block(b * seq_len, h * dh2, seq_len, dh2).noalias() += ds * kb;
                        }
                        if (pk.grad) {
                            MapM<S> dk(pk.grad->data(), pk.rows(), pk.cols());
                            dk.block(b * seq_len, h * dh2, seq_len, dh2).noalias() +=
                                ds.transpose() * qb;
                        }
                    }
                }
            }
        };
    }
    return out;
}

template <typename S>
Tensor<S> gather_rows(const Tensor<S>& x, std::vector<int> row_indices) {
    if (x.ndim() != 2) throw ShapeError("gather_rows: input must be 2-D");
    const int n = x.cols();
    for (int r : row_indices) {
        if (r < 0 || r >= x.rows()) throw ShapeError("gather_rows: row index out of range");
    }
    const bool ng = detail::track(x);
    Tensor<S> out = detail::make_output<S>({static_cast<int>(row_indices.size()), n}, ng);
    for (size_t i = 0; i < row_indices.size(); ++i) {
        const S* src = x.ptr() + static_cast<size_t>(row_indices[i]) * n;
        std::copy(src, src + n, out.ptr() + i * n);
    }
    if (ng) {
        out.node->parents = {x};
        out.node->backward = [rows = std::move(row_indices)](const Tensor<S>& o) {
            const Tensor<S>& px = o.node->parents[0];
            if (!px.grad) return;
            const int nn = o.cols();
            for (size_t i = 0; i < rows.size(); ++i) {
                const S* dy = o.grad->data() + i * nn;
                S* dx = px.grad->data() + static_cast<size_t>(rows[i]) * nn;
                for (int j = 0; j < nn; ++j) dx[j] += dy[j];
            }
        };
    }
    return out;
}

// Per-row mean squared error against a constant target; returns [m].
template <typename S>
Tensor<S> mse_rows(const Tensor<S>& pred, const Tensor<S>& target) {
    if (pred.shape != target.shape) throw ShapeError("mse_rows: shape mismatch");
    if (pred.ndim() != 2) throw ShapeError("mse_rows: inputs must be 2-D");
    const int m = pred.rows(), n = pred.cols();
    const bool ng = detail::track(pred);
    Tensor<S> out = detail::make_output<S>({m}, ng);
    for (int i = 0; i < m; ++i) {
        const S* p = pred.ptr() + static_cast<size_t>(i) * n;
        const S* t = target.ptr() + static_cast<size_t>(i) * n;
        S acc = S(0);
        for (int j = 0; j < n; ++j) {
            const S d = p[j] - t[j];
            acc += d * d;
        }
        (*out.data)[i] = acc / S(n);
    }
    if (ng) {
        out.node->parents = {pred, target};
        out.node->backward = [](const Tensor<S>& o) {
            const Tensor<S>& pp = o.node->parents[0];
            const Tensor<S>& pt = o.node->parents[1];
            if (!pp.grad) return;
            const int mm = pp.rows(), nn = pp.cols();
            for (int i = 0; i < mm; ++i) {
                const S di = (*o.grad)[i] * S(2) / S(nn);
                const S* p = pp.ptr() + static_cast<size_t>(i) * nn;
                const S* t = pt.ptr() + static_cast<size_t>(i) * nn;
                S* dp = pp.grad->data() + static_cast<size_t>(i) * nn;
                for (int j = 0; j < nn; ++j) dp[j] += di * (p[j] - t[j]);
            }
        };
    }
    return out;
}

// -log(probs[i, label_i]) per row, with probabilities clamped away from zero.
template <typename S>
Tensor<S> cross_entropy_rows(const Tensor<S>& probs, std::vector<int> labels,
                             S clamp_eps = S(1e-12)) {
    if (probs.ndim() != 2) throw ShapeError("cross_entropy_rows: probs must be 2-D");
    const int m = probs.rows(), n = probs.cols();
    if (static_cast<int>(labels.size()) != m) throw ShapeError("cross_entropy_rows: label count mismatch");
    for (int l : labels) {
        if (l < 0 || l >= n) throw ShapeError("cross_entropy_rows: label out of range");
    }
    const bool ng = detail::track(probs);
    Tensor<S> out = detail::make_output<S>({m}, ng);
    for (int i = 0; i < m; ++i) {
        const S p = probs.at(i, labels[i]);
        (*out.data)[i] = -std::log(std::max(p, clamp_eps));
    }
    if (ng) {
        out.node->parents = {probs};
        out.node->backward = [labels = std::move(labels), clamp_eps](const Tensor<S>& o) {
            const Tensor<S>& pp = o.node->parents[0];
            if (!pp.grad) return;
            const int nn = pp.cols();
            for (size_t i = 0; i < labels.size(); ++i) {
                const S p = (*pp.data)[i * nn + labels[i]];
                if (p > clamp_eps) {
                    (*pp.grad)[i * nn + labels[i]] -= (*o.grad)[i] / p;
                }
            }
        };
    }
    return out;
}

// dot(v, w) with constant weights; the batch-mean / weighted-mean reducer.
template <typename S>
Tensor<S> weighted_sum(const Tensor<S>& v, std::vector<S> weights) {
    if (v.numel() != weights.size()) throw ShapeError("weighted_sum: weight count mismatch");
    const bool ng = detail::track(v);
    Tensor<S> out = detail::make_output<S>({1}, ng);
    S acc = S(0);
    for (size_t i = 0; i < weights.size(); ++i) acc += (*v.data)[i] * weights[i];
    (*out.data)[0] = acc;
    if (ng) {
        out.node->parents = {v};
        out.node->backward = [weights = std::move(weights)](const Tensor<S>& o) {
            const Tensor<S>& pv = o.node->parents[0];
            if (!pv.grad) return;
            const S g = (*o.grad)[0];
            for (size_t i = 0; i < weights.size(); ++i) (*pv.grad)[i] += g * weights[i];
        };
    }
    return out;
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
    return weighted_sum(x, std::vector<S>(x.numel(), S(1)));
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x) {
    return weighted_sum(x, std::vector<S>(x.numel(), S(1) / S(x.numel())));
}

}  // namespace bseq
