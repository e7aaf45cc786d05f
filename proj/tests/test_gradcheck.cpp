#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bseq/gradcheck.hpp"
#include "bseq/model.hpp"

using namespace bseq;

using T64 = Tensor<double>;

namespace {

T64 random_tensor(std::vector<int> shape, Rng& rng, double sd = 1.0) {
    T64 t(std::move(shape));
    for (auto& v : *t.data) v = rng.normal() * sd;
    return t;
}

std::vector<double> random_weights(size_t n, Rng& rng) {
    std::vector<double> w(n);
    for (auto& v : w) v = rng.normal();
    return w;
}

}  // namespace

TEST_CASE("fd: linear through mse") {
    Rng rng(1);
    T64 x = random_tensor({3, 4}, rng);
    T64 w = random_tensor({4, 5}, rng);
    T64 b = random_tensor({5}, rng);
    T64 target = random_tensor({3, 5}, rng);
    x.set_requires_grad();
    w.set_requires_grad();
    b.set_requires_grad();
    auto loss = [&]() { return mean_all(mse_rows(linear(x, w, b), target)); };
    Rng coord(2);
    auto rep = fd_check({{"x", &x}, {"w", &w}, {"b", &b}}, loss, coord);
    CHECK(rep.passed());
    CHECK(rep.worst() < 1e-5);
}

TEST_CASE("fd: softmax + cross entropy") {
    Rng rng(3);
    T64 logits = random_tensor({4, 3}, rng);
    logits.set_requires_grad();
    std::vector<int> labels{0, 2, 1, 2};
    auto loss = [&]() { return mean_all(cross_entropy_rows(softmax_rows(logits), labels)); };
    Rng coord(4);
    CHECK(fd_check_tensor("logits", logits, loss, coord).max_rel_err < 1e-5);
}

TEST_CASE("fd: layer norm") {
    Rng rng(5);
    T64 x = random_tensor({3, 6}, rng);
    T64 g = random_tensor({6}, rng);
    T64 b = random_tensor({6}, rng);
    x.set_requires_grad();
    g.set_requires_grad();
    b.set_requires_grad();
    const auto wts = random_weights(18, rng);
    auto loss = [&]() { return weighted_sum(layer_norm_rows(x, g, b), wts); };
    Rng coord(6);
    auto rep = fd_check({{"x", &x}, {"gamma", &g}, {"beta", &b}}, loss, coord);
    CHECK(rep.passed());
}

TEST_CASE("fd: relu away from the kink") {
    Rng rng(7);
    T64 x = random_tensor({2, 8}, rng);
    for (auto& v : *x.data) {
        if (std::abs(v) < 0.1) v = v < 0 ? v - 0.1 : v + 0.1;
    }
    x.set_requires_grad();
    const auto wts = random_weights(16, rng);
    auto loss = [&]() { return weighted_sum(relu(x), wts); };
    Rng coord(8);
    CHECK(fd_check_tensor("x", x, loss, coord).max_rel_err < 1e-5);
}

TEST_CASE("fd: attention q/k/v") {
    Rng rng(9);
    const int batch = 2, s = 3, d = 8;
    T64 q = random_tensor({batch * s, d}, rng);
    T64 k = random_tensor({batch * s, d}, rng);
    T64 v = random_tensor({batch * s, d}, rng);
    q.set_requires_grad();
    k.set_requires_grad();
    v.set_requires_grad();
    const auto wts = random_weights(static_cast<size_t>(batch) * s * d, rng);
    auto loss = [&]() {
        return weighted_sum(attention_context(q, k, v, 2, s, 0.0, nullptr, false), wts);
    };
    Rng coord(10);
    auto rep = fd_check({{"q", &q}, {"k", &k}, {"v", &v}}, loss, coord);
    CHECK(rep.passed());
    CHECK(rep.worst() < 1e-5);
}

TEST_CASE("fd: dropout with a frozen mask") {
    Rng rng(11);
    T64 x = random_tensor({4, 6}, rng);
    x.set_requires_grad();
    const auto wts = random_weights(24, rng);
    auto loss = [&]() {
        Rng mask_rng(1234);  // reseeded every call so the mask is fixed
        return weighted_sum(dropout(x, 0.3, &mask_rng, true), wts);
    };
    Rng coord(12);
    CHECK(fd_check_tensor("x", x, loss, coord).max_rel_err < 1e-5);
}

TEST_CASE("fd: weighted sums compose") {
    Rng rng(13);
    T64 a = random_tensor({2, 3}, rng);
    T64 b = random_tensor({2, 3}, rng);
    a.set_requires_grad();
    b.set_requires_grad();
    auto loss = [&]() { return mean_all(axpby(relu(a), b, 0.7, -1.3)); };
    Rng coord(14);
    auto rep = fd_check({{"a", &a}, {"b", &b}}, loss, coord);
    CHECK(rep.passed());
}

TEST_CASE("fd: full one-layer model, eval mode") {
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.forward_expansion = 4;
    cfg.dropout = 0.0;
    Rng init(21);
    PairedSeqModel<double> model(cfg, init);

    const int batch = 2;
    Rng rng(22);
    T64 x = random_tensor({batch * kSeqLen, cfg.d_model}, rng, 0.5);
    x.set_requires_grad();
    std::vector<int> ntp_labels{1, 0};
    std::vector<int> sg_labels{0, 1};
    std::vector<int> mask_rows{2, 15};
    T64 targets = random_tensor({2, cfg.d_model}, rng, 0.5);

    auto loss = [&]() {
        auto enc = model.encode(x, false, nullptr);
        auto e_ntp = mean_all(cross_entropy_rows(model.ntp_probs(enc), ntp_labels));
        auto e_mbm = mean_all(mse_rows(model.mbm_recon(enc, mask_rows), targets));
        auto e_sg = mean_all(cross_entropy_rows(model.sg_probs(enc), sg_labels));
        return add(add(e_ntp, e_mbm), e_sg);
    };

    std::vector<NamedTensor> tensors{{"input", &x}};
    for (auto* p : model.params()) tensors.push_back({p->name, &p->value});
    Rng coord(23);
    auto rep = fd_check(tensors, loss, coord, 40);
    for (const auto& e : rep.entries) {
        INFO(e.name, " max_rel_err=", e.max_rel_err);
        CHECK(e.max_rel_err < 1e-5);
    }
    CHECK(rep.passed());
}

TEST_CASE("fd: layer suite covers every block and passes") {
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.forward_expansion = 4;
    cfg.dropout = 0.1;
    auto rep = layer_suite(cfg, 5, 40);
    REQUIRE(rep.entries.size() == 7);
    const char* expected[] = {"linear",    "softmax", "layer_norm", "relu",
                              "attention", "dropout", "full_model"};
    for (size_t i = 0; i < rep.entries.size(); ++i) {
        INFO(rep.entries[i].name, " max_rel_err=", rep.entries[i].max_rel_err);
        CHECK(rep.entries[i].name == expected[i]);
        CHECK(rep.entries[i].max_rel_err < 1e-5);
        CHECK(rep.entries[i].n_checked > 0);
    }
    CHECK(rep.passed());
    CHECK(rep.worst() < 1e-5);

    // an impossible bar fails
    auto strict = layer_suite(cfg, 5, 10, 0.0);
    CHECK(!strict.passed());
}

TEST_CASE("model: parameter count matches closed form") {
    ModelConfig cfg;
    cfg.d_model = 12;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    Rng rng(31);
    PairedSeqModel<double> model(cfg, rng);
    CHECK(model.param_count() == cfg.param_count());

    ModelConfig full;  // defaults
    Rng rng2(32);
    PairedSeqModel<float> fm(full, rng2);
    CHECK(fm.param_count() == full.param_count());
}
