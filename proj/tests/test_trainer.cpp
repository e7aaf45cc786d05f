#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "bseq/synthgen.hpp"
#include "bseq/trainer.hpp"

using namespace bseq;
namespace fs = std::filesystem;

namespace {

std::vector<RunTimeseries> small_runs(uint64_t seed = 7) {
    SynthSpec spec;
    spec.n_subjects = 1;
    spec.n_training_runs = 4;
    spec.n_test_runs = 2;
    spec.clips_per_training_run = 10;
    spec.n_genres = 5;
    spec.n_voxels = 13;  // d_model 16
    spec.genre_signal_strength = 2.0;
    spec.noise_sd = 0.5;
    spec.seed = seed;
    return generate(spec).processed_runs;
}

ModelConfig small_model() {
    ModelConfig m;
    m.d_model = 16;
    m.n_layers = 1;
    m.n_heads = 2;
    m.forward_expansion = 2;
    m.dropout = 0.1;
    return m;
}

TrainConfig small_config(Regimen r) {
    TrainConfig c = TrainConfig::defaults(r);
    c.model = small_model();
    c.epochs = 2;
    c.batch_size = 8;
    c.seed = 21;
    return c;
}

FoldSpec small_fold() {
    FoldSpec f;
    f.heldout_run_index = 0;
    f.seed = 21;
    f.n_train_cap = 64;
    f.n_val_cap = 32;
    return f;
}

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("bseq_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is.good());
    return std::string(std::istreambuf_iterator<char>(is), {});
}

bool same_metrics(const EpochMetrics& a, const EpochMetrics& b) {
    return a.epoch == b.epoch && a.train_ntp == b.train_ntp && a.train_mbm == b.train_mbm &&
           a.train_sg == b.train_sg && a.train_total == b.train_total &&
           a.val_ntp_acc == b.val_ntp_acc && a.val_mbm_loss == b.val_mbm_loss &&
           a.val_sg_acc == b.val_sg_acc;
}

}  // namespace

TEST_CASE("regimen names round trip") {
    for (Regimen r : {Regimen::multitask, Regimen::ntp_only, Regimen::finetune_sg,
                      Regimen::fresh_sg}) {
        CHECK(regimen_from_string(to_string(r)) == r);
    }
    CHECK(regimen_from_string("ntp-only") == Regimen::ntp_only);
    CHECK(regimen_from_string("finetune-sg") == Regimen::finetune_sg);
    CHECK_THROWS_AS(regimen_from_string("nope"), ConfigError);
}

TEST_CASE("config defaults and validation") {
    auto mt = TrainConfig::defaults(Regimen::multitask);
    CHECK(mt.alpha1 == 0.1);
    CHECK(mt.alpha2 == 0.9);
    CHECK(mt.lr == 1e-4);
    CHECK(mt.epochs == 10);
    CHECK(mt.batch_size == 32);
    auto ntp = TrainConfig::defaults(Regimen::ntp_only);
    CHECK(ntp.alpha1 == 1.0);
    CHECK(ntp.lr == 1e-5);
    CHECK_NOTHROW(mt.validate());

    TrainConfig bad = mt;
    bad.alpha1 = 0.3;
    bad.alpha2 = 0.6;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad.alpha2 = 0.7;
    CHECK_NOTHROW(bad.validate());  // 0.3 + 0.7 within tolerance
    bad = mt;
    bad.epochs = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = mt;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = mt;
    bad.lr = -1e-4;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("config json round trip and regimen-aware defaults") {
    TrainConfig c = TrainConfig::defaults(Regimen::multitask);
    c.model = small_model();
    c.seed = 99;
    c.lr = 3e-4;
    nlohmann::json j = c;
    auto back = j.get<TrainConfig>();
    CHECK(back.regimen == c.regimen);
    CHECK(back.lr == c.lr);
    CHECK(back.seed == c.seed);
    CHECK(back.model.d_model == 16);

    auto sparse = nlohmann::json{{"regimen", "ntp_only"}}.get<TrainConfig>();
    CHECK(sparse.lr == 1e-5);
    CHECK(sparse.alpha1 == 1.0);
}

TEST_CASE("ntp and sg loss oracles") {
    CHECK(ntp_loss({0.5, 0.5}, Label::yes) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(ntp_loss({0.5, 0.5}, Label::no) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(ntp_loss({0.0, 1.0}, Label::yes) == doctest::Approx(0.0));
    CHECK(ntp_loss({0.0, 1.0}, Label::no) ==
          doctest::Approx(-std::log(1e-12)).epsilon(1e-12));
    CHECK(ntp_loss({0.2, 0.8}, Label::no) == doctest::Approx(1.6094379124341003).epsilon(1e-12));
    CHECK_THROWS_AS(ntp_loss({0.5, 0.5}, Label::undefined), StateError);
    CHECK(sg_loss({0.3, 0.7}, Label::yes) == doctest::Approx(-std::log(0.7)).epsilon(1e-12));
    CHECK(sg_loss({0.5, 0.5}, Label::no) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("mbm loss oracles") {
    std::vector<double> t4(4, 0.0);
    CHECK(mbm_loss({t4}, {t4}) == 0.0);
    CHECK(mbm_loss({{1.0, 1.0, 1.0}}, {{0.0, 0.0, 0.0}}) == doctest::Approx(1.0).epsilon(1e-12));
    // per-pair means 0.2 and 0.4 average to 0.3
    const double a = std::sqrt(0.2), b = std::sqrt(0.4);
    CHECK(mbm_loss({{a}, {b}}, {{0.0}, {0.0}}) == doctest::Approx(0.3).epsilon(1e-12));
    CHECK_THROWS_AS(mbm_loss({}, {}), ShapeError);
    CHECK_THROWS_AS(mbm_loss({t4, t4, t4}, {t4, t4, t4}), ShapeError);
    CHECK_THROWS_AS(mbm_loss({{1.0}}, {{1.0, 2.0}}), ShapeError);
}

TEST_CASE("multitask loss oracle") {
    CHECK(multitask_loss(0.7, 0.4, 0.1, 0.9) == doctest::Approx(0.43).epsilon(1e-12));
    CHECK(multitask_loss(0.7, 0.4, 1.0, 0.0) == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(multitask_loss(1.0, 3.0, 0.5, 0.5) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK_THROWS_AS(multitask_loss(1.0, 1.0, 0.5, 0.6), ConfigError);
}

TEST_CASE("metrics csv format") {
    EpochMetrics m;
    m.epoch = 3;
    m.train_ntp = 0.5;
    m.train_total = 1.25;
    m.val_ntp_acc = 0.875;
    m.seconds = 1.23456;
    const std::string csv = metrics_csv({m});
    CHECK(csv ==
          "epoch,train_ntp,train_mbm,train_sg,train_total,val_ntp_acc,val_mbm_loss,val_sg_acc,"
          "seconds\n3,0.5,0,0,1.25,0.875,0,0,1.235\n");
}

TEST_CASE("pretrain determinism and checkpoint re-evaluation") {
    const auto runs = small_runs();
    const auto fold = small_fold();
    const auto cfg = small_config(Regimen::multitask);
    const auto dir1 = temp_dir("pre1");
    const auto dir2 = temp_dir("pre2");

    const RunResult r1 = pretrain_run(runs, fold, cfg, dir1);
    const RunResult r2 = pretrain_run(runs, fold, cfg, dir2);

    REQUIRE(r1.metrics.size() == static_cast<size_t>(cfg.epochs));
    for (size_t e = 0; e < r1.metrics.size(); ++e) {
        CHECK(same_metrics(r1.metrics[e], r2.metrics[e]));
        CHECK(r1.metrics[e].val_ntp_acc >= 0.0);
        CHECK(r1.metrics[e].val_ntp_acc <= 1.0);
        CHECK(r1.metrics[e].val_mbm_loss > 0.0);
    }
    CHECK(r1.best_epoch == r2.best_epoch);
    CHECK(r1.best_val_acc == r2.best_val_acc);
    CHECK(slurp(dir1 / "best.ckpt") == slurp(dir2 / "best.ckpt"));
    CHECK(slurp(dir1 / "config.json") == slurp(dir2 / "config.json"));
    CHECK(slurp(dir1 / "manifest.json") == slurp(dir2 / "manifest.json"));
    CHECK(r1.metrics[static_cast<size_t>(r1.best_epoch)].val_ntp_acc == r1.best_val_acc);
    CHECK(fs::exists(dir1 / "metrics.csv"));

    // the saved checkpoint reproduces the logged best accuracy exactly
    const LoadedCheckpoint ckpt = load_checkpoint((dir1 / "best.ckpt").string());
    auto seqs = extract_5seqs(runs);
    auto data = build_fold(seqs, fold, PairTask::ntp);
    Trainer eval_trainer(runs, seqs, data, cfg);
    eval_trainer.restore_params(ckpt.tensors);
    const EpochMetrics m = eval_trainer.evaluate(0);
    CHECK(m.val_ntp_acc == r1.best_val_acc);
    CHECK(m.val_mbm_loss == r1.mbm_at_best);
    CHECK(ckpt.meta.at("best_epoch").get<int>() == r1.best_epoch);
}

TEST_CASE("different seeds change the training trajectory") {
    const auto runs = small_runs();
    const auto fold = small_fold();
    auto cfg = small_config(Regimen::multitask);
    const RunResult r1 = pretrain_run(runs, fold, cfg);
    cfg.seed = 22;
    FoldSpec f2 = fold;
    f2.seed = 22;
    const RunResult r2 = pretrain_run(runs, f2, cfg);
    CHECK(r1.metrics[0].train_total != r2.metrics[0].train_total);
}

TEST_CASE("lr zero freezes parameters and losses") {
    const auto runs = small_runs();
    auto cfg = small_config(Regimen::ntp_only);
    cfg.lr = 0.0;
    cfg.model.dropout = 0.0;
    auto seqs = extract_5seqs(runs);
    auto data = build_fold(seqs, small_fold(), PairTask::ntp);
    Trainer t(runs, seqs, data, cfg);
    const auto before = t.snapshot_params();
    const EpochMetrics m0 = t.run_epoch(0);
    const EpochMetrics m1 = t.run_epoch(1);
    // shuffling regroups the float32 batch means, so equality holds only to
    // single precision
    CHECK(m0.train_ntp == doctest::Approx(m1.train_ntp).epsilon(1e-5));
    CHECK(m0.val_ntp_acc == m1.val_ntp_acc);
    const auto after = t.snapshot_params();
    for (const auto& [name, tensor] : before) {
        const auto& now = after.at(name);
        REQUIRE(now.numel() == tensor.numel());
        for (size_t i = 0; i < tensor.numel(); ++i) CHECK((*now.data)[i] == (*tensor.data)[i]);
    }
}

TEST_CASE("gradient flow: alpha1=0 leaves the ntp head untouched") {
    const auto runs = small_runs();
    auto cfg = small_config(Regimen::multitask);
    cfg.alpha1 = 0.0;
    cfg.alpha2 = 1.0;
    cfg.weight_decay = 0.0;
    cfg.epochs = 1;
    auto seqs = extract_5seqs(runs);
    auto data = build_fold(seqs, small_fold(), PairTask::ntp);
    Trainer t(runs, seqs, data, cfg);
    const auto before = t.snapshot_params();
    t.run_epoch(0);
    const auto after = t.snapshot_params();
    bool encoder_moved = false;
    for (const auto& [name, tensor] : before) {
        const auto& now = after.at(name);
        const bool ntp_head = name.rfind("head.ntp", 0) == 0;
        for (size_t i = 0; i < tensor.numel(); ++i) {
            if (ntp_head) {
                CHECK((*now.data)[i] == (*tensor.data)[i]);
            } else if ((*now.data)[i] != (*tensor.data)[i]) {
                encoder_moved = true;
            }
        }
    }
    CHECK(encoder_moved);
}

TEST_CASE("single-batch overfit reaches full train accuracy") {
    const auto runs = small_runs();
    auto cfg = small_config(Regimen::ntp_only);
    cfg.model.dropout = 0.0;
    cfg.lr = 1e-3;
    cfg.batch_size = 8;
    auto seqs = extract_5seqs(runs);
    FoldSpec fold = small_fold();
    fold.n_train_cap = 8;
    fold.n_val_cap = 32;
    auto data = build_fold(seqs, fold, PairTask::ntp);
    data.val_pairs = data.train_pairs;  // measure accuracy on the training samples
    Trainer t(runs, seqs, data, cfg);
    double acc = 0.0;
    int epochs_used = 0;
    for (int e = 0; e < 200; ++e) {
        acc = t.run_epoch(e).val_ntp_acc;
        epochs_used = e + 1;
        if (acc == 1.0) break;
    }
    CHECK(acc == 1.0);
    CHECK(epochs_used <= 200);
}

TEST_CASE("nan loss aborts with diagnostics") {
    const auto runs = small_runs();
    auto cfg = small_config(Regimen::multitask);
    auto seqs = extract_5seqs(runs);
    auto data = build_fold(seqs, small_fold(), PairTask::ntp);
    Trainer t(runs, seqs, data, cfg);
    auto snap = t.snapshot_params();
    for (float& v : *snap.at("head.mbm2.w").data) v = 1e30f;
    t.restore_params(snap);
    try {
        t.run_epoch(0);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("batch") != std::string::npos);
        CHECK(msg.find("mbm=") != std::string::npos);
    }
}

TEST_CASE("finetune init loads encoder weights and keeps sg head fresh") {
    const auto runs = small_runs();
    const auto dir = temp_dir("ft_init");
    const RunResult pre = pretrain_run(runs, small_fold(), small_config(Regimen::ntp_only), dir);
    const LoadedCheckpoint ckpt = load_checkpoint((dir / "best.ckpt").string());

    auto ft_cfg = small_config(Regimen::finetune_sg);
    Rng init_rng(derive_seed(ft_cfg.seed, "init"));
    PairedSeqModel<float> model(ckpt.config, init_rng);
    std::map<std::string, std::vector<float>> fresh_sg;
    for (Param<float>* p : model.params()) {
        if (p->name.rfind("head.sg", 0) == 0) fresh_sg[p->name] = *p->value.data;
    }
    load_pretrained_for_finetune(model, ckpt);
    for (Param<float>* p : model.params()) {
        if (p->name.rfind("head.sg", 0) == 0) {
            CHECK(*p->value.data == fresh_sg.at(p->name));
        } else {
            CHECK(*p->value.data == *ckpt.tensors.at(p->name).data);
        }
    }

    LoadedCheckpoint broken = ckpt;
    broken.tensors.erase("enc0.wq.w");
    CHECK_THROWS_AS(load_pretrained_for_finetune(model, broken), CheckpointError);
}

TEST_CASE("finetune and fresh runs train the sg task") {
    const auto runs = small_runs();
    const auto pre_dir = temp_dir("ft_pre");
    auto pre_cfg = small_config(Regimen::ntp_only);
    const RunResult pre = pretrain_run(runs, small_fold(), pre_cfg, pre_dir);

    FoldSpec fold = small_fold();
    fold.seed = fold_seed(21, 0, Regimen::finetune_sg);
    auto ft_cfg = small_config(Regimen::finetune_sg);
    ft_cfg.seed = fold.seed;
    const RunResult ft = finetune_run(
        runs, fold, ft_cfg, FinetuneInit::from_checkpoint((pre_dir / "best.ckpt").string()));
    CHECK(ft.metrics.size() == 2);
    CHECK(ft.best_val_acc >= 0.0);
    CHECK(ft.best_val_acc <= 1.0);
    CHECK(ft.metrics[0].train_sg > 0.0);
    CHECK(ft.metrics[0].train_ntp == 0.0);

    auto fresh_cfg = small_config(Regimen::fresh_sg);
    fresh_cfg.seed = fold.seed;
    const RunResult fresh = finetune_run(runs, fold, fresh_cfg, FinetuneInit::fresh_init());
    CHECK(fresh.metrics.size() == 2);

    CHECK_THROWS_AS(
        finetune_run(runs, fold, ft_cfg, FinetuneInit::fresh_init()), ConfigError);
    CHECK_THROWS_AS(finetune_run(runs, fold, fresh_cfg,
                                 FinetuneInit::from_checkpoint("x.ckpt")),
                    ConfigError);
    CHECK_THROWS_AS(
        finetune_run(runs, fold, ft_cfg, FinetuneInit::from_checkpoint("missing.ckpt")),
        CheckpointError);
}

TEST_CASE("crossval emits fold rows plus a consistent average") {
    const auto runs = small_runs();
    auto cfg = small_config(Regimen::multitask);
    FoldSpec tmpl = small_fold();
    const auto root = temp_dir("cv");
    const CrossvalSummary s = crossval(runs, cfg, tmpl, root, {}, 1);

    REQUIRE(s.rows.size() == 5);  // four training runs plus the average row
    double acc = 0, ep = 0, mbm = 0;
    for (size_t i = 0; i + 1 < s.rows.size(); ++i) {
        CHECK(s.rows[i].fold == static_cast<int>(i));
        acc += s.rows[i].best_val_acc;
        ep += s.rows[i].best_epoch;
        mbm += s.rows[i].mbm_val_loss;
    }
    const CrossvalRow& avg = s.rows.back();
    CHECK(avg.fold == -1);
    CHECK(std::abs(avg.best_val_acc - acc / 4.0) < 1e-9);
    CHECK(std::abs(avg.best_epoch - ep / 4.0) < 1e-9);
    CHECK(std::abs(avg.mbm_val_loss - mbm / 4.0) < 1e-9);

    for (int f = 0; f < 4; ++f) {
        const fs::path d = root / "multitask" / std::to_string(f);
        CHECK(fs::exists(d / "metrics.csv"));
        CHECK(fs::exists(d / "best.ckpt"));
        CHECK(fs::exists(d / "config.json"));
        CHECK(fs::exists(d / "manifest.json"));
    }
    const std::string summary = slurp(root / "multitask" / "summary.csv");
    CHECK(summary.rfind("fold,best_val_acc,best_epoch,mbm_val_loss\n", 0) == 0);
    CHECK(summary.find("\naverage,") != std::string::npos);

    // parallel execution matches the serial result
    const CrossvalSummary p = crossval(runs, cfg, tmpl, {}, {}, 3);
    REQUIRE(p.rows.size() == s.rows.size());
    for (size_t i = 0; i < s.rows.size(); ++i) {
        CHECK(p.rows[i].best_val_acc == s.rows[i].best_val_acc);
        CHECK(p.rows[i].best_epoch == s.rows[i].best_epoch);
        CHECK(p.rows[i].mbm_val_loss == s.rows[i].mbm_val_loss);
    }
}

TEST_CASE("grid search ranks configurations and skips invalid heads") {
    const auto runs = small_runs();
    auto base = small_config(Regimen::multitask);
    base.epochs = 1;
    GridSpace space;
    space.alphas = {{0.5, 0.5}};
    space.lrs = {1e-3, 1e-5};
    space.heads = {2, 3};  // 16 % 3 != 0
    space.expansions = {2};
    space.layers = {1};
    FoldSpec fold0 = small_fold();

    const GridOutcome out = grid_search(runs, base, space, fold0, {}, 2);
    CHECK(out.ranked.size() == 2);
    REQUIRE(out.skipped.size() == 1);
    CHECK(out.skipped[0].find("n_heads=3") != std::string::npos);
    CHECK(out.ranked[0].best_val_acc >= out.ranked[1].best_val_acc);
    if (out.ranked[0].best_val_acc == out.ranked[1].best_val_acc) {
        CHECK(out.ranked[0].best_epoch <= out.ranked[1].best_epoch);
    }

    GridSpace single;
    single.alphas = {{0.1, 0.9}};
    single.lrs = {1e-4};
    single.heads = {2};
    single.expansions = {2};
    single.layers = {1};
    const GridOutcome one = grid_search(runs, base, single, fold0);
    REQUIRE(one.ranked.size() == 1);
    TrainConfig c = base;
    c.alpha1 = 0.1;
    c.alpha2 = 0.9;
    c.lr = 1e-4;
    c.seed = fold0.seed;
    const RunResult direct = pretrain_run(runs, fold0, c);
    CHECK(one.ranked[0].best_val_acc == direct.best_val_acc);
    CHECK(one.ranked[0].best_epoch == direct.best_epoch);
    const std::string csv = grid_csv(one);
    CHECK(csv.rfind("rank,alpha1,alpha2,lr,", 0) == 0);
}
