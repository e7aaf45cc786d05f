#include "bseq/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

namespace bseq {

namespace {

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!os) throw DataError("write failed: " + path.string());
}

}  // namespace

std::string to_string(Regimen r) {
    switch (r) {
        case Regimen::multitask: return "multitask";
        case Regimen::ntp_only: return "ntp_only";
        case Regimen::finetune_sg: return "finetune_sg";
        case Regimen::fresh_sg: return "fresh_sg";
    }
    throw StateError("unknown regimen value");
}

Regimen regimen_from_string(const std::string& s) {
    std::string norm = s;
    std::replace(norm.begin(), norm.end(), '-', '_');
    if (norm == "multitask") return Regimen::multitask;
    if (norm == "ntp_only") return Regimen::ntp_only;
    if (norm == "finetune_sg") return Regimen::finetune_sg;
    if (norm == "fresh_sg") return Regimen::fresh_sg;
    throw ConfigError("unknown regimen: " + s);
}

void TrainConfig::validate() const {
    model.validate();
    if (alpha1 < 0 || alpha1 > 1 || alpha2 < 0 || alpha2 > 1) {
        throw ConfigError("train: alpha weights must lie in [0, 1]");
    }
    if (std::abs(alpha1 + alpha2 - 1.0) > 1e-9) {
        throw ConfigError("train: alpha1 + alpha2 must equal 1, got " + fmt_g(alpha1 + alpha2));
    }
    if (epochs < 1) throw ConfigError("train: epochs must be positive");
    if (batch_size < 1) throw ConfigError("train: batch_size must be positive");
    if (lr < 0) throw ConfigError("train: lr must be non-negative");
    adam().validate();
}

AdamConfig TrainConfig::adam() const {
    AdamConfig a;
    a.lr = lr;
    a.beta1 = beta1;
    a.beta2 = beta2;
    a.eps = adam_eps;
    a.weight_decay = weight_decay;
    return a;
}

TrainConfig TrainConfig::defaults(Regimen r) {
    TrainConfig c;
    c.regimen = r;
    switch (r) {
        case Regimen::multitask:
            c.alpha1 = 0.1;
            c.alpha2 = 0.9;
            c.lr = 1e-4;
            break;
        case Regimen::ntp_only:
            c.alpha1 = 1.0;
            c.alpha2 = 0.0;
            c.lr = 1e-5;
            break;
        case Regimen::finetune_sg:
        case Regimen::fresh_sg:
            c.alpha1 = 1.0;
            c.alpha2 = 0.0;
            c.lr = 1e-4;
            break;
    }
    return c;
}

void to_json(nlohmann::json& j, const TrainConfig& cfg) {
    j = nlohmann::json{{"regimen", to_string(cfg.regimen)},
                       {"alpha1", cfg.alpha1},
                       {"alpha2", cfg.alpha2},
                       {"lr", cfg.lr},
                       {"epochs", cfg.epochs},
                       {"batch_size", cfg.batch_size},
                       {"seed", cfg.seed},
                       {"beta1", cfg.beta1},
                       {"beta2", cfg.beta2},
                       {"adam_eps", cfg.adam_eps},
                       {"weight_decay", cfg.weight_decay},
                       {"model", cfg.model}};
}

void from_json(const nlohmann::json& j, TrainConfig& cfg) {
    const Regimen r = j.contains("regimen")
                          ? regimen_from_string(j.at("regimen").get<std::string>())
                          : Regimen::multitask;
    cfg = TrainConfig::defaults(r);
    cfg.alpha1 = j.value("alpha1", cfg.alpha1);
    cfg.alpha2 = j.value("alpha2", cfg.alpha2);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.beta1 = j.value("beta1", cfg.beta1);
    cfg.beta2 = j.value("beta2", cfg.beta2);
    cfg.adam_eps = j.value("adam_eps", cfg.adam_eps);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    if (j.contains("model")) j.at("model").get_to(cfg.model);
}

std::string metrics_csv(const std::vector<EpochMetrics>& rows) {
    std::string out = kMetricsHeader;
    out += '\n';
    char sec[32];
    for (const auto& m : rows) {
        std::snprintf(sec, sizeof sec, "%.3f", m.seconds);
        out += std::to_string(m.epoch);
        out += ',';
        out += fmt_g(m.train_ntp);
        out += ',';
        out += fmt_g(m.train_mbm);
        out += ',';
        out += fmt_g(m.train_sg);
        out += ',';
        out += fmt_g(m.train_total);
        out += ',';
        out += fmt_g(m.val_ntp_acc);
        out += ',';
        out += fmt_g(m.val_mbm_loss);
        out += ',';
        out += fmt_g(m.val_sg_acc);
        out += ',';
        out += sec;
        out += '\n';
    }
    return out;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& rows) {
    write_text_file(path, metrics_csv(rows));
}

double ntp_loss(const std::array<double, 2>& probs, Label label) {
    const double p = probs[static_cast<size_t>(label_index(label))];
    return -std::log(std::max(p, 1e-12));
}

double mbm_loss(const std::vector<std::vector<double>>& recons,
                const std::vector<std::vector<double>>& targets) {
    if (recons.empty() || recons.size() > 2 || recons.size() != targets.size()) {
        throw ShapeError("mbm_loss: expected one or two reconstruction/target pairs");
    }
    double total = 0.0;
    for (size_t k = 0; k < recons.size(); ++k) {
        if (recons[k].size() != targets[k].size() || recons[k].empty()) {
            throw ShapeError("mbm_loss: reconstruction/target length mismatch");
        }
        double se = 0.0;
        for (size_t i = 0; i < recons[k].size(); ++i) {
            const double d = recons[k][i] - targets[k][i];
            se += d * d;
        }
        total += se / static_cast<double>(recons[k].size());
    }
    return total / static_cast<double>(recons.size());
}

double multitask_loss(double e_ntp, double e_mbm, double alpha1, double alpha2) {
    if (std::abs(alpha1 + alpha2 - 1.0) > 1e-9) {
        throw ConfigError("multitask_loss: alpha1 + alpha2 must equal 1");
    }
    return alpha1 * e_ntp + alpha2 * e_mbm;
}

double sg_loss(const std::array<double, 2>& probs, Label label) { return ntp_loss(probs, label); }

void load_pretrained_for_finetune(PairedSeqModel<float>& model, const LoadedCheckpoint& ckpt) {
    for (Param<float>* p : model.params()) {
        if (p->name.rfind("head.sg", 0) == 0) continue;  // fresh Same Genre head
        auto it = ckpt.tensors.find(p->name);
        if (it == ckpt.tensors.end()) {
            throw CheckpointError("finetune load: missing tensor " + p->name);
        }
        if (it->second.shape != p->value.shape) {
            throw CheckpointError("finetune load: shape mismatch for " + p->name);
        }
        *p->value.data = *it->second.data;
    }
}

Trainer::Trainer(const std::vector<RunTimeseries>& runs, std::vector<FiveSeq> seqs, FoldData data,
                 TrainConfig cfg)
    : runs_(&runs), seqs_(std::move(seqs)), data_(std::move(data)), cfg_(cfg) {
    cfg_.validate();
    Rng init_rng(derive_seed(cfg_.seed, "init"));
    model_ = std::make_unique<PairedSeqModel<float>>(cfg_.model, init_rng);

    for (Param<float>* p : model_->params()) {
        const bool ntp_head = p->name.rfind("head.ntp", 0) == 0;
        const bool mbm_head = p->name.rfind("head.mbm", 0) == 0;
        const bool sg_head = p->name.rfind("head.sg", 0) == 0;
        bool step = false;
        switch (cfg_.regimen) {
            case Regimen::multitask: step = !sg_head; break;
            case Regimen::ntp_only: step = !sg_head && !mbm_head; break;
            case Regimen::finetune_sg:
            case Regimen::fresh_sg: step = !ntp_head && !mbm_head; break;
        }
        if (step) step_params_.push_back(p);
    }

    // replacement images come from the training split only
    std::set<int> train_seq_ids;
    for (const auto& p : data_.train_pairs) {
        train_seq_ids.insert(p.seq1);
        train_seq_ids.insert(p.seq2);
    }
    std::vector<FiveSeq> train_seqs;
    train_seqs.reserve(train_seq_ids.size());
    for (int id : train_seq_ids) train_seqs.push_back(seqs_.at(static_cast<size_t>(id)));
    pool_ = build_image_pool(train_seqs, *runs_);
}

void Trainer::fill_sample(float* rows, const PairedSample& pair) const {
    const int d = cfg_.model.d_model;
    std::memset(rows, 0, sizeof(float) * static_cast<size_t>(kSeqLen) * d);
    rows[kClsPos * d + kClsDim] = 1.0f;
    rows[kSepPos * d + kSepDim] = 1.0f;
    const auto copy_seq = [&](int seq_idx, int first_row) {
        const FiveSeq& s = seqs_.at(static_cast<size_t>(seq_idx));
        const RunTimeseries& run = runs_->at(static_cast<size_t>(s.run_ref));
        if (run.dim != d) {
            throw ShapeError("sample assembly: run dim " + std::to_string(run.dim) +
                             " does not match d_model " + std::to_string(d));
        }
        for (int k = 0; k < kWindow; ++k) {
            std::memcpy(rows + static_cast<size_t>(first_row + k) * d,
                        run.image(s.start_timepoint + k), sizeof(float) * static_cast<size_t>(d));
        }
    };
    copy_seq(pair.seq1, kClsPos + 1);
    copy_seq(pair.seq2, kSepPos + 1);
}

Trainer::Batch Trainer::assemble(const std::vector<PairedSample>& pairs,
                                 const std::vector<int>& order, size_t begin, size_t end,
                                 int epoch, MaskMode mode) const {
    const int d = cfg_.model.d_model;
    const int B = static_cast<int>(end - begin);
    Batch b;
    b.size = B;
    b.x = Tensor<float>::zeros({B * kSeqLen, d});
    std::vector<float> targets_flat;
    for (int i = 0; i < B; ++i) {
        const int pair_idx = order[begin + static_cast<size_t>(i)];
        const PairedSample& p = pairs.at(static_cast<size_t>(pair_idx));
        float* rows = b.x.ptr() + static_cast<size_t>(i) * kSeqLen * d;
        fill_sample(rows, p);
        b.ntp_labels.push_back(p.ntp_label == Label::undefined ? -1 : label_index(p.ntp_label));
        b.sg_labels.push_back(p.sg_label == Label::undefined ? -1 : label_index(p.sg_label));
        if (mode == MaskMode::none) continue;
        Rng mask_rng(mode == MaskMode::train
                         ? derive_seed(cfg_.seed, "mask", epoch, pair_idx)
                         : derive_seed(cfg_.seed, "valmask", pair_idx));
        const MaskPlan plan = plan_mask(mask_rng);
        const AppliedMask applied = apply_mask(rows, d, plan, pool_, mask_rng);
        const float w = 1.0f / (static_cast<float>(plan.actions.size()) * static_cast<float>(B));
        for (size_t k = 0; k < plan.actions.size(); ++k) {
            b.mbm_rows.push_back(i * kSeqLen + plan.actions[k].position);
            targets_flat.insert(targets_flat.end(), applied.targets[k].begin(),
                                applied.targets[k].end());
            b.mbm_weights.push_back(w);
        }
    }
    if (!b.mbm_rows.empty()) {
        b.mbm_targets = Tensor<float>({static_cast<int>(b.mbm_rows.size()), d},
                                      std::move(targets_flat));
    }
    return b;
}

EpochMetrics Trainer::run_epoch(int epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto& pairs = data_.train_pairs;
    if (pairs.empty()) throw DataError("train_epoch: empty training split");

    std::vector<int> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed(cfg_.seed, "shuffle", epoch));
    shuffle_rng.shuffle(order);
    Rng dropout_rng(derive_seed(cfg_.seed, "dropout", epoch));

    const bool sg_task = !cfg_.is_pretrain();
    const bool with_mask = cfg_.regimen == Regimen::multitask;
    const AdamConfig adam_cfg = cfg_.adam();
    const size_t n = pairs.size();
    const size_t bs = static_cast<size_t>(cfg_.batch_size);
    double sum_ntp = 0, sum_mbm = 0, sum_sg = 0, sum_total = 0;

    for (size_t beg = 0, batch_idx = 0; beg < n; beg += bs, ++batch_idx) {
        const size_t end_i = std::min(n, beg + bs);
        Batch b = assemble(pairs, order, beg, end_i, epoch,
                           with_mask ? MaskMode::train : MaskMode::none);
        auto enc = model_->encode(b.x, true, &dropout_rng);

        Tensor<float> total;
        double v_ntp = 0, v_mbm = 0, v_sg = 0;
        if (!sg_task) {
            auto e_ntp = mean_all(cross_entropy_rows(model_->ntp_probs(enc), b.ntp_labels));
            v_ntp = e_ntp.item();
            if (with_mask) {
                auto per_row = mse_rows(model_->mbm_recon(enc, b.mbm_rows), b.mbm_targets);
                auto e_mbm = weighted_sum(per_row, b.mbm_weights);
                v_mbm = e_mbm.item();
                total = axpby(e_ntp, e_mbm, static_cast<float>(cfg_.alpha1),
                              static_cast<float>(cfg_.alpha2));
            } else {
                total = e_ntp;
            }
        } else {
            auto e_sg = mean_all(cross_entropy_rows(model_->sg_probs(enc), b.sg_labels));
            v_sg = e_sg.item();
            total = e_sg;
        }
        const double v_total = total.item();
        if (!std::isfinite(v_total) || !std::isfinite(v_ntp) || !std::isfinite(v_mbm) ||
            !std::isfinite(v_sg)) {
            throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                               std::to_string(batch_idx) + ": ntp=" + fmt_g(v_ntp) +
                               " mbm=" + fmt_g(v_mbm) + " sg=" + fmt_g(v_sg) +
                               " total=" + fmt_g(v_total));
        }
        backward(total);
        adam_step_all(step_params_, adam_cfg);
        zero_grads(step_params_);

        const double B = static_cast<double>(b.size);
        sum_ntp += v_ntp * B;
        sum_mbm += v_mbm * B;
        sum_sg += v_sg * B;
        sum_total += v_total * B;
    }

    EpochMetrics m = evaluate(epoch);
    const double dn = static_cast<double>(n);
    m.train_ntp = sum_ntp / dn;
    m.train_mbm = sum_mbm / dn;
    m.train_sg = sum_sg / dn;
    m.train_total = sum_total / dn;
    m.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    history_.push_back(m);
    return m;
}

EpochMetrics Trainer::evaluate(int epoch) const {
    NoGradGuard guard;
    EpochMetrics m;
    m.epoch = epoch;
    const auto& vp = data_.val_pairs;
    if (vp.empty()) throw DataError("evaluate: empty validation split");

    std::vector<int> order(vp.size());
    std::iota(order.begin(), order.end(), 0);
    const bool sg_task = !cfg_.is_pretrain();
    const bool with_mask = cfg_.regimen == Regimen::multitask;
    const size_t n = vp.size();
    const size_t bs = static_cast<size_t>(cfg_.batch_size);
    long correct = 0;
    double mbm_sum = 0;

    for (size_t beg = 0; beg < n; beg += bs) {
        const size_t end_i = std::min(n, beg + bs);
        // accuracy is measured on uncorrupted inputs
        Batch b = assemble(vp, order, beg, end_i, 0, MaskMode::none);
        auto enc = model_->encode(b.x, false, nullptr);
        auto probs = sg_task ? model_->sg_probs(enc) : model_->ntp_probs(enc);
        const auto& labels = sg_task ? b.sg_labels : b.ntp_labels;
        for (int i = 0; i < b.size; ++i) {
            const float p0 = (*probs.data)[static_cast<size_t>(i) * 2];
            const float p1 = (*probs.data)[static_cast<size_t>(i) * 2 + 1];
            const int pred = p1 > p0 ? 1 : 0;
            correct += pred == labels[static_cast<size_t>(i)];
        }
        if (with_mask) {
            Batch mb = assemble(vp, order, beg, end_i, 0, MaskMode::val_fixed);
            auto enc2 = model_->encode(mb.x, false, nullptr);
            auto per_row = mse_rows(model_->mbm_recon(enc2, mb.mbm_rows), mb.mbm_targets);
            mbm_sum += weighted_sum(per_row, mb.mbm_weights).item() * mb.size;
        }
    }

    const double acc = static_cast<double>(correct) / static_cast<double>(n);
    if (sg_task) {
        m.val_sg_acc = acc;
    } else {
        m.val_ntp_acc = acc;
        if (with_mask) m.val_mbm_loss = mbm_sum / static_cast<double>(n);
    }
    return m;
}

std::map<std::string, Tensor<float>> Trainer::snapshot_params() {
    std::map<std::string, Tensor<float>> snap;
    for (Param<float>* p : model_->params()) snap.emplace(p->name, p->value.detached_copy());
    return snap;
}

void Trainer::restore_params(const std::map<std::string, Tensor<float>>& snap) {
    for (Param<float>* p : model_->params()) {
        auto it = snap.find(p->name);
        if (it == snap.end()) throw StateError("restore_params: missing tensor " + p->name);
        if (it->second.shape != p->value.shape) {
            throw StateError("restore_params: shape mismatch for " + p->name);
        }
        *p->value.data = *it->second.data;
    }
}

namespace {

nlohmann::json run_meta(const RunResult& res, PairTask task) {
    const char* acc_key = task == PairTask::ntp ? "best_val_ntp_acc" : "best_val_sg_acc";
    nlohmann::json meta{{"regimen", to_string(res.config.regimen)},
                        {"fold", res.fold.heldout_run_index},
                        {"seed", res.config.seed},
                        {"best_epoch", res.best_epoch},
                        {acc_key, res.best_val_acc}};
    if (task == PairTask::ntp) meta["mbm_val_loss"] = res.mbm_at_best;
    return meta;
}

void write_run_dir(const RunResult& res, PairTask task, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json config_blob{{"train", res.config}, {"fold", res.fold}};
    write_text_file(dir / "config.json", config_blob.dump(2) + "\n");
    write_metrics_csv(dir / "metrics.csv", res.metrics);
    // checkpoints carry their training setup so re-evaluation needs only
    // the checkpoint and the data directory
    nlohmann::json meta = run_meta(res, task);
    meta["train"] = res.config;
    meta["fold_spec"] = res.fold;
    save_checkpoint((dir / "best.ckpt").string(), res.config.model, meta, res.best_params);
    write_text_file(dir / "manifest.json", res.manifest.dump(2) + "\n");
}

RunResult run_fold(const std::vector<RunTimeseries>& runs, const FoldSpec& fold,
                   const TrainConfig& cfg, PairTask task, const FinetuneInit* init,
                   const std::filesystem::path& out_dir) {
    RunResult res;
    res.config = cfg;
    res.fold = fold;

    auto seqs = extract_5seqs(runs);
    auto data = build_fold(seqs, fold, task);
    res.manifest = fold_manifest(seqs, data, fold, task);
    res.manifest["dataset_digest"] = fnv1a64_hex(res.manifest.dump());

    Trainer trainer(runs, seqs, data, res.config);
    if (init && !init->fresh) {
        const LoadedCheckpoint ckpt = load_checkpoint(init->checkpoint_path);
        if (!(ckpt.config.d_model == cfg.model.d_model && ckpt.config.n_layers == cfg.model.n_layers &&
              ckpt.config.n_heads == cfg.model.n_heads &&
              ckpt.config.forward_expansion == cfg.model.forward_expansion)) {
            throw CheckpointError("finetune load: checkpoint architecture differs from config");
        }
        load_pretrained_for_finetune(trainer.model(), ckpt);
        res.manifest["pretrain_checkpoint"] = init->checkpoint_path;
    }

    double best = -1.0;
    for (int e = 0; e < cfg.epochs; ++e) {
        const EpochMetrics m = trainer.run_epoch(e);
        const double acc = task == PairTask::ntp ? m.val_ntp_acc : m.val_sg_acc;
        if (acc > best) {
            best = acc;
            res.best_epoch = e;
            res.best_val_acc = acc;
            res.mbm_at_best = m.val_mbm_loss;
            res.best_params = trainer.snapshot_params();
        }
    }
    res.metrics = trainer.history();

    nlohmann::json cfg_json = res.config;
    res.manifest["run"] = run_meta(res, task);
    res.manifest["config"] = cfg_json;
    res.manifest["config_hash"] = fnv1a64(cfg_json.dump());
    if (!out_dir.empty()) write_run_dir(res, task, out_dir);
    return res;
}

}  // namespace

RunResult pretrain_run(const std::vector<RunTimeseries>& runs, const FoldSpec& fold,
                       const TrainConfig& cfg, const std::filesystem::path& out_dir) {
    cfg.validate();
    if (!cfg.is_pretrain()) {
        throw ConfigError("pretrain_run: regimen must be multitask or ntp_only");
    }
    return run_fold(runs, fold, cfg, PairTask::ntp, nullptr, out_dir);
}

RunResult finetune_run(const std::vector<RunTimeseries>& runs, const FoldSpec& fold,
                       const TrainConfig& cfg, const FinetuneInit& init,
                       const std::filesystem::path& out_dir) {
    cfg.validate();
    if (cfg.regimen == Regimen::finetune_sg) {
        if (init.fresh) throw ConfigError("finetune_sg requires a pretrain checkpoint");
    } else if (cfg.regimen == Regimen::fresh_sg) {
        if (!init.fresh) throw ConfigError("fresh_sg must not load a checkpoint");
    } else {
        throw ConfigError("finetune_run: regimen must be finetune_sg or fresh_sg");
    }
    return run_fold(runs, fold, cfg, PairTask::sg, &init, out_dir);
}

uint64_t fold_seed(uint64_t base_seed, int fold_index, Regimen regimen) {
    const uint64_t phase = (regimen == Regimen::multitask || regimen == Regimen::ntp_only)
                               ? 0
                               : 100000;
    return base_seed + static_cast<uint64_t>(fold_index) + phase;
}

std::string crossval_csv(const std::vector<CrossvalRow>& rows, Regimen regimen) {
    const bool with_mbm = regimen == Regimen::multitask || regimen == Regimen::ntp_only;
    std::string out = with_mbm ? "fold,best_val_acc,best_epoch,mbm_val_loss"
                               : "fold,best_val_acc,best_epoch";
    out += '\n';
    for (const auto& r : rows) {
        out += r.fold < 0 ? std::string("average") : std::to_string(r.fold);
        out += ',';
        out += fmt_g(r.best_val_acc);
        out += ',';
        out += fmt_g(r.best_epoch);
        if (with_mbm) {
            out += ',';
            out += fmt_g(r.mbm_val_loss);
        }
        out += '\n';
    }
    return out;
}

namespace {

// Runs tasks 0..n-1 on up to `jobs` threads, rethrowing the first failure.
void parallel_for_tasks(size_t n, int jobs, const std::function<void(size_t)>& fn) {
    const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(n)));
    if (workers == 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mu;
    auto body = [&]() {
        for (size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mu);
                if (!first_error) first_error = std::current_exception();
                return;
            }
        }
    };
    std::vector<std::thread> threads;
    threads.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) threads.emplace_back(body);
    for (auto& t : threads) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace

CrossvalSummary crossval(const std::vector<RunTimeseries>& runs, const TrainConfig& cfg,
                         const FoldSpec& fold_template, const std::filesystem::path& run_root,
                         const std::filesystem::path& checkpoint_root, int jobs) {
    cfg.validate();
    if (cfg.regimen == Regimen::finetune_sg && checkpoint_root.empty()) {
        throw ConfigError("crossval: finetune_sg needs a pretrain checkpoint root");
    }
    std::set<int> fold_set;
    for (const auto& r : runs) {
        if (r.run_kind == RunKind::training) fold_set.insert(r.run_index);
    }
    if (fold_set.empty()) throw DataError("crossval: no training runs present");
    const std::vector<int> fold_ids(fold_set.begin(), fold_set.end());

    CrossvalSummary summary;
    summary.results.resize(fold_ids.size());
    parallel_for_tasks(fold_ids.size(), jobs, [&](size_t i) {
        const int fid = fold_ids[i];
        FoldSpec fold = fold_template;
        fold.heldout_run_index = fid;
        fold.seed = fold_seed(fold_template.seed, fid, cfg.regimen);
        TrainConfig c = cfg;
        c.seed = fold.seed;
        const std::filesystem::path out =
            run_root.empty() ? std::filesystem::path{}
                             : run_root / to_string(cfg.regimen) / std::to_string(fid);
        if (c.is_pretrain()) {
            summary.results[i] = pretrain_run(runs, fold, c, out);
        } else if (c.regimen == Regimen::finetune_sg) {
            const auto ckpt = checkpoint_root / std::to_string(fid) / "best.ckpt";
            summary.results[i] =
                finetune_run(runs, fold, c, FinetuneInit::from_checkpoint(ckpt.string()), out);
        } else {
            summary.results[i] = finetune_run(runs, fold, c, FinetuneInit::fresh_init(), out);
        }
    });

    CrossvalRow avg;
    avg.fold = -1;
    for (size_t i = 0; i < fold_ids.size(); ++i) {
        const RunResult& r = summary.results[i];
        CrossvalRow row;
        row.fold = fold_ids[i];
        row.best_val_acc = r.best_val_acc;
        row.best_epoch = static_cast<double>(r.best_epoch);
        row.mbm_val_loss = r.mbm_at_best;
        summary.rows.push_back(row);
        avg.best_val_acc += row.best_val_acc;
        avg.best_epoch += row.best_epoch;
        avg.mbm_val_loss += row.mbm_val_loss;
    }
    const double nf = static_cast<double>(fold_ids.size());
    avg.best_val_acc /= nf;
    avg.best_epoch /= nf;
    avg.mbm_val_loss /= nf;
    summary.rows.push_back(avg);

    if (!run_root.empty()) {
        const auto dir = run_root / to_string(cfg.regimen);
        std::filesystem::create_directories(dir);
        write_text_file(dir / "summary.csv", crossval_csv(summary.rows, cfg.regimen));
    }
    return summary;
}

GridOutcome grid_search(const std::vector<RunTimeseries>& runs, const TrainConfig& base,
                        const GridSpace& space, const FoldSpec& fold0,
                        const std::filesystem::path& run_root, int jobs) {
    if (!base.is_pretrain()) throw ConfigError("grid_search: regimen must be a pretraining one");
    GridOutcome out;
    std::vector<TrainConfig> combos;
    for (const auto& [a1, a2] : space.alphas) {
        for (double lr : space.lrs) {
            for (int h : space.heads) {
                for (int fe : space.expansions) {
                    for (int nl : space.layers) {
                        TrainConfig c = base;
                        c.alpha1 = a1;
                        c.alpha2 = a2;
                        c.lr = lr;
                        c.model.n_heads = h;
                        c.model.forward_expansion = fe;
                        c.model.n_layers = nl;
                        c.seed = fold0.seed;
                        if (c.model.d_model % h != 0) {
                            out.skipped.push_back(
                                "skipping n_heads=" + std::to_string(h) +
                                ": d_model=" + std::to_string(c.model.d_model) +
                                " is not divisible by it");
                            continue;
                        }
                        combos.push_back(c);
                    }
                }
            }
        }
    }
    // duplicate skip notices collapse to one per head count
    std::sort(out.skipped.begin(), out.skipped.end());
    out.skipped.erase(std::unique(out.skipped.begin(), out.skipped.end()), out.skipped.end());

    out.ranked.resize(combos.size());
    parallel_for_tasks(combos.size(), jobs, [&](size_t i) {
        const std::filesystem::path dir =
            run_root.empty() ? std::filesystem::path{} : run_root / std::to_string(i);
        const RunResult r = pretrain_run(runs, fold0, combos[i], dir);
        out.ranked[i] = GridResult{combos[i], r.best_val_acc, r.best_epoch};
    });
    std::stable_sort(out.ranked.begin(), out.ranked.end(),
                     [](const GridResult& a, const GridResult& b) {
                         if (a.best_val_acc != b.best_val_acc) {
                             return a.best_val_acc > b.best_val_acc;
                         }
                         return a.best_epoch < b.best_epoch;
                     });
    if (!run_root.empty()) {
        std::filesystem::create_directories(run_root);
        write_text_file(run_root / "grid.csv", grid_csv(out));
    }
    return out;
}

std::string grid_csv(const GridOutcome& out) {
    std::string csv =
        "rank,alpha1,alpha2,lr,n_heads,forward_expansion,n_layers,best_val_acc,best_epoch\n";
    int rank = 1;
    for (const auto& r : out.ranked) {
        csv += std::to_string(rank++);
        csv += ',';
        csv += fmt_g(r.config.alpha1);
        csv += ',';
        csv += fmt_g(r.config.alpha2);
        csv += ',';
        csv += fmt_g(r.config.lr);
        csv += ',';
        csv += std::to_string(r.config.model.n_heads);
        csv += ',';
        csv += std::to_string(r.config.model.forward_expansion);
        csv += ',';
        csv += std::to_string(r.config.model.n_layers);
        csv += ',';
        csv += fmt_g(r.best_val_acc);
        csv += ',';
        csv += std::to_string(r.best_epoch);
        csv += '\n';
    }
    return csv;
}

}  // namespace bseq
