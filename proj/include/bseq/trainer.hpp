#pragma once

#include <array>
#include <filesystem>
#include <json.hpp>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bseq/adam.hpp"
#include "bseq/checkpoint.hpp"
#include "bseq/dataset.hpp"
#include "bseq/masking.hpp"
#include "bseq/model.hpp"

namespace bseq {

enum class Regimen { multitask, ntp_only, finetune_sg, fresh_sg };

std::string to_string(Regimen r);
Regimen regimen_from_string(const std::string& s);

struct TrainConfig {
    Regimen regimen = Regimen::multitask;
    double alpha1 = 0.1;
    double alpha2 = 0.9;
    double lr = 1e-4;
    int epochs = 10;
    int batch_size = 32;
    uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 1e-4;
    ModelConfig model;

    void validate() const;
    AdamConfig adam() const;
    bool is_pretrain() const { return regimen == Regimen::multitask || regimen == Regimen::ntp_only; }

    static TrainConfig defaults(Regimen r);
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

struct EpochMetrics {
    int epoch = 0;
    double train_ntp = 0.0;
    double train_mbm = 0.0;
    double train_sg = 0.0;
    double train_total = 0.0;
    double val_ntp_acc = 0.0;
    double val_mbm_loss = 0.0;
    double val_sg_acc = 0.0;
    double seconds = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "epoch,train_ntp,train_mbm,train_sg,train_total,val_ntp_acc,val_mbm_loss,val_sg_acc,seconds";

std::string metrics_csv(const std::vector<EpochMetrics>& rows);
void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& rows);

// Scalar forms of the task losses. The batched training path reduces to
// these on single samples; tests pin both against the same oracles.
double ntp_loss(const std::array<double, 2>& probs, Label label);
double mbm_loss(const std::vector<std::vector<double>>& recons,
                const std::vector<std::vector<double>>& targets);
double multitask_loss(double e_ntp, double e_mbm, double alpha1, double alpha2);
double sg_loss(const std::array<double, 2>& probs, Label label);

// Copies every non-SG tensor from a pretrain checkpoint into the model and
// leaves the freshly initialized Same Genre head untouched.
void load_pretrained_for_finetune(PairedSeqModel<float>& model, const LoadedCheckpoint& ckpt);

class Trainer {
  public:
    Trainer(const std::vector<RunTimeseries>& runs, std::vector<FiveSeq> seqs, FoldData data,
            TrainConfig cfg);

    PairedSeqModel<float>& model() { return *model_; }
    const TrainConfig& config() const { return cfg_; }
    int n_train() const { return static_cast<int>(data_.train_pairs.size()); }
    int n_val() const { return static_cast<int>(data_.val_pairs.size()); }

    // One full training pass over the shuffled train split followed by an
    // evaluation pass; appends to and returns the metrics history entry.
    EpochMetrics run_epoch(int epoch);

    // Evaluation only: NTP/SG accuracy on unmasked inputs, MBM loss on the
    // fold's fixed masks.
    EpochMetrics evaluate(int epoch) const;

    const std::vector<EpochMetrics>& history() const { return history_; }

    std::map<std::string, Tensor<float>> snapshot_params();
    void restore_params(const std::map<std::string, Tensor<float>>& snap);

  private:
    struct Batch {
        Tensor<float> x;  // [B*12, d]
        std::vector<int> ntp_labels;
        std::vector<int> sg_labels;
        std::vector<int> mbm_rows;
        Tensor<float> mbm_targets;
        std::vector<float> mbm_weights;  // 1 / (positions in sample * batch size)
        int size = 0;
    };

    enum class MaskMode { none, train, val_fixed };

    Batch assemble(const std::vector<PairedSample>& pairs, const std::vector<int>& order,
                   size_t begin, size_t end, int epoch, MaskMode mode) const;
    void fill_sample(float* rows, const PairedSample& pair) const;

    const std::vector<RunTimeseries>* runs_;
    std::vector<FiveSeq> seqs_;
    FoldData data_;
    TrainConfig cfg_;
    std::unique_ptr<PairedSeqModel<float>> model_;
    std::vector<Param<float>*> step_params_;
    ImagePool pool_;
    std::vector<EpochMetrics> history_;
};

struct RunResult {
    TrainConfig config;
    FoldSpec fold;
    std::vector<EpochMetrics> metrics;
    int best_epoch = 0;
    double best_val_acc = 0.0;  // NTP accuracy for pretrain regimens, SG for finetune
    double mbm_at_best = 0.0;
    std::map<std::string, Tensor<float>> best_params;
    nlohmann::json manifest;
};

struct FinetuneInit {
    bool fresh = true;
    std::string checkpoint_path;

    static FinetuneInit from_checkpoint(std::string path) { return {false, std::move(path)}; }
    static FinetuneInit fresh_init() { return {true, {}}; }
};

// Trains for cfg.epochs on the fold's NTP pairs and selects the epoch with
// the highest validation NTP accuracy, earliest epoch on ties. Writes
// config.json, metrics.csv, best.ckpt and manifest.json under out_dir when
// it is non-empty.
RunResult pretrain_run(const std::vector<RunTimeseries>& runs, const FoldSpec& fold,
                       const TrainConfig& cfg, const std::filesystem::path& out_dir = {});

// Same Genre training on the fold's SG pairs, either from a pretrain
// checkpoint or from fresh weights. Selection on validation SG accuracy.
RunResult finetune_run(const std::vector<RunTimeseries>& runs, const FoldSpec& fold,
                       const TrainConfig& cfg, const FinetuneInit& init,
                       const std::filesystem::path& out_dir = {});

// Seed offsets keep the pretraining and finetuning phases on distinct
// random streams while sharing per-fold datasets within a phase.
uint64_t fold_seed(uint64_t base_seed, int fold_index, Regimen regimen);

struct CrossvalRow {
    int fold = 0;  // -1 marks the average row
    double best_val_acc = 0.0;
    double best_epoch = 0.0;
    double mbm_val_loss = 0.0;
};

struct CrossvalSummary {
    std::vector<CrossvalRow> rows;  // one per fold plus the trailing average
    std::vector<RunResult> results;
};

std::string crossval_csv(const std::vector<CrossvalRow>& rows, Regimen regimen);

// One run per training-run fold, plus the column-average row. For
// finetune_sg, checkpoint_root must hold per-fold pretrain runs laid out as
// <checkpoint_root>/<fold>/best.ckpt.
CrossvalSummary crossval(const std::vector<RunTimeseries>& runs, const TrainConfig& cfg,
                         const FoldSpec& fold_template,
                         const std::filesystem::path& run_root = {},
                         const std::filesystem::path& checkpoint_root = {}, int jobs = 1);

struct GridSpace {
    std::vector<std::pair<double, double>> alphas = {{0.1, 0.9}, {0.3, 0.7}, {0.5, 0.5}};
    std::vector<double> lrs = {1e-4, 1e-5};
    std::vector<int> heads = {2, 3, 4};
    std::vector<int> expansions = {2, 4};
    std::vector<int> layers = {3, 4};
};

struct GridResult {
    TrainConfig config;
    double best_val_acc = 0.0;
    int best_epoch = 0;
};

struct GridOutcome {
    std::vector<GridResult> ranked;     // descending accuracy, ties by earlier epoch
    std::vector<std::string> skipped;   // notices for invalid combinations
};

GridOutcome grid_search(const std::vector<RunTimeseries>& runs, const TrainConfig& base,
                        const GridSpace& space, const FoldSpec& fold0,
                        const std::filesystem::path& run_root = {}, int jobs = 1);

std::string grid_csv(const GridOutcome& out);

}  // namespace bseq
