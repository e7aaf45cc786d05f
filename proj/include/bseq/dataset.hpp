#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "bseq/rng.hpp"
#include "bseq/vxts.hpp"

namespace bseq {

enum class Window { first, second };

inline std::string to_string(Window w) { return w == Window::first ? "first" : "second"; }

// Binary task label; undefined when the builder for that task did not run.
enum class Label : int { no = 0, yes = 1, undefined = -1 };

inline int label_index(Label l) {
    if (l == Label::undefined) throw StateError("label: undefined label used as a target");
    return static_cast<int>(l);
}

// One 5-image window of a clip (timesteps 1-5 or 6-10).
struct FiveSeq {
    int run_ref = -1;  // index into the runs vector the seq was extracted from
    std::string subject_id;
    std::string run_id;
    RunKind run_kind = RunKind::training;
    int run_index = 0;
    int clip_index = 0;
    Window window = Window::first;
    int genre_id = 0;
    int start_timepoint = 0;  // first image of the window, within the run
    bool has_successor = false;
};

struct PairedSample {
    int seq1 = -1;  // indices into the FiveSeq list
    int seq2 = -1;
    Label ntp_label = Label::undefined;
    Label sg_label = Label::undefined;
};

// Heldout run selection plus dataset sizing for one cross-validation fold.
struct FoldSpec {
    int heldout_run_index = 0;
    uint64_t seed = 0;
    int n_train_cap = 10000;
    int n_val_cap = 400;

    void validate() const {
        if (heldout_run_index < 0) throw ConfigError("fold: heldout run index must be >= 0");
        if (n_train_cap <= 0 || n_val_cap <= 0) throw ConfigError("fold: caps must be positive");
    }
};

void to_json(nlohmann::json& j, const FoldSpec& fold);
void from_json(const nlohmann::json& j, FoldSpec& fold);

enum class PairTask { ntp, sg };

struct FoldData {
    std::vector<PairedSample> train_pairs;
    std::vector<PairedSample> val_pairs;
    int sg_skipped = 0;  // positives skipped for single-seq genres (SG task)
};

// Two windows per retained clip; test runs keep only the first instance of
// each clip_index. has_successor marks seqs whose immediate temporal
// successor was retained.
std::vector<FiveSeq> extract_5seqs(const std::vector<RunTimeseries>& runs);

// One positive (the immediate successor) and one negative (uniform over the
// same subject's seqs in the candidate set, excluding the true successor
// and seq1) per eligible seq.
std::vector<PairedSample> build_ntp_pairs(const std::vector<FiveSeq>& seqs,
                                          const std::vector<int>& candidates, Rng& rng);

// One positive (same genre) and one negative (different genre) per seq,
// both uniform within the subject. Seqs whose genre has no other seq are
// skipped entirely to preserve balance; the count is reported.
std::vector<PairedSample> build_sg_pairs(const std::vector<FiveSeq>& seqs,
                                         const std::vector<int>& candidates, Rng& rng,
                                         int* n_skipped = nullptr);

// Balanced seeded subsample down to exactly cap samples (cap/2 per label).
std::vector<PairedSample> cap_balanced(const std::vector<PairedSample>& pairs, PairTask task,
                                       int cap, Rng& rng);

// Train pairs from all non-heldout training runs; val pairs regenerated
// from heldout-run seqs only. Both capped.
FoldData build_fold(const std::vector<FiveSeq>& seqs, const FoldSpec& fold, PairTask task);

nlohmann::json fold_manifest(const std::vector<FiveSeq>& seqs, const FoldData& data,
                             const FoldSpec& fold, PairTask task);

}  // namespace bseq
