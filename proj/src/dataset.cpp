#include "bseq/dataset.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace bseq {

void to_json(nlohmann::json& j, const FoldSpec& fold) {
    j = nlohmann::json{{"heldout_run_index", fold.heldout_run_index},
                       {"seed", fold.seed},
                       {"n_train_cap", fold.n_train_cap},
                       {"n_val_cap", fold.n_val_cap}};
}

void from_json(const nlohmann::json& j, FoldSpec& fold) {
    fold.heldout_run_index = j.value("heldout_run_index", fold.heldout_run_index);
    fold.seed = j.value("seed", fold.seed);
    fold.n_train_cap = j.value("n_train_cap", fold.n_train_cap);
    fold.n_val_cap = j.value("n_val_cap", fold.n_val_cap);
}

std::vector<FiveSeq> extract_5seqs(const std::vector<RunTimeseries>& runs) {
    std::vector<FiveSeq> seqs;
    for (size_t r = 0; r < runs.size(); ++r) {
        const RunTimeseries& run = runs[r];
        validate_run_structure(run);

        // test runs: keep only the first instance of each clip_index
        std::vector<const ClipEntry*> retained;
        std::set<int> seen;
        for (const ClipEntry& clip : run.clip_table) {
            if (run.run_kind == RunKind::test && !seen.insert(clip.clip_index).second) continue;
            retained.push_back(&clip);
        }

        std::set<int> retained_starts;
        for (const ClipEntry* clip : retained) {
            retained_starts.insert(clip->start_timepoint);      // window first
            retained_starts.insert(clip->start_timepoint + 5);  // window second
        }

        for (const ClipEntry* clip : retained) {
            for (Window w : {Window::first, Window::second}) {
                FiveSeq s;
                s.run_ref = static_cast<int>(r);
                s.subject_id = run.subject_id;
                s.run_id = run.run_id;
                s.run_kind = run.run_kind;
                s.run_index = run.run_index;
                s.clip_index = clip->clip_index;
                s.window = w;
                s.genre_id = clip->genre_id;
                s.start_timepoint = clip->start_timepoint + (w == Window::second ? 5 : 0);
                // the immediate successor starts 5 timepoints later; it only
                // counts if that block was retained in this run
                s.has_successor = retained_starts.count(s.start_timepoint + 5) > 0;
                seqs.push_back(std::move(s));
            }
        }
    }
    return seqs;
}

namespace {

// candidate indices grouped by subject, iteration order deterministic
std::map<std::string, std::vector<int>> group_by_subject(const std::vector<FiveSeq>& seqs,
                                                         const std::vector<int>& candidates) {
    std::map<std::string, std::vector<int>> groups;
    for (int i : candidates) groups[seqs[i].subject_id].push_back(i);
    return groups;
}

// seq index -> index of its immediate successor within the candidate set
std::map<int, int> successor_map(const std::vector<FiveSeq>& seqs,
                                 const std::vector<int>& candidates) {
    std::map<std::pair<int, int>, int> by_start;
    for (int i : candidates) {
        by_start[{seqs[i].run_ref, seqs[i].start_timepoint}] = i;
    }
    std::map<int, int> succ;
    for (int i : candidates) {
        auto it = by_start.find({seqs[i].run_ref, seqs[i].start_timepoint + 5});
        if (it != by_start.end()) succ[i] = it->second;
    }
    return succ;
}

Label genre_label(const FiveSeq& a, const FiveSeq& b) {
    return a.genre_id == b.genre_id ? Label::yes : Label::no;
}

}  // namespace

std::vector<PairedSample> build_ntp_pairs(const std::vector<FiveSeq>& seqs,
                                          const std::vector<int>& candidates, Rng& rng) {
    const auto groups = group_by_subject(seqs, candidates);
    const auto succ = successor_map(seqs, candidates);
    std::vector<PairedSample> pairs;
    for (const auto& [subject, members] : groups) {
        if (members.size() < 3) {
            throw InsufficientDataError("ntp pairs: subject " + subject + " has only " +
                                        std::to_string(members.size()) + " 5-seqs, need 3");
        }
        for (int i : members) {
            auto sit = succ.find(i);
            if (sit == succ.end()) continue;  // no successor: skip both sides, keeps balance
            const int pos = sit->second;

            PairedSample p;
            p.seq1 = i;
            p.seq2 = pos;
            p.ntp_label = Label::yes;
            p.sg_label = genre_label(seqs[i], seqs[pos]);
            pairs.push_back(p);

            // negative: uniform over the subject's candidates minus the true
            // successor and seq1 itself
            int neg;
            do {
                neg = members[rng.uniform_int(static_cast<int64_t>(members.size()))];
            } while (neg == pos || neg == i);
            PairedSample n;
            n.seq1 = i;
            n.seq2 = neg;
            n.ntp_label = Label::no;
            n.sg_label = genre_label(seqs[i], seqs[neg]);
            pairs.push_back(n);
        }
    }
    return pairs;
}

std::vector<PairedSample> build_sg_pairs(const std::vector<FiveSeq>& seqs,
                                         const std::vector<int>& candidates, Rng& rng,
                                         int* n_skipped) {
    const auto groups = group_by_subject(seqs, candidates);
    std::vector<PairedSample> pairs;
    int skipped = 0;
    for (const auto& [subject, members] : groups) {
        std::map<int, std::vector<int>> by_genre;
        for (int i : members) by_genre[seqs[i].genre_id].push_back(i);
        if (by_genre.size() < 2) {
            throw InsufficientDataError("sg pairs: subject " + subject +
                                        " has a single genre, cannot build negatives");
        }
        for (int i : members) {
            const auto& same = by_genre[seqs[i].genre_id];
            if (same.size() < 2) {
                // no possible positive partner; skip the sample entirely so
                // labels stay balanced
                ++skipped;
                continue;
            }
            int pos;
            do {
                pos = same[rng.uniform_int(static_cast<int64_t>(same.size()))];
            } while (pos == i);
            PairedSample p;
            p.seq1 = i;
            p.seq2 = pos;
            p.sg_label = Label::yes;
            pairs.push_back(p);

            int neg;
            do {
                neg = members[rng.uniform_int(static_cast<int64_t>(members.size()))];
            } while (seqs[neg].genre_id == seqs[i].genre_id);
            PairedSample n;
            n.seq1 = i;
            n.seq2 = neg;
            n.sg_label = Label::no;
            pairs.push_back(n);
        }
    }
    if (n_skipped) *n_skipped = skipped;
    return pairs;
}

std::vector<PairedSample> cap_balanced(const std::vector<PairedSample>& pairs, PairTask task,
                                       int cap, Rng& rng) {
    if (cap % 2 != 0) throw ConfigError("cap: balanced capping needs an even cap");
    auto label_of = [task](const PairedSample& p) {
        return task == PairTask::ntp ? p.ntp_label : p.sg_label;
    };
    std::vector<PairedSample> pos, neg;
    for (const PairedSample& p : pairs) {
        (label_of(p) == Label::yes ? pos : neg).push_back(p);
    }
    const int half = cap / 2;
    if (static_cast<int>(pos.size()) < half || static_cast<int>(neg.size()) < half) {
        throw InsufficientDataError(
            "cap: requested " + std::to_string(cap) + " samples but only " +
            std::to_string(2 * std::min(pos.size(), neg.size())) + " balanced samples available");
    }
    rng.shuffle(pos);
    rng.shuffle(neg);
    std::vector<PairedSample> out;
    out.reserve(cap);
    for (int i = 0; i < half; ++i) out.push_back(pos[i]);
    for (int i = 0; i < half; ++i) out.push_back(neg[i]);
    rng.shuffle(out);
    return out;
}

FoldData build_fold(const std::vector<FiveSeq>& seqs, const FoldSpec& fold, PairTask task) {
    fold.validate();
    std::vector<int> train_idx, val_idx;
    for (size_t i = 0; i < seqs.size(); ++i) {
        if (seqs[i].run_kind != RunKind::training) continue;
        if (seqs[i].run_index == fold.heldout_run_index) {
            val_idx.push_back(static_cast<int>(i));
        } else {
            train_idx.push_back(static_cast<int>(i));
        }
    }
    if (val_idx.empty()) {
        throw DataError("fold: no training run with index " +
                        std::to_string(fold.heldout_run_index));
    }

    FoldData data;
    Rng train_rng(derive_seed(fold.seed, "fold-train"));
    Rng val_rng(derive_seed(fold.seed, "fold-val"));
    int skipped_train = 0, skipped_val = 0;
    std::vector<PairedSample> train, val;
    if (task == PairTask::ntp) {
        train = build_ntp_pairs(seqs, train_idx, train_rng);
        val = build_ntp_pairs(seqs, val_idx, val_rng);
    } else {
        train = build_sg_pairs(seqs, train_idx, train_rng, &skipped_train);
        val = build_sg_pairs(seqs, val_idx, val_rng, &skipped_val);
    }
    data.sg_skipped = skipped_train + skipped_val;

    Rng cap_rng(derive_seed(fold.seed, "fold-cap"));
    data.train_pairs = cap_balanced(train, task, fold.n_train_cap, cap_rng);
    data.val_pairs = cap_balanced(val, task, fold.n_val_cap, cap_rng);
    return data;
}

namespace {

nlohmann::json seq_ref(const FiveSeq& s) {
    return {{"run_id", s.run_id}, {"clip_index", s.clip_index}, {"window", to_string(s.window)}};
}

nlohmann::json label_json(Label l) {
    if (l == Label::undefined) return nullptr;
    return l == Label::yes ? "yes" : "no";
}

nlohmann::json pairs_json(const std::vector<FiveSeq>& seqs,
                          const std::vector<PairedSample>& pairs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const PairedSample& p : pairs) {
        arr.push_back({{"seq1_ref", seq_ref(seqs[p.seq1])},
                       {"seq2_ref", seq_ref(seqs[p.seq2])},
                       {"ntp_label", label_json(p.ntp_label)},
                       {"sg_label", label_json(p.sg_label)},
                       {"subject", seqs[p.seq1].subject_id}});
    }
    return arr;
}

}  // namespace

nlohmann::json fold_manifest(const std::vector<FiveSeq>& seqs, const FoldData& data,
                             const FoldSpec& fold, PairTask task) {
    return {{"fold", fold.heldout_run_index},
            {"task", task == PairTask::ntp ? "ntp" : "sg"},
            {"seed", fold.seed},
            {"n_train_cap", fold.n_train_cap},
            {"n_val_cap", fold.n_val_cap},
            {"sg_skipped", data.sg_skipped},
            {"train", pairs_json(seqs, data.train_pairs)},
            {"val", pairs_json(seqs, data.val_pairs)}};
}

}  // namespace bseq
