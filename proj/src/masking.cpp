#include "bseq/masking.hpp"

#include <array>
#include <cstring>

namespace bseq {

const float* ImagePool::draw(Rng& rng) const {
    if (entries_.empty()) throw DataError("image pool is empty, cannot draw a replacement");
    const auto& [run, t] = entries_[rng.uniform_int(static_cast<int64_t>(entries_.size()))];
    return run->image(t);
}

ImagePool build_image_pool(const std::vector<FiveSeq>& seqs,
                           const std::vector<RunTimeseries>& runs) {
    ImagePool pool;
    for (const auto& s : seqs) {
        const RunTimeseries& run = runs.at(s.run_ref);
        for (int t = s.start_timepoint; t < s.start_timepoint + kWindow; ++t) {
            pool.add(&run, t);
        }
    }
    return pool;
}

MaskPlan plan_mask(Rng& rng) {
    const int count = 1 + (rng.bernoulli(0.5) ? 1 : 0);
    auto positions = data_positions();
    MaskPlan plan;
    for (int k = 0; k < count; ++k) {
        const auto j = k + rng.uniform_int(static_cast<int64_t>(positions.size()) - k);
        std::swap(positions[k], positions[j]);
        MaskAction action;
        action.position = positions[k];
        plan.actions.push_back(action);
    }
    for (auto& action : plan.actions) {
        const double u = rng.uniform01();
        if (u < 0.8) {
            action.kind = MaskActionKind::mask_token;
        } else if (u < 0.9) {
            action.kind = MaskActionKind::random_image;
        } else {
            action.kind = MaskActionKind::keep;
        }
    }
    return plan;
}

AppliedMask apply_mask(float* sample, int d, const MaskPlan& plan, const ImagePool& pool,
                       Rng& rng) {
    AppliedMask applied;
    applied.plan = plan;
    for (const auto& action : plan.actions) {
        if (action.position <= 0 || action.position >= kSeqLen || action.position == kSepPos) {
            throw StateError("mask action targets a non-data position");
        }
        const float* row = sample + static_cast<size_t>(action.position) * d;
        applied.targets.emplace_back(row, row + d);
    }
    for (const auto& action : plan.actions) {
        float* row = sample + static_cast<size_t>(action.position) * d;
        switch (action.kind) {
            case MaskActionKind::mask_token:
                std::memset(row, 0, sizeof(float) * static_cast<size_t>(d));
                row[kMskDim] = 1.0f;
                break;
            case MaskActionKind::random_image: {
                const float* repl = pool.draw(rng);
                std::memcpy(row, repl, sizeof(float) * static_cast<size_t>(d));
                break;
            }
            case MaskActionKind::keep:
                break;
        }
    }
    return applied;
}

}  // namespace bseq
