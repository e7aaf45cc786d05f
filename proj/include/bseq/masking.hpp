#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "bseq/dataset.hpp"
#include "bseq/errors.hpp"
#include "bseq/model.hpp"
#include "bseq/rng.hpp"
#include "bseq/vxts.hpp"

namespace bseq {

enum class MaskActionKind { mask_token, random_image, keep };

struct MaskAction {
    int position = -1;  // row within the 12-token sample
    MaskActionKind kind = MaskActionKind::mask_token;
};

struct MaskPlan {
    std::vector<MaskAction> actions;  // 1 or 2 entries, distinct data positions
};

// Images eligible as random replacements. Entries reference run storage, so
// the runs must outlive the pool.
class ImagePool {
  public:
    void add(const RunTimeseries* run, int t) { entries_.emplace_back(run, t); }
    bool empty() const { return entries_.empty(); }
    size_t size() const { return entries_.size(); }
    const float* draw(Rng& rng) const;

  private:
    std::vector<std::pair<const RunTimeseries*, int>> entries_;
};

// All timepoints covered by the given 5-seqs.
ImagePool build_image_pool(const std::vector<FiveSeq>& seqs,
                           const std::vector<RunTimeseries>& runs);

// Draw order: count, positions, then one action per position.
MaskPlan plan_mask(Rng& rng);

struct AppliedMask {
    MaskPlan plan;
    // pre-corruption image per action, aligned with plan.actions
    std::vector<std::vector<float>> targets;
};

// sample is a row-major 12 x d buffer. Targets are captured for every chosen
// position before any row is altered, keep actions included.
AppliedMask apply_mask(float* sample, int d, const MaskPlan& plan, const ImagePool& pool,
                       Rng& rng);

}  // namespace bseq
