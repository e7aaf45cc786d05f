#pragma once

#include <string>
#include <vector>

#include "bseq/vxts.hpp"

namespace bseq {

inline constexpr int kGridX = 96;
inline constexpr int kGridY = 114;
inline constexpr int kGridZ = 96;
inline constexpr double kDefaultThreshold = 0.23;
inline constexpr int kDefaultTargetVoxels = 417;

struct AtlasEntry {
    int x = 0, y = 0, z = 0;
    char region = 'A';  // 'A' anterior, 'P' posterior
    double prob = 0.0;
};

struct AtlasTable {
    std::vector<AtlasEntry> entries;
};

struct RoiVoxel {
    int x = 0, y = 0, z = 0;
    double prob = 0.0;
};

// Ordered voxel list; the order defines feature dims 3.. of assembled runs.
struct RoiMask {
    std::vector<RoiVoxel> voxels;
    int n_union = 0;         // distinct coordinates after the region union
    int n_at_threshold = 0;  // union voxels at or above the threshold
    int n_active() const { return static_cast<int>(voxels.size()); }
};

// Text atlas: one `x y z region prob` entry per line, region A or P,
// '#' starts a comment.
AtlasTable parse_atlas(const std::string& path);
AtlasTable parse_atlas_text(const std::string& text, const std::string& origin);

// Union of the two regions (max probability per coordinate), thresholded,
// then padded/trimmed to exactly target_voxels. Order: prob desc, then
// x, y, z asc.
RoiMask build_roi_mask(const AtlasTable& atlas, double threshold, int target_voxels);

std::vector<double> linear_detrend(const std::vector<double>& series);
std::vector<double> standardize(const std::vector<double>& series);

// raw: T x n_active row-major voxel values in mask order. Produces an
// assembled run of dim n_active + 3 with per-voxel detrend then
// standardization across the full run; dims 0-2 stay zero.
RunTimeseries assemble_run(const std::vector<float>& raw, int n_timepoints, const RoiMask& mask,
                           const std::string& subject_id, const std::string& run_id,
                           RunKind run_kind, int run_index, std::vector<ClipEntry> clip_table);

}  // namespace bseq
