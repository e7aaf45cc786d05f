#include "bseq/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "bseq/model.hpp"

namespace bseq {

AtlasTable parse_atlas(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw DataError("atlas: cannot open: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_atlas_text(ss.str(), path);
}

AtlasTable parse_atlas_text(const std::string& text, const std::string& origin) {
    AtlasTable atlas;
    std::set<std::tuple<int, int, int, char>> seen;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        AtlasEntry e;
        std::string region;
        if (!(ls >> e.x >> e.y >> e.z >> region >> e.prob)) {
            std::string rest;
            ls.clear();
            if (ls.str().find_first_not_of(" \t\r") == std::string::npos) continue;  // blank
            throw DataError("atlas: malformed line " + std::to_string(lineno) + " in " + origin);
        }
        std::string extra;
        if (ls >> extra) {
            throw DataError("atlas: trailing tokens on line " + std::to_string(lineno) + " in " +
                            origin);
        }
        if (region != "A" && region != "P") {
            throw DataError("atlas: region must be A or P on line " + std::to_string(lineno) +
                            " in " + origin);
        }
        e.region = region[0];
        if (e.x < 0 || e.x >= kGridX || e.y < 0 || e.y >= kGridY || e.z < 0 || e.z >= kGridZ) {
            throw DataError("atlas: coordinate out of the 96x114x96 grid on line " +
                            std::to_string(lineno) + " in " + origin);
        }
        if (e.prob < 0.0 || e.prob > 1.0) {
            throw DataError("atlas: probability out of [0,1] on line " + std::to_string(lineno) +
                            " in " + origin);
        }
        if (!seen.insert({e.x, e.y, e.z, e.region}).second) {
            throw DataError("atlas: duplicate coordinate/region on line " +
                            std::to_string(lineno) + " in " + origin);
        }
        atlas.entries.push_back(e);
    }
    return atlas;
}

RoiMask build_roi_mask(const AtlasTable& atlas, double threshold, int target_voxels) {
    if (threshold <= 0.0 || threshold >= 1.0) throw ConfigError("roi: threshold must be in (0,1)");
    if (target_voxels < 1) throw ConfigError("roi: target_voxels must be at least 1");

    // union of regions, max probability per coordinate
    std::map<std::tuple<int, int, int>, double> merged;
    for (const AtlasEntry& e : atlas.entries) {
        auto key = std::make_tuple(e.x, e.y, e.z);
        auto [it, inserted] = merged.emplace(key, e.prob);
        if (!inserted) it->second = std::max(it->second, e.prob);
    }
    if (static_cast<int>(merged.size()) < target_voxels) {
        throw InsufficientDataError("roi: atlas union has " + std::to_string(merged.size()) +
                                    " voxels, need " + std::to_string(target_voxels));
    }

    std::vector<RoiVoxel> all;
    all.reserve(merged.size());
    for (const auto& [key, prob] : merged) {
        all.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), prob});
    }
    std::sort(all.begin(), all.end(), [](const RoiVoxel& a, const RoiVoxel& b) {
        if (a.prob != b.prob) return a.prob > b.prob;
        return std::tie(a.x, a.y, a.z) < std::tie(b.x, b.y, b.z);
    });

    // Thresholding keeps voxels with prob >= threshold; trimming drops the
    // lowest-probability included ones and padding pulls in the best
    // excluded ones. Both reduce to taking the top target_voxels of the
    // sorted union.
    size_t n_included = 0;
    while (n_included < all.size() && all[n_included].prob >= threshold) ++n_included;
    RoiMask mask;
    mask.n_union = static_cast<int>(all.size());
    mask.n_at_threshold = static_cast<int>(n_included);
    mask.voxels.assign(all.begin(), all.begin() + target_voxels);
    return mask;
}

std::vector<double> linear_detrend(const std::vector<double>& series) {
    const size_t t = series.size();
    if (t < 2) throw DataError("detrend: need at least 2 timepoints");
    const double n = static_cast<double>(t);
    const double xm = (n - 1.0) / 2.0;
    double ym = 0.0;
    for (double y : series) ym += y;
    ym /= n;
    double sxy = 0.0, sxx = 0.0;
    for (size_t i = 0; i < t; ++i) {
        const double dx = static_cast<double>(i) - xm;
        sxy += dx * (series[i] - ym);
        sxx += dx * dx;
    }
    const double slope = sxy / sxx;
    const double intercept = ym - slope * xm;
    std::vector<double> out(t);
    for (size_t i = 0; i < t; ++i) {
        out[i] = series[i] - (intercept + slope * static_cast<double>(i));
    }
    return out;
}

std::vector<double> standardize(const std::vector<double>& series) {
    const size_t t = series.size();
    if (t < 2) throw DataError("standardize: need at least 2 timepoints");
    double mean = 0.0;
    for (double y : series) mean += y;
    mean /= static_cast<double>(t);
    double var = 0.0;
    for (double y : series) var += (y - mean) * (y - mean);
    var /= static_cast<double>(t);
    std::vector<double> out(t);
    if (var < 1e-24) return out;  // degenerate voxel maps to zeros
    const double inv_sd = 1.0 / std::sqrt(var);
    for (size_t i = 0; i < t; ++i) out[i] = (series[i] - mean) * inv_sd;
    return out;
}

RunTimeseries assemble_run(const std::vector<float>& raw, int n_timepoints, const RoiMask& mask,
                           const std::string& subject_id, const std::string& run_id,
                           RunKind run_kind, int run_index, std::vector<ClipEntry> clip_table) {
    const int n_active = mask.n_active();
    if (n_active < 1) throw DataError("assemble: empty mask");
    if (n_timepoints < 2) throw DataError("assemble: need at least 2 timepoints");
    if (raw.size() != static_cast<size_t>(n_timepoints) * n_active) {
        throw DataError("assemble: raw buffer does not match T x n_active");
    }
    if (n_timepoints % kTrsPerClip != 0) {
        throw DataError("assemble: timepoints must be a multiple of 10 (clip structure)");
    }

    RunTimeseries run;
    run.subject_id = subject_id;
    run.run_id = run_id;
    run.run_kind = run_kind;
    run.run_index = run_index;
    run.n_timepoints = n_timepoints;
    run.dim = n_active + kReservedDims;
    run.values.assign(static_cast<size_t>(n_timepoints) * run.dim, 0.0f);
    run.clip_table = std::move(clip_table);

    std::vector<double> series(n_timepoints);
    for (int v = 0; v < n_active; ++v) {
        for (int tt = 0; tt < n_timepoints; ++tt) {
            series[tt] = raw[static_cast<size_t>(tt) * n_active + v];
        }
        const auto z = standardize(linear_detrend(series));
        for (int tt = 0; tt < n_timepoints; ++tt) {
            run.values[static_cast<size_t>(tt) * run.dim + kReservedDims + v] =
                static_cast<float>(z[tt]);
        }
    }
    validate_assembled_run(run);
    return run;
}

}  // namespace bseq
