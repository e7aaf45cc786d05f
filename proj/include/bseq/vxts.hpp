#pragma once

#include <string>
#include <vector>

#include "bseq/errors.hpp"

namespace bseq {

enum class RunKind { training, test };

std::string to_string(RunKind k);
RunKind run_kind_from_string(const std::string& s);

struct ClipEntry {
    int clip_index = 0;
    int genre_id = 0;
    int start_timepoint = 0;
};

// One scan: T timepoints by D feature dims, row-major float32, plus the
// clip layout. For assembled runs D includes the three reserved token dims.
struct RunTimeseries {
    std::string subject_id;
    std::string run_id;
    RunKind run_kind = RunKind::training;
    int run_index = 0;  // position among the subject's runs of this kind
    int n_timepoints = 0;
    int dim = 0;
    std::vector<float> values;  // n_timepoints x dim
    std::vector<ClipEntry> clip_table;

    const float* image(int t) const { return values.data() + static_cast<size_t>(t) * dim; }
    float* image(int t) { return values.data() + static_cast<size_t>(t) * dim; }
};

// Structural checks shared by the writer and the loader: value buffer size,
// 10-timepoint clips tiling the run contiguously.
void validate_run_structure(const RunTimeseries& run);

// Assembled-run checks on top of the structural ones: reserved dims present
// and zero in every image.
void validate_assembled_run(const RunTimeseries& run);

// Binary container: magic "VXTS", u32 version=1, u32 T, u32 D, then T*D
// float32 row-major, all little-endian. Metadata lives in a JSON sidecar at
// path + ".json".
void save_run(const std::string& path, const RunTimeseries& run);
RunTimeseries load_run(const std::string& path);

// Loads every *.vxts file under dir (sorted by filename).
std::vector<RunTimeseries> load_runs(const std::string& dir);

inline constexpr int kTrsPerClip = 10;

}  // namespace bseq
