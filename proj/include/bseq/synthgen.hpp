#pragma once

#include <json.hpp>
#include <string>
#include <vector>

#include "bseq/preprocess.hpp"
#include "bseq/rng.hpp"
#include "bseq/vxts.hpp"

namespace bseq {

// Synthetic data layout mirrors the source dataset: per subject, 12
// training runs of 40 clips (4 per genre, genre never repeating
// back-to-back) and 6 test runs of one 10-genre permutation repeated 4x.
struct SynthSpec {
    int n_subjects = 1;
    int n_training_runs = 12;
    int n_test_runs = 6;
    int clips_per_training_run = 40;
    int n_genres = 10;
    int n_voxels = 417;
    double genre_signal_strength = 1.0;
    double temporal_corr = 0.9;  // AR(1) coefficient shared by all voxels
    double noise_sd = 1.0;
    uint64_t seed = 0;

    void validate() const;
};

void to_json(nlohmann::json& j, const SynthSpec& spec);
void from_json(const nlohmann::json& j, SynthSpec& spec);

struct SynthResult {
    AtlasTable atlas;
    RoiMask mask;
    std::vector<RunTimeseries> raw_runs;        // D = n_voxels, unprocessed
    std::vector<RunTimeseries> processed_runs;  // D = n_voxels + 3, assembled
};

// Training-run clip order: clips_per_run/n_genres clips of each genre,
// seeded shuffle, rejected until no genre immediately follows itself.
std::vector<ClipEntry> make_training_clip_order(int n_clips, int n_genres, Rng& rng);

// Test-run clip order: a seeded permutation of the genres, repeated 4
// times; repeats share the clip_index of their first instance.
std::vector<ClipEntry> make_test_clip_order(int n_genres, Rng& rng);

// Synthetic atlas whose mask order equals voxel index order: n_voxels
// entries above the default threshold in descending probability, plus
// sub-threshold extras so thresholding is actually exercised.
AtlasTable make_synth_atlas(int n_voxels, int n_extra = 40);

SynthResult generate(const SynthSpec& spec);

// Writes atlas.txt, raw/<run>.vxts and runs/<run>.vxts under out_dir.
void write_synth(const SynthResult& result, const std::string& out_dir);

}  // namespace bseq
