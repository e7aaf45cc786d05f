#include "bseq/synthgen.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "bseq/tensor.hpp"

namespace bseq {

void SynthSpec::validate() const {
    if (n_subjects < 1) throw ConfigError("synth: n_subjects must be positive");
    if (n_training_runs < 1) throw ConfigError("synth: n_training_runs must be positive");
    if (n_test_runs < 0) throw ConfigError("synth: n_test_runs must be non-negative");
    if (n_genres < 2) throw ConfigError("synth: need at least 2 genres");
    if (clips_per_training_run < n_genres || clips_per_training_run % n_genres != 0) {
        throw ConfigError("synth: clips_per_training_run must be a positive multiple of n_genres");
    }
    if (n_voxels < 1) throw ConfigError("synth: n_voxels must be positive");
    if (genre_signal_strength < 0) throw ConfigError("synth: signal strength must be >= 0");
    if (temporal_corr < 0.0 || temporal_corr >= 1.0) {
        throw ConfigError("synth: temporal_corr must be in [0, 1)");
    }
    if (noise_sd < 0) throw ConfigError("synth: noise_sd must be >= 0");
}

void to_json(nlohmann::json& j, const SynthSpec& spec) {
    j = nlohmann::json{{"n_subjects", spec.n_subjects},
                       {"n_training_runs", spec.n_training_runs},
                       {"n_test_runs", spec.n_test_runs},
                       {"clips_per_training_run", spec.clips_per_training_run},
                       {"n_genres", spec.n_genres},
                       {"n_voxels", spec.n_voxels},
                       {"genre_signal_strength", spec.genre_signal_strength},
                       {"temporal_corr", spec.temporal_corr},
                       {"noise_sd", spec.noise_sd},
                       {"seed", spec.seed}};
}

void from_json(const nlohmann::json& j, SynthSpec& spec) {
    spec.n_subjects = j.value("n_subjects", spec.n_subjects);
    spec.n_training_runs = j.value("n_training_runs", spec.n_training_runs);
    spec.n_test_runs = j.value("n_test_runs", spec.n_test_runs);
    spec.clips_per_training_run = j.value("clips_per_training_run", spec.clips_per_training_run);
    spec.n_genres = j.value("n_genres", spec.n_genres);
    spec.n_voxels = j.value("n_voxels", spec.n_voxels);
    spec.genre_signal_strength = j.value("genre_signal_strength", spec.genre_signal_strength);
    spec.temporal_corr = j.value("temporal_corr", spec.temporal_corr);
    spec.noise_sd = j.value("noise_sd", spec.noise_sd);
    spec.seed = j.value("seed", spec.seed);
}

std::vector<ClipEntry> make_training_clip_order(int n_clips, int n_genres, Rng& rng) {
    const int per_genre = n_clips / n_genres;
    std::vector<int> genres;
    genres.reserve(n_clips);
    for (int g = 0; g < n_genres; ++g) {
        for (int i = 0; i < per_genre; ++i) genres.push_back(g);
    }
    // rejection sampling keeps the order an unbiased seeded permutation
    for (int attempt = 0; attempt < 10000; ++attempt) {
        rng.shuffle(genres);
        bool ok = true;
        for (size_t i = 1; i < genres.size(); ++i) {
            if (genres[i] == genres[i - 1]) {
                ok = false;
                break;
            }
        }
        if (ok) {
            std::vector<ClipEntry> clips(n_clips);
            for (int i = 0; i < n_clips; ++i) clips[i] = {i, genres[i], i * kTrsPerClip};
            return clips;
        }
    }
    throw NumericError("synth: could not find a non-repeating genre order");
}

std::vector<ClipEntry> make_test_clip_order(int n_genres, Rng& rng) {
    std::vector<int> perm(n_genres);
    for (int g = 0; g < n_genres; ++g) perm[g] = g;
    rng.shuffle(perm);
    std::vector<ClipEntry> clips;
    clips.reserve(static_cast<size_t>(n_genres) * 4);
    for (int rep = 0; rep < 4; ++rep) {
        for (int i = 0; i < n_genres; ++i) {
            clips.push_back({i, perm[i], static_cast<int>(clips.size()) * kTrsPerClip});
        }
    }
    return clips;
}

AtlasTable make_synth_atlas(int n_voxels, int n_extra) {
    AtlasTable atlas;
    const int total = n_voxels + n_extra;
    for (int i = 0; i < total; ++i) {
        AtlasEntry e;
        e.x = i % kGridX;
        e.y = (i / kGridX) % kGridY;
        e.z = (i / (kGridX * kGridY)) % kGridZ;
        if (i < n_voxels) {
            e.region = (i % 2 == 0) ? 'A' : 'P';
            e.prob = 0.95 - 0.70 * i / std::max(1, n_voxels - 1);  // 0.95 down to 0.25
        } else {
            e.region = 'A';
            e.prob = 0.22 - 0.17 * (i - n_voxels) / std::max(1, n_extra);
        }
        atlas.entries.push_back(e);
    }
    // a few duplicate coordinates in the other region with lower probability,
    // so the union rule is exercised on every synthetic atlas
    for (int i = 0; i < std::min(5, n_voxels); ++i) {
        AtlasEntry dup = atlas.entries[i * 7 % n_voxels];
        dup.region = dup.region == 'A' ? 'P' : 'A';
        dup.prob *= 0.5;
        atlas.entries.push_back(dup);
    }
    return atlas;
}

namespace {

RunTimeseries generate_raw_run(const SynthSpec& spec, const std::vector<Tensor<float>>& patterns,
                               const std::string& subject_id, int subject_idx, RunKind kind,
                               int run_index, int global_run_idx) {
    Rng rng(derive_seed(spec.seed, "synth-run", static_cast<uint64_t>(subject_idx),
                        static_cast<uint64_t>(global_run_idx)));
    std::vector<ClipEntry> clips =
        kind == RunKind::training
            ? make_training_clip_order(spec.clips_per_training_run, spec.n_genres, rng)
            : make_test_clip_order(spec.n_genres, rng);

    RunTimeseries run;
    run.subject_id = subject_id;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s-run-%02d", kind == RunKind::training ? "train" : "test",
                  run_index);
    run.run_id = subject_id + "-" + buf;
    run.run_kind = kind;
    run.run_index = run_index;
    run.n_timepoints = static_cast<int>(clips.size()) * kTrsPerClip;
    run.dim = spec.n_voxels;
    run.values.resize(static_cast<size_t>(run.n_timepoints) * spec.n_voxels);
    run.clip_table = clips;

    // AR(1) state is continuous across the whole run, so consecutive
    // timepoints stay correlated across clip boundaries; stationary unit
    // variance start
    const double phi = spec.temporal_corr;
    const double innov_sd = std::sqrt(1.0 - phi * phi);
    std::vector<double> state(spec.n_voxels);
    for (auto& s : state) s = rng.normal();

    int t = 0;
    for (const ClipEntry& clip : clips) {
        const float* pat = patterns[clip.genre_id].ptr();
        for (int k = 0; k < kTrsPerClip; ++k, ++t) {
            float* img = run.image(t);
            for (int v = 0; v < spec.n_voxels; ++v) {
                img[v] = static_cast<float>(spec.genre_signal_strength * pat[v] + state[v] +
                                            spec.noise_sd * rng.normal());
                state[v] = phi * state[v] + innov_sd * rng.normal();
            }
        }
    }
    return run;
}

}  // namespace

SynthResult generate(const SynthSpec& spec) {
    spec.validate();
    SynthResult out;
    out.atlas = make_synth_atlas(spec.n_voxels);
    out.mask = build_roi_mask(out.atlas, kDefaultThreshold, spec.n_voxels);

    // one latent pattern per genre, shared across subjects and runs
    std::vector<Tensor<float>> patterns;
    patterns.reserve(spec.n_genres);
    for (int g = 0; g < spec.n_genres; ++g) {
        Rng prng(derive_seed(spec.seed, "synth-genre", static_cast<uint64_t>(g)));
        patterns.push_back(Tensor<float>::randn({spec.n_voxels}, prng));
    }

    int global_run = 0;
    for (int s = 0; s < spec.n_subjects; ++s) {
        char sid[16];
        std::snprintf(sid, sizeof(sid), "sub-%03d", s);
        for (int r = 0; r < spec.n_training_runs; ++r, ++global_run) {
            out.raw_runs.push_back(generate_raw_run(spec, patterns, sid, s, RunKind::training, r,
                                                    global_run));
        }
        for (int r = 0; r < spec.n_test_runs; ++r, ++global_run) {
            out.raw_runs.push_back(
                generate_raw_run(spec, patterns, sid, s, RunKind::test, r, global_run));
        }
    }

    for (const RunTimeseries& raw : out.raw_runs) {
        out.processed_runs.push_back(assemble_run(raw.values, raw.n_timepoints, out.mask,
                                                  raw.subject_id, raw.run_id, raw.run_kind,
                                                  raw.run_index, raw.clip_table));
    }
    return out;
}

void write_synth(const SynthResult& result, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "raw");
    fs::create_directories(fs::path(out_dir) / "runs");

    std::ofstream atlas_os(fs::path(out_dir) / "atlas.txt", std::ios::trunc);
    if (!atlas_os) throw DataError("synth: cannot write atlas under " + out_dir);
    atlas_os << "# synthetic STG atlas\n";
    char line[96];
    for (const AtlasEntry& e : result.atlas.entries) {
        std::snprintf(line, sizeof(line), "%d %d %d %c %.6f\n", e.x, e.y, e.z, e.region, e.prob);
        atlas_os << line;
    }
    atlas_os.close();

    for (const RunTimeseries& run : result.raw_runs) {
        save_run((fs::path(out_dir) / "raw" / (run.run_id + ".vxts")).string(), run);
    }
    for (const RunTimeseries& run : result.processed_runs) {
        save_run((fs::path(out_dir) / "runs" / (run.run_id + ".vxts")).string(), run);
    }
}

}  // namespace bseq
