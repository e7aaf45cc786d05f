#include "bseq/vxts.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "bseq/model.hpp"

namespace bseq {

std::string to_string(RunKind k) { return k == RunKind::training ? "training" : "test"; }

RunKind run_kind_from_string(const std::string& s) {
    if (s == "training") return RunKind::training;
    if (s == "test") return RunKind::test;
    throw DataError("run_kind: expected 'training' or 'test', got '" + s + "'");
}

void validate_run_structure(const RunTimeseries& run) {
    if (run.n_timepoints <= 0 || run.dim <= 0) throw DataError("run: empty timeseries");
    if (run.values.size() != static_cast<size_t>(run.n_timepoints) * run.dim) {
        throw DataError("run: value buffer does not match T x D");
    }
    if (run.n_timepoints % kTrsPerClip != 0) {
        throw DataError("run: timepoint count must be a multiple of 10 (one clip = 10 TRs)");
    }
    const int n_clips = run.n_timepoints / kTrsPerClip;
    if (static_cast<int>(run.clip_table.size()) != n_clips) {
        throw DataError("run: clip table does not tile the run");
    }
    for (int i = 0; i < n_clips; ++i) {
        const ClipEntry& c = run.clip_table[i];
        if (c.start_timepoint != i * kTrsPerClip) {
            throw DataError("run: clips must be contiguous 10-TR blocks");
        }
        if (c.genre_id < 0) throw DataError("run: negative genre id");
    }
}

void validate_assembled_run(const RunTimeseries& run) {
    validate_run_structure(run);
    if (run.dim <= kReservedDims) throw DataError("run: assembled dim must exceed reserved dims");
    for (int t = 0; t < run.n_timepoints; ++t) {
        const float* img = run.image(t);
        for (int d = 0; d < kReservedDims; ++d) {
            if (img[d] != 0.0f) throw DataError("run: reserved token dims must be zero in data");
        }
    }
}

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is, const std::string& path, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw DataError("vxts: truncated " + std::string(what) + " in " + path);
    }
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_run(const std::string& path, const RunTimeseries& run) {
    validate_run_structure(run);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("vxts: cannot open for writing: " + path);
    os.write("VXTS", 4);
    put_u32(os, 1);
    put_u32(os, static_cast<uint32_t>(run.n_timepoints));
    put_u32(os, static_cast<uint32_t>(run.dim));
    os.write(reinterpret_cast<const char*>(run.values.data()),
             static_cast<std::streamsize>(run.values.size() * sizeof(float)));
    if (!os) throw DataError("vxts: write failed: " + path);
    os.close();

    nlohmann::json side{{"subject_id", run.subject_id},
                        {"run_id", run.run_id},
                        {"run_kind", to_string(run.run_kind)},
                        {"run_index", run.run_index}};
    auto& clips = side["clip_table"] = nlohmann::json::array();
    for (const ClipEntry& c : run.clip_table) {
        clips.push_back({{"clip_index", c.clip_index},
                         {"genre_id", c.genre_id},
                         {"start_timepoint", c.start_timepoint}});
    }
    std::ofstream js(path + ".json", std::ios::trunc);
    if (!js) throw DataError("vxts: cannot open sidecar for writing: " + path + ".json");
    js << side.dump(2) << "\n";
}

RunTimeseries load_run(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("vxts: cannot open: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "VXTS", 4) != 0) {
        throw DataError("vxts: bad magic in " + path);
    }
    const uint32_t version = get_u32(is, path, "version");
    if (version != 1) throw DataError("vxts: unsupported version in " + path);
    RunTimeseries run;
    run.n_timepoints = static_cast<int>(get_u32(is, path, "T"));
    run.dim = static_cast<int>(get_u32(is, path, "D"));
    if (run.n_timepoints <= 0 || run.dim <= 0 || run.n_timepoints > (1 << 24) ||
        run.dim > (1 << 24)) {
        throw DataError("vxts: implausible dimensions in " + path);
    }
    run.values.resize(static_cast<size_t>(run.n_timepoints) * run.dim);
    if (!is.read(reinterpret_cast<char*>(run.values.data()),
                 static_cast<std::streamsize>(run.values.size() * sizeof(float)))) {
        throw DataError("vxts: truncated payload in " + path);
    }

    std::ifstream js(path + ".json");
    if (!js) throw DataError("vxts: missing sidecar " + path + ".json");
    nlohmann::json side;
    try {
        js >> side;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("vxts: bad sidecar json in " + path + ".json: " + e.what());
    }
    try {
        run.subject_id = side.at("subject_id").get<std::string>();
        run.run_id = side.at("run_id").get<std::string>();
        run.run_kind = run_kind_from_string(side.at("run_kind").get<std::string>());
        run.run_index = side.value("run_index", 0);
        for (const auto& c : side.at("clip_table")) {
            run.clip_table.push_back({c.at("clip_index").get<int>(), c.at("genre_id").get<int>(),
                                      c.at("start_timepoint").get<int>()});
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError("vxts: sidecar missing fields in " + path + ".json: " + e.what());
    }
    validate_run_structure(run);
    return run;
}

std::vector<RunTimeseries> load_runs(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw DataError("vxts: not a directory: " + dir);
    std::vector<std::string> paths;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".vxts") paths.push_back(entry.path().string());
    }
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) throw DataError("vxts: no .vxts files in " + dir);
    std::vector<RunTimeseries> runs;
    runs.reserve(paths.size());
    for (const auto& p : paths) runs.push_back(load_run(p));
    return runs;
}

}  // namespace bseq
