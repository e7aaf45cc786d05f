// brainseq: one executable for the whole pipeline, from synthetic data
// generation through preprocessing, dataset construction, training and
// checkpoint evaluation.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "bseq/checkpoint.hpp"
#include "bseq/dataset.hpp"
#include "bseq/gradcheck.hpp"
#include "bseq/preprocess.hpp"
#include "bseq/synthgen.hpp"
#include "bseq/trainer.hpp"
#include "bseq/vxts.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string iso_utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string slurp(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw bseq::DataError("cannot open: " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw bseq::DataError("cannot open for writing: " + path.string());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!os) throw bseq::DataError("write failed: " + path.string());
}

std::string file_digest(const fs::path& path) { return bseq::fnv1a64_hex(slurp(path)); }

// filename -> content digest for every regular file directly under dir
json dir_digests(const fs::path& dir) {
    json out = json::object();
    if (!fs::is_directory(dir)) throw bseq::DataError("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& p : files) out[p.filename().string()] = file_digest(p);
    return out;
}

json read_json_file(const std::string& path) {
    if (!fs::exists(path)) throw bseq::ConfigError("config file not found: " + path);
    std::ifstream is(path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw bseq::ConfigError("config " + path + ": " + e.what());
    }
    if (!j.is_object()) throw bseq::ConfigError("config " + path + ": expected a JSON object");
    return j;
}

template <typename T>
T config_get(const json& j, const char* what) {
    try {
        return j.get<T>();
    } catch (const json::exception& e) {
        throw bseq::ConfigError(std::string(what) + ": " + e.what());
    }
}

std::vector<fs::path> list_vxts(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw bseq::DataError("vxts: not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".vxts") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw bseq::DataError("vxts: no .vxts files in " + dir.string());
    return out;
}

fs::path default_run_root() {
    if (const char* env = std::getenv("BSEQ_RUN_ROOT")) return env;
    return "runs";
}

// Written before any training starts; rewritten with the finish time once
// the command completes.
json start_manifest(const std::string& command, const json& config, const json& seeds,
                    const json& inputs) {
    return json{{"command", command},
                {"config", config},
                {"config_hash", bseq::fnv1a64_hex(config.dump())},
                {"seeds", seeds},
                {"inputs", inputs},
                {"tool_version", kVersion},
                {"started", iso_utc_now()}};
}

void finish_manifest(json& manifest, const fs::path& path) {
    manifest["finished"] = iso_utc_now();
    write_text(path, manifest.dump(2) + "\n");
}

void print_config_json(const json& j) { std::cout << j.dump(2) << "\n"; }

// ---- training command plumbing ------------------------------------------

// Effective config = regimen defaults, overlaid by the config file, overlaid
// by explicit flags. The single --seed derives both the train and the fold
// seed unless the config file pins them itself.
struct TrainArgs {
    std::string data_dir;
    std::string config_path;
    std::string regimen;
    int fold = 0;
    uint64_t seed = 0;
    double lr = 0;
    int epochs = 0;
    int batch_size = 0;
    double alpha1 = 0;
    double alpha2 = 0;
    int train_cap = 0;
    int val_cap = 0;
    std::string run_root;
    int jobs = 1;
    bool print_config = false;

    CLI::Option* o_regimen = nullptr;
    CLI::Option* o_fold = nullptr;
    CLI::Option* o_seed = nullptr;
    CLI::Option* o_lr = nullptr;
    CLI::Option* o_epochs = nullptr;
    CLI::Option* o_batch = nullptr;
    CLI::Option* o_alpha1 = nullptr;
    CLI::Option* o_alpha2 = nullptr;
    CLI::Option* o_train_cap = nullptr;
    CLI::Option* o_val_cap = nullptr;
    CLI::Option* o_run_root = nullptr;
};

void add_train_overrides(CLI::App* cmd, TrainArgs& a) {
    a.o_seed = cmd->add_option("--seed", a.seed, "base seed for every random stream");
    a.o_lr = cmd->add_option("--lr", a.lr, "learning rate");
    a.o_epochs = cmd->add_option("--epochs", a.epochs, "training epochs");
    a.o_batch = cmd->add_option("--batch-size", a.batch_size, "samples per step");
    a.o_alpha1 = cmd->add_option("--alpha1", a.alpha1, "NTP loss weight");
    a.o_alpha2 = cmd->add_option("--alpha2", a.alpha2, "MBM loss weight");
    a.o_train_cap = cmd->add_option("--train-cap", a.train_cap, "max training pairs per fold");
    a.o_val_cap = cmd->add_option("--val-cap", a.val_cap, "max validation pairs per fold");
    a.o_run_root =
        cmd->add_option("--run-root", a.run_root, "run directory root ($BSEQ_RUN_ROOT or ./runs)");
    cmd->add_flag("--print-config", a.print_config, "print the effective config and exit");
}

struct TrainSetup {
    bseq::TrainConfig cfg;
    bseq::FoldSpec fold;
    json seeds;
};

TrainSetup resolve_train_setup(const TrainArgs& a, const std::string& forced_regimen,
                               bool derive_fold_seed) {
    json file = a.config_path.empty() ? json::object() : read_json_file(a.config_path);
    json jt = file.value("train", json::object());
    json jf = file.value("fold", json::object());
    if (!forced_regimen.empty()) {
        jt["regimen"] = forced_regimen;
    } else if (a.o_regimen && a.o_regimen->count()) {
        jt["regimen"] = a.regimen;
    }
    const bool file_seeded = jt.contains("seed") || jf.contains("seed");
    if (a.o_lr && a.o_lr->count()) jt["lr"] = a.lr;
    if (a.o_epochs && a.o_epochs->count()) jt["epochs"] = a.epochs;
    if (a.o_batch && a.o_batch->count()) jt["batch_size"] = a.batch_size;
    if (a.o_alpha1 && a.o_alpha1->count()) jt["alpha1"] = a.alpha1;
    if (a.o_alpha2 && a.o_alpha2->count()) jt["alpha2"] = a.alpha2;

    TrainSetup s;
    s.cfg = config_get<bseq::TrainConfig>(jt, "train config");
    s.fold = config_get<bseq::FoldSpec>(jf, "fold config");
    if (a.o_fold && a.o_fold->count()) s.fold.heldout_run_index = a.fold;
    if (a.o_train_cap && a.o_train_cap->count()) s.fold.n_train_cap = a.train_cap;
    if (a.o_val_cap && a.o_val_cap->count()) s.fold.n_val_cap = a.val_cap;

    const bool flag_seeded = a.o_seed && a.o_seed->count();
    const uint64_t base = flag_seeded ? a.seed : 0;
    if (flag_seeded || !file_seeded) {
        if (derive_fold_seed) {
            const uint64_t derived =
                bseq::fold_seed(base, s.fold.heldout_run_index, s.cfg.regimen);
            s.cfg.seed = derived;
            s.fold.seed = derived;
            s.seeds = json{{"base", base}, {"derived", derived}};
        } else {
            // crossval derives per-fold seeds internally
            s.cfg.seed = base;
            s.fold.seed = base;
            s.seeds = json{{"base", base}};
        }
    } else {
        s.seeds = json{{"train", s.cfg.seed}, {"fold", s.fold.seed}};
    }
    return s;
}

fs::path resolve_run_root(const TrainArgs& a) {
    if (a.o_run_root && a.o_run_root->count()) return a.run_root;
    return default_run_root();
}

// catches the d_model/data mismatch up front; mid-training it would only
// surface as an internal shape error
void check_data_dim(const std::vector<bseq::RunTimeseries>& runs,
                    const bseq::ModelConfig& model) {
    if (!runs.empty() && runs.front().dim != model.d_model) {
        throw bseq::ConfigError("model: d_model " + std::to_string(model.d_model) +
                                " does not match data dim " + std::to_string(runs.front().dim) +
                                " (set model.d_model to the data dim)");
    }
}

void print_fold_row(const bseq::RunResult& res, bseq::Regimen regimen) {
    bseq::CrossvalRow row;
    row.fold = res.fold.heldout_run_index;
    row.best_val_acc = res.best_val_acc;
    row.best_epoch = static_cast<double>(res.best_epoch);
    row.mbm_val_loss = res.mbm_at_best;
    std::cout << bseq::crossval_csv({row}, regimen);
}

// ---- commands ------------------------------------------------------------

void cmd_synth_gen(const std::string& out_dir, const std::string& config_path,
                   const bseq::SynthSpec& spec, bool print_config) {
    json cfg_json = spec;
    if (print_config) {
        print_config_json(cfg_json);
        return;
    }
    spec.validate();
    json inputs = json::object();
    if (!config_path.empty()) inputs["config"] = file_digest(config_path);
    json manifest =
        start_manifest("synth-gen", cfg_json, json{{"base", spec.seed}}, inputs);
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "run_manifest.json", manifest.dump(2) + "\n");

    const bseq::SynthResult result = bseq::generate(spec);
    bseq::write_synth(result, out_dir);
    finish_manifest(manifest, fs::path(out_dir) / "run_manifest.json");
    std::cout << "synth-gen: " << result.processed_runs.size() << " runs ("
              << spec.n_training_runs << " training + " << spec.n_test_runs << " test per subject, "
              << spec.n_subjects << " subjects, " << spec.n_voxels << " voxels) -> " << out_dir
              << "\n";
}

void cmd_preprocess(const std::string& atlas_path, const std::string& raw_dir,
                    const std::string& out_dir, double threshold, int target_voxels) {
    if (!fs::exists(atlas_path)) {
        throw bseq::ConfigError("atlas file not found: " + atlas_path);
    }
    const bseq::AtlasTable atlas = bseq::parse_atlas(atlas_path);
    const bseq::RoiMask mask = bseq::build_roi_mask(atlas, threshold, target_voxels);
    const std::vector<fs::path> raw_files = list_vxts(raw_dir);

    fs::create_directories(out_dir);
    json config{{"threshold", threshold}, {"target_voxels", target_voxels}};
    json inputs{{"atlas", file_digest(atlas_path)}, {"raw", dir_digests(raw_dir)}};
    json manifest = start_manifest("preprocess", config, json::object(), inputs);
    write_text(fs::path(out_dir) / "run_manifest.json", manifest.dump(2) + "\n");

    for (const fs::path& p : raw_files) {
        const bseq::RunTimeseries raw = bseq::load_run(p.string());
        const bseq::RunTimeseries assembled =
            bseq::assemble_run(raw.values, raw.n_timepoints, mask, raw.subject_id, raw.run_id,
                               raw.run_kind, raw.run_index, raw.clip_table);
        bseq::save_run((fs::path(out_dir) / p.filename()).string(), assembled);
    }

    json report{{"threshold", threshold},
                {"target_voxels", target_voxels},
                {"n_union", mask.n_union},
                {"n_at_threshold", mask.n_at_threshold},
                {"n_active", mask.n_active()},
                {"runs_processed", raw_files.size()}};
    write_text(fs::path(out_dir) / "mask_report.json", report.dump(2) + "\n");
    finish_manifest(manifest, fs::path(out_dir) / "run_manifest.json");
    std::cout << "mask: union=" << mask.n_union << " at_threshold=" << mask.n_at_threshold
              << " active=" << mask.n_active() << "\n";
    std::cout << "preprocess: " << raw_files.size() << " runs -> " << out_dir << "\n";
}

void cmd_build_dataset(const std::string& data_dir, const std::string& out_dir,
                       const std::string& task_name, const bseq::FoldSpec& fold) {
    bseq::PairTask task;
    if (task_name == "ntp") {
        task = bseq::PairTask::ntp;
    } else if (task_name == "sg") {
        task = bseq::PairTask::sg;
    } else {
        throw bseq::ConfigError("build-dataset: --task must be ntp or sg, got '" + task_name +
                                "'");
    }
    const auto runs = bseq::load_runs(data_dir);
    const auto seqs = bseq::extract_5seqs(runs);
    const bseq::FoldData data = bseq::build_fold(seqs, fold, task);
    const json dataset = bseq::fold_manifest(seqs, data, fold, task);

    fs::create_directories(out_dir);
    json config{{"task", task_name}, {"fold", fold}};
    json manifest = start_manifest("build-dataset", config, json{{"base", fold.seed}},
                                   json{{"data", dir_digests(data_dir)}});
    write_text(fs::path(out_dir) / "run_manifest.json", manifest.dump(2) + "\n");
    write_text(fs::path(out_dir) / "dataset.json", dataset.dump(2) + "\n");
    finish_manifest(manifest, fs::path(out_dir) / "run_manifest.json");
    std::cout << "dataset: train=" << data.train_pairs.size() << " val=" << data.val_pairs.size()
              << " sg_skipped=" << data.sg_skipped << " -> " << out_dir << "/dataset.json\n";
}

void cmd_pretrain(const TrainArgs& a) {
    TrainSetup s = resolve_train_setup(a, "", true);
    if (a.print_config) {
        print_config_json(json{{"train", s.cfg}, {"fold", s.fold}});
        return;
    }
    s.cfg.validate();
    if (!s.cfg.is_pretrain()) {
        throw bseq::ConfigError("pretrain: regimen must be multitask or ntp_only");
    }
    const fs::path dir = resolve_run_root(a) / bseq::to_string(s.cfg.regimen) /
                         std::to_string(s.fold.heldout_run_index);
    const auto runs = bseq::load_runs(a.data_dir);
    check_data_dim(runs, s.cfg.model);
    fs::create_directories(dir);
    json manifest = start_manifest("pretrain", json{{"train", s.cfg}, {"fold", s.fold}}, s.seeds,
                                   json{{"data", dir_digests(a.data_dir)}});
    write_text(dir / "run_manifest.json", manifest.dump(2) + "\n");

    const bseq::RunResult res = bseq::pretrain_run(runs, s.fold, s.cfg, dir);
    finish_manifest(manifest, dir / "run_manifest.json");
    print_fold_row(res, s.cfg.regimen);
    std::cout << "run dir: " << dir.string() << "\n";
}

void cmd_finetune(const TrainArgs& a, const std::string& init_str) {
    bseq::FinetuneInit init;
    if (init_str == "fresh") {
        init = bseq::FinetuneInit::fresh_init();
    } else if (init_str.rfind("checkpoint:", 0) == 0 && init_str.size() > 11) {
        init = bseq::FinetuneInit::from_checkpoint(init_str.substr(11));
    } else {
        throw bseq::ConfigError("finetune: --init expects 'fresh' or 'checkpoint:PATH', got '" +
                                init_str + "'");
    }
    if (!init.fresh && !fs::exists(init.checkpoint_path)) {
        throw bseq::ConfigError("finetune: checkpoint not found: " + init.checkpoint_path);
    }
    TrainSetup s = resolve_train_setup(a, init.fresh ? "fresh_sg" : "finetune_sg", true);
    if (a.print_config) {
        json j{{"train", s.cfg}, {"fold", s.fold}};
        if (!init.fresh) j["init"] = init.checkpoint_path;
        print_config_json(j);
        return;
    }
    s.cfg.validate();
    const fs::path dir = resolve_run_root(a) / bseq::to_string(s.cfg.regimen) /
                         std::to_string(s.fold.heldout_run_index);
    const auto runs = bseq::load_runs(a.data_dir);
    check_data_dim(runs, s.cfg.model);
    fs::create_directories(dir);
    json inputs{{"data", dir_digests(a.data_dir)}};
    if (!init.fresh) inputs["checkpoint"] = file_digest(init.checkpoint_path);
    json manifest =
        start_manifest("finetune", json{{"train", s.cfg}, {"fold", s.fold}}, s.seeds, inputs);
    write_text(dir / "run_manifest.json", manifest.dump(2) + "\n");

    const bseq::RunResult res = bseq::finetune_run(runs, s.fold, s.cfg, init, dir);
    finish_manifest(manifest, dir / "run_manifest.json");
    print_fold_row(res, s.cfg.regimen);
    std::cout << "run dir: " << dir.string() << "\n";
}

void cmd_crossval(const TrainArgs& a, const std::string& checkpoint_root) {
    TrainSetup s = resolve_train_setup(a, "", false);
    if (a.print_config) {
        print_config_json(json{{"train", s.cfg}, {"fold", s.fold}});
        return;
    }
    s.cfg.validate();
    if (a.jobs < 1) throw bseq::ConfigError("crossval: --jobs must be positive");
    const fs::path root = resolve_run_root(a);
    const fs::path dir = root / bseq::to_string(s.cfg.regimen);
    const auto runs = bseq::load_runs(a.data_dir);
    check_data_dim(runs, s.cfg.model);
    fs::create_directories(dir);
    json inputs{{"data", dir_digests(a.data_dir)}};
    if (!checkpoint_root.empty()) inputs["checkpoint_root"] = checkpoint_root;
    json manifest =
        start_manifest("crossval", json{{"train", s.cfg}, {"fold", s.fold}}, s.seeds, inputs);
    write_text(dir / "run_manifest.json", manifest.dump(2) + "\n");

    const bseq::CrossvalSummary summary =
        bseq::crossval(runs, s.cfg, s.fold, root, checkpoint_root, a.jobs);
    finish_manifest(manifest, dir / "run_manifest.json");
    std::cout << bseq::crossval_csv(summary.rows, s.cfg.regimen);
    std::cout << "summary: " << (dir / "summary.csv").string() << "\n";
}

bseq::GridSpace grid_space_from_json(const json& j) {
    bseq::GridSpace space;
    if (j.contains("alphas")) {
        space.alphas = config_get<std::vector<std::pair<double, double>>>(j.at("alphas"),
                                                                          "space.alphas");
    }
    if (j.contains("lrs")) space.lrs = config_get<std::vector<double>>(j.at("lrs"), "space.lrs");
    if (j.contains("heads")) {
        space.heads = config_get<std::vector<int>>(j.at("heads"), "space.heads");
    }
    if (j.contains("expansions")) {
        space.expansions =
            config_get<std::vector<int>>(j.at("expansions"), "space.expansions");
    }
    if (j.contains("layers")) {
        space.layers = config_get<std::vector<int>>(j.at("layers"), "space.layers");
    }
    return space;
}

json grid_space_json(const bseq::GridSpace& space) {
    return json{{"alphas", space.alphas},
                {"lrs", space.lrs},
                {"heads", space.heads},
                {"expansions", space.expansions},
                {"layers", space.layers}};
}

void cmd_grid_search(const TrainArgs& a) {
    TrainSetup s = resolve_train_setup(a, "", true);
    json file = a.config_path.empty() ? json::object() : read_json_file(a.config_path);
    const bseq::GridSpace space = grid_space_from_json(file.value("space", json::object()));
    if (a.print_config) {
        print_config_json(
            json{{"train", s.cfg}, {"fold", s.fold}, {"space", grid_space_json(space)}});
        return;
    }
    s.cfg.validate();
    if (a.jobs < 1) throw bseq::ConfigError("grid-search: --jobs must be positive");
    const fs::path dir = resolve_run_root(a) / "grid";
    const auto runs = bseq::load_runs(a.data_dir);
    check_data_dim(runs, s.cfg.model);
    fs::create_directories(dir);
    json config{{"train", s.cfg}, {"fold", s.fold}, {"space", grid_space_json(space)}};
    json manifest =
        start_manifest("grid-search", config, s.seeds, json{{"data", dir_digests(a.data_dir)}});
    write_text(dir / "run_manifest.json", manifest.dump(2) + "\n");

    const bseq::GridOutcome out = bseq::grid_search(runs, s.cfg, space, s.fold, dir, a.jobs);
    finish_manifest(manifest, dir / "run_manifest.json");
    for (const auto& notice : out.skipped) std::cerr << "notice: " << notice << "\n";
    std::cout << bseq::grid_csv(out);
    std::cout << "grid dir: " << dir.string() << "\n";
}

void cmd_grad_check(const std::string& config_path, double tolerance, int n_coords,
                    uint64_t seed, bool print_config) {
    // tiny by default so the full battery stays in the seconds range
    bseq::ModelConfig cfg;
    cfg.d_model = 8;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.forward_expansion = 4;
    cfg.dropout = 0.1;
    if (!config_path.empty()) {
        const json j = read_json_file(config_path);
        try {
            from_json(j, cfg);
        } catch (const json::exception& e) {
            throw bseq::ConfigError(std::string("model config: ") + e.what());
        }
    }
    if (print_config) {
        print_config_json(json(cfg));
        return;
    }
    if (n_coords < 1) throw bseq::ConfigError("grad-check: --coords must be positive");
    const bseq::GradCheckReport report = bseq::layer_suite(cfg, seed, n_coords, tolerance);
    for (const auto& e : report.entries) {
        std::printf("%-12s max_rel_err=%-12.3g n=%d\n", e.name.c_str(), e.max_rel_err,
                    e.n_checked);
    }
    if (!report.passed()) {
        std::printf("grad-check: FAIL (worst %.3g, tolerance %.3g)\n", report.worst(), tolerance);
        throw bseq::NumericError("grad-check: max relative error " + fmt_g(report.worst()) +
                                 " exceeds tolerance " + fmt_g(tolerance));
    }
    std::printf("grad-check: PASS (worst %.3g, tolerance %.3g)\n", report.worst(), tolerance);
}

void cmd_eval(const std::string& data_dir, const std::string& ckpt_path, bool require_match) {
    if (!fs::exists(ckpt_path)) {
        throw bseq::ConfigError("eval: checkpoint not found: " + ckpt_path);
    }
    const bseq::LoadedCheckpoint ckpt = bseq::load_checkpoint(ckpt_path);
    if (!ckpt.meta.contains("train") || !ckpt.meta.contains("fold_spec")) {
        throw bseq::CheckpointError("eval: checkpoint lacks its training setup");
    }
    bseq::TrainConfig cfg;
    bseq::FoldSpec fold;
    try {
        ckpt.meta.at("train").get_to(cfg);
        ckpt.meta.at("fold_spec").get_to(fold);
    } catch (const json::exception& e) {
        throw bseq::CheckpointError(std::string("eval: bad checkpoint meta: ") + e.what());
    }
    const bseq::PairTask task = cfg.is_pretrain() ? bseq::PairTask::ntp : bseq::PairTask::sg;

    const auto runs = bseq::load_runs(data_dir);
    check_data_dim(runs, cfg.model);
    auto seqs = bseq::extract_5seqs(runs);
    auto data = bseq::build_fold(seqs, fold, task);
    bseq::Trainer trainer(runs, std::move(seqs), std::move(data), cfg);
    trainer.restore_params(ckpt.tensors);
    const bseq::EpochMetrics m = trainer.evaluate(0);

    const bool ntp = task == bseq::PairTask::ntp;
    const double acc = ntp ? m.val_ntp_acc : m.val_sg_acc;
    const double logged = ckpt.meta.value(ntp ? "best_val_ntp_acc" : "best_val_sg_acc", -1.0);
    bool match = acc == logged;
    std::cout << "checkpoint: " << ckpt_path << "\n";
    std::cout << "regimen=" << bseq::to_string(cfg.regimen)
              << " fold=" << fold.heldout_run_index << " seed=" << cfg.seed << "\n";
    std::cout << "val_acc=" << fmt_g(acc) << " logged=" << fmt_g(logged) << "\n";
    if (cfg.regimen == bseq::Regimen::multitask) {
        const double logged_mbm = ckpt.meta.value("mbm_val_loss", -1.0);
        match = match && m.val_mbm_loss == logged_mbm;
        std::cout << "val_mbm_loss=" << fmt_g(m.val_mbm_loss) << " logged=" << fmt_g(logged_mbm)
                  << "\n";
    }
    std::cout << "match=" << (match ? "yes" : "no") << "\n";
    if (require_match && !match) {
        throw bseq::NumericError("eval: re-evaluation does not reproduce the logged metrics");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"paired-sequence transformer pipeline for voxel timeseries"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string("brainseq ") + kVersion);

    // synth-gen
    auto sg = std::make_shared<bseq::SynthSpec>();
    auto sg_out = std::make_shared<std::string>();
    auto sg_config = std::make_shared<std::string>();
    auto sg_print = std::make_shared<bool>(false);
    {
        CLI::App* cmd = app.add_subcommand("synth-gen", "generate a synthetic dataset");
        cmd->add_option("out_dir", *sg_out, "output directory")->required();
        cmd->add_option("--config", *sg_config, "JSON spec file");
        auto* o1 = cmd->add_option("--subjects", sg->n_subjects, "number of subjects");
        auto* o2 = cmd->add_option("--training-runs", sg->n_training_runs, "training runs per subject");
        auto* o3 = cmd->add_option("--test-runs", sg->n_test_runs, "test runs per subject");
        auto* o4 = cmd->add_option("--clips", sg->clips_per_training_run, "clips per training run");
        auto* o5 = cmd->add_option("--genres", sg->n_genres, "number of genres");
        auto* o6 = cmd->add_option("--voxels", sg->n_voxels, "voxels per image");
        auto* o7 = cmd->add_option("--strength", sg->genre_signal_strength, "genre signal strength");
        auto* o8 = cmd->add_option("--temporal-corr", sg->temporal_corr, "AR(1) coefficient");
        auto* o9 = cmd->add_option("--noise", sg->noise_sd, "noise standard deviation");
        auto* o10 = cmd->add_option("--seed", sg->seed, "generator seed");
        cmd->add_flag("--print-config", *sg_print, "print the effective config and exit");
        cmd->callback([=]() {
            bseq::SynthSpec spec;
            if (!sg_config->empty()) {
                spec = config_get<bseq::SynthSpec>(read_json_file(*sg_config), "synth config");
            }
            if (o1->count()) spec.n_subjects = sg->n_subjects;
            if (o2->count()) spec.n_training_runs = sg->n_training_runs;
            if (o3->count()) spec.n_test_runs = sg->n_test_runs;
            if (o4->count()) spec.clips_per_training_run = sg->clips_per_training_run;
            if (o5->count()) spec.n_genres = sg->n_genres;
            if (o6->count()) spec.n_voxels = sg->n_voxels;
            if (o7->count()) spec.genre_signal_strength = sg->genre_signal_strength;
            if (o8->count()) spec.temporal_corr = sg->temporal_corr;
            if (o9->count()) spec.noise_sd = sg->noise_sd;
            if (o10->count()) spec.seed = sg->seed;
            cmd_synth_gen(*sg_out, *sg_config, spec, *sg_print);
        });
    }

    // preprocess
    auto pp_atlas = std::make_shared<std::string>();
    auto pp_raw = std::make_shared<std::string>();
    auto pp_out = std::make_shared<std::string>();
    auto pp_threshold = std::make_shared<double>(bseq::kDefaultThreshold);
    auto pp_targets = std::make_shared<int>(bseq::kDefaultTargetVoxels);
    {
        CLI::App* cmd = app.add_subcommand("preprocess", "mask, detrend and standardize raw runs");
        cmd->add_option("atlas", *pp_atlas, "atlas text file")->required();
        cmd->add_option("raw_dir", *pp_raw, "directory of raw .vxts runs")->required();
        cmd->add_option("out_dir", *pp_out, "output directory")->required();
        cmd->add_option("--threshold", *pp_threshold, "atlas probability threshold");
        cmd->add_option("--target-voxels", *pp_targets, "mask size after padding/trimming");
        cmd->callback(
            [=]() { cmd_preprocess(*pp_atlas, *pp_raw, *pp_out, *pp_threshold, *pp_targets); });
    }

    // build-dataset
    auto bd_data = std::make_shared<std::string>();
    auto bd_out = std::make_shared<std::string>();
    auto bd_task = std::make_shared<std::string>("ntp");
    auto bd_fold = std::make_shared<bseq::FoldSpec>();
    {
        CLI::App* cmd = app.add_subcommand("build-dataset", "extract 5-seqs and build fold pairs");
        cmd->add_option("data_dir", *bd_data, "directory of processed .vxts runs")->required();
        cmd->add_option("out_dir", *bd_out, "output directory")->required();
        cmd->add_option("--task", *bd_task, "pair task: ntp or sg");
        cmd->add_option("--fold", bd_fold->heldout_run_index, "held-out training run index");
        cmd->add_option("--seed", bd_fold->seed, "pairing seed");
        cmd->add_option("--train-cap", bd_fold->n_train_cap, "max training pairs");
        cmd->add_option("--val-cap", bd_fold->n_val_cap, "max validation pairs");
        cmd->callback([=]() { cmd_build_dataset(*bd_data, *bd_out, *bd_task, *bd_fold); });
    }

    // pretrain
    auto pt = std::make_shared<TrainArgs>();
    {
        CLI::App* cmd = app.add_subcommand("pretrain", "self-supervised pretraining on one fold");
        cmd->add_option("data_dir", pt->data_dir, "directory of processed .vxts runs")->required();
        pt->o_regimen = cmd->add_option("--regimen", pt->regimen, "multitask or ntp-only");
        pt->o_fold = cmd->add_option("--fold", pt->fold, "held-out training run index");
        cmd->add_option("--config", pt->config_path, "JSON config ({\"train\":..., \"fold\":...})");
        add_train_overrides(cmd, *pt);
        cmd->callback([=]() { cmd_pretrain(*pt); });
    }

    // finetune
    auto ft = std::make_shared<TrainArgs>();
    auto ft_init = std::make_shared<std::string>();
    {
        CLI::App* cmd = app.add_subcommand("finetune", "Same Genre training on one fold");
        cmd->add_option("data_dir", ft->data_dir, "directory of processed .vxts runs")->required();
        cmd->add_option("--init", *ft_init, "'fresh' or 'checkpoint:PATH'")->required();
        ft->o_fold = cmd->add_option("--fold", ft->fold, "held-out training run index");
        cmd->add_option("--config", ft->config_path, "JSON config ({\"train\":..., \"fold\":...})");
        add_train_overrides(cmd, *ft);
        cmd->callback([=]() { cmd_finetune(*ft, *ft_init); });
    }

    // crossval
    auto cv = std::make_shared<TrainArgs>();
    auto cv_ckpt_root = std::make_shared<std::string>();
    {
        CLI::App* cmd = app.add_subcommand("crossval", "train every fold and emit the summary");
        cmd->add_option("data_dir", cv->data_dir, "directory of processed .vxts runs")->required();
        cv->o_regimen = cmd->add_option("--regimen", cv->regimen,
                                        "multitask, ntp-only, finetune-sg or fresh-sg");
        cmd->add_option("--config", cv->config_path, "JSON config ({\"train\":..., \"fold\":...})");
        cmd->add_option("--checkpoint-root", *cv_ckpt_root,
                        "pretrain run root with <fold>/best.ckpt (finetune-sg only)");
        cmd->add_option("--jobs", cv->jobs, "parallel fold runs");
        add_train_overrides(cmd, *cv);
        cmd->callback([=]() { cmd_crossval(*cv, *cv_ckpt_root); });
    }

    // grid-search
    auto gs = std::make_shared<TrainArgs>();
    {
        CLI::App* cmd = app.add_subcommand("grid-search", "hyperparameter sweep on one fold");
        cmd->add_option("data_dir", gs->data_dir, "directory of processed .vxts runs")->required();
        gs->o_regimen = cmd->add_option("--regimen", gs->regimen, "multitask or ntp-only");
        gs->o_fold = cmd->add_option("--fold", gs->fold, "held-out training run index");
        cmd->add_option("--config", gs->config_path,
                        "JSON config ({\"train\":..., \"fold\":..., \"space\":...})");
        cmd->add_option("--jobs", gs->jobs, "parallel combination runs");
        add_train_overrides(cmd, *gs);
        cmd->callback([=]() { cmd_grid_search(*gs); });
    }

    // grad-check
    auto gc_config = std::make_shared<std::string>();
    auto gc_tol = std::make_shared<double>(1e-5);
    auto gc_coords = std::make_shared<int>(100);
    auto gc_seed = std::make_shared<uint64_t>(0);
    auto gc_print = std::make_shared<bool>(false);
    {
        CLI::App* cmd =
            app.add_subcommand("grad-check", "finite-difference gradient verification at 64-bit");
        cmd->add_option("--config", *gc_config, "model config JSON");
        cmd->add_option("--tolerance", *gc_tol, "max relative error allowed");
        cmd->add_option("--coords", *gc_coords, "sampled coordinates per tensor");
        cmd->add_option("--seed", *gc_seed, "sampling seed");
        cmd->add_flag("--print-config", *gc_print, "print the effective config and exit");
        cmd->callback(
            [=]() { cmd_grad_check(*gc_config, *gc_tol, *gc_coords, *gc_seed, *gc_print); });
    }

    // eval
    auto ev_data = std::make_shared<std::string>();
    auto ev_ckpt = std::make_shared<std::string>();
    auto ev_require = std::make_shared<bool>(false);
    {
        CLI::App* cmd = app.add_subcommand("eval", "re-evaluate a checkpoint on its fold");
        cmd->add_option("data_dir", *ev_data, "directory of processed .vxts runs")->required();
        cmd->add_option("checkpoint", *ev_ckpt, "checkpoint file")->required();
        cmd->add_flag("--require-match", *ev_require,
                      "fail unless the logged metrics are reproduced exactly");
        cmd->callback([=]() { cmd_eval(*ev_data, *ev_ckpt, *ev_require); });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const bseq::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const bseq::DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const bseq::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
