#include "bseq/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace bseq {

void to_json(nlohmann::json& j, const ModelConfig& cfg) {
    j = nlohmann::json{{"d_model", cfg.d_model},
                       {"n_layers", cfg.n_layers},
                       {"n_heads", cfg.n_heads},
                       {"forward_expansion", cfg.forward_expansion},
                       {"dropout", cfg.dropout}};
}

void from_json(const nlohmann::json& j, ModelConfig& cfg) {
    cfg.d_model = j.value("d_model", cfg.d_model);
    cfg.n_layers = j.value("n_layers", cfg.n_layers);
    cfg.n_heads = j.value("n_heads", cfg.n_heads);
    cfg.forward_expansion = j.value("forward_expansion", cfg.forward_expansion);
    cfg.dropout = j.value("dropout", cfg.dropout);
}

namespace {

void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::istream& is, const char* what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4)) {
        throw CheckpointError(std::string("checkpoint: truncated while reading ") + what);
    }
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void put_f32_array(std::ostream& os, const float* p, size_t n) {
    static_assert(sizeof(float) == 4);
    // x86 and every target we care about are little-endian IEEE-754
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * 4));
}

void get_f32_array(std::istream& is, float* p, size_t n) {
    if (!is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * 4))) {
        throw CheckpointError("checkpoint: truncated tensor payload");
    }
}

void write_entries(const std::string& path, const ModelConfig& cfg, const nlohmann::json& meta,
                   const std::vector<std::pair<const std::string*, const Tensor<float>*>>& entries) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("checkpoint: cannot open for writing: " + path);
    os.write("PSTX", 4);
    put_u32(os, kCheckpointVersion);
    nlohmann::json blob{{"config", cfg}, {"meta", meta}};
    const std::string js = blob.dump();
    put_u32(os, static_cast<uint32_t>(js.size()));
    os.write(js.data(), static_cast<std::streamsize>(js.size()));
    put_u32(os, static_cast<uint32_t>(entries.size()));
    for (const auto& [name, value] : entries) {
        put_u32(os, static_cast<uint32_t>(name->size()));
        os.write(name->data(), static_cast<std::streamsize>(name->size()));
        put_u32(os, static_cast<uint32_t>(value->ndim()));
        for (int d : value->shape) put_u32(os, static_cast<uint32_t>(d));
        put_f32_array(os, value->ptr(), value->numel());
    }
    if (!os) throw CheckpointError("checkpoint: write failed: " + path);
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const nlohmann::json& meta,
                     const std::vector<Param<float>*>& params) {
    std::vector<std::pair<const std::string*, const Tensor<float>*>> entries;
    entries.reserve(params.size());
    for (const Param<float>* p : params) entries.emplace_back(&p->name, &p->value);
    write_entries(path, cfg, meta, entries);
}

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const nlohmann::json& meta,
                     const std::map<std::string, Tensor<float>>& tensors) {
    std::vector<std::pair<const std::string*, const Tensor<float>*>> entries;
    entries.reserve(tensors.size());
    for (const auto& [name, value] : tensors) entries.emplace_back(&name, &value);
    write_entries(path, cfg, meta, entries);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("checkpoint: cannot open: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "PSTX", 4) != 0) {
        throw CheckpointError("checkpoint: bad magic in " + path);
    }
    const uint32_t version = get_u32(is, "version");
    if (version != kCheckpointVersion) {
        throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
    }
    const uint32_t json_len = get_u32(is, "json length");
    std::string js(json_len, '\0');
    if (!is.read(js.data(), json_len)) throw CheckpointError("checkpoint: truncated json blob");
    nlohmann::json blob;
    try {
        blob = nlohmann::json::parse(js);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint: bad json blob: ") + e.what());
    }
    LoadedCheckpoint out;
    try {
        out.config = blob.at("config").get<ModelConfig>();
        out.meta = blob.value("meta", nlohmann::json::object());
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint: bad config blob: ") + e.what());
    }
    const uint32_t n_tensors = get_u32(is, "tensor count");
    for (uint32_t i = 0; i < n_tensors; ++i) {
        const uint32_t name_len = get_u32(is, "tensor name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len)) throw CheckpointError("checkpoint: truncated name");
        const uint32_t ndim = get_u32(is, "tensor rank");
        if (ndim == 0 || ndim > 8) throw CheckpointError("checkpoint: implausible tensor rank");
        std::vector<int> shape(ndim);
        size_t numel = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            shape[d] = static_cast<int>(get_u32(is, "tensor dim"));
            if (shape[d] <= 0) throw CheckpointError("checkpoint: non-positive dimension");
            numel *= static_cast<size_t>(shape[d]);
        }
        Tensor<float> t(shape);
        get_f32_array(is, t.ptr(), numel);
        if (!out.tensors.emplace(name, std::move(t)).second) {
            throw CheckpointError("checkpoint: duplicate tensor " + name);
        }
    }
    return out;
}

void load_into_model(PairedSeqModel<float>& model, const LoadedCheckpoint& ckpt) {
    auto params = model.params();
    if (params.size() != ckpt.tensors.size()) {
        throw CheckpointError("checkpoint: tensor count mismatch");
    }
    for (Param<float>* p : params) {
        auto it = ckpt.tensors.find(p->name);
        if (it == ckpt.tensors.end()) {
            throw CheckpointError("checkpoint: missing tensor " + p->name);
        }
        if (it->second.shape != p->value.shape) {
            throw CheckpointError("checkpoint: shape mismatch for " + p->name);
        }
        *p->value.data = *it->second.data;
    }
}

PairedSeqModel<float> model_from_checkpoint(const LoadedCheckpoint& ckpt) {
    Rng rng(0);  // initialization is immediately overwritten
    PairedSeqModel<float> model(ckpt.config, rng);
    load_into_model(model, ckpt);
    return model;
}

}  // namespace bseq
