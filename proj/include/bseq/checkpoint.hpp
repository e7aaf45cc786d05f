#pragma once

#include <json.hpp>
#include <map>
#include <string>
#include <vector>

#include "bseq/model.hpp"

namespace bseq {

// Checkpoint container: "PSTX" magic, format version, a JSON blob holding
// the model config plus free-form metadata, then named float32 tensors.
// All integers and floats are little-endian.

inline constexpr uint32_t kCheckpointVersion = 1;

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

struct LoadedCheckpoint {
    ModelConfig config;
    nlohmann::json meta;
    std::map<std::string, Tensor<float>> tensors;
};

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const nlohmann::json& meta,
                     const std::vector<Param<float>*>& params);

void save_checkpoint(const std::string& path, const ModelConfig& cfg, const nlohmann::json& meta,
                     const std::map<std::string, Tensor<float>>& tensors);

LoadedCheckpoint load_checkpoint(const std::string& path);

// Copies checkpoint tensors into the model. Every parameter must be present
// with a matching shape, and stray tensors are rejected.
void load_into_model(PairedSeqModel<float>& model, const LoadedCheckpoint& ckpt);

PairedSeqModel<float> model_from_checkpoint(const LoadedCheckpoint& ckpt);

}  // namespace bseq
