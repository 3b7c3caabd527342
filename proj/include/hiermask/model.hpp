#pragma once

#include "hiermask/backbone.hpp"
#include "hiermask/dualdecode.hpp"
#include "hiermask/params.hpp"
#include "hiermask/queryhier.hpp"
#include "hiermask/taxonomy.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

namespace hiermask {

struct ModelConfig {
    BackboneConfig backbone;
    DecoderConfig decoder;
    RepresentationMode mode = RepresentationMode::Hierarchy;
    std::uint64_t seed = 0;

    int d() const { return backbone.d; }
};

nlohmann::json to_json(const ModelConfig& config);
/// Missing keys keep their defaults; unknown keys throw UsageError.
ModelConfig model_config_from_json(const nlohmann::json& doc);

/// Backbone, query hierarchy and dual decoder.
template <typename T>
class Model {
public:
    Model(const Taxonomy& taxonomy, const ModelConfig& config);

    const Taxonomy& taxonomy() const { return taxonomy_; }
    const ModelConfig& config() const { return config_; }
    Backbone<T>& backbone() { return backbone_; }
    QuerySet<T>& queries() { return queries_; }
    const QuerySet<T>& queries() const { return queries_; }

    /// `patch` [1, D, H, W] -> probabilities for both heads at patch resolution.
    DualMasks<T> forward(const ag::Tensor<T>& patch);

    /// Backbone parameters followed by queries and decoder parameters.
    ParamList<T> params() const;
    std::int64_t parameter_count() const;

private:
    Taxonomy taxonomy_;
    ModelConfig config_;
    Backbone<T> backbone_;
    QuerySet<T> queries_;
};

/// Versioned checkpoint: magic line, one-line JSON header (model config,
/// taxonomy, tensor table, caller metadata), then float32 little-endian data.
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const nlohmann::json& metadata = {});

struct LoadedCheckpoint {
    Model<float> model;
    nlohmann::json metadata;
    std::string hash;  // sha256 of the file bytes
};

/// Throws DataError for a missing or corrupt file.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

} // namespace hiermask
