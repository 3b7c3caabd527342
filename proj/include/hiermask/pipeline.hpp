#pragma once

#include "hiermask/evalmetrics.hpp"
#include "hiermask/inference.hpp"
#include "hiermask/phantom.hpp"
#include "hiermask/trainer.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace hiermask {

nlohmann::json to_json(const InferenceOptions& options);
/// Missing keys keep their defaults; unknown keys throw UsageError.
InferenceOptions inference_options_from_json(const nlohmann::json& doc, InferenceOptions base = {});

struct InferRequest {
    std::string split = "test";
    /// Unset: the window equals the training patch recorded in the checkpoint.
    std::optional<Dims> window;
    InferenceOptions options;
    std::optional<int> min_voxels;  // unset: default_min_voxels(case spacing)
    int connectivity = 26;
};

/// Index written next to the per-case predictions.
struct PredictionIndex {
    std::string checkpoint_hash;
    std::string manifest_hash;
    std::string split;
    std::vector<std::string> cases;
    int min_voxels = 0;
    int connectivity = 26;
    nlohmann::json config;  // inference options plus the checkpoint's training config

    static constexpr const char* kFileName = "predictions.json";
};

nlohmann::json to_json(const PredictionIndex& index);
PredictionIndex load_prediction_index(const std::filesystem::path& dir);

/// Predicts every case of `request.split` and writes the maps, instance
/// lists and predictions.json under `out_dir`.
PredictionIndex run_inference(const Manifest& manifest, const LoadedCheckpoint& checkpoint, const InferRequest& request,
                              const std::filesystem::path& out_dir);

struct EvalRequest {
    std::optional<int> min_voxels;    // unset: value recorded at inference
    std::optional<int> connectivity;  // unset: value recorded at inference
    std::string baseline_split = "train";
};

/// Evaluates the predictions in `pred_dir` against the manifest. Throws
/// DataError when the prediction index was made from a different manifest.
EvalReport run_evaluation(const Manifest& manifest, const std::filesystem::path& pred_dir, const EvalRequest& request);

/// Patient subtype per major group for every case of a split, from the manifest.
std::vector<std::vector<std::optional<ClassId>>> manifest_subtypes(const Manifest& manifest, const std::string& split);

struct AblationRow {
    RepresentationMode mode = RepresentationMode::Hierarchy;
    EvalReport report;
};

/// Rows in the order given; columns Sensitivity, Specificity, Dice.
nlohmann::json ablation_table(const std::vector<AblationRow>& rows, const nlohmann::json& config);
std::string ablation_markdown(const std::vector<AblationRow>& rows);

/// Trains, predicts and evaluates each mode on the same data and seeds.
/// Writes <out_dir>/<mode>/... plus ablation.json and ablation.md.
std::vector<AblationRow> run_ablation(const Manifest& manifest, const TrainConfig& base,
                                      const std::vector<RepresentationMode>& modes, const InferRequest& infer,
                                      const std::filesystem::path& out_dir, const StepCallback& on_step = {});

} // namespace hiermask
