#pragma once

#include "hiermask/model.hpp"
#include "hiermask/taxonomy.hpp"
#include "hiermask/volume.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace hiermask {

/// Class probabilities of both heads over a grid, each [C, D*H*W].
struct ProbabilityMaps {
    Dims dims{0, 0, 0};
    int det_classes = 0;
    int diag_classes = 0;
    std::vector<float> det;
    std::vector<float> diag;
};

/// Maps one normalized window to its probabilities; `dims` of the result
/// must equal the window dims.
using PatchPredictor = std::function<ProbabilityMaps(const Volume& window)>;

/// Runs `model` without recording a graph.
PatchPredictor model_predictor(Model<float>& model);

struct InferenceOptions {
    Dims window{32, 32, 32};
    double step_fraction = 0.5;
    bool gaussian = true;
    double sigma_fraction = 0.125;
    bool tta = true;
};

/// Separable Gaussian exp(-d^2 / 2 sigma^2), sigma = sigma_fraction * dim per
/// axis, centered at (dim - 1) / 2, scaled to max 1 and clamped to the
/// smallest positive value so every weight is strictly positive.
Grid3<double> gaussian_weight(const Dims& dims, double sigma_fraction);

/// Window origins along one axis of length `length`: evenly spread, first at
/// 0, last flush with the end, spacing at most step_fraction * window.
std::vector<int> window_starts(int length, int window, double step_fraction);

/// Reflect-pads (edge-inclusive mirror) up to `min_dims`, splitting the
/// padding before/after; `offset` receives the leading pad per axis.
Volume reflect_pad(const Volume& volume, const Dims& min_dims, Dims* offset = nullptr);

/// Sliding-window prediction with optional Gaussian blending and 8-way flip
/// TTA. Weighted sums are accumulated in double precision.
ProbabilityMaps sliding_window_predict(const PatchPredictor& predictor, const Volume& volume,
                                       const InferenceOptions& options);

/// Per-voxel argmax of one head (ties -> lower class id).
LabelMap argmax_labels(const ProbabilityMaps& probs, LabelSpace space, const Spacing& spacing);

struct LesionInstance {
    ClassId class_id = 0;
    LabelSpace space = LabelSpace::Diagnosis;
    std::vector<std::int64_t> voxels;  // ascending linear indices
    std::int64_t voxel_count = 0;
    double volume_mm3 = 0.0;
    Dims bbox_min{0, 0, 0};
    Dims bbox_max{0, 0, 0};  // inclusive
};

/// round(200 * paper voxel volume / voxel volume of `spacing`).
int default_min_voxels(const Spacing& spacing);

/// Connected components of each tumor class in the map's label space;
/// components below `min_voxels` are dropped. Sorted by class id, then by
/// first voxel in scan order.
std::vector<LesionInstance> extract_instances(const LabelMap& labels, const Taxonomy& taxonomy, int min_voxels,
                                              int connectivity = 26);

/// Predicted subtype per major group: the class of the largest instance of
/// that group. Ties go to the lower class id, then to the earlier instance.
std::vector<std::optional<ClassId>> patient_diagnosis(const std::vector<LesionInstance>& instances,
                                                      const Taxonomy& taxonomy);

nlohmann::json to_json(const LesionInstance& instance, const Taxonomy& taxonomy);
/// Voxel indices as [start, length] runs.
nlohmann::json run_length_encode(const std::vector<std::int64_t>& voxels);

struct PredictionFiles {
    std::filesystem::path detection;
    std::filesystem::path diagnosis;
    std::filesystem::path instances;
};

PredictionFiles prediction_paths(const std::filesystem::path& dir, const std::string& case_id);

/// Writes both argmax maps plus the instance list for one case.
PredictionFiles save_prediction(const std::filesystem::path& dir, const std::string& case_id,
                                const LabelMap& detection, const LabelMap& diagnosis, const Taxonomy& taxonomy,
                                int min_voxels, int connectivity);

} // namespace hiermask
