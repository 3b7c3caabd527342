#pragma once

#include "hiermask/inference.hpp"
#include "hiermask/taxonomy.hpp"
#include "hiermask/volume.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace hiermask {

// Undefined ratios (zero denominators) are std::nullopt and serialize as null.

struct OrganDetection {
    std::string organ;
    int positives = 0;  // cases with ground-truth tumor in the organ
    int detected = 0;
    std::optional<double> sensitivity;

    bool operator==(const OrganDetection&) const = default;
};

struct PatientDetectionResult {
    std::vector<OrganDetection> organs;  // organs hosting at least one tumor class
    std::optional<double> mean_sensitivity;
    int normals = 0;        // tumor-free cases
    int normals_clean = 0;  // ... with no predicted tumor instance of any class
    std::optional<double> specificity;

    bool operator==(const PatientDetectionResult&) const = default;
};

/// A case counts as detected for organ o when a predicted detection-space
/// instance hosted by o shares a voxel with ground-truth tumor of o.
PatientDetectionResult patient_detection_eval(const std::vector<std::vector<LesionInstance>>& predictions,
                                              const std::vector<LabelMap>& truth, const Taxonomy& taxonomy);

struct LesionCounts {
    int tp = 0;
    int fp = 0;
    int fn = 0;
    int gt_lesions = 0;
    int predicted = 0;
    std::optional<double> precision;
    std::optional<double> recall;

    bool operator==(const LesionCounts&) const = default;
};

/// Class-agnostic lesion matching on binarized tumor masks. Every predicted
/// component overlapping some ground-truth lesion is a TP (several may match
/// one lesion); the rest are FP; lesions hit by none are FN. Predicted
/// components below `min_voxels` are discarded first. Counts are summed over
/// cases.
LesionCounts lesion_detection_eval(const std::vector<LabelMap>& predictions, const std::vector<LabelMap>& truth,
                                   const Taxonomy& taxonomy, int min_voxels, int connectivity);

enum class DiceGrouping {
    OrganMerged,  // all tumor classes of an organ merged
    Subtype,      // one group per diagnosis-space tumor class
};

struct GroupDice {
    std::string group;
    int cases = 0;  // cases with the group present in ground truth
    std::optional<double> mean;

    bool operator==(const GroupDice&) const = default;
};

struct DiceResult {
    std::vector<GroupDice> groups;
    std::optional<double> mean;  // over groups with a defined mean

    bool operator==(const DiceResult&) const = default;
};

/// Per-case Dice averaged over the cases where the group appears in the
/// ground truth. Subtype grouping needs diagnosis-space predictions.
DiceResult dice_eval(const std::vector<LabelMap>& predictions, const std::vector<LabelMap>& truth,
                     const Taxonomy& taxonomy, DiceGrouping grouping);

/// Ground-truth subtype per major group read from a diagnosis-space map.
/// Throws DataError when a group holds more than one subtype.
std::vector<std::optional<ClassId>> truth_subtypes(const LabelMap& truth, const Taxonomy& taxonomy);

/// Most frequent subtype per group (ties -> lower class id).
std::vector<std::optional<ClassId>> majority_subtypes(const std::vector<std::vector<std::optional<ClassId>>>& truth,
                                                      const Taxonomy& taxonomy);

struct SubtypeDiagnosis {
    std::string subtype;
    int cases = 0;
    int correct = 0;
    std::optional<double> sensitivity;

    bool operator==(const SubtypeDiagnosis&) const = default;
};

struct OrganDiagnosis {
    std::string organ;
    std::optional<double> mean_sensitivity;

    bool operator==(const OrganDiagnosis&) const = default;
};

struct DiagnosisResult {
    std::vector<SubtypeDiagnosis> subtypes;
    std::vector<OrganDiagnosis> organs;
    int cases = 0;  // diseased (case, group) pairs
    int correct = 0;
    std::optional<double> accuracy;
    std::vector<std::string> majority;  // per group; empty when unknown
    std::optional<double> majority_accuracy;

    bool operator==(const DiagnosisResult&) const = default;
};

/// Missing predictions count as incorrect. `majority` (optional) yields the
/// baseline accuracy of always predicting the majority subtype.
DiagnosisResult diagnosis_eval(const std::vector<std::vector<std::optional<ClassId>>>& predictions,
                               const std::vector<std::vector<std::optional<ClassId>>>& truth, const Taxonomy& taxonomy,
                               const std::vector<std::optional<ClassId>>& majority = {});

struct EvalMetadata {
    std::string checkpoint_hash;
    std::string manifest_hash;
    std::string split;
    std::vector<std::string> cases;
    int min_voxels = 0;
    int connectivity = 26;
    nlohmann::json config = nlohmann::json::object();

    bool operator==(const EvalMetadata&) const = default;
};

struct EvalReport {
    EvalMetadata metadata;
    PatientDetectionResult patient;
    LesionCounts lesion;
    DiceResult dice_organ;
    DiceResult dice_subtype;
    DiagnosisResult diagnosis;

    bool operator==(const EvalReport&) const = default;
};

/// Conventions recorded in every report.
nlohmann::json report_conventions();

nlohmann::json to_json(const EvalReport& report);
/// Throws DataError when a required field is missing or malformed.
EvalReport eval_report_from_json(const nlohmann::json& doc);
std::string serialize(const EvalReport& report);
void save_report(const std::filesystem::path& path, const EvalReport& report);
EvalReport load_report(const std::filesystem::path& path);

struct EvalCaseData {
    std::string id;
    LabelMap truth;
    LabelMap pred_det;
    LabelMap pred_diag;
};

/// Runs all four evaluations. `train_truth` feeds the majority baseline.
EvalReport evaluate(const std::vector<EvalCaseData>& cases, const Taxonomy& taxonomy, int min_voxels, int connectivity,
                    const std::vector<std::vector<std::optional<ClassId>>>& train_truth, EvalMetadata metadata);

/// Bar chart as a standalone SVG document; null values are drawn as gaps.
std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<std::optional<double>>& values);

/// Writes sensitivity, Dice and diagnosis charts; returns the paths.
std::vector<std::filesystem::path> write_report_plots(const std::filesystem::path& dir, const EvalReport& report);

} // namespace hiermask
