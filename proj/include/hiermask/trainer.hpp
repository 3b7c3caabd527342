#pragma once

#include "hiermask/case_io.hpp"
#include "hiermask/dualdecode.hpp"
#include "hiermask/model.hpp"
#include "hiermask/phantom.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

namespace hiermask {

struct AugmentConfig {
    bool flip = true;
    bool noise = true;
    double noise_sigma = 0.1;  // in units of the normalized intensity
};

struct TrainConfig {
    Dims patch{32, 32, 32};
    int batch = 2;
    double lr = 3e-4;
    double weight_decay = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int epochs = 1;
    int steps_per_epoch = 1000;
    std::uint64_t seed = 0;
    bool balanced = true;
    AugmentConfig augment;
    ModelConfig model;
    bool deterministic = true;
    std::string split = "train";

    int total_steps() const { return epochs * steps_per_epoch; }
};

nlohmann::json to_json(const TrainConfig& config);
/// Missing keys keep their defaults; unknown keys throw UsageError.
TrainConfig train_config_from_json(const nlohmann::json& doc);
/// Throws UsageError when a field is out of range.
void validate_train_config(const TrainConfig& config);

/// Per-volume z-score; a constant volume maps to zeros.
Volume normalize_intensity(const Volume& volume);

/// Voxel indices per label value, used for balanced sampling.
struct ClassIndex {
    std::map<int, std::vector<std::int64_t>> voxels;

    static ClassIndex build(const LabelMap& labels);
};

struct PatchPair {
    Volume volume;
    LabelMap labels;
    Dims origin{0, 0, 0};
    int target_class = -1;  // class guaranteed inside the patch, -1 when unbalanced
};

Volume crop(const Volume& volume, const Dims& origin, const Dims& size);
LabelMap crop(const LabelMap& labels, const Dims& origin, const Dims& size);

/// Balanced: a foreground class (organ or tumor) present in the case is
/// chosen uniformly, then a crop containing one of its voxels. Otherwise a
/// uniform crop. Throws UsageError when the patch exceeds the volume.
PatchPair sample_patch(const Volume& volume, const LabelMap& labels, const ClassIndex& index, std::mt19937_64& rng,
                       const Dims& patch, bool balanced);

/// Joint random flips per axis; Gaussian noise on the volume only.
void augment(PatchPair& pair, std::mt19937_64& rng, const AugmentConfig& config);

/// Reverses the order along `axis` (0 = z) in place.
template <typename T>
void flip_axis(Grid3<T>& grid, int axis);

/// Decoupled weight decay Adam.
class AdamW {
public:
    AdamW(ParamList<float> params, double lr, double beta1, double beta2, double eps, double weight_decay);

    void zero_grad();
    /// Applies one update from the accumulated gradients.
    void step();
    int steps() const { return t_; }

private:
    ParamList<float> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, beta1_, beta2_, eps_, wd_;
    int t_ = 0;
};

struct StepRecord {
    int step = 0;
    LossTerms loss;
};

nlohmann::json to_json(const StepRecord& record);

struct TrainingCase {
    std::string id;
    Volume volume;  // normalized
    LabelMap labels;
    ClassIndex index;
};

std::vector<TrainingCase> load_training_cases(const Manifest& manifest, const std::string& split);

using StepCallback = std::function<void(const StepRecord&)>;

/// Runs config.total_steps() optimizer steps on `model`. Throws
/// DivergenceError (with the step number) when the loss is not finite.
std::vector<StepRecord> train_model(Model<float>& model, const std::vector<TrainingCase>& cases,
                                    const TrainConfig& config, const StepCallback& on_step = {});

struct TrainOutputs {
    std::filesystem::path checkpoint;
    std::filesystem::path loss_trace;
    std::vector<StepRecord> trace;
};

/// Loads the split, trains, writes `checkpoint.hmw` and `loss_trace.jsonl`
/// under `out_dir`. The checkpoint metadata echoes the config and manifest hash.
TrainOutputs train(const Manifest& manifest, const TrainConfig& config, const std::filesystem::path& out_dir,
                   const StepCallback& on_step = {});

/// Mean soft-Dice over tumor classes of the diagnosis head, evaluated on
/// whole volumes (dims divisible by 8) and pooled over `cases`.
double tumor_soft_dice(Model<float>& model, const std::vector<TrainingCase>& cases);

} // namespace hiermask
