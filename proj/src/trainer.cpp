#include "hiermask/trainer.hpp"

#include "hiermask/error.hpp"
#include "hiermask/json_util.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace hiermask {

using nlohmann::json;

json to_json(const TrainConfig& c)
{
    return json{{"patch", c.patch},
                {"batch", c.batch},
                {"lr", c.lr},
                {"weight_decay", c.weight_decay},
                {"beta1", c.beta1},
                {"beta2", c.beta2},
                {"adam_eps", c.adam_eps},
                {"epochs", c.epochs},
                {"steps_per_epoch", c.steps_per_epoch},
                {"seed", c.seed},
                {"balanced", c.balanced},
                {"augment", {{"flip", c.augment.flip}, {"noise", c.augment.noise}, {"noise_sigma", c.augment.noise_sigma}}},
                {"model", to_json(c.model)},
                {"deterministic", c.deterministic},
                {"split", c.split}};
}

TrainConfig train_config_from_json(const json& doc)
{
    constexpr std::string_view what = "train config";
    reject_unknown_keys(doc,
                        {"patch", "batch", "lr", "weight_decay", "beta1", "beta2", "adam_eps", "epochs",
                         "steps_per_epoch", "seed", "balanced", "augment", "model", "deterministic", "split"},
                        what);
    TrainConfig c;
    read_optional(doc, "patch", c.patch, what);
    read_optional(doc, "batch", c.batch, what);
    read_optional(doc, "lr", c.lr, what);
    read_optional(doc, "weight_decay", c.weight_decay, what);
    read_optional(doc, "beta1", c.beta1, what);
    read_optional(doc, "beta2", c.beta2, what);
    read_optional(doc, "adam_eps", c.adam_eps, what);
    read_optional(doc, "epochs", c.epochs, what);
    read_optional(doc, "steps_per_epoch", c.steps_per_epoch, what);
    read_optional(doc, "seed", c.seed, what);
    read_optional(doc, "balanced", c.balanced, what);
    read_optional(doc, "deterministic", c.deterministic, what);
    read_optional(doc, "split", c.split, what);
    if (doc.contains("augment")) {
        const auto& a = doc.at("augment");
        reject_unknown_keys(a, {"flip", "noise", "noise_sigma"}, "train config augment");
        read_optional(a, "flip", c.augment.flip, what);
        read_optional(a, "noise", c.augment.noise, what);
        read_optional(a, "noise_sigma", c.augment.noise_sigma, what);
    }
    if (doc.contains("model")) c.model = model_config_from_json(doc.at("model"));
    validate_train_config(c);
    return c;
}

void validate_train_config(const TrainConfig& c)
{
    check_patch_dims(c.patch, c.model.backbone);
    if (c.batch < 1) throw UsageError("train config: batch must be >= 1");
    if (!(c.lr >= 0.0)) throw UsageError("train config: lr must be non-negative");
    if (!(c.weight_decay >= 0.0)) throw UsageError("train config: weight_decay must be non-negative");
    if (!(c.beta1 >= 0.0 && c.beta1 < 1.0) || !(c.beta2 >= 0.0 && c.beta2 < 1.0))
        throw UsageError("train config: betas must lie in [0, 1)");
    if (!(c.adam_eps > 0.0)) throw UsageError("train config: adam_eps must be positive");
    if (c.epochs < 0 || c.steps_per_epoch < 0) throw UsageError("train config: epochs and steps_per_epoch must be >= 0");
    if (!(c.augment.noise_sigma >= 0.0)) throw UsageError("train config: noise_sigma must be non-negative");
}

Volume normalize_intensity(const Volume& volume)
{
    double mean = 0.0;
    for (float v : volume.data) mean += v;
    mean /= static_cast<double>(std::max<std::int64_t>(1, volume.size()));
    double var = 0.0;
    for (float v : volume.data) var += (v - mean) * (v - mean);
    var /= static_cast<double>(std::max<std::int64_t>(1, volume.size()));
    const double sd = std::sqrt(var);
    Volume out = volume;
    for (auto& v : out.data) v = sd > 0.0 ? static_cast<float>((v - mean) / sd) : 0.0f;
    return out;
}

ClassIndex ClassIndex::build(const LabelMap& labels)
{
    ClassIndex index;
    for (std::int64_t i = 0; i < labels.size(); ++i)
        if (labels.data[i] != kBackground) index.voxels[labels.data[i]].push_back(i);
    return index;
}

namespace {

template <typename G>
G crop_grid(const G& grid, const Dims& origin, const Dims& size)
{
    for (int a = 0; a < 3; ++a)
        if (origin[a] < 0 || size[a] < 1 || origin[a] + size[a] > grid.dims[a])
            throw UsageError("crop outside the volume");
    G out = grid;
    out.dims = size;
    out.data.assign(voxel_count(size), {});
    for (int z = 0; z < size[0]; ++z)
        for (int y = 0; y < size[1]; ++y) {
            const auto* src = &grid.data[grid.index(origin[0] + z, origin[1] + y, origin[2])];
            std::copy_n(src, size[2], &out.data[out.index(z, y, 0)]);
        }
    return out;
}

int uniform_int(std::mt19937_64& rng, int lo, int hi)
{
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

} // namespace

Volume crop(const Volume& volume, const Dims& origin, const Dims& size) { return crop_grid(volume, origin, size); }
LabelMap crop(const LabelMap& labels, const Dims& origin, const Dims& size) { return crop_grid(labels, origin, size); }

PatchPair sample_patch(const Volume& volume, const LabelMap& labels, const ClassIndex& index, std::mt19937_64& rng,
                       const Dims& patch, bool balanced)
{
    if (volume.dims != labels.dims) throw DataError("sample_patch: volume and labels differ in shape");
    for (int a = 0; a < 3; ++a)
        if (patch[a] > volume.dims[a] || patch[a] < 1)
            throw UsageError("sample_patch: patch larger than the volume");

    PatchPair out;
    Dims lo{0, 0, 0};
    Dims hi{volume.dims[0] - patch[0], volume.dims[1] - patch[1], volume.dims[2] - patch[2]};
    if (balanced && !index.voxels.empty()) {
        auto it = index.voxels.begin();
        std::advance(it, uniform_int(rng, 0, static_cast<int>(index.voxels.size()) - 1));
        out.target_class = it->first;
        const auto& list = it->second;
        const std::int64_t v = list[static_cast<std::size_t>(
            std::uniform_int_distribution<std::int64_t>(0, static_cast<std::int64_t>(list.size()) - 1)(rng))];
        const int z = static_cast<int>(v / (static_cast<std::int64_t>(volume.dims[1]) * volume.dims[2]));
        const int y = static_cast<int>((v / volume.dims[2]) % volume.dims[1]);
        const int x = static_cast<int>(v % volume.dims[2]);
        const Dims pos{z, y, x};
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::max(0, pos[a] - patch[a] + 1);
            hi[a] = std::min(hi[a], pos[a]);
        }
    }
    for (int a = 0; a < 3; ++a) out.origin[a] = uniform_int(rng, lo[a], hi[a]);
    out.volume = crop(volume, out.origin, patch);
    out.labels = crop(labels, out.origin, patch);
    return out;
}

template <typename T>
void flip_axis(Grid3<T>& grid, int axis)
{
    const Dims& d = grid.dims;
    for (int z = 0; z < d[0]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[2]; ++x) {
                int mz = z, my = y, mx = x;
                if (axis == 0) mz = d[0] - 1 - z;
                if (axis == 1) my = d[1] - 1 - y;
                if (axis == 2) mx = d[2] - 1 - x;
                const auto i = grid.index(z, y, x);
                const auto j = grid.index(mz, my, mx);
                if (i < j) std::swap(grid.data[i], grid.data[j]);
            }
}

template void flip_axis<float>(Grid3<float>&, int);
template void flip_axis<std::uint8_t>(Grid3<std::uint8_t>&, int);

void augment(PatchPair& pair, std::mt19937_64& rng, const AugmentConfig& config)
{
    if (config.flip) {
        for (int axis = 0; axis < 3; ++axis) {
            if (std::bernoulli_distribution(0.5)(rng)) {
                flip_axis(pair.volume, axis);
                flip_axis(pair.labels, axis);
            }
        }
    }
    if (config.noise && config.noise_sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, config.noise_sigma);
        for (auto& v : pair.volume.data) v += static_cast<float>(noise(rng));
    }
}

AdamW::AdamW(ParamList<float> params, double lr, double beta1, double beta2, double eps, double weight_decay)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay)
{
    for (const auto& p : params_) {
        m_.emplace_back(p.tensor.numel(), 0.0);
        v_.emplace_back(p.tensor.numel(), 0.0);
    }
}

void AdamW::zero_grad()
{
    for (auto& p : params_) p.tensor.zero_grad();
}

void AdamW::step()
{
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& t = params_[k].tensor;
        if (!t.has_grad()) {
            // no gradient reached the tensor: only the decay applies
            if (wd_ > 0.0 && lr_ > 0.0)
                for (auto& w : t.data()) w = static_cast<float>(w - lr_ * wd_ * w);
            continue;
        }
        auto g = t.grad();
        auto w = t.data();
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
            w[i] = static_cast<float>(w[i] - lr_ * (update + wd_ * w[i]));
        }
    }
}

json to_json(const StepRecord& r)
{
    return json{{"step", r.step},
                {"total", r.loss.total},
                {"ce_det", r.loss.ce_det},
                {"dice_det", r.loss.dice_det},
                {"ce_diag", r.loss.ce_diag},
                {"dice_diag", r.loss.dice_diag}};
}

std::vector<TrainingCase> load_training_cases(const Manifest& manifest, const std::string& split)
{
    std::vector<TrainingCase> out;
    for (const auto* record : manifest.split(split)) {
        Case c = load_manifest_case(manifest, *record);
        TrainingCase tc;
        tc.id = record->id;
        tc.volume = normalize_intensity(c.volume);
        tc.labels = std::move(c.labels);
        tc.index = ClassIndex::build(tc.labels);
        out.push_back(std::move(tc));
    }
    if (out.empty()) throw DataError("manifest has no cases in split '" + split + "'");
    return out;
}

namespace {

ag::Tensor<float> patch_tensor(const Volume& v)
{
    return ag::Tensor<float>::from({1, v.dims[0], v.dims[1], v.dims[2]}, v.data);
}

} // namespace

std::vector<StepRecord> train_model(Model<float>& model, const std::vector<TrainingCase>& cases,
                                    const TrainConfig& config, const StepCallback& on_step)
{
    validate_train_config(config);
    if (cases.empty()) throw DataError("no training cases");
    if (config.deterministic) openblas_set_num_threads(1);
    const bool detection_term = model.config().mode != RepresentationMode::Plain;

    std::mt19937_64 rng(config.seed);
    AdamW optimizer(model.params(), config.lr, config.beta1, config.beta2, config.adam_eps, config.weight_decay);
    std::vector<StepRecord> trace;
    const float inv_batch = 1.0f / static_cast<float>(config.batch);
    for (int step = 1; step <= config.total_steps(); ++step) {
        optimizer.zero_grad();
        ag::Tensor<float> total;
        StepRecord record{step, {}};
        for (int b = 0; b < config.batch; ++b) {
            const auto& c = cases[std::uniform_int_distribution<std::size_t>(0, cases.size() - 1)(rng)];
            PatchPair pair = sample_patch(c.volume, c.labels, c.index, rng, config.patch, config.balanced);
            augment(pair, rng, config.augment);
            auto masks = model.forward(patch_tensor(pair.volume));
            DualLoss<float> loss;
            try {
                loss = dual_loss(masks, pair.labels, model.taxonomy(), detection_term);
            } catch (const DivergenceError& e) {
                throw DivergenceError("step " + std::to_string(step) + ": " + e.what());
            }
            auto scaled = ag::scale(loss.total, inv_batch);
            total = total.defined() ? ag::add(total, scaled) : scaled;
            record.loss.total += loss.terms.total / config.batch;
            record.loss.ce_det += loss.terms.ce_det / config.batch;
            record.loss.dice_det += loss.terms.dice_det / config.batch;
            record.loss.ce_diag += loss.terms.ce_diag / config.batch;
            record.loss.dice_diag += loss.terms.dice_diag / config.batch;
        }
        ag::backward(total);
        optimizer.step();
        trace.push_back(record);
        if (on_step) on_step(record);
    }
    return trace;
}

TrainOutputs train(const Manifest& manifest, const TrainConfig& config, const std::filesystem::path& out_dir,
                   const StepCallback& on_step)
{
    validate_train_config(config);
    const auto cases = load_training_cases(manifest, config.split);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create '" + out_dir.string() + "': " + ec.message());

    TrainOutputs out;
    out.loss_trace = out_dir / "loss_trace.jsonl";
    out.checkpoint = out_dir / "checkpoint.hmw";
    std::ofstream trace_file(out.loss_trace, std::ios::trunc);
    if (!trace_file) throw DataError("cannot write '" + out.loss_trace.string() + "'");

    Model<float> model(manifest.bound_taxonomy(), config.model);
    out.trace = train_model(model, cases, config, [&](const StepRecord& r) {
        trace_file << to_json(r).dump() << "\n";
        trace_file.flush();
        if (on_step) on_step(r);
    });
    save_checkpoint(out.checkpoint, model,
                    json{{"train_config", to_json(config)}, {"manifest_hash", manifest.hash()}, {"steps", config.total_steps()}});
    return out;
}

double tumor_soft_dice(Model<float>& model, const std::vector<TrainingCase>& cases)
{
    const auto& tax = model.taxonomy();
    const auto tumors = tax.tumor_ids(LabelSpace::Diagnosis);
    std::map<int, std::array<double, 3>> sums;  // class -> (sum p*g, sum p, sum g)
    ag::NoGradGuard guard;
    for (const auto& c : cases) {
        auto masks = model.forward(patch_tensor(c.volume));
        const auto probs = masks.diag.data();
        const std::int64_t n = c.labels.size();
        for (int cls : tumors) {
            auto& s = sums[cls];
            for (std::int64_t i = 0; i < n; ++i) {
                const double p = probs[cls * n + i];
                const double g = c.labels.data[i] == cls ? 1.0 : 0.0;
                s[0] += p * g;
                s[1] += p;
                s[2] += g;
            }
        }
    }
    double total = 0.0;
    int counted = 0;
    for (const auto& [cls, s] : sums) {
        if (s[2] == 0.0) continue;
        total += 2.0 * s[0] / (s[1] + s[2]);
        ++counted;
    }
    return counted ? total / counted : 0.0;
}

} // namespace hiermask
