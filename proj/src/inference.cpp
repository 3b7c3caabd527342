#include "hiermask/inference.hpp"

#include "hiermask/case_io.hpp"
#include "hiermask/components.hpp"
#include "hiermask/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace hiermask {

using nlohmann::json;

PatchPredictor model_predictor(Model<float>& model)
{
    return [&model](const Volume& window) {
        ag::NoGradGuard guard;
        auto patch = ag::Tensor<float>::from({1, window.dims[0], window.dims[1], window.dims[2]}, window.data);
        auto masks = model.forward(patch);
        ProbabilityMaps out;
        out.dims = window.dims;
        out.det_classes = masks.det.dim(0);
        out.diag_classes = masks.diag.dim(0);
        out.det.assign(masks.det.data().begin(), masks.det.data().end());
        out.diag.assign(masks.diag.data().begin(), masks.diag.data().end());
        return out;
    };
}

Grid3<double> gaussian_weight(const Dims& dims, double sigma_fraction)
{
    if (!(sigma_fraction > 0.0)) throw UsageError("gaussian_weight: sigma fraction must be positive");
    std::array<std::vector<double>, 3> axis;
    for (int a = 0; a < 3; ++a) {
        if (dims[a] < 1) throw UsageError("gaussian_weight: dims must be >= 1");
        const double center = (dims[a] - 1) / 2.0;
        const double sigma = sigma_fraction * dims[a];
        axis[a].resize(dims[a]);
        for (int i = 0; i < dims[a]; ++i) {
            const double delta = i - center;
            axis[a][i] = std::exp(-delta * delta / (2.0 * sigma * sigma));
        }
    }
    Grid3<double> w(dims, {1.0, 1.0, 1.0}, 0.0);
    double max_w = 0.0;
    for (int z = 0; z < dims[0]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[2]; ++x) {
                const double v = axis[0][z] * axis[1][y] * axis[2][x];
                w.at(z, y, x) = v;
                max_w = std::max(max_w, v);
            }
    double min_positive = 1.0;
    for (auto& v : w.data) {
        v /= max_w;
        if (v > 0.0) min_positive = std::min(min_positive, v);
    }
    for (auto& v : w.data)
        if (!(v > 0.0)) v = min_positive;
    return w;
}

std::vector<int> window_starts(int length, int window, double step_fraction)
{
    if (window < 1 || window > length) throw UsageError("window larger than the padded volume");
    if (!(step_fraction > 0.0 && step_fraction <= 1.0)) throw UsageError("step fraction must lie in (0, 1]");
    const double step = window * step_fraction;
    const int n = static_cast<int>(std::ceil((length - window) / step)) + 1;
    std::vector<int> starts;
    if (n == 1) return {0};
    const double actual = static_cast<double>(length - window) / (n - 1);
    for (int i = 0; i < n; ++i) starts.push_back(static_cast<int>(std::lround(i * actual)));
    return starts;
}

namespace {

int reflect_index(int j, int length)
{
    while (j < 0 || j >= length) {
        if (j < 0) j = -j - 1;
        if (j >= length) j = 2 * length - j - 1;
    }
    return j;
}

void flip_channels(std::vector<float>& data, int channels, const Dims& dims, int axis)
{
    const std::int64_t n = voxel_count(dims);
    for (int c = 0; c < channels; ++c) {
        Grid3<float> g(dims, {1, 1, 1});
        std::copy_n(data.begin() + c * n, n, g.data.begin());
        std::vector<float> flipped(n);
        for (int z = 0; z < dims[0]; ++z)
            for (int y = 0; y < dims[1]; ++y)
                for (int x = 0; x < dims[2]; ++x) {
                    int mz = z, my = y, mx = x;
                    if (axis == 0) mz = dims[0] - 1 - z;
                    if (axis == 1) my = dims[1] - 1 - y;
                    if (axis == 2) mx = dims[2] - 1 - x;
                    flipped[g.index(mz, my, mx)] = g.at(z, y, x);
                }
        std::copy(flipped.begin(), flipped.end(), data.begin() + c * n);
    }
}

void flip_volume(Volume& v, int axis)
{
    std::vector<float> data = v.data;
    flip_channels(data, 1, v.dims, axis);
    v.data = std::move(data);
}

void check_prediction(const ProbabilityMaps& p, const Dims& dims)
{
    if (p.dims != dims || p.det.size() != static_cast<std::size_t>(p.det_classes) * voxel_count(dims) ||
        p.diag.size() != static_cast<std::size_t>(p.diag_classes) * voxel_count(dims))
        throw DataError("predictor returned maps that do not match the window");
}

struct DoubleMaps {
    std::vector<double> det;
    std::vector<double> diag;
};

// Mean over all 8 flip combinations (or the single plain prediction).
DoubleMaps predict_window(const PatchPredictor& predictor, const Volume& window, bool tta, int& det_classes,
                          int& diag_classes)
{
    DoubleMaps out;
    const int combos = tta ? 8 : 1;
    for (int mask = 0; mask < combos; ++mask) {
        Volume input = window;
        for (int axis = 0; axis < 3; ++axis)
            if (mask & (1 << axis)) flip_volume(input, axis);
        ProbabilityMaps p = predictor(input);
        check_prediction(p, window.dims);
        if (det_classes < 0) {
            det_classes = p.det_classes;
            diag_classes = p.diag_classes;
        } else if (det_classes != p.det_classes || diag_classes != p.diag_classes) {
            throw DataError("predictor changed its class count between windows");
        }
        for (int axis = 0; axis < 3; ++axis)
            if (mask & (1 << axis)) {
                flip_channels(p.det, p.det_classes, p.dims, axis);
                flip_channels(p.diag, p.diag_classes, p.dims, axis);
            }
        if (out.det.empty()) {
            out.det.assign(p.det.size(), 0.0);
            out.diag.assign(p.diag.size(), 0.0);
        }
        for (std::size_t i = 0; i < p.det.size(); ++i) out.det[i] += p.det[i];
        for (std::size_t i = 0; i < p.diag.size(); ++i) out.diag[i] += p.diag[i];
    }
    for (auto& v : out.det) v /= combos;
    for (auto& v : out.diag) v /= combos;
    return out;
}

} // namespace

Volume reflect_pad(const Volume& volume, const Dims& min_dims, Dims* offset)
{
    Dims dims = volume.dims;
    Dims lead{0, 0, 0};
    for (int a = 0; a < 3; ++a) {
        if (volume.dims[a] < 1) throw DataError("reflect_pad: empty volume");
        if (dims[a] < min_dims[a]) {
            lead[a] = (min_dims[a] - dims[a]) / 2;
            dims[a] = min_dims[a];
        }
    }
    if (offset) *offset = lead;
    if (dims == volume.dims) return volume;
    Volume out(dims, volume.spacing);
    for (int z = 0; z < dims[0]; ++z)
        for (int y = 0; y < dims[1]; ++y)
            for (int x = 0; x < dims[2]; ++x)
                out.at(z, y, x) = volume.at(reflect_index(z - lead[0], volume.dims[0]),
                                            reflect_index(y - lead[1], volume.dims[1]),
                                            reflect_index(x - lead[2], volume.dims[2]));
    return out;
}

ProbabilityMaps sliding_window_predict(const PatchPredictor& predictor, const Volume& volume,
                                       const InferenceOptions& options)
{
    for (int a = 0; a < 3; ++a)
        if (options.window[a] < 1) throw UsageError("window dims must be positive");
    Dims lead;
    const Volume padded = reflect_pad(volume, options.window, &lead);
    const Dims& pd = padded.dims;
    const auto zs = window_starts(pd[0], options.window[0], options.step_fraction);
    const auto ys = window_starts(pd[1], options.window[1], options.step_fraction);
    const auto xs = window_starts(pd[2], options.window[2], options.step_fraction);
    const Grid3<double> weight = options.gaussian ? gaussian_weight(options.window, options.sigma_fraction)
                                                  : Grid3<double>(options.window, {1, 1, 1}, 1.0);

    const std::int64_t n_pad = voxel_count(pd);
    const std::int64_t n_win = voxel_count(options.window);
    int det_classes = -1, diag_classes = -1;
    std::vector<double> acc_det, acc_diag, wsum(n_pad, 0.0);
    for (int z0 : zs)
        for (int y0 : ys)
            for (int x0 : xs) {
                Volume window(options.window, padded.spacing);
                for (int z = 0; z < options.window[0]; ++z)
                    for (int y = 0; y < options.window[1]; ++y)
                        std::copy_n(&padded.data[padded.index(z0 + z, y0 + y, x0)], options.window[2],
                                    &window.data[window.index(z, y, 0)]);
                const DoubleMaps p = predict_window(predictor, window, options.tta, det_classes, diag_classes);
                if (acc_det.empty()) {
                    acc_det.assign(static_cast<std::size_t>(det_classes) * n_pad, 0.0);
                    acc_diag.assign(static_cast<std::size_t>(diag_classes) * n_pad, 0.0);
                }
                for (int z = 0; z < options.window[0]; ++z)
                    for (int y = 0; y < options.window[1]; ++y)
                        for (int x = 0; x < options.window[2]; ++x) {
                            const std::int64_t wi = weight.index(z, y, x);
                            const std::int64_t gi = padded.index(z0 + z, y0 + y, x0 + x);
                            const double w = weight.data[wi];
                            wsum[gi] += w;
                            for (int c = 0; c < det_classes; ++c) acc_det[c * n_pad + gi] += w * p.det[c * n_win + wi];
                            for (int c = 0; c < diag_classes; ++c)
                                acc_diag[c * n_pad + gi] += w * p.diag[c * n_win + wi];
                        }
            }

    ProbabilityMaps out;
    out.dims = volume.dims;
    out.det_classes = det_classes;
    out.diag_classes = diag_classes;
    const std::int64_t n = voxel_count(volume.dims);
    out.det.resize(static_cast<std::size_t>(det_classes) * n);
    out.diag.resize(static_cast<std::size_t>(diag_classes) * n);
    for (int z = 0; z < volume.dims[0]; ++z)
        for (int y = 0; y < volume.dims[1]; ++y)
            for (int x = 0; x < volume.dims[2]; ++x) {
                const std::int64_t gi = padded.index(z + lead[0], y + lead[1], x + lead[2]);
                const std::int64_t oi = volume.index(z, y, x);
                for (int c = 0; c < det_classes; ++c)
                    out.det[c * n + oi] = static_cast<float>(acc_det[c * n_pad + gi] / wsum[gi]);
                for (int c = 0; c < diag_classes; ++c)
                    out.diag[c * n + oi] = static_cast<float>(acc_diag[c * n_pad + gi] / wsum[gi]);
            }
    return out;
}

LabelMap argmax_labels(const ProbabilityMaps& probs, LabelSpace space, const Spacing& spacing)
{
    const bool det = space == LabelSpace::Detection;
    const int classes = det ? probs.det_classes : probs.diag_classes;
    const auto& data = det ? probs.det : probs.diag;
    if (classes > 256) throw UsageError("argmax: too many classes for a label map");
    LabelMap out(probs.dims, spacing, space);
    const std::int64_t n = voxel_count(probs.dims);
    for (std::int64_t i = 0; i < n; ++i) {
        int best = 0;
        for (int c = 1; c < classes; ++c)
            if (data[c * n + i] > data[best * n + i]) best = c;
        out.data[i] = static_cast<std::uint8_t>(best);
    }
    return out;
}

int default_min_voxels(const Spacing& spacing)
{
    const double paper = kPaperSpacing[0] * kPaperSpacing[1] * kPaperSpacing[2];
    const double actual = spacing[0] * spacing[1] * spacing[2];
    return static_cast<int>(std::lround(200.0 * paper / actual));
}

std::vector<LesionInstance> extract_instances(const LabelMap& labels, const Taxonomy& taxonomy, int min_voxels,
                                              int connectivity)
{
    std::vector<LesionInstance> out;
    Grid3<std::uint8_t> mask(labels.dims, labels.spacing, 0);
    for (ClassId cls : taxonomy.tumor_ids(labels.space)) {
        bool any = false;
        for (std::int64_t i = 0; i < labels.size(); ++i) {
            mask.data[i] = labels.data[i] == cls ? 1 : 0;
            any = any || mask.data[i];
        }
        if (!any) continue;
        const Components comps = connected_components(mask, connectivity);
        std::vector<LesionInstance> found(comps.count);
        for (int k = 0; k < comps.count; ++k) {
            found[k].class_id = cls;
            found[k].space = labels.space;
            found[k].voxels.reserve(comps.sizes[k]);
            found[k].bbox_min = labels.dims;
            found[k].bbox_max = {-1, -1, -1};
        }
        for (int z = 0; z < labels.dims[0]; ++z)
            for (int y = 0; y < labels.dims[1]; ++y)
                for (int x = 0; x < labels.dims[2]; ++x) {
                    const int k = comps.labels.at(z, y, x);
                    if (k == 0 || comps.sizes[k - 1] < min_voxels) continue;
                    auto& inst = found[k - 1];
                    inst.voxels.push_back(labels.index(z, y, x));
                    const Dims p{z, y, x};
                    for (int a = 0; a < 3; ++a) {
                        inst.bbox_min[a] = std::min(inst.bbox_min[a], p[a]);
                        inst.bbox_max[a] = std::max(inst.bbox_max[a], p[a]);
                    }
                }
        for (auto& inst : found) {
            if (inst.voxels.empty()) continue;
            inst.voxel_count = static_cast<std::int64_t>(inst.voxels.size());
            inst.volume_mm3 = inst.voxel_count * labels.voxel_volume();
            out.push_back(std::move(inst));
        }
    }
    return out;
}

std::vector<std::optional<ClassId>> patient_diagnosis(const std::vector<LesionInstance>& instances,
                                                      const Taxonomy& taxonomy)
{
    std::vector<std::optional<ClassId>> out(taxonomy.num_majors());
    std::vector<std::int64_t> best_count(taxonomy.num_majors(), -1);
    for (const auto& inst : instances) {
        if (inst.space != LabelSpace::Diagnosis) throw UsageError("patient_diagnosis expects diagnosis-space instances");
        const int g = taxonomy.group_of_subtype(inst.class_id);
        if (g < 0) continue;
        const bool better = inst.voxel_count > best_count[g] ||
                            (inst.voxel_count == best_count[g] && inst.class_id < *out[g]);
        if (better) {
            best_count[g] = inst.voxel_count;
            out[g] = inst.class_id;
        }
    }
    return out;
}

json run_length_encode(const std::vector<std::int64_t>& voxels)
{
    json runs = json::array();
    std::size_t i = 0;
    while (i < voxels.size()) {
        std::size_t j = i + 1;
        while (j < voxels.size() && voxels[j] == voxels[j - 1] + 1) ++j;
        runs.push_back({voxels[i], static_cast<std::int64_t>(j - i)});
        i = j;
    }
    return runs;
}

json to_json(const LesionInstance& inst, const Taxonomy& taxonomy)
{
    return json{{"class_id", inst.class_id},
                {"class", taxonomy.class_name(inst.space, inst.class_id)},
                {"space", to_string(inst.space)},
                {"voxel_count", inst.voxel_count},
                {"volume_mm3", inst.volume_mm3},
                {"bbox_min", inst.bbox_min},
                {"bbox_max", inst.bbox_max},
                {"runs", run_length_encode(inst.voxels)}};
}

PredictionFiles prediction_paths(const std::filesystem::path& dir, const std::string& case_id)
{
    return {dir / (case_id + "_det.hmc"), dir / (case_id + "_diag.hmc"), dir / (case_id + "_instances.json")};
}

PredictionFiles save_prediction(const std::filesystem::path& dir, const std::string& case_id,
                                const LabelMap& detection, const LabelMap& diagnosis, const Taxonomy& taxonomy,
                                int min_voxels, int connectivity)
{
    const auto files = prediction_paths(dir, case_id);
    save_labelmap(files.detection, detection, taxonomy.hash());
    save_labelmap(files.diagnosis, diagnosis, taxonomy.hash());
    json doc{{"case", case_id}, {"min_voxels", min_voxels}, {"connectivity", connectivity}};
    json det = json::array(), diag = json::array();
    for (const auto& inst : extract_instances(detection, taxonomy, min_voxels, connectivity))
        det.push_back(to_json(inst, taxonomy));
    const auto diag_instances = extract_instances(diagnosis, taxonomy, min_voxels, connectivity);
    for (const auto& inst : diag_instances) diag.push_back(to_json(inst, taxonomy));
    json diagnosis_doc = json::object();
    const auto calls = patient_diagnosis(diag_instances, taxonomy);
    for (int g = 0; g < taxonomy.num_majors(); ++g)
        diagnosis_doc[taxonomy.majors()[g]] =
            calls[g] ? json(taxonomy.class_name(LabelSpace::Diagnosis, *calls[g])) : json(nullptr);
    doc["detection_instances"] = det;
    doc["diagnosis_instances"] = diag;
    doc["patient_diagnosis"] = diagnosis_doc;
    std::ofstream out(files.instances, std::ios::trunc);
    if (!out) throw DataError("cannot write '" + files.instances.string() + "'");
    out << doc.dump(2) << "\n";
    return files;
}

} // namespace hiermask
