#include "hiermask/pipeline.hpp"

#include "hiermask/case_io.hpp"
#include "hiermask/error.hpp"
#include "hiermask/json_util.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace hiermask {

using nlohmann::json;

json to_json(const InferenceOptions& o)
{
    return {{"window", o.window},
            {"step_fraction", o.step_fraction},
            {"gaussian", o.gaussian},
            {"sigma_fraction", o.sigma_fraction},
            {"tta", o.tta}};
}

InferenceOptions inference_options_from_json(const json& doc, InferenceOptions o)
{
    reject_unknown_keys(doc, {"window", "step_fraction", "gaussian", "sigma_fraction", "tta"}, "inference options");
    try {
        read_optional(doc, "window", o.window, "inference options");
        read_optional(doc, "step_fraction", o.step_fraction, "inference options");
        read_optional(doc, "gaussian", o.gaussian, "inference options");
        read_optional(doc, "sigma_fraction", o.sigma_fraction, "inference options");
        read_optional(doc, "tta", o.tta, "inference options");
    } catch (const json::exception& e) {
        throw UsageError(std::string("inference options: ") + e.what());
    }
    return o;
}

json to_json(const PredictionIndex& p)
{
    return {{"checkpoint_hash", p.checkpoint_hash},
            {"manifest_hash", p.manifest_hash},
            {"split", p.split},
            {"cases", p.cases},
            {"min_voxels", p.min_voxels},
            {"connectivity", p.connectivity},
            {"config", p.config}};
}

PredictionIndex load_prediction_index(const std::filesystem::path& dir)
{
    const auto path = dir / PredictionIndex::kFileName;
    std::ifstream in(path);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    try {
        const json doc = json::parse(in);
        PredictionIndex p;
        p.checkpoint_hash = doc.at("checkpoint_hash");
        p.manifest_hash = doc.at("manifest_hash");
        p.split = doc.at("split");
        p.cases = doc.at("cases").get<std::vector<std::string>>();
        p.min_voxels = doc.at("min_voxels");
        p.connectivity = doc.at("connectivity");
        p.config = doc.at("config");
        return p;
    } catch (const json::exception& e) {
        throw DataError("'" + path.string() + "': " + e.what());
    }
}

PredictionIndex run_inference(const Manifest& manifest, const LoadedCheckpoint& checkpoint, const InferRequest& request,
                              const std::filesystem::path& out_dir)
{
    const Taxonomy& tax = checkpoint.model.taxonomy();
    if (tax.hash() != manifest.taxonomy_hash) throw DataError("checkpoint and manifest use different taxonomies");
    if (request.connectivity != 6 && request.connectivity != 26) throw UsageError("connectivity must be 6 or 26");
    const auto records = manifest.split(request.split);
    if (records.empty()) throw DataError("manifest has no '" + request.split + "' cases");

    InferenceOptions options = request.options;
    json train_config = checkpoint.metadata.value("train_config", json::object());
    if (request.window) {
        options.window = *request.window;
    } else if (train_config.contains("patch")) {
        options.window = train_config.at("patch").get<Dims>();
    }

    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw DataError("cannot create '" + out_dir.string() + "': " + ec.message());

    // inference never mutates the model; the predictor API takes it by reference
    Model<float> model = checkpoint.model;
    const PatchPredictor predictor = model_predictor(model);

    PredictionIndex index;
    index.checkpoint_hash = checkpoint.hash;
    index.manifest_hash = manifest.hash();
    index.split = request.split;
    index.connectivity = request.connectivity;
    index.min_voxels = -1;
    for (const CaseRecord* r : records) {
        const Case c = load_manifest_case(manifest, *r);
        const int min_voxels = request.min_voxels.value_or(default_min_voxels(c.volume.spacing));
        if (index.min_voxels >= 0 && index.min_voxels != min_voxels)
            throw DataError("cases in split '" + request.split + "' differ in spacing; pass an explicit min_voxels");
        index.min_voxels = min_voxels;
        const auto probs = sliding_window_predict(predictor, normalize_intensity(c.volume), options);
        save_prediction(out_dir, r->id, argmax_labels(probs, LabelSpace::Detection, c.volume.spacing),
                        argmax_labels(probs, LabelSpace::Diagnosis, c.volume.spacing), tax, min_voxels,
                        request.connectivity);
        index.cases.push_back(r->id);
    }
    index.config = {{"inference", to_json(options)}, {"train_config", train_config}};

    std::ofstream out(out_dir / PredictionIndex::kFileName, std::ios::trunc);
    if (!out) throw DataError("cannot write predictions index in '" + out_dir.string() + "'");
    out << to_json(index).dump(2) << "\n";
    return index;
}

std::vector<std::vector<std::optional<ClassId>>> manifest_subtypes(const Manifest& manifest, const std::string& split)
{
    const Taxonomy tax = manifest.bound_taxonomy();
    std::vector<std::vector<std::optional<ClassId>>> out;
    for (const CaseRecord* r : manifest.split(split)) {
        std::vector<std::optional<ClassId>> calls(tax.num_majors());
        for (ClassId id : r->tumor_ids) {
            const int g = tax.group_of_subtype(id);
            if (g >= 0) calls[g] = id;
        }
        out.push_back(std::move(calls));
    }
    return out;
}

EvalReport run_evaluation(const Manifest& manifest, const std::filesystem::path& pred_dir, const EvalRequest& request)
{
    const PredictionIndex index = load_prediction_index(pred_dir);
    if (index.manifest_hash != manifest.hash())
        throw DataError("predictions were made from manifest " + index.manifest_hash + ", not " + manifest.hash());
    const Taxonomy tax = manifest.bound_taxonomy();
    const int min_voxels = request.min_voxels.value_or(index.min_voxels);
    const int connectivity = request.connectivity.value_or(index.connectivity);
    if (connectivity != 6 && connectivity != 26) throw UsageError("connectivity must be 6 or 26");
    if (min_voxels < 0) throw UsageError("min_voxels must be >= 0");

    std::vector<EvalCaseData> cases;
    for (const auto& id : index.cases) {
        const CaseRecord& r = manifest.find(id);
        const auto files = prediction_paths(pred_dir, id);
        EvalCaseData c;
        c.id = id;
        c.truth = load_labelmap(manifest.root / r.labels_path);
        c.pred_det = load_labelmap(files.detection);
        c.pred_diag = load_labelmap(files.diagnosis);
        if (c.pred_det.space != LabelSpace::Detection || c.pred_diag.space != LabelSpace::Diagnosis)
            throw DataError("prediction maps for '" + id + "' carry the wrong label space");
        validate_labels(c.pred_det, tax);
        validate_labels(c.pred_diag, tax);
        cases.push_back(std::move(c));
    }
    EvalMetadata md;
    md.checkpoint_hash = index.checkpoint_hash;
    md.manifest_hash = index.manifest_hash;
    md.split = index.split;
    md.config = index.config;
    md.config["baseline_split"] = request.baseline_split;
    return evaluate(cases, tax, min_voxels, connectivity, manifest_subtypes(manifest, request.baseline_split), md);
}

namespace {

std::string pct(const std::optional<double>& v)
{
    if (!v) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * *v);
    return buf;
}

std::string fixed3(const std::optional<double>& v)
{
    if (!v) return "n/a";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", *v);
    return buf;
}

json nullable(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

} // namespace

json ablation_table(const std::vector<AblationRow>& rows, const json& config)
{
    json out_rows = json::array();
    for (const auto& r : rows) {
        out_rows.push_back({{"mode", to_string(r.mode)},
                            {"Sensitivity", nullable(r.report.patient.mean_sensitivity)},
                            {"Specificity", nullable(r.report.patient.specificity)},
                            {"Dice", nullable(r.report.dice_organ.mean)},
                            {"checkpoint_hash", r.report.metadata.checkpoint_hash}});
    }
    return {{"columns", {"Sensitivity", "Specificity", "Dice"}}, {"rows", out_rows}, {"config", config}};
}

std::string ablation_markdown(const std::vector<AblationRow>& rows)
{
    std::ostringstream os;
    os << "| Mode | Sensitivity (%) | Specificity (%) | Dice |\n";
    os << "|---|---|---|---|\n";
    for (const auto& r : rows)
        os << "| " << to_string(r.mode) << " | " << pct(r.report.patient.mean_sensitivity) << " | "
           << pct(r.report.patient.specificity) << " | " << fixed3(r.report.dice_organ.mean) << " |\n";
    return os.str();
}

std::vector<AblationRow> run_ablation(const Manifest& manifest, const TrainConfig& base,
                                      const std::vector<RepresentationMode>& modes, const InferRequest& infer,
                                      const std::filesystem::path& out_dir, const StepCallback& on_step)
{
    if (modes.empty()) throw UsageError("ablation needs at least one mode");
    std::vector<AblationRow> rows;
    for (RepresentationMode mode : modes) {
        TrainConfig config = base;
        config.model.mode = mode;
        const auto dir = out_dir / to_string(mode);
        const TrainOutputs trained = train(manifest, config, dir, on_step);
        const LoadedCheckpoint ckpt = load_checkpoint(trained.checkpoint);
        run_inference(manifest, ckpt, infer, dir / "predictions");
        EvalRequest er;
        er.baseline_split = base.split;
        EvalReport report = run_evaluation(manifest, dir / "predictions", er);
        save_report(dir / "report.json", report);
        rows.push_back({mode, std::move(report)});
    }
    json modes_json = json::array();
    for (auto m : modes) modes_json.push_back(to_string(m));
    const json config{{"train_config", to_json(base)},
                      {"modes", modes_json},
                      {"inference", to_json(infer.options)},
                      {"split", infer.split},
                      {"manifest_hash", manifest.hash()}};
    std::ofstream(out_dir / "ablation.json", std::ios::trunc) << ablation_table(rows, config).dump(2) << "\n";
    std::ofstream(out_dir / "ablation.md", std::ios::trunc) << ablation_markdown(rows);
    return rows;
}

} // namespace hiermask
