#include "hiermask/evalmetrics.hpp"

#include "hiermask/components.hpp"
#include "hiermask/error.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace hiermask {

using nlohmann::json;

namespace {

std::optional<double> ratio(long num, long den)
{
    if (den == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(den);
}

std::optional<double> mean_of(const std::vector<std::optional<double>>& values)
{
    double sum = 0.0;
    int n = 0;
    for (const auto& v : values)
        if (v) {
            sum += *v;
            ++n;
        }
    if (n == 0) return std::nullopt;
    return sum / n;
}

void check_aligned(std::size_t a, std::size_t b, const char* what)
{
    if (a != b) throw DataError(std::string(what) + ": " + std::to_string(a) + " predictions for " + std::to_string(b) + " cases");
}

void check_dims(const LabelMap& p, const LabelMap& g)
{
    if (p.dims != g.dims) throw DataError("prediction and ground truth differ in shape");
}

// Organs hosting at least one tumor class, ascending organ index.
std::vector<int> tumor_organs(const Taxonomy& taxonomy)
{
    std::vector<int> out;
    for (ClassId c : taxonomy.tumor_ids(LabelSpace::Diagnosis)) {
        const int o = *taxonomy.host_organ(LabelSpace::Diagnosis, c);
        if (std::find(out.begin(), out.end(), o) == out.end()) out.push_back(o);
    }
    std::sort(out.begin(), out.end());
    return out;
}

// Per label value: host organ index of the tumor class, or -1.
std::vector<int> tumor_host_table(const Taxonomy& taxonomy, LabelSpace space)
{
    std::vector<int> table(256, -1);
    for (ClassId c : taxonomy.tumor_ids(space)) table[c] = *taxonomy.host_organ(space, c);
    return table;
}

Grid3<std::uint8_t> tumor_mask(const LabelMap& map, const Taxonomy& taxonomy)
{
    const auto host = tumor_host_table(taxonomy, map.space);
    Grid3<std::uint8_t> mask(map.dims, map.spacing, 0);
    for (std::int64_t i = 0; i < map.size(); ++i) mask.data[i] = host[map.data[i]] >= 0 ? 1 : 0;
    return mask;
}

} // namespace

PatientDetectionResult patient_detection_eval(const std::vector<std::vector<LesionInstance>>& predictions,
                                              const std::vector<LabelMap>& truth, const Taxonomy& taxonomy)
{
    check_aligned(predictions.size(), truth.size(), "patient detection");
    const auto organs = tumor_organs(taxonomy);
    PatientDetectionResult r;
    for (int o : organs) r.organs.push_back({taxonomy.organs()[o], 0, 0, std::nullopt});
    for (std::size_t k = 0; k < truth.size(); ++k) {
        const LabelMap& gt = truth[k];
        if (gt.space != LabelSpace::Diagnosis) throw UsageError("patient detection: ground truth must be diagnosis-space");
        const auto host = tumor_host_table(taxonomy, LabelSpace::Diagnosis);
        bool any_tumor = false;
        for (std::size_t j = 0; j < organs.size(); ++j) {
            const int o = organs[j];
            bool positive = false;
            for (auto v : gt.data)
                if (host[v] == o) {
                    positive = true;
                    break;
                }
            if (!positive) continue;
            any_tumor = true;
            ++r.organs[j].positives;
            bool hit = false;
            for (const auto& inst : predictions[k]) {
                if (inst.space != LabelSpace::Detection) throw UsageError("patient detection expects detection-space instances");
                if (taxonomy.host_organ(LabelSpace::Detection, inst.class_id) != o) continue;
                for (auto i : inst.voxels) {
                    if (i < 0 || i >= gt.size()) throw DataError("instance voxel outside the ground-truth grid");
                    if (host[gt.data[i]] == o) {
                        hit = true;
                        break;
                    }
                }
                if (hit) break;
            }
            if (hit) ++r.organs[j].detected;
        }
        if (!any_tumor) {
            ++r.normals;
            if (predictions[k].empty()) ++r.normals_clean;
        }
    }
    std::vector<std::optional<double>> sens;
    for (auto& o : r.organs) {
        o.sensitivity = ratio(o.detected, o.positives);
        sens.push_back(o.sensitivity);
    }
    r.mean_sensitivity = mean_of(sens);
    r.specificity = ratio(r.normals_clean, r.normals);
    return r;
}

LesionCounts lesion_detection_eval(const std::vector<LabelMap>& predictions, const std::vector<LabelMap>& truth,
                                   const Taxonomy& taxonomy, int min_voxels, int connectivity)
{
    check_aligned(predictions.size(), truth.size(), "lesion detection");
    LesionCounts r;
    for (std::size_t k = 0; k < truth.size(); ++k) {
        check_dims(predictions[k], truth[k]);
        const Components gt = connected_components(tumor_mask(truth[k], taxonomy), connectivity);
        const Components pred = connected_components(tumor_mask(predictions[k], taxonomy), connectivity);
        std::vector<bool> lesion_hit(gt.count, false);
        std::vector<bool> pred_hit(pred.count, false);
        for (std::int64_t i = 0; i < truth[k].size(); ++i) {
            const int p = pred.labels.data[i];
            const int g = gt.labels.data[i];
            if (p == 0 || g == 0 || pred.sizes[p - 1] < min_voxels) continue;
            pred_hit[p - 1] = true;
            lesion_hit[g - 1] = true;
        }
        for (int p = 0; p < pred.count; ++p) {
            if (pred.sizes[p] < min_voxels) continue;
            ++r.predicted;
            pred_hit[p] ? ++r.tp : ++r.fp;
        }
        r.gt_lesions += gt.count;
        r.fn += static_cast<int>(std::count(lesion_hit.begin(), lesion_hit.end(), false));
    }
    r.precision = ratio(r.tp, r.tp + r.fp);
    r.recall = ratio(r.gt_lesions - r.fn, r.gt_lesions);
    return r;
}

DiceResult dice_eval(const std::vector<LabelMap>& predictions, const std::vector<LabelMap>& truth,
                     const Taxonomy& taxonomy, DiceGrouping grouping)
{
    check_aligned(predictions.size(), truth.size(), "dice");
    // group of each label value in each space; -1 = not in any group
    std::vector<std::string> names;
    std::vector<int> pred_group(256, -1);
    std::vector<int> truth_group(256, -1);
    if (grouping == DiceGrouping::OrganMerged) {
        const auto organs = tumor_organs(taxonomy);
        for (int o : organs) names.push_back(taxonomy.organs()[o]);
        auto fill = [&](std::vector<int>& table, LabelSpace space) {
            for (ClassId c : taxonomy.tumor_ids(space)) {
                const int o = *taxonomy.host_organ(space, c);
                table[c] = static_cast<int>(std::find(organs.begin(), organs.end(), o) - organs.begin());
            }
        };
        fill(truth_group, LabelSpace::Diagnosis);
        if (!predictions.empty()) fill(pred_group, predictions.front().space);
    } else {
        const auto tumors = taxonomy.tumor_ids(LabelSpace::Diagnosis);
        for (std::size_t j = 0; j < tumors.size(); ++j) {
            names.push_back(taxonomy.class_name(LabelSpace::Diagnosis, tumors[j]));
            truth_group[tumors[j]] = static_cast<int>(j);
            pred_group[tumors[j]] = static_cast<int>(j);
        }
    }
    const int groups = static_cast<int>(names.size());
    std::vector<double> sum(groups, 0.0);
    DiceResult r;
    for (const auto& n : names) r.groups.push_back({n, 0, std::nullopt});
    for (std::size_t k = 0; k < truth.size(); ++k) {
        const LabelMap& p = predictions[k];
        const LabelMap& g = truth[k];
        check_dims(p, g);
        if (g.space != LabelSpace::Diagnosis) throw UsageError("dice: ground truth must be diagnosis-space");
        if (p.space != predictions.front().space) throw UsageError("dice: predictions mix label spaces");
        if (grouping == DiceGrouping::Subtype && p.space != LabelSpace::Diagnosis)
            throw UsageError("dice: subtype grouping needs diagnosis-space predictions");
        std::vector<std::int64_t> inter(groups, 0), psize(groups, 0), gsize(groups, 0);
        for (std::int64_t i = 0; i < g.size(); ++i) {
            const int pg = pred_group[p.data[i]];
            const int gg = truth_group[g.data[i]];
            if (pg >= 0) ++psize[pg];
            if (gg >= 0) ++gsize[gg];
            if (pg >= 0 && pg == gg) ++inter[pg];
        }
        for (int j = 0; j < groups; ++j) {
            if (gsize[j] == 0) continue;
            ++r.groups[j].cases;
            sum[j] += 2.0 * static_cast<double>(inter[j]) / static_cast<double>(psize[j] + gsize[j]);
        }
    }
    std::vector<std::optional<double>> means;
    for (int j = 0; j < groups; ++j) {
        if (r.groups[j].cases > 0) r.groups[j].mean = sum[j] / r.groups[j].cases;
        means.push_back(r.groups[j].mean);
    }
    r.mean = mean_of(means);
    return r;
}

std::vector<std::optional<ClassId>> truth_subtypes(const LabelMap& truth, const Taxonomy& taxonomy)
{
    std::vector<std::optional<ClassId>> out(taxonomy.num_majors());
    std::array<bool, 256> seen{};
    for (auto v : truth.data) seen[v] = true;
    for (int c = 0; c < 256; ++c) {
        if (!seen[c] || c >= taxonomy.diagnosis_size()) continue;
        const int g = taxonomy.group_of_subtype(c);
        if (g < 0) continue;
        if (out[g]) throw DataError("ground truth holds more than one subtype of '" + taxonomy.majors()[g] + "'");
        out[g] = c;
    }
    return out;
}

std::vector<std::optional<ClassId>> majority_subtypes(const std::vector<std::vector<std::optional<ClassId>>>& truth,
                                                      const Taxonomy& taxonomy)
{
    std::vector<std::optional<ClassId>> out(taxonomy.num_majors());
    for (int g = 0; g < taxonomy.num_majors(); ++g) {
        int best_count = 0;
        for (ClassId c : taxonomy.subtype_ids(g)) {
            int count = 0;
            for (const auto& t : truth)
                if (t.at(g) == c) ++count;
            if (count > best_count) {
                best_count = count;
                out[g] = c;
            }
        }
    }
    return out;
}

DiagnosisResult diagnosis_eval(const std::vector<std::vector<std::optional<ClassId>>>& predictions,
                               const std::vector<std::vector<std::optional<ClassId>>>& truth, const Taxonomy& taxonomy,
                               const std::vector<std::optional<ClassId>>& majority)
{
    check_aligned(predictions.size(), truth.size(), "diagnosis");
    const int m = taxonomy.num_majors();
    DiagnosisResult r;
    std::vector<ClassId> ids;
    for (int g = 0; g < m; ++g)
        for (ClassId c : taxonomy.subtype_ids(g)) {
            ids.push_back(c);
            r.subtypes.push_back({taxonomy.class_name(LabelSpace::Diagnosis, c), 0, 0, std::nullopt});
        }
    auto slot = [&](ClassId c) { return static_cast<std::size_t>(std::find(ids.begin(), ids.end(), c) - ids.begin()); };
    int baseline_hits = 0;
    for (std::size_t k = 0; k < truth.size(); ++k) {
        if (static_cast<int>(truth[k].size()) != m || static_cast<int>(predictions[k].size()) != m)
            throw DataError("diagnosis: per-case vectors must hold one entry per major group");
        for (int g = 0; g < m; ++g) {
            if (!truth[k][g]) continue;
            auto& s = r.subtypes.at(slot(*truth[k][g]));
            ++s.cases;
            ++r.cases;
            if (predictions[k][g] == truth[k][g]) {
                ++s.correct;
                ++r.correct;
            }
            if (!majority.empty() && majority.at(g) == truth[k][g]) ++baseline_hits;
        }
    }
    for (auto& s : r.subtypes) s.sensitivity = ratio(s.correct, s.cases);
    for (int g = 0; g < m; ++g) {
        std::vector<std::optional<double>> sens;
        for (ClassId c : taxonomy.subtype_ids(g)) sens.push_back(r.subtypes[slot(c)].sensitivity);
        const int organ = *taxonomy.host_organ(LabelSpace::Detection, taxonomy.major_id(g));
        r.organs.push_back({taxonomy.organs()[organ], mean_of(sens)});
    }
    r.accuracy = ratio(r.correct, r.cases);
    if (!majority.empty()) {
        for (int g = 0; g < m; ++g)
            r.majority.push_back(majority.at(g) ? taxonomy.class_name(LabelSpace::Diagnosis, *majority[g]) : "");
        r.majority_accuracy = ratio(baseline_hits, r.cases);
    }
    return r;
}

// ---- report serialization ---------------------------------------------------------

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> get_opt(const json& doc, const char* key)
{
    const auto& v = doc.at(key);
    if (v.is_null()) return std::nullopt;
    return v.get<double>();
}

json dice_json(const DiceResult& d)
{
    json groups = json::array();
    for (const auto& g : d.groups) groups.push_back({{"group", g.group}, {"cases", g.cases}, {"dice", opt(g.mean)}});
    return {{"groups", groups}, {"mean", opt(d.mean)}};
}

DiceResult dice_from(const json& doc)
{
    DiceResult d;
    for (const auto& g : doc.at("groups")) d.groups.push_back({g.at("group"), g.at("cases"), get_opt(g, "dice")});
    d.mean = get_opt(doc, "mean");
    return d;
}

} // namespace

json report_conventions()
{
    return {{"patient_detection", "any voxel overlap between a predicted detection-space instance hosted by the organ "
                                  "and ground-truth tumor of that organ"},
            {"specificity", "tumor-free case with zero predicted tumor instances of any class"},
            {"lesion_matching", "binarized tumor components; every overlapping prediction is a TP"},
            {"dice_averaging", "per-case Dice averaged over cases with the group in ground truth"},
            {"diagnosis_rule", "largest instance per major group; ties -> lower class id, then scan order"},
            {"null", "undefined ratio (zero denominator)"}};
}

json to_json(const EvalReport& r)
{
    json organs = json::array();
    for (const auto& o : r.patient.organs)
        organs.push_back({{"organ", o.organ}, {"positives", o.positives}, {"detected", o.detected}, {"sensitivity", opt(o.sensitivity)}});
    json subtypes = json::array();
    for (const auto& s : r.diagnosis.subtypes)
        subtypes.push_back({{"subtype", s.subtype}, {"cases", s.cases}, {"correct", s.correct}, {"sensitivity", opt(s.sensitivity)}});
    json diag_organs = json::array();
    for (const auto& o : r.diagnosis.organs) diag_organs.push_back({{"organ", o.organ}, {"mean_sensitivity", opt(o.mean_sensitivity)}});
    const auto& md = r.metadata;
    return json{
        {"metadata",
         {{"checkpoint_hash", md.checkpoint_hash},
          {"manifest_hash", md.manifest_hash},
          {"split", md.split},
          {"cases", md.cases},
          {"min_voxels", md.min_voxels},
          {"connectivity", md.connectivity},
          {"config", md.config},
          {"conventions", report_conventions()}}},
        {"patient_detection",
         {{"organs", organs},
          {"mean_sensitivity", opt(r.patient.mean_sensitivity)},
          {"normals", r.patient.normals},
          {"normals_clean", r.patient.normals_clean},
          {"specificity", opt(r.patient.specificity)}}},
        {"lesion_detection",
         {{"tp", r.lesion.tp},
          {"fp", r.lesion.fp},
          {"fn", r.lesion.fn},
          {"gt_lesions", r.lesion.gt_lesions},
          {"predicted", r.lesion.predicted},
          {"precision", opt(r.lesion.precision)},
          {"recall", opt(r.lesion.recall)}}},
        {"dice_organ", dice_json(r.dice_organ)},
        {"dice_subtype", dice_json(r.dice_subtype)},
        {"diagnosis",
         {{"subtypes", subtypes},
          {"organs", diag_organs},
          {"cases", r.diagnosis.cases},
          {"correct", r.diagnosis.correct},
          {"accuracy", opt(r.diagnosis.accuracy)},
          {"majority", r.diagnosis.majority},
          {"majority_accuracy", opt(r.diagnosis.majority_accuracy)}}}};
}

EvalReport eval_report_from_json(const json& doc)
{
    try {
        EvalReport r;
        const auto& md = doc.at("metadata");
        r.metadata.checkpoint_hash = md.at("checkpoint_hash").get<std::string>();
        r.metadata.manifest_hash = md.at("manifest_hash").get<std::string>();
        r.metadata.split = md.at("split").get<std::string>();
        r.metadata.cases = md.at("cases").get<std::vector<std::string>>();
        r.metadata.min_voxels = md.at("min_voxels").get<int>();
        r.metadata.connectivity = md.at("connectivity").get<int>();
        r.metadata.config = md.at("config");
        md.at("conventions");

        const auto& pd = doc.at("patient_detection");
        for (const auto& o : pd.at("organs"))
            r.patient.organs.push_back({o.at("organ"), o.at("positives"), o.at("detected"), get_opt(o, "sensitivity")});
        r.patient.mean_sensitivity = get_opt(pd, "mean_sensitivity");
        r.patient.normals = pd.at("normals");
        r.patient.normals_clean = pd.at("normals_clean");
        r.patient.specificity = get_opt(pd, "specificity");

        const auto& ld = doc.at("lesion_detection");
        r.lesion.tp = ld.at("tp");
        r.lesion.fp = ld.at("fp");
        r.lesion.fn = ld.at("fn");
        r.lesion.gt_lesions = ld.at("gt_lesions");
        r.lesion.predicted = ld.at("predicted");
        r.lesion.precision = get_opt(ld, "precision");
        r.lesion.recall = get_opt(ld, "recall");

        r.dice_organ = dice_from(doc.at("dice_organ"));
        r.dice_subtype = dice_from(doc.at("dice_subtype"));

        const auto& dg = doc.at("diagnosis");
        for (const auto& s : dg.at("subtypes"))
            r.diagnosis.subtypes.push_back({s.at("subtype"), s.at("cases"), s.at("correct"), get_opt(s, "sensitivity")});
        for (const auto& o : dg.at("organs")) r.diagnosis.organs.push_back({o.at("organ"), get_opt(o, "mean_sensitivity")});
        r.diagnosis.cases = dg.at("cases");
        r.diagnosis.correct = dg.at("correct");
        r.diagnosis.accuracy = get_opt(dg, "accuracy");
        r.diagnosis.majority = dg.at("majority").get<std::vector<std::string>>();
        r.diagnosis.majority_accuracy = get_opt(dg, "majority_accuracy");
        return r;
    } catch (const json::exception& e) {
        throw DataError(std::string("eval report: ") + e.what());
    }
}

std::string serialize(const EvalReport& report) { return to_json(report).dump(2) + "\n"; }

void save_report(const std::filesystem::path& path, const EvalReport& report)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << serialize(report);
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

EvalReport load_report(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    try {
        return eval_report_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw DataError("eval report '" + path.string() + "': " + e.what());
    }
}

EvalReport evaluate(const std::vector<EvalCaseData>& cases, const Taxonomy& taxonomy, int min_voxels, int connectivity,
                    const std::vector<std::vector<std::optional<ClassId>>>& train_truth, EvalMetadata metadata)
{
    std::vector<LabelMap> truth, det, diag;
    std::vector<std::vector<LesionInstance>> det_instances;
    std::vector<std::vector<std::optional<ClassId>>> calls, truth_calls;
    metadata.cases.clear();
    for (const auto& c : cases) {
        metadata.cases.push_back(c.id);
        truth.push_back(c.truth);
        det.push_back(c.pred_det);
        diag.push_back(c.pred_diag);
        det_instances.push_back(extract_instances(c.pred_det, taxonomy, min_voxels, connectivity));
        calls.push_back(patient_diagnosis(extract_instances(c.pred_diag, taxonomy, min_voxels, connectivity), taxonomy));
        truth_calls.push_back(truth_subtypes(c.truth, taxonomy));
    }
    metadata.min_voxels = min_voxels;
    metadata.connectivity = connectivity;
    EvalReport r;
    r.metadata = std::move(metadata);
    r.patient = patient_detection_eval(det_instances, truth, taxonomy);
    r.lesion = lesion_detection_eval(det, truth, taxonomy, min_voxels, connectivity);
    r.dice_organ = dice_eval(det, truth, taxonomy, DiceGrouping::OrganMerged);
    r.dice_subtype = dice_eval(diag, truth, taxonomy, DiceGrouping::Subtype);
    r.diagnosis = diagnosis_eval(calls, truth_calls, taxonomy,
                                 train_truth.empty() ? std::vector<std::optional<ClassId>>{} : majority_subtypes(train_truth, taxonomy));
    return r;
}

// ---- plots -------------------------------------------------------------------------

namespace {

std::string escape_xml(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

} // namespace

std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<std::optional<double>>& values)
{
    const int bar = 48, gap = 24, left = 50, top = 40, plot_h = 200;
    const int width = left + static_cast<int>(labels.size()) * (bar + gap) + gap;
    const int height = top + plot_h + 70;
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
       << escape_xml(title) << "</text>\n";
    for (int t = 0; t <= 4; ++t) {
        const double y = top + plot_h - plot_h * t / 4.0;
        os << "<line x1=\"" << left << "\" x2=\"" << width - gap / 2 << "\" y1=\"" << y << "\" y2=\"" << y
           << "\" stroke=\"#ddd\"/>\n";
        os << "<text x=\"" << left - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
           << "font-size=\"11\">" << fmt(t / 4.0) << "</text>\n";
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int x = left + gap + static_cast<int>(i) * (bar + gap);
        const double v = values[i] ? std::clamp(*values[i], 0.0, 1.0) : 0.0;
        const double h = plot_h * v;
        if (values[i]) {
            os << "<rect x=\"" << x << "\" y=\"" << top + plot_h - h << "\" width=\"" << bar << "\" height=\"" << h
               << "\" fill=\"#4a78b5\"/>\n";
            os << "<text x=\"" << x + bar / 2 << "\" y=\"" << top + plot_h - h - 4
               << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(*values[i]) << "</text>\n";
        }
        os << "<text x=\"" << x + bar / 2 << "\" y=\"" << top + plot_h + 16
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << escape_xml(labels[i]) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

std::vector<std::filesystem::path> write_report_plots(const std::filesystem::path& dir, const EvalReport& report)
{
    std::vector<std::filesystem::path> written;
    auto emit = [&](const std::string& name, const std::string& title, const std::vector<std::string>& labels,
                    const std::vector<std::optional<double>>& values) {
        const auto path = dir / name;
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw DataError("cannot write '" + path.string() + "'");
        out << svg_bar_chart(title, labels, values);
        written.push_back(path);
    };
    std::vector<std::string> labels;
    std::vector<std::optional<double>> values;
    for (const auto& o : report.patient.organs) {
        labels.push_back(o.organ);
        values.push_back(o.sensitivity);
    }
    labels.push_back("specificity");
    values.push_back(report.patient.specificity);
    emit("patient_detection.svg", "Patient-level sensitivity and specificity", labels, values);

    labels.clear();
    values.clear();
    for (const auto& g : report.dice_organ.groups) {
        labels.push_back(g.group);
        values.push_back(g.mean);
    }
    emit("dice_organ.svg", "Tumor Dice per organ", labels, values);

    labels.clear();
    values.clear();
    for (const auto& s : report.diagnosis.subtypes) {
        labels.push_back(s.subtype);
        values.push_back(s.sensitivity);
    }
    emit("diagnosis.svg", "Diagnosis sensitivity per subtype", labels, values);
    return written;
}

} // namespace hiermask
