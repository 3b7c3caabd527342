#include "hiermask/taxonomy.hpp"

#include "hiermask/error.hpp"
#include "hiermask/hash.hpp"

#include <json.hpp>

#include <set>

namespace hiermask {

using nlohmann::json;

std::string to_string(LabelSpace space)
{
    return space == LabelSpace::Detection ? "detection" : "diagnosis";
}

LabelSpace label_space_from_string(const std::string& name)
{
    if (name == "detection") return LabelSpace::Detection;
    if (name == "diagnosis") return LabelSpace::Diagnosis;
    throw UsageError("unknown label space '" + name + "'");
}

TaxonomyConfig paper_taxonomy_config()
{
    TaxonomyConfig c;
    c.organs = {"breast", "lung", "kidney", "pancreas", "esophagus", "liver", "stomach", "colorectum"};
    c.tumors = {
        {"pancreas tumor", "pancreas", {"PDAC", "nonPDAC"}},
        {"liver tumor", "liver", {"HCC", "ICC", "metastasis", "hemangioma"}},
        {"stomach tumor", "stomach", {"GC", "nonGC"}},
        {"esophagus tumor", "esophagus", {"EC", "nonEC"}},
        {"lung cancer", "lung", {}},
        {"breast cancer", "breast", {}},
        {"colorectal cancer", "colorectum", {}},
        {"kidney tumor/cyst", "kidney", {}},
    };
    return c;
}

TaxonomyConfig toy_taxonomy_config()
{
    TaxonomyConfig c;
    c.organs = {"liver", "kidney"};
    c.tumors = {
        {"liver tumor", "liver", {"HCC", "ICC"}},
        {"kidney tumor", "kidney", {}},
    };
    return c;
}

Taxonomy Taxonomy::build(const TaxonomyConfig& config)
{
    Taxonomy t;
    t.config_ = config;

    std::set<std::string> names;
    auto claim = [&](const std::string& name) {
        if (name.empty()) throw UsageError("taxonomy: empty class name");
        if (name == "background") throw UsageError("taxonomy: 'background' is reserved");
        if (!names.insert(name).second) throw UsageError("taxonomy: duplicate class name '" + name + "'");
    };
    if (config.organs.empty()) throw UsageError("taxonomy: at least one organ is required");
    for (const auto& o : config.organs) claim(o);

    std::map<std::string, int> organ_index;
    for (int i = 0; i < static_cast<int>(config.organs.size()); ++i) organ_index[config.organs[i]] = i;

    std::vector<std::string> shared_tumors;
    std::vector<int> shared_tumor_host;
    std::vector<int> major_host;
    for (const auto& tumor : config.tumors) {
        claim(tumor.name);
        auto host = organ_index.find(tumor.organ);
        if (host == organ_index.end())
            throw UsageError("taxonomy: tumor '" + tumor.name + "' references unknown organ '" + tumor.organ + "'");
        if (tumor.subtypes.size() == 1)
            throw UsageError("taxonomy: '" + tumor.name + "' declares a single subtype; declare it as a shared tumor");
        if (tumor.subtypes.empty()) {
            shared_tumors.push_back(tumor.name);
            shared_tumor_host.push_back(host->second);
            t.tumors_flat_.push_back(tumor.name);
            continue;
        }
        t.majors_.push_back(tumor.name);
        major_host.push_back(host->second);
        t.subtype_groups_.push_back(tumor.subtypes);
        for (const auto& s : tumor.subtypes) {
            claim(s);
            t.flat_subtypes_.push_back(s);
            t.tumors_flat_.push_back(s);
            t.merge_map_[s] = tumor.name;
        }
    }
    t.shared_ = config.organs;
    t.shared_.insert(t.shared_.end(), shared_tumors.begin(), shared_tumors.end());
    if (t.diagnosis_size() > 255) throw UsageError("taxonomy: more than 255 classes");

    const int n_organs = static_cast<int>(config.organs.size());
    auto push_shared = [&](std::vector<std::string>& names_out, std::vector<int>& host, std::vector<bool>& tumor) {
        for (int i = 0; i < n_organs; ++i) {
            names_out.push_back(config.organs[i]);
            host.push_back(i);
            tumor.push_back(false);
        }
        for (std::size_t i = 0; i < shared_tumors.size(); ++i) {
            names_out.push_back(shared_tumors[i]);
            host.push_back(shared_tumor_host[i]);
            tumor.push_back(true);
        }
    };

    t.detection_names_ = {"background"};
    t.detection_host_ = {-1};
    t.detection_tumor_ = {false};
    for (int g = 0; g < t.num_majors(); ++g) {
        t.detection_names_.push_back(t.majors_[g]);
        t.detection_host_.push_back(major_host[g]);
        t.detection_tumor_.push_back(true);
    }
    push_shared(t.detection_names_, t.detection_host_, t.detection_tumor_);

    t.diagnosis_names_ = {"background"};
    t.diagnosis_host_ = {-1};
    t.diagnosis_tumor_ = {false};
    t.subtype_group_ = {-1};
    t.merge_table_ = {kBackground};
    for (int g = 0; g < t.num_majors(); ++g) {
        for (const auto& s : t.subtype_groups_[g]) {
            t.diagnosis_names_.push_back(s);
            t.diagnosis_host_.push_back(major_host[g]);
            t.diagnosis_tumor_.push_back(true);
            t.subtype_group_.push_back(g);
            t.merge_table_.push_back(t.major_id(g));
        }
    }
    push_shared(t.diagnosis_names_, t.diagnosis_host_, t.diagnosis_tumor_);
    for (int i = 0; i < t.num_shared(); ++i) {
        t.subtype_group_.push_back(-1);
        t.merge_table_.push_back(1 + t.num_majors() + i);
    }

    t.organ_group_.assign(n_organs, -1);
    for (int g = 0; g < t.num_majors(); ++g) t.organ_group_[major_host[g]] = g;
    return t;
}

int Taxonomy::space_size(LabelSpace space) const
{
    return space == LabelSpace::Detection ? detection_size() : diagnosis_size();
}

ClassId Taxonomy::subtype_to_major(ClassId diagnosis_id) const
{
    if (diagnosis_id < 0 || diagnosis_id >= diagnosis_size())
        throw UsageError("subtype_to_major: label " + std::to_string(diagnosis_id) + " out of range");
    return merge_table_[diagnosis_id];
}

const std::string& Taxonomy::class_name(LabelSpace space, ClassId id) const
{
    const auto& names = space == LabelSpace::Detection ? detection_names_ : diagnosis_names_;
    if (id < 0 || id >= static_cast<int>(names.size()))
        throw UsageError("class id " + std::to_string(id) + " out of range");
    return names[id];
}

ClassId Taxonomy::class_id(LabelSpace space, const std::string& name) const
{
    const auto& names = space == LabelSpace::Detection ? detection_names_ : diagnosis_names_;
    for (std::size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<ClassId>(i);
    throw UsageError("no class named '" + name + "' in the " + to_string(space) + " space");
}

bool Taxonomy::is_tumor(LabelSpace space, ClassId id) const
{
    const auto& v = space == LabelSpace::Detection ? detection_tumor_ : diagnosis_tumor_;
    return id >= 0 && id < static_cast<int>(v.size()) && v[id];
}

bool Taxonomy::is_organ(LabelSpace space, ClassId id) const
{
    return id > 0 && id < space_size(space) && !is_tumor(space, id);
}

std::optional<int> Taxonomy::host_organ(LabelSpace space, ClassId id) const
{
    const auto& v = space == LabelSpace::Detection ? detection_host_ : diagnosis_host_;
    if (id < 0 || id >= static_cast<int>(v.size()) || v[id] < 0) return std::nullopt;
    return v[id];
}

std::vector<ClassId> Taxonomy::subtype_ids(int group) const
{
    std::vector<ClassId> out;
    for (ClassId id = 1; id <= num_subtypes(); ++id)
        if (subtype_group_[id] == group) out.push_back(id);
    return out;
}

int Taxonomy::group_of_subtype(ClassId diagnosis_id) const
{
    if (diagnosis_id < 0 || diagnosis_id >= diagnosis_size()) return -1;
    return subtype_group_[diagnosis_id];
}

int Taxonomy::group_of_organ(int organ) const
{
    if (organ < 0 || organ >= static_cast<int>(organ_group_.size())) return -1;
    return organ_group_[organ];
}

std::vector<ClassId> Taxonomy::tumor_ids(LabelSpace space) const
{
    std::vector<ClassId> out;
    for (ClassId id = 0; id < space_size(space); ++id)
        if (is_tumor(space, id)) out.push_back(id);
    return out;
}

std::string Taxonomy::serialize() const
{
    json doc;
    doc["format"] = "hiermask-taxonomy";
    doc["version"] = 1;
    doc["organs"] = config_.organs;
    json tumors = json::array();
    for (const auto& t : config_.tumors)
        tumors.push_back({{"name", t.name}, {"organ", t.organ}, {"subtypes", t.subtypes}});
    doc["tumors"] = tumors;
    doc["shared"] = shared_;
    doc["majors"] = majors_;
    doc["subtype_groups"] = subtype_groups_;
    doc["merge_map"] = merge_map_;
    doc["detection_space"] = detection_names_;
    doc["diagnosis_space"] = diagnosis_names_;
    return doc.dump(2) + "\n";
}

std::string Taxonomy::hash() const { return sha256_hex(serialize()); }

Taxonomy Taxonomy::parse(const std::string& text)
{
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw UsageError(std::string("taxonomy: ") + e.what());
    }
    TaxonomyConfig config;
    try {
        config.organs = doc.at("organs").get<std::vector<std::string>>();
        for (const auto& t : doc.at("tumors")) {
            TumorDecl decl;
            decl.name = t.at("name").get<std::string>();
            decl.organ = t.at("organ").get<std::string>();
            if (t.contains("subtypes")) decl.subtypes = t.at("subtypes").get<std::vector<std::string>>();
            config.tumors.push_back(std::move(decl));
        }
    } catch (const json::exception& e) {
        throw UsageError(std::string("taxonomy: ") + e.what());
    }
    return build(config);
}

} // namespace hiermask
