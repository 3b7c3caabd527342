#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hiermask {

/// The two label spaces decoded by the model. Detection merges subtypes
/// into their major tumor class; diagnosis keeps subtypes apart.
enum class LabelSpace : std::uint8_t { Detection, Diagnosis };

std::string to_string(LabelSpace space);
LabelSpace label_space_from_string(const std::string& name);

using ClassId = int;
inline constexpr ClassId kBackground = 0;

struct TumorDecl {
    std::string name;
    std::string organ;
    std::vector<std::string> subtypes;  // empty: the tumor is a shared class
};

struct TaxonomyConfig {
    std::vector<std::string> organs;
    std::vector<TumorDecl> tumors;
};

/// Eight organs, four majors with subtypes and four shared cancers.
TaxonomyConfig paper_taxonomy_config();
/// Two organs (liver, kidney), one major with two subtypes, one shared tumor.
TaxonomyConfig toy_taxonomy_config();

/// Class hierarchy plus the label-space algebra used by every other module.
///
/// Detection ids:  0 background, 1..m majors, then shared classes.
/// Diagnosis ids:  0 background, 1..n flattened subtypes, then shared classes.
/// Shared classes are the organs followed by tumors without subtypes, each in
/// declaration order.
class Taxonomy {
public:
    /// Throws UsageError on duplicate names, single-subtype majors or tumors
    /// that reference an undeclared organ.
    static Taxonomy build(const TaxonomyConfig& config);
    static Taxonomy parse(const std::string& text);

    const TaxonomyConfig& config() const { return config_; }
    const std::vector<std::string>& organs() const { return config_.organs; }
    const std::vector<std::string>& tumors_flat() const { return tumors_flat_; }
    const std::vector<std::string>& shared() const { return shared_; }
    const std::vector<std::string>& majors() const { return majors_; }
    const std::vector<std::vector<std::string>>& subtype_groups() const { return subtype_groups_; }
    const std::map<std::string, std::string>& merge_map() const { return merge_map_; }

    int num_majors() const { return static_cast<int>(majors_.size()); }
    int num_subtypes() const { return static_cast<int>(flat_subtypes_.size()); }
    int num_shared() const { return static_cast<int>(shared_.size()); }
    int group_size(int group) const { return static_cast<int>(subtype_groups_.at(group).size()); }

    int detection_size() const { return num_majors() + num_shared() + 1; }
    int diagnosis_size() const { return num_subtypes() + num_shared() + 1; }
    int space_size(LabelSpace space) const;

    /// Maps a diagnosis id onto the detection space. Throws UsageError when out of range.
    ClassId subtype_to_major(ClassId diagnosis_id) const;

    const std::string& class_name(LabelSpace space, ClassId id) const;
    ClassId class_id(LabelSpace space, const std::string& name) const;

    bool is_tumor(LabelSpace space, ClassId id) const;
    bool is_organ(LabelSpace space, ClassId id) const;
    /// Organ index hosting a tumor class, or the organ itself for organ classes.
    std::optional<int> host_organ(LabelSpace space, ClassId id) const;

    /// Detection id of major `group`.
    ClassId major_id(int group) const { return 1 + group; }
    /// Diagnosis ids of the subtypes in `group`.
    std::vector<ClassId> subtype_ids(int group) const;
    /// Group index of a diagnosis-space subtype, or -1 for any other class.
    int group_of_subtype(ClassId diagnosis_id) const;
    /// Major group hosted by an organ, or -1.
    int group_of_organ(int organ) const;

    std::vector<ClassId> tumor_ids(LabelSpace space) const;
    /// Diagnosis-space lookup table for subtype_to_major.
    const std::vector<ClassId>& merge_table() const { return merge_table_; }

    /// Canonical JSON text; byte-identical for identical configs.
    std::string serialize() const;
    std::string hash() const;

private:
    TaxonomyConfig config_;
    std::vector<std::string> tumors_flat_;
    std::vector<std::string> shared_;
    std::vector<std::string> majors_;
    std::vector<std::vector<std::string>> subtype_groups_;
    std::vector<std::string> flat_subtypes_;
    std::map<std::string, std::string> merge_map_;

    std::vector<std::string> detection_names_;
    std::vector<std::string> diagnosis_names_;
    std::vector<int> detection_host_;  // -1 for background
    std::vector<int> diagnosis_host_;
    std::vector<bool> detection_tumor_;
    std::vector<bool> diagnosis_tumor_;
    std::vector<int> subtype_group_;  // indexed by diagnosis id
    std::vector<int> organ_group_;
    std::vector<ClassId> merge_table_;
};

} // namespace hiermask
