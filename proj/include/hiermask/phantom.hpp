#pragma once

#include "hiermask/case_io.hpp"
#include "hiermask/taxonomy.hpp"
#include "hiermask/volume.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace hiermask {

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

/// Superellipsoid organ. Centers are fractions of the volume extent; radii in mm.
struct OrganShape {
    std::string organ;
    std::array<Range, 3> center_fraction;
    std::array<Range, 3> radii_mm;
    Range exponent{2.0, 2.0};
    double intensity = 100.0;
    double tumor_probability = 0.5;
};

/// Tumor class placed inside its host organ. `tumor_class` is a
/// diagnosis-space tumor name (a subtype or a shared tumor).
struct TumorShape {
    std::string tumor_class;
    double weight = 1.0;  // relative choice weight among tumors of the same organ
    int min_count = 1;
    int max_count = 1;
    std::array<Range, 3> radii_mm;
    Range exponent{2.0, 2.0};
    double intensity_offset = 0.0;
    double texture_noise = 0.0;
};

struct PhantomSpec {
    Dims dims{64, 64, 64};
    Spacing spacing = kPaperSpacing;
    double background_intensity = 0.0;
    double noise_sigma = 10.0;
    double normal_probability = 0.25;  // tumor-free "normal control" phantoms
    int placement_attempts = 5000;
    std::vector<OrganShape> organs;
    std::vector<TumorShape> tumors;
};

/// Throws UsageError when the spec is inconsistent with the taxonomy or
/// a tumor cannot fit its host organ.
void validate_phantom_spec(const PhantomSpec& spec, const Taxonomy& taxonomy);

PhantomSpec default_phantom_spec();  // toy taxonomy at 64^3
/// Same layout on a different grid: radii scale with the smallest dims ratio.
PhantomSpec rescale_phantom_spec(const PhantomSpec& spec, const Dims& dims);
nlohmann::json to_json(const PhantomSpec& spec);
PhantomSpec phantom_spec_from_json(const nlohmann::json& doc);
std::string phantom_spec_hash(const PhantomSpec& spec);

struct PlacedTumor {
    ClassId class_id = 0;  // diagnosis space
    ClassId host_organ_id = 0;
    std::vector<std::int64_t> voxels;
};

struct Phantom {
    Volume volume;
    LabelMap labels;
    /// Label map after organ painting, before tumors were inserted.
    LabelMap organ_labels;
    std::vector<PlacedTumor> tumors;
    /// Sorted distinct diagnosis-space tumor ids present in `labels`.
    std::vector<ClassId> patient_labels;
};

/// Pure function of (seed, spec, taxonomy). Throws DataError when a tumor
/// cannot be placed within the attempt budget.
Phantom generate_phantom(std::uint64_t seed, const PhantomSpec& spec, const Taxonomy& taxonomy);

struct CaseRecord {
    std::string id;
    std::string volume_path;  // relative to the manifest directory
    std::string labels_path;
    std::map<std::string, std::string> tumors;  // organ -> diagnosis class name
    std::vector<ClassId> tumor_ids;
    std::string split;
};

struct Manifest {
    std::uint64_t seed = 0;
    std::string phantom_spec_hash;
    std::string taxonomy_hash;
    std::string taxonomy;  // serialized taxonomy
    nlohmann::json phantom_spec;
    std::vector<CaseRecord> cases;
    std::filesystem::path root;  // directory holding the manifest; not serialized

    std::string serialize() const;
    std::string hash() const;
    std::vector<const CaseRecord*> split(const std::string& tag) const;
    const CaseRecord& find(const std::string& id) const;
    Taxonomy bound_taxonomy() const { return Taxonomy::parse(taxonomy); }
};

using SplitFractions = std::vector<std::pair<std::string, double>>;

/// Per-split case counts by largest remainder; splits are assigned in case order.
std::vector<int> split_counts(int n_cases, const SplitFractions& fractions);

/// Writes `n_cases` phantoms plus manifest.json under `out_dir`.
Manifest make_dataset(const std::filesystem::path& out_dir, const PhantomSpec& spec, const Taxonomy& taxonomy,
                      int n_cases, std::uint64_t seed, const SplitFractions& fractions);

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);
/// Checks unique ids and that every referenced file exists.
void validate_manifest(const Manifest& manifest);
Case load_manifest_case(const Manifest& manifest, const CaseRecord& record);

} // namespace hiermask
