#include "hiermask/volume.hpp"

#include "hiermask/error.hpp"

namespace hiermask {

void validate_labels(const LabelMap& map, const Taxonomy& taxonomy)
{
    const int n = taxonomy.space_size(map.space);
    for (std::int64_t i = 0; i < map.size(); ++i) {
        if (map.data[i] >= n)
            throw DataError("label " + std::to_string(map.data[i]) + " at voxel " + std::to_string(i) +
                            " is outside the " + to_string(map.space) + " space");
    }
}

LabelMap merge_labelmap(const Taxonomy& taxonomy, const LabelMap& diagnosis_map)
{
    if (diagnosis_map.space != LabelSpace::Diagnosis) throw UsageError("merge_labelmap: input must be a diagnosis-space map");
    const auto& table = taxonomy.merge_table();
    LabelMap out(diagnosis_map.dims, diagnosis_map.spacing, LabelSpace::Detection);
    for (std::int64_t i = 0; i < diagnosis_map.size(); ++i) {
        const auto v = diagnosis_map.data[i];
        if (v >= table.size()) throw DataError("merge_labelmap: invalid label " + std::to_string(v));
        out.data[i] = static_cast<std::uint8_t>(table[v]);
    }
    return out;
}

} // namespace hiermask
