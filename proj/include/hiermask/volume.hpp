#pragma once

#include "hiermask/taxonomy.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace hiermask {

/// Voxel counts along (z, y, x).
using Dims = std::array<int, 3>;
/// Voxel size in mm along (z, y, x).
using Spacing = std::array<double, 3>;

inline constexpr Spacing kPaperSpacing{3.0, 0.8, 0.8};

inline std::int64_t voxel_count(const Dims& d)
{
    return static_cast<std::int64_t>(d[0]) * d[1] * d[2];
}

/// Dense z-major 3D grid.
template <typename T>
struct Grid3 {
    Dims dims{0, 0, 0};
    Spacing spacing{1.0, 1.0, 1.0};
    std::vector<T> data;

    Grid3() = default;
    Grid3(const Dims& d, const Spacing& s, T fill = T{}) : dims(d), spacing(s), data(voxel_count(d), fill) {}

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    std::int64_t index(int z, int y, int x) const
    {
        return (static_cast<std::int64_t>(z) * dims[1] + y) * dims[2] + x;
    }
    T& at(int z, int y, int x) { return data[index(z, y, x)]; }
    const T& at(int z, int y, int x) const { return data[index(z, y, x)]; }
    double voxel_volume() const { return spacing[0] * spacing[1] * spacing[2]; }

    bool operator==(const Grid3&) const = default;
};

using Volume = Grid3<float>;

struct LabelMap : Grid3<std::uint8_t> {
    LabelSpace space = LabelSpace::Diagnosis;

    LabelMap() = default;
    LabelMap(const Dims& d, const Spacing& s, LabelSpace sp = LabelSpace::Diagnosis, std::uint8_t fill = 0)
        : Grid3<std::uint8_t>(d, s, fill), space(sp)
    {
    }

    bool operator==(const LabelMap&) const = default;
};

/// Throws DataError when a label is outside the bound label space.
void validate_labels(const LabelMap& map, const Taxonomy& taxonomy);

/// Voxel-wise subtype_to_major; shape and spacing preserved.
LabelMap merge_labelmap(const Taxonomy& taxonomy, const LabelMap& diagnosis_map);

} // namespace hiermask
