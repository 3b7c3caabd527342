#pragma once

#include "hiermask/volume.hpp"

#include <cstdint>
#include <vector>

namespace hiermask {

/// Labeled foreground partition. Labels are 1..count in order of each
/// component's first voxel in z-major scan order; 0 is background.
struct Components {
    Grid3<std::int32_t> labels;
    int count = 0;
    std::vector<std::int64_t> sizes;  // sizes[k] is the voxel count of label k + 1
};

/// Connected components of the nonzero voxels of `mask` under 6- or
/// 26-neighborhood adjacency. Throws UsageError for any other connectivity.
Components connected_components(const Grid3<std::uint8_t>& mask, int connectivity);

} // namespace hiermask
