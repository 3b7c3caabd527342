#include "hiermask/components.hpp"

#include "hiermask/error.hpp"

#include <array>
#include <numeric>

namespace hiermask {

namespace {

struct DisjointSet {
    std::vector<std::int32_t> parent;

    std::int32_t make()
    {
        parent.push_back(static_cast<std::int32_t>(parent.size()));
        return parent.back();
    }
    std::int32_t find(std::int32_t x)
    {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    }
    void unite(std::int32_t a, std::int32_t b)
    {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (a < b) parent[b] = a;
        else parent[a] = b;
    }
};

struct Offset {
    int dz, dy, dx;
};

// Neighbors already visited in a z-major raster scan.
std::vector<Offset> backward_neighbors(int connectivity)
{
    std::vector<Offset> out;
    for (int dz = -1; dz <= 0; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
                const int manhattan = std::abs(dz) + std::abs(dy) + std::abs(dx);
                if (connectivity == 6 && manhattan != 1) continue;
                out.push_back({dz, dy, dx});
            }
    return out;
}

} // namespace

Components connected_components(const Grid3<std::uint8_t>& mask, int connectivity)
{
    if (connectivity != 6 && connectivity != 26)
        throw UsageError("connectivity must be 6 or 26, got " + std::to_string(connectivity));

    const auto& d = mask.dims;
    const auto neighbors = backward_neighbors(connectivity);
    Components out;
    out.labels = Grid3<std::int32_t>(d, mask.spacing, -1);
    DisjointSet sets;

    for (int z = 0; z < d[0]; ++z)
        for (int y = 0; y < d[1]; ++y)
            for (int x = 0; x < d[2]; ++x) {
                const auto i = mask.index(z, y, x);
                if (!mask.data[i]) continue;
                std::int32_t label = -1;
                for (const auto& o : neighbors) {
                    const int nz = z + o.dz, ny = y + o.dy, nx = x + o.dx;
                    if (nz < 0 || ny < 0 || ny >= d[1] || nx < 0 || nx >= d[2]) continue;
                    const std::int32_t nl = out.labels.data[mask.index(nz, ny, nx)];
                    if (nl < 0) continue;
                    if (label < 0) label = nl;
                    else sets.unite(label, nl);
                }
                out.labels.data[i] = label < 0 ? sets.make() : label;
            }

    // Roots are renumbered in order of first appearance.
    std::vector<std::int32_t> final_label(sets.parent.size(), 0);
    for (auto& v : out.labels.data) {
        if (v < 0) {
            v = 0;
            continue;
        }
        const auto root = sets.find(v);
        if (final_label[root] == 0) {
            final_label[root] = ++out.count;
            out.sizes.push_back(0);
        }
        v = final_label[root];
        ++out.sizes[v - 1];
    }
    return out;
}

} // namespace hiermask
