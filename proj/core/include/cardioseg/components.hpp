#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "cardioseg/volume.hpp"

namespace cardioseg {

/// In-plane connectivities treat each Z slice as an independent image.
enum class Connectivity { Slice4, Slice8, Volume6, Volume26 };

struct Components {
    /// 0 for voxels outside the set, otherwise 1..count(), numbered in
    /// X-fastest scan order of each component's first voxel.
    std::vector<std::uint32_t> labels;
    /// sizes[k - 1] is the voxel count of component k.
    std::vector<std::size_t> sizes;

    std::size_t count() const { return sizes.size(); }
    /// Component with the most voxels; ties go to the lower id. 0 if empty.
    std::uint32_t largest() const;
};

/// Labels the connected components of the non-zero voxels of `binary`.
Components label_components(std::span<const std::uint8_t> binary, Extent3 dims, Connectivity connectivity);

/// Neighbour offsets (dx, dy, dz) for a connectivity, excluding the origin.
std::vector<Coord3> neighbour_offsets(Connectivity connectivity);

}  // namespace cardioseg
