#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "cardioseg/volume.hpp"

namespace cardioseg {

struct Mesh {
    std::vector<Vec3> vertices;                         // millimeters
    std::vector<std::array<std::uint32_t, 3>> triangles;  // counter-clockwise seen from outside

    bool empty() const { return triangles.empty(); }
};

/// Isosurface of the binary indicator (mask == label) at level 0.5. The
/// mask is padded by one background voxel on every side, so the surface is
/// closed. Vertex positions are voxel-center coordinates times spacing.
///
/// Faces with two diagonal inside corners are resolved by separating the
/// inside corners; the rule depends only on the face, so neighbouring cubes
/// agree and the mesh is watertight.
Mesh marching_cubes(const LabelMask& mask, std::uint8_t label);

/// Enclosed volume by the signed-tetrahedron sum, in mm^3.
double mesh_volume_mm3(const Mesh& mesh);

struct MeshTopology {
    std::size_t vertices = 0, edges = 0, faces = 0;
    /// Every undirected edge is used by exactly two triangles, once in
    /// each direction.
    bool watertight = false;
    long long euler() const {
        return static_cast<long long>(vertices) - static_cast<long long>(edges) + static_cast<long long>(faces);
    }
};

MeshTopology mesh_topology(const Mesh& mesh);

/// Binary STL: 80-byte header, u32 count, then per triangle 12 float32
/// (normal, three vertices) and a zero u16.
void export_stl(const Mesh& mesh, const std::filesystem::path& path);

/// ASCII OBJ, `v x y z` lines then 1-based `f i j k` lines, %.6g.
void export_obj(const Mesh& mesh, const std::filesystem::path& path);

}  // namespace cardioseg
