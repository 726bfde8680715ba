#include "cardioseg/mesh.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <unordered_map>

#include "cardioseg/errors.hpp"

namespace cardioseg {

namespace {

// Corner k of a cube sits at (k & 1, (k >> 1) & 1, (k >> 2) & 1).
struct P3 {
    double x, y, z;
};
P3 corner_pos(int k) { return {double(k & 1), double((k >> 1) & 1), double((k >> 2) & 1)}; }
P3 sub(P3 a, P3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
P3 cross(P3 a, P3 b) { return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x}; }
double dotp(P3 a, P3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

struct CubeEdge {
    int a, b;  // corners, a < b
    int axis;  // 0 x, 1 y, 2 z
};

std::array<CubeEdge, 12> make_edges() {
    std::array<CubeEdge, 12> e{};
    int n = 0;
    for (int axis = 0; axis < 3; ++axis)
        for (int k = 0; k < 8; ++k)
            if (!(k & (1 << axis))) e[n++] = {k, k | (1 << axis), axis};
    return e;
}

const std::array<CubeEdge, 12> kEdges = make_edges();

int edge_between(int a, int b) {
    if (a > b) std::swap(a, b);
    for (int i = 0; i < 12; ++i)
        if (kEdges[i].a == a && kEdges[i].b == b) return i;
    return -1;
}

struct Face {
    std::array<int, 4> corners;  // cyclic order
    P3 normal;                   // outward
};

std::array<Face, 6> make_faces() {
    std::array<Face, 6> f{};
    int n = 0;
    for (int axis = 0; axis < 3; ++axis)
        for (int side = 0; side < 2; ++side) {
            const int u = (axis + 1) % 3, v = (axis + 2) % 3;
            const int base = side << axis;
            f[n].corners = {base, base | (1 << u), base | (1 << u) | (1 << v), base | (1 << v)};
            P3 nrm{0, 0, 0};
            (axis == 0 ? nrm.x : axis == 1 ? nrm.y : nrm.z) = side ? 1.0 : -1.0;
            f[n].normal = nrm;
            ++n;
        }
    return f;
}

using TriangleTable = std::array<std::vector<std::array<int, 3>>, 256>;

// Triangles (as cube-edge ids) for one corner configuration.
std::vector<std::array<int, 3>> triangulate_case(int config) {
    static const std::array<Face, 6> faces = make_faces();
    auto inside = [config](int k) { return (config >> k) & 1; };
    auto edge_mid = [](int e) {
        const P3 a = corner_pos(kEdges[e].a), b = corner_pos(kEdges[e].b);
        return P3{(a.x + b.x) / 2, (a.y + b.y) / 2, (a.z + b.z) / 2};
    };

    std::array<int, 12> next;
    next.fill(-1);
    auto add_segment = [&](int e1, int e2, const std::vector<int>& region, P3 normal) {
        // Orient so that (q - p) x n points into the inside region.
        P3 c{0, 0, 0};
        for (int k : region) {
            const P3 p = corner_pos(k);
            c = {c.x + p.x, c.y + p.y, c.z + p.z};
        }
        const double m = static_cast<double>(region.size());
        c = {c.x / m, c.y / m, c.z / m};
        const P3 p = edge_mid(e1), q = edge_mid(e2);
        const P3 mid{(p.x + q.x) / 2, (p.y + q.y) / 2, (p.z + q.z) / 2};
        if (dotp(cross(sub(q, p), normal), sub(c, mid)) > 0) next[e1] = e2;
        else next[e2] = e1;
    };

    for (const Face& f : faces) {
        std::vector<int> crossing;  // positions k where edge (c_k, c_k+1) crosses
        for (int k = 0; k < 4; ++k)
            if (inside(f.corners[k]) != inside(f.corners[(k + 1) % 4])) crossing.push_back(k);
        auto fe = [&](int k) { return edge_between(f.corners[k], f.corners[(k + 1) % 4]); };
        if (crossing.size() == 2) {
            const int i = crossing[0], j = crossing[1];
            std::vector<int> side;  // corners i+1 .. j
            for (int k = i + 1; k <= j; ++k) side.push_back(f.corners[k]);
            std::vector<int> region;
            if (inside(side.front())) region = side;
            else
                for (int k = 0; k < 4; ++k)
                    if (inside(f.corners[k])) region.push_back(f.corners[k]);
            add_segment(fe(i), fe(j), region, f.normal);
        } else if (crossing.size() == 4) {
            for (int k = 0; k < 4; ++k)
                if (inside(f.corners[k])) add_segment(fe((k + 3) % 4), fe(k), {f.corners[k]}, f.normal);
        }
    }

    std::vector<std::array<int, 3>> tris;
    std::array<bool, 12> used{};
    for (int start = 0; start < 12; ++start) {
        if (next[start] < 0 || used[start]) continue;
        std::vector<int> loop;
        for (int e = start; !used[e]; e = next[e]) {
            used[e] = true;
            loop.push_back(e);
        }
        for (std::size_t i = 1; i + 1 < loop.size(); ++i) tris.push_back({loop[0], loop[i], loop[i + 1]});
    }
    return tris;
}

const TriangleTable& triangle_table() {
    static const TriangleTable table = [] {
        TriangleTable t;
        for (int c = 0; c < 256; ++c) t[c] = triangulate_case(c);
        return t;
    }();
    return table;
}

void put_f32(std::vector<char>& out, float v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.insert(out.end(), b, b + 4);
}

}  // namespace

Mesh marching_cubes(const LabelMask& mask, std::uint8_t label) {
    static_assert(std::endian::native == std::endian::little);
    const Extent3 d = mask.dims();
    // Padded grid of the indicator; padded index p maps to voxel p - 1.
    const std::size_t PX = d.x + 2, PY = d.y + 2, PZ = d.z + 2;
    std::vector<std::uint8_t> g(PX * PY * PZ, 0);
    for (std::size_t z = 0; z < d.z; ++z)
        for (std::size_t y = 0; y < d.y; ++y)
            for (std::size_t x = 0; x < d.x; ++x)
                g[(x + 1) + PX * ((y + 1) + PY * (z + 1))] = mask.at(x, y, z) == label;

    const Vec3 s = mask.header.spacing_mm;
    const TriangleTable& table = triangle_table();
    Mesh mesh;
    std::unordered_map<std::uint64_t, std::uint32_t> vertex_of;  // key: 3 * grid index + axis

    auto vertex = [&](std::size_t x, std::size_t y, std::size_t z, int e) {
        const CubeEdge& ce = kEdges[e];
        const std::size_t ax = x + (ce.a & 1), ay = y + ((ce.a >> 1) & 1), az = z + ((ce.a >> 2) & 1);
        const std::uint64_t key = 3 * (ax + PX * (ay + PY * az)) + static_cast<std::uint64_t>(ce.axis);
        const auto [it, inserted] = vertex_of.try_emplace(key, static_cast<std::uint32_t>(mesh.vertices.size()));
        if (inserted) {
            // Binary field at level 0.5: the crossing is the edge midpoint.
            double px = static_cast<double>(ax) - 1.0, py = static_cast<double>(ay) - 1.0,
                   pz = static_cast<double>(az) - 1.0;
            (ce.axis == 0 ? px : ce.axis == 1 ? py : pz) += 0.5;
            mesh.vertices.push_back({px * s.x, py * s.y, pz * s.z});
        }
        return it->second;
    };

    for (std::size_t z = 0; z + 1 < PZ; ++z)
        for (std::size_t y = 0; y + 1 < PY; ++y)
            for (std::size_t x = 0; x + 1 < PX; ++x) {
                int config = 0;
                for (int k = 0; k < 8; ++k)
                    if (g[(x + (k & 1)) + PX * ((y + ((k >> 1) & 1)) + PY * (z + ((k >> 2) & 1)))])
                        config |= 1 << k;
                for (const auto& t : table[config])
                    mesh.triangles.push_back({vertex(x, y, z, t[0]), vertex(x, y, z, t[1]), vertex(x, y, z, t[2])});
            }
    return mesh;
}

double mesh_volume_mm3(const Mesh& mesh) {
    double v = 0.0;
    for (const auto& t : mesh.triangles) {
        const Vec3& a = mesh.vertices[t[0]];
        const Vec3& b = mesh.vertices[t[1]];
        const Vec3& c = mesh.vertices[t[2]];
        v += a.x * (b.y * c.z - b.z * c.y) - a.y * (b.x * c.z - b.z * c.x) + a.z * (b.x * c.y - b.y * c.x);
    }
    return v / 6.0;
}

MeshTopology mesh_topology(const Mesh& mesh) {
    MeshTopology t;
    t.vertices = mesh.vertices.size();
    t.faces = mesh.triangles.size();
    std::map<std::pair<std::uint32_t, std::uint32_t>, int> directed;
    for (const auto& tri : mesh.triangles)
        for (int i = 0; i < 3; ++i) ++directed[{tri[i], tri[(i + 1) % 3]}];
    bool ok = true;
    std::size_t undirected = 0;
    for (const auto& [e, n] : directed) {
        const auto rev = directed.find({e.second, e.first});
        if (n != 1 || rev == directed.end() || rev->second != 1) ok = false;
        if (e.first < e.second || rev == directed.end()) ++undirected;
    }
    t.edges = undirected;
    t.watertight = ok && !mesh.triangles.empty();
    return t;
}

void export_stl(const Mesh& mesh, const std::filesystem::path& path) {
    std::vector<char> out(80, 0);
    const char label[] = "cardioseg binary STL";
    std::memcpy(out.data(), label, sizeof label - 1);
    const auto n = static_cast<std::uint32_t>(mesh.triangles.size());
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((n >> (8 * i)) & 0xff));
    out.reserve(84 + 50 * static_cast<std::size_t>(n));
    for (const auto& t : mesh.triangles) {
        const Vec3& a = mesh.vertices[t[0]];
        const Vec3& b = mesh.vertices[t[1]];
        const Vec3& c = mesh.vertices[t[2]];
        const P3 nrm = cross(P3{b.x - a.x, b.y - a.y, b.z - a.z}, P3{c.x - a.x, c.y - a.y, c.z - a.z});
        const double len = std::sqrt(dotp(nrm, nrm));
        const P3 u = len > 0 ? P3{nrm.x / len, nrm.y / len, nrm.z / len} : P3{0, 0, 0};
        for (double v : {u.x, u.y, u.z, a.x, a.y, a.z, b.x, b.y, b.z, c.x, c.y, c.z})
            put_f32(out, static_cast<float>(v));
        out.push_back(0);
        out.push_back(0);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("write failed: " + path.string());
}

void export_obj(const Mesh& mesh, const std::filesystem::path& path) {
    std::string out;
    char buf[128];
    for (const Vec3& v : mesh.vertices) {
        std::snprintf(buf, sizeof buf, "v %.6g %.6g %.6g\n", v.x, v.y, v.z);
        out += buf;
    }
    for (const auto& t : mesh.triangles) {
        std::snprintf(buf, sizeof buf, "f %u %u %u\n", t[0] + 1, t[1] + 1, t[2] + 1);
        out += buf;
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f << out;
    if (!f) throw IoError("write failed: " + path.string());
}

}  // namespace cardioseg
