#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cstdint>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "spinereg/mesh.hpp"

namespace spinereg {

namespace {

// Cube corner c has offset (c & 1, (c >> 1) & 1, (c >> 2) & 1).
// Edge e joins corners kEdges[e][0] < kEdges[e][1] along axis kEdgeAxis[e].
struct CubeTopology {
    std::array<std::array<int, 2>, 12> edges{};
    std::array<int, 12> edge_axis{};
    std::array<std::array<int, 8>, 8> edge_of{};
    std::array<std::array<int, 4>, 6> faces{};  // corners, counter-clockwise seen from outside
    std::array<std::array<bool, 6>, 12> edge_on_face{};

    CubeTopology() {
        for (auto& row : edge_of) row.fill(-1);
        int e = 0;
        for (int a = 0; a < 3; ++a) {
            for (int c = 0; c < 8; ++c) {
                if (c & (1 << a)) continue;
                edges[e] = {c, c | (1 << a)};
                edge_axis[e] = a;
                edge_of[c][c | (1 << a)] = edge_of[c | (1 << a)][c] = e;
                ++e;
            }
        }
        int f = 0;
        for (int a = 0; a < 3; ++a) {
            const int u = (a + 1) % 3, v = (a + 2) % 3;
            for (int s = 0; s < 2; ++s, ++f) {
                const int base = s << a;
                auto corner = [&](int du, int dv) { return base | (du << u) | (dv << v); };
                // e_u x e_v = e_a, so (u,v) order is CCW about +a.
                faces[f] = s == 1 ? std::array{corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)}
                                  : std::array{corner(0, 0), corner(0, 1), corner(1, 1), corner(1, 0)};
                for (int i = 0; i < 4; ++i) edge_on_face[edge_of[faces[f][i]][faces[f][(i + 1) % 4]]][f] = true;
            }
        }
    }

    bool share_face(int e0, int e1) const {
        for (int f = 0; f < 6; ++f) {
            if (edge_on_face[e0][f] && edge_on_face[e1][f]) return true;
        }
        return false;
    }
};

const CubeTopology& topology() {
    static const CubeTopology topo;
    return topo;
}

using CaseTable = std::array<std::vector<std::array<std::int8_t, 3>>, 256>;

// On every cube face the crossings are paired so that each inside corner run
// is cut off by its own segment ("separate inside corners" on ambiguous
// faces). The rule depends only on the face's four corners, so neighbouring
// cubes always produce the same segments and the surface closes up.
// Segments chain into loops on the cube boundary; each loop becomes a fan.
CaseTable build_case_table() {
    const auto& topo = topology();
    CaseTable table;
    for (int config = 0; config < 256; ++config) {
        auto inside = [config](int c) { return (config >> c) & 1; };
        std::array<int, 12> succ;
        succ.fill(-1);
        for (const auto& q : topo.faces) {
            for (int i = 0; i < 4; ++i) {
                const int a = q[i], b = q[(i + 1) % 4];
                if (!(inside(a) && !inside(b))) continue;
                // Walk back to the start of this inside run.
                int j = i;
                while (inside(q[(j + 3) % 4])) j = (j + 3) % 4;
                const int enter = topo.edge_of[q[(j + 3) % 4]][q[j]];
                const int leave = topo.edge_of[a][b];
                succ[leave] = enter;
            }
        }

        std::array<bool, 12> visited{};
        for (int start = 0; start < 12; ++start) {
            if (succ[start] < 0 || visited[start]) continue;
            std::vector<int> loop;
            for (int e = start; !visited[e]; e = succ[e]) {
                visited[e] = true;
                loop.push_back(e);
            }
            // Boundary orientation puts the loop normal towards the inside;
            // reverse it so triangles face outward.
            std::reverse(loop.begin(), loop.end());
            const int n = static_cast<int>(loop.size());

            // Pick a fan apex whose diagonals never join two crossings on one
            // cube face: such a chord could be reused by the neighbouring cube.
            int apex = -1;
            for (int r = 0; r < n && apex < 0; ++r) {
                bool ok = true;
                for (int k = 2; k <= n - 2 && ok; ++k) ok = !topo.share_face(loop[r], loop[(r + k) % n]);
                if (ok) apex = r;
            }
            if (apex < 0) throw std::logic_error("marching cubes table: no valid fan apex");
            for (int k = 1; k + 1 < n; ++k) {
                table[config].push_back({static_cast<std::int8_t>(loop[apex]),
                                         static_cast<std::int8_t>(loop[(apex + k) % n]),
                                         static_cast<std::int8_t>(loop[(apex + k + 1) % n])});
            }
        }
    }
    return table;
}

const CaseTable& case_table() {
    static const CaseTable table = build_case_table();
    return table;
}

}  // namespace

TriangleMesh marching_cubes(const BinaryMask& mask) {
    TriangleMesh mesh;
    Index3 lo, hi;
    if (!mask.bounds(lo, hi)) return mesh;

    const auto& topo = topology();
    const auto& table = case_table();
    const auto& geom = mask.geometry();
    const bool flip = geom.direction.determinant() < 0.0;

    // Lattice of cube base corners spans [lo-1, hi]; corner lattice [lo-1, hi+1].
    const std::int64_t nx = hi[0] - lo[0] + 3, ny = hi[1] - lo[1] + 3;
    std::unordered_map<std::int64_t, std::int32_t> vertex_id;

    for (std::int64_t k = lo[2] - 1; k <= hi[2]; ++k) {
        for (std::int64_t j = lo[1] - 1; j <= hi[1]; ++j) {
            for (std::int64_t i = lo[0] - 1; i <= hi[0]; ++i) {
                int config = 0;
                for (int c = 0; c < 8; ++c) {
                    if (mask.get_or_false(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1))) config |= 1 << c;
                }
                if (config == 0 || config == 255) continue;
                for (const auto& tri : table[config]) {
                    Triangle t{};
                    for (int v = 0; v < 3; ++v) {
                        const int e = tri[v];
                        const int c0 = topo.edges[e][0];
                        const std::int64_t x = i + (c0 & 1), y = j + ((c0 >> 1) & 1), z = k + ((c0 >> 2) & 1);
                        const std::int64_t key =
                            3 * ((x - lo[0] + 1) + nx * ((y - lo[1] + 1) + ny * (z - lo[2] + 1))) + topo.edge_axis[e];
                        auto [it, inserted] = vertex_id.try_emplace(key, static_cast<std::int32_t>(mesh.vertices.size()));
                        if (inserted) {
                            Vec3 p(static_cast<double>(x), static_cast<double>(y), static_cast<double>(z));
                            p[topo.edge_axis[e]] += 0.5;
                            mesh.vertices.push_back(voxel_to_world(geom, p));
                        }
                        t[v] = it->second;
                    }
                    if (flip) std::swap(t[1], t[2]);
                    mesh.triangles.push_back(t);
                }
            }
        }
    }
    return mesh;
}

}  // namespace spinereg
