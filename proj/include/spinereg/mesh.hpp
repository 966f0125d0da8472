#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "spinereg/transform.hpp"
#include "spinereg/volume.hpp"

namespace spinereg {

using Triangle = std::array<std::int32_t, 3>;

/// Indexed triangle surface in world millimetres.
struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<Triangle> triangles;

    bool empty() const { return triangles.empty(); }

    /// Throws PreconditionError on out-of-range indices, repeated indices
    /// within a triangle, non-finite coordinates or unreferenced vertices.
    void validate() const;

    /// Vertices as a 3xN matrix (one point per column).
    Eigen::Matrix3Xd points() const;
};

/// Drops unreferenced vertices and renumbers; triangle order is preserved.
TriangleMesh compact(const TriangleMesh& mesh);

struct EdgeStats {
    std::size_t edges = 0;
    std::size_t boundary_edges = 0;     // used by 1 triangle
    std::size_t nonmanifold_edges = 0;  // used by > 2 triangles
    std::size_t misoriented_edges = 0;  // used twice in the same direction
};
EdgeStats edge_stats(const TriangleMesh& mesh);

/// Every undirected edge is shared by exactly two triangles with opposite
/// directions (closed, consistently oriented 2-manifold).
bool is_watertight(const TriangleMesh& mesh);

/// V - E + F.
std::int64_t euler_characteristic(const TriangleMesh& mesh);

/// Absolute divergence-theorem volume (mm^3). Throws PreconditionError if
/// the mesh is not watertight.
double enclosed_volume(const TriangleMesh& mesh);
/// Signed version; positive for outward-oriented winding. No watertight check.
double signed_volume(const TriangleMesh& mesh);
double surface_area(const TriangleMesh& mesh);

/// Mesh with every vertex mapped through T; connectivity unchanged.
/// Winding is preserved (T is orientation-preserving).
TriangleMesh apply_transform_to_mesh(const TriangleMesh& mesh, const RigidTransform& T);

/// ASCII PLY 1.0: `vertex` (x y z) and `face` (list uchar int).
void write_ply(const TriangleMesh& mesh, const std::filesystem::path& path);
TriangleMesh read_ply(const std::filesystem::path& path);

// --- surface reconstruction and simplification -----------------------------

/// Iso-surface at 0.5 of the mask's indicator with edge-midpoint vertices in
/// world mm. The mask is treated as padded by one background voxel, so every
/// component yields a closed, outward-oriented surface.
TriangleMesh marching_cubes(const BinaryMask& mask);

struct DecimationParams {
    std::int64_t target_triangles = 5000;
    double max_geometric_error = 0.5;  // mm
    /// Collapses creating a longer edge are rejected (0 = no limit). Keeps the
    /// vertex sampling even on flat regions, where the quadric cost is ~0.
    double max_edge_length = 3.0;  // mm

    void validate() const;
};

/// Quadric-error edge-collapse decimation with a link-condition manifold guard.
/// Stops at target_triangles or when no legal collapse is left. Throws
/// PreconditionError on input that is not a closed manifold.
TriangleMesh decimate(const TriangleMesh& mesh, const DecimationParams& params);

/// Subdivided icosahedron projected onto a sphere (20 * 4^level faces).
TriangleMesh make_icosphere(int level, double radius, const Vec3& center = Vec3::Zero());

}  // namespace spinereg
