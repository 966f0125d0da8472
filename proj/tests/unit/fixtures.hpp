#pragma once

#include <filesystem>
#include <string>

#include "oracles.hpp"
#include "spinereg/mesh.hpp"
#include "spinereg/volume.hpp"

namespace fixture {

using spinereg::BinaryMask;
using spinereg::TriangleMesh;
using spinereg::Vec3;
using spinereg::VolumeGeometry;

inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("spinereg_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

// Outward-wound unit cube [0,1]^3.
inline TriangleMesh unit_cube() {
    TriangleMesh m;
    for (int i = 0; i < 8; ++i) m.vertices.emplace_back(i & 1, (i >> 1) & 1, (i >> 2) & 1);
    m.triangles = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                   {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
    return m;
}

inline TriangleMesh tetrahedron() {
    TriangleMesh m;
    m.vertices = {Vec3(1, 1, 1), Vec3(1, -1, -1), Vec3(-1, 1, -1), Vec3(-1, -1, 1)};
    m.triangles = {{0, 1, 2}, {0, 3, 1}, {0, 2, 3}, {1, 3, 2}};
    return m;
}

inline VolumeGeometry grid(std::int64_t nx, std::int64_t ny, std::int64_t nz, double sp = 1.0) {
    VolumeGeometry g;
    g.dims = {nx, ny, nz};
    g.spacing = Vec3::Constant(sp);
    return g;
}

inline BinaryMask sphere_mask(const VolumeGeometry& g, const Vec3& centre_ijk, double radius_vox) {
    BinaryMask m(g);
    for (std::int64_t k = 0; k < g.dims[2]; ++k)
        for (std::int64_t j = 0; j < g.dims[1]; ++j)
            for (std::int64_t i = 0; i < g.dims[0]; ++i)
                m.set(i, j, k, (Vec3(double(i), double(j), double(k)) - centre_ijk).norm() <= radius_vox);
    return m;
}

// Random blob: union of a few balls inside a grid with a clear border,
// plus scattered single voxels (which may form pinches and handles).
inline BinaryMask random_blob(oracle::Random& rng, std::int64_t n = 16, bool specks = true) {
    const VolumeGeometry g = grid(n, n, n);
    BinaryMask m(g);
    const int balls = rng.integer(1, 5);
    for (int b = 0; b < balls; ++b) {
        const Vec3 c(rng.uniform(4, n - 5), rng.uniform(4, n - 5), rng.uniform(4, n - 5));
        const double r = rng.uniform(1.0, 4.0);
        for (std::int64_t k = 1; k < n - 1; ++k)
            for (std::int64_t j = 1; j < n - 1; ++j)
                for (std::int64_t i = 1; i < n - 1; ++i)
                    if ((Vec3(double(i), double(j), double(k)) - c).norm() <= r) m.set(i, j, k, true);
    }
    const int nspecks = specks ? rng.integer(0, 40) : 0;
    for (int s = 0; s < nspecks; ++s) m.set(rng.integer(1, int(n) - 2), rng.integer(1, int(n) - 2), rng.integer(1, int(n) - 2), true);
    return m;
}

}  // namespace fixture
