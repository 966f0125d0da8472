#include <doctest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "spinereg/error.hpp"
#include "spinereg/synth.hpp"
#include "spinereg/volume.hpp"

using namespace spinereg;

namespace {

VolumeGeometry grid(std::int64_t nx, std::int64_t ny, std::int64_t nz, double sp = 1.0) {
    VolumeGeometry g;
    g.dims = {nx, ny, nz};
    g.spacing = Vec3::Constant(sp);
    return g;
}

BinaryMask sphere_mask(const VolumeGeometry& g, const Vec3& c, double r) {
    BinaryMask m(g);
    for (std::int64_t k = 0; k < g.dims[2]; ++k)
        for (std::int64_t j = 0; j < g.dims[1]; ++j)
            for (std::int64_t i = 0; i < g.dims[0]; ++i)
                m.set(i, j, k, (Vec3(double(i), double(j), double(k)) - c).norm() <= r);
    return m;
}

}  // namespace

TEST_CASE("geometry validation") {
    VolumeGeometry g = grid(4, 4, 4);
    CHECK_NOTHROW(g.validate());
    g.spacing[1] = 0.0;
    CHECK_THROWS_AS(g.validate(), PreconditionError);
    g = grid(4, 0, 4);
    CHECK_THROWS_AS(g.validate(), PreconditionError);
    g = grid(4, 4, 4);
    g.direction(0, 0) = 1.1;
    CHECK_THROWS_AS(g.validate(), PreconditionError);
    // Column norm 0.999999 lies inside the 1e-6 tolerance.
    g.direction = Mat3::Identity();
    g.direction.col(0) *= 1.0 - 1e-7;
    CHECK_NOTHROW(g.validate());
}

TEST_CASE("voxel_to_world examples") {
    VolumeGeometry g = grid(3, 3, 3, 2.0);
    CHECK(voxel_to_world(g, Vec3(1, 1, 1)) == Vec3(2, 2, 2));
    g.origin = Vec3(-5, 7, 1);
    CHECK(voxel_to_world(g, Vec3::Zero()) == g.origin);

    // Rotated direction, checked against an explicit hand-expanded product.
    const double c = std::cos(0.4), s = std::sin(0.4);
    g.direction << c, -s, 0, s, c, 0, 0, 0, 1;
    g.spacing = Vec3(0.35, 0.35, 1.5);
    const Vec3 ijk(2.0, -1.0, 3.5);
    const Vec3 scaled(0.35 * 2.0, 0.35 * -1.0, 1.5 * 3.5);
    const Vec3 expect(-5 + c * scaled[0] - s * scaled[1], 7 + s * scaled[0] + c * scaled[1], 1 + scaled[2]);
    CHECK((voxel_to_world(g, ijk) - expect).norm() < 1e-12);
    CHECK((world_to_voxel(g, expect) - ijk).norm() < 1e-12);
}

TEST_CASE("voxel_to_world is affine") {
    oracle::Random rng(3);
    VolumeGeometry g = grid(5, 5, 5);
    g.direction = rng.rotation();
    g.spacing = Vec3(0.5, 1.25, 2.0);
    g.origin = rng.point(100);
    const Vec3 b = rng.point(10);
    const Vec3 ref = voxel_to_world(g, b) - voxel_to_world(g, Vec3::Zero());
    for (int i = 0; i < 50; ++i) {
        const Vec3 a = rng.point(50);
        CHECK((voxel_to_world(g, a + b) - voxel_to_world(g, a) - ref).norm() < 1e-9);
    }
}

TEST_CASE("extract_label") {
    const VolumeGeometry g = grid(4, 5, 6);
    LabelVolume zeros(g);
    CHECK(extract_label(zeros, 3).count() == 0);
    LabelVolume threes(g, std::vector<LabelVolume::Label>(g.voxel_count(), 3));
    CHECK(extract_label(threes, 3).count() == g.voxel_count());
    CHECK(extract_label(threes, 3).geometry().same_grid(g, 0.0));
}

TEST_CASE("extract_label matches the phantom's recorded counts and partitions the volume") {
    PhantomSpec spec;
    spec.n_vertebrae = 2;
    spec.seed = 5;
    const Phantom ph = make_phantom(spec);
    std::size_t total = 0;
    for (auto l : ph.volume.labels()) {
        const auto n = extract_label(ph.volume, l).count();
        CHECK(n == ph.voxel_counts.at(l));
        total += n;
    }
    std::size_t nonzero = 0;
    for (auto v : ph.volume.voxels()) nonzero += v != 0;
    CHECK(total == nonzero);
}

TEST_CASE("labels and count") {
    LabelVolume v(grid(3, 1, 1), {0, 7, 2});
    CHECK(v.labels() == std::vector<LabelVolume::Label>{2, 7});
    CHECK(v.count(7) == 1);
    CHECK(v.count(0) == 1);
    CHECK_THROWS_AS(LabelVolume(grid(3, 1, 1), {1, 2}), PreconditionError);
}

TEST_CASE("resample_mask with identity is the identity") {
    const VolumeGeometry g = grid(12, 10, 9, 0.7);
    const BinaryMask m = sphere_mask(g, Vec3(5.3, 4.1, 4.0), 3.2);
    CHECK(resample_mask(m, g, RigidTransform::identity()) == m);
}

TEST_CASE("resample_mask by one voxel shifts and truncates") {
    const VolumeGeometry g = grid(8, 7, 6);
    oracle::Random rng(8);
    BinaryMask m(g);
    for (std::int64_t k = 0; k < 6; ++k)
        for (std::int64_t j = 0; j < 7; ++j)
            for (std::int64_t i = 0; i < 8; ++i) m.set(i, j, k, rng.uniform(0, 1) < 0.5);
    const BinaryMask out = resample_mask(m, g, RigidTransform::translation(Vec3(1, 0, 0)));
    for (std::int64_t k = 0; k < 6; ++k)
        for (std::int64_t j = 0; j < 7; ++j)
            for (std::int64_t i = 0; i < 8; ++i) CHECK(out.at(i, j, k) == (i >= 1 && m.at(i - 1, j, k)));
}

TEST_CASE("180 degree rotation of a centred sphere reproduces it") {
    const VolumeGeometry g = grid(21, 21, 21);
    const Vec3 c(10, 10, 10);
    const BinaryMask m = sphere_mask(g, c, 7.0);
    const RigidTransform half = compose(RigidTransform::translation(c),
                                        compose(RigidTransform::from_axis_angle(Vec3(0, 0, 1), std::numbers::pi),
                                                RigidTransform::translation(-c)));
    CHECK(resample_mask(m, g, half) == m);
}

TEST_CASE("resample_mask agrees with per-voxel nearest-neighbour sampling on another grid") {
    oracle::Random rng(21);
    VolumeGeometry src = grid(10, 11, 12, 1.0);
    src.origin = Vec3(-3, 2, 1);
    const BinaryMask m = sphere_mask(src, Vec3(5, 5, 6), 4.0);
    VolumeGeometry dst = grid(14, 13, 12, 0.8);
    dst.direction = Eigen::AngleAxisd(0.3, Vec3(1, 1, 0).normalized()).toRotationMatrix();
    dst.origin = Vec3(-6, -1, 0);
    const RigidTransform T(Eigen::AngleAxisd(0.2, Vec3(0, 1, 1).normalized()).toRotationMatrix(), Vec3(0.5, -1, 0.3));
    const BinaryMask out = resample_mask(m, dst, T);
    const RigidTransform inv = invert(T);
    std::size_t mismatches = 0;
    for (std::int64_t k = 0; k < dst.dims[2]; ++k)
        for (std::int64_t j = 0; j < dst.dims[1]; ++j)
            for (std::int64_t i = 0; i < dst.dims[0]; ++i) {
                const Vec3 s = world_to_voxel(src, inv(voxel_to_world(dst, Vec3(double(i), double(j), double(k)))));
                const auto a = std::llround(s[0]), b = std::llround(s[1]), cc = std::llround(s[2]);
                const bool expect = m.get_or_false(a, b, cc);
                mismatches += out.at(i, j, k) != expect;
            }
    CHECK(mismatches == 0);
}
