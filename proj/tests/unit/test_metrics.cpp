#include <doctest.h>

#include <algorithm>
#include <sstream>

#include "fixtures.hpp"
#include "spinereg/error.hpp"
#include "spinereg/metrics.hpp"

using namespace spinereg;

namespace {

BinaryMask box(const VolumeGeometry& g, Index3 lo, Index3 hi) {
    BinaryMask m(g);
    for (std::int64_t k = lo[2]; k < hi[2]; ++k)
        for (std::int64_t j = lo[1]; j < hi[1]; ++j)
            for (std::int64_t i = lo[0]; i < hi[0]; ++i) m.set(i, j, k, true);
    return m;
}

// Unit square in the plane z = h, two triangles, normal +z.
TriangleMesh square(double h) {
    TriangleMesh m;
    m.vertices = {Vec3(0, 0, h), Vec3(1, 0, h), Vec3(1, 1, h), Vec3(0, 1, h)};
    m.triangles = {{0, 1, 2}, {0, 2, 3}};
    return m;
}

TriangleMesh random_soup(oracle::Random& rng, int triangles, double half) {
    TriangleMesh m;
    for (int t = 0; t < triangles; ++t) {
        const Vec3 c = rng.point(half);
        const std::int32_t base = static_cast<std::int32_t>(m.vertices.size());
        for (int k = 0; k < 3; ++k) m.vertices.push_back(c + rng.point(2.0));
        m.triangles.push_back({base, base + 1, base + 2});
    }
    return m;
}

}  // namespace

TEST_CASE("dice examples") {
    const VolumeGeometry g = fixture::grid(20, 12, 12);
    const BinaryMask a = box(g, {0, 0, 0}, {10, 10, 10});
    const BinaryMask b = box(g, {5, 0, 0}, {15, 10, 10});
    CHECK(dice(a, b) == 0.5);
    CHECK(dice(a, a) == 1.0);
    CHECK(dice(a, box(g, {10, 0, 0}, {20, 10, 10})) == 0.0);
    CHECK(dice(BinaryMask(g), BinaryMask(g)) == 1.0);
    CHECK(dice(a, BinaryMask(g)) == 0.0);
    CHECK_THROWS_AS(dice(a, BinaryMask(fixture::grid(20, 12, 13))), PreconditionError);
    CHECK_THROWS_AS(dice(a, BinaryMask(fixture::grid(20, 12, 12, 1.1))), PreconditionError);
}

TEST_CASE("dice matches the voxel-count oracle and is symmetric") {
    oracle::Random rng(31);
    for (int trial = 0; trial < 30; ++trial) {
        const BinaryMask a = fixture::random_blob(rng, 14), b = fixture::random_blob(rng, 14);
        CHECK(dice(a, b) == doctest::Approx(oracle::dice(a, b)).epsilon(1e-15));
        CHECK(dice(a, b) == dice(b, a));
        if (a.count() > 0) CHECK(dice(a, a) == 1.0);
        CHECK(dice(a, b) >= 0.0);
        CHECK(dice(a, b) <= 1.0);
    }
}

TEST_CASE("dice is monotone under shrinking overlap of nested boxes") {
    const VolumeGeometry g = fixture::grid(30, 8, 8);
    const BinaryMask c = box(g, {0, 0, 0}, {20, 8, 8});
    // a ⊆ b ⊆ c: b grows from the left edge of c.
    double prev = -1.0;
    for (std::int64_t w = 1; w <= 20; ++w) {
        const double d = dice(box(g, {0, 0, 0}, {w, 8, 8}), c);
        CHECK(d > prev);
        prev = d;
    }
    CHECK(prev == 1.0);
}

TEST_CASE("surface distance examples") {
    const TriangleMesh s0 = square(0.0), s3 = square(3.0);
    for (double d : surface_distances(s0, s3)) CHECK(d == 3.0);
    for (double d : surface_distances(s0, s0)) CHECK(d == 0.0);
    const auto st = hausdorff_stats(s0, s3);
    CHECK(st.mean == 3.0);
    CHECK(st.max == 3.0);
    CHECK(st.p95 == 3.0);
    CHECK(st.count == 8);
    const auto self = hausdorff_stats(s3, s3);
    CHECK(self.mean == 0.0);
    CHECK(self.max == 0.0);
    CHECK(self.p95 == 0.0);
    CHECK_THROWS_AS(surface_distances(TriangleMesh{}, s0), PreconditionError);
    CHECK_THROWS_AS(surface_distances(s0, TriangleMesh{}), PreconditionError);
    CHECK_THROWS_AS(hausdorff_stats(s0, TriangleMesh{}), PreconditionError);
}

TEST_CASE("surface distances match the brute-force oracle on small soups") {
    oracle::Random rng(32);
    for (int trial = 0; trial < 200; ++trial) {
        const TriangleMesh a = random_soup(rng, rng.integer(1, 50), 6.0);
        const TriangleMesh b = random_soup(rng, rng.integer(1, 50), 6.0);
        const auto got = surface_distances(a, b), want = oracle::surface_distances(a, b);
        REQUIRE(got.size() == want.size());
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-12);
    }
}

TEST_CASE("hausdorff stats: symmetry, ordering and rigid invariance") {
    oracle::Random rng(33);
    for (int trial = 0; trial < 20; ++trial) {
        const TriangleMesh a = marching_cubes(fixture::random_blob(rng, 16, false));
        const TriangleMesh b = marching_cubes(fixture::random_blob(rng, 16, false));
        if (a.empty() || b.empty()) continue;
        const auto ab = hausdorff_stats(a, b), ba = hausdorff_stats(b, a);
        CHECK(ab.mean == ba.mean);
        CHECK(ab.max == ba.max);
        CHECK(ab.p95 == ba.p95);
        CHECK(ab.count == a.vertices.size() + b.vertices.size());
        CHECK(ab.mean >= 0.0);
        CHECK(ab.p95 <= ab.max);

        const RigidTransform G = rng.transform(50.0);
        const auto moved = hausdorff_stats(apply_transform_to_mesh(a, G), apply_transform_to_mesh(b, G));
        CHECK(std::abs(moved.mean - ab.mean) < 1e-9);
        CHECK(std::abs(moved.max - ab.max) < 1e-9);
        CHECK(std::abs(moved.p95 - ab.p95) < 1e-9);
    }
}

TEST_CASE("decimated icosphere stays within the decimation error bound") {
    const TriangleMesh s = make_icosphere(4, 10.0);
    DecimationParams p;
    p.target_triangles = 1000;
    p.max_geometric_error = 0.5;
    const auto st = hausdorff_stats(decimate(s, p), s);
    CHECK(st.mean <= p.max_geometric_error);
    CHECK(st.mean > 0.0);
}

TEST_CASE("percentile interpolates between closest ranks") {
    CHECK(percentile({5.0}, 95.0) == 5.0);
    CHECK(percentile({3.0, 1.0, 2.0}, 50.0) == 2.0);
    CHECK(percentile({0.0, 10.0}, 95.0) == doctest::Approx(9.5).epsilon(1e-15));
    CHECK(percentile({1.0, 2.0, 3.0, 4.0, 5.0}, 0.0) == 1.0);
    CHECK(percentile({1.0, 2.0, 3.0, 4.0, 5.0}, 100.0) == 5.0);
    // 21 values 0..20: rank 0.95 * 20 = 19 exactly.
    std::vector<double> v(21);
    for (int i = 0; i < 21; ++i) v[i] = double(20 - i);
    CHECK(percentile(v, 95.0) == 19.0);
    CHECK_THROWS_AS(percentile({}, 50.0), PreconditionError);
}

TEST_CASE("metrics table format") {
    std::ostringstream os;
    write_metrics_header(os);
    MetricsReport r;
    r.vertebra_label = 20;
    r.timepoint = "t1";
    r.dice = 0.95;
    r.surface = {0.25, 1.5, 0.75, 123};
    write_metrics_row(os, r);
    CHECK(os.str() == "label,timepoint,dice,hd_mean,hd_max,hd95,n_samples\n"
                      "20,t1,0.950000000,0.250000000,1.500000000,0.750000000,123\n");
}
