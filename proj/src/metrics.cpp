#include "spinereg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "spinereg/error.hpp"
#include "spinereg/spatial.hpp"

namespace spinereg {

double dice(const BinaryMask& a, const BinaryMask& b) {
    const auto& ga = a.geometry();
    const auto& gb = b.geometry();
    if (ga.dims != gb.dims || (ga.spacing - gb.spacing).cwiseAbs().maxCoeff() > 1e-6) {
        throw PreconditionError("dice requires masks on the same grid");
    }
    std::size_t na = 0, nb = 0, both = 0;
    const auto& ba = a.bits();
    const auto& bb = b.bits();
    for (std::size_t i = 0; i < ba.size(); ++i) {
        na += ba[i];
        nb += bb[i];
        both += ba[i] & bb[i];
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

std::vector<double> surface_distances(const TriangleMesh& from, const TriangleMesh& to) {
    if (from.vertices.empty() || to.empty()) throw PreconditionError("surface distances need non-empty meshes");
    const TriangleBvh bvh(to);
    std::vector<double> out;
    out.reserve(from.vertices.size());
    for (const auto& v : from.vertices) out.push_back(std::sqrt(bvh.distance2(v)));
    return out;
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw PreconditionError("percentile of an empty sample");
    std::sort(values.begin(), values.end());
    const double pos = std::clamp(q, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

SurfaceDistanceStats hausdorff_stats(const TriangleMesh& a, const TriangleMesh& b) {
    std::vector<double> pooled = surface_distances(a, b);
    const std::vector<double> back = surface_distances(b, a);
    pooled.insert(pooled.end(), back.begin(), back.end());
    // Sorting first makes the mean independent of argument order.
    std::sort(pooled.begin(), pooled.end());

    SurfaceDistanceStats s;
    s.count = pooled.size();
    double sum = 0.0;
    for (double d : pooled) sum += d;
    s.mean = sum / static_cast<double>(pooled.size());
    s.max = pooled.back();
    s.p95 = percentile(pooled, 95.0);
    return s;
}

void write_metrics_header(std::ostream& os) { os << "label,timepoint,dice,hd_mean,hd_max,hd95,n_samples\n"; }

void write_metrics_row(std::ostream& os, const MetricsReport& row) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%d,%s,%.9f,%.9f,%.9f,%.9f,%zu\n", row.vertebra_label, row.timepoint.c_str(),
                  row.dice, row.surface.mean, row.surface.max, row.surface.p95, row.surface.count);
    os << buf;
}

}  // namespace spinereg
