#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "spinereg/mesh.hpp"
#include "spinereg/volume.hpp"

namespace spinereg {

struct SurfaceDistanceStats {
    double mean = 0.0;  // mm
    double max = 0.0;   // mm
    double p95 = 0.0;   // mm
    std::size_t count = 0;
};

struct MetricsReport {
    int vertebra_label = 0;
    std::string timepoint;
    double dice = 0.0;
    SurfaceDistanceStats surface;
};

/// 2|A n B| / (|A| + |B|); 1 when both are empty. Masks must share a grid.
double dice(const BinaryMask& a, const BinaryMask& b);

/// Exact distance from every vertex of `from` to the closest triangle of `to`.
std::vector<double> surface_distances(const TriangleMesh& from, const TriangleMesh& to);

/// Statistics of the pooled distances a->b and b->a. max is the symmetric
/// Hausdorff distance over vertex samples; p95 uses linear interpolation
/// between closest ranks.
SurfaceDistanceStats hausdorff_stats(const TriangleMesh& a, const TriangleMesh& b);

/// Linear-interpolated percentile (q in [0, 100]) of an unsorted sample.
double percentile(std::vector<double> values, double q);

/// `label,timepoint,dice,hd_mean,hd_max,hd95,n_samples`
void write_metrics_header(std::ostream& os);
void write_metrics_row(std::ostream& os, const MetricsReport& row);

}  // namespace spinereg
