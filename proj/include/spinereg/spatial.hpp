#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <utility>
#include <vector>

#include "spinereg/mesh.hpp"
#include "spinereg/transform.hpp"

namespace spinereg {

/// Static kd-tree over a 3xN point matrix (columns are points).
class PointKdTree {
public:
    PointKdTree() = default;
    explicit PointKdTree(const Eigen::Matrix3Xd& points);

    /// Index and squared distance of the closest point. Tree must be non-empty.
    std::pair<Eigen::Index, double> nearest(const Vec3& q) const;

    /// Calls visit(index, squared_distance) for every point with squared
    /// distance <= r2. Visiting order is deterministic for a given tree.
    template <typename Visit>
    void radius_search(const Vec3& q, double r2, Visit&& visit) const {
        if (nodes_.empty()) return;
        radius_rec(0, q, r2, visit);
    }

    Eigen::Index size() const { return points_.cols(); }

private:
    struct Node {
        Vec3 lo, hi;  // bounding box
        std::int32_t begin, end;
        std::int32_t left = -1, right = -1;
    };

    std::int32_t build(std::int32_t begin, std::int32_t end);
    static double box_distance2(const Node& n, const Vec3& q);
    void nearest_rec(std::int32_t node, const Vec3& q, Eigen::Index& best, double& best_d2) const;

    template <typename Visit>
    void radius_rec(std::int32_t ni, const Vec3& q, double r2, Visit& visit) const {
        const Node& n = nodes_[ni];
        if (box_distance2(n, q) > r2) return;
        if (n.left < 0) {
            for (std::int32_t i = n.begin; i < n.end; ++i) {
                const Eigen::Index idx = order_[i];
                const double d2 = (points_.col(idx) - q).squaredNorm();
                if (d2 <= r2) visit(idx, d2);
            }
            return;
        }
        radius_rec(n.left, q, r2, visit);
        radius_rec(n.right, q, r2, visit);
    }

    Eigen::Matrix3Xd points_;
    std::vector<Eigen::Index> order_;
    std::vector<Node> nodes_;
};

/// Squared distance from p to the closed triangle (a, b, c).
double point_triangle_distance2(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

/// Axis-aligned bounding-volume hierarchy over a mesh's triangles for exact
/// closest-surface queries. The returned minimum is the same double the
/// brute-force loop over all triangles would produce.
class TriangleBvh {
public:
    explicit TriangleBvh(const TriangleMesh& mesh);

    /// Squared distance from q to the nearest triangle. Mesh must be non-empty.
    double distance2(const Vec3& q) const;

private:
    struct Node {
        Vec3 lo, hi;
        std::int32_t begin, end;
        std::int32_t left = -1, right = -1;
    };

    std::int32_t build(std::int32_t begin, std::int32_t end);
    double box_distance2(const Node& n, const Vec3& q) const;

    const TriangleMesh& mesh_;
    std::vector<std::int32_t> order_;
    std::vector<Vec3> centroid_;
    std::vector<Node> nodes_;
};

}  // namespace spinereg
