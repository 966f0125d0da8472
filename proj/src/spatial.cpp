#include "spinereg/spatial.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "spinereg/error.hpp"

namespace spinereg {

namespace {

constexpr std::int32_t kLeafSize = 8;

int widest_axis(const Vec3& lo, const Vec3& hi) {
    Eigen::Index axis = 0;
    (hi - lo).maxCoeff(&axis);
    return static_cast<int>(axis);
}

}  // namespace

PointKdTree::PointKdTree(const Eigen::Matrix3Xd& points) : points_(points) {
    order_.resize(static_cast<std::size_t>(points.cols()));
    std::iota(order_.begin(), order_.end(), Eigen::Index{0});
    if (!order_.empty()) {
        nodes_.reserve(2 * order_.size() / kLeafSize + 2);
        build(0, static_cast<std::int32_t>(order_.size()));
    }
}

std::int32_t PointKdTree::build(std::int32_t begin, std::int32_t end) {
    Node n;
    n.begin = begin;
    n.end = end;
    n.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    n.hi = -n.lo;
    for (std::int32_t i = begin; i < end; ++i) {
        n.lo = n.lo.cwiseMin(points_.col(order_[i]));
        n.hi = n.hi.cwiseMax(points_.col(order_[i]));
    }
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(n);
    if (end - begin <= kLeafSize) return id;

    const int axis = widest_axis(n.lo, n.hi);
    const std::int32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](Eigen::Index a, Eigen::Index b) {
                         const double pa = points_(axis, a), pb = points_(axis, b);
                         return pa < pb || (pa == pb && a < b);
                     });
    const std::int32_t left = build(begin, mid);
    const std::int32_t right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

double PointKdTree::box_distance2(const Node& n, const Vec3& q) {
    const Vec3 d = (n.lo - q).cwiseMax(q - n.hi).cwiseMax(0.0);
    return d.squaredNorm();
}

std::pair<Eigen::Index, double> PointKdTree::nearest(const Vec3& q) const {
    if (nodes_.empty()) throw PreconditionError("nearest-neighbour query on an empty point set");
    Eigen::Index best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    nearest_rec(0, q, best, best_d2);
    return {best, best_d2};
}

void PointKdTree::nearest_rec(std::int32_t ni, const Vec3& q, Eigen::Index& best, double& best_d2) const {
    const Node& n = nodes_[ni];
    if (box_distance2(n, q) > best_d2) return;
    if (n.left < 0) {
        for (std::int32_t i = n.begin; i < n.end; ++i) {
            const Eigen::Index idx = order_[i];
            const double d2 = (points_.col(idx) - q).squaredNorm();
            if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
                best_d2 = d2;
                best = idx;
            }
        }
        return;
    }
    const double dl = box_distance2(nodes_[n.left], q);
    const double dr = box_distance2(nodes_[n.right], q);
    if (dl <= dr) {
        nearest_rec(n.left, q, best, best_d2);
        nearest_rec(n.right, q, best, best_d2);
    } else {
        nearest_rec(n.right, q, best, best_d2);
        nearest_rec(n.left, q, best, best_d2);
    }
}

// ---------------------------------------------------------------------------

double point_triangle_distance2(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
    // Closest point by Voronoi region of the triangle (Ericson, RTCD 5.1.5).
    const Vec3 ab = b - a, ac = c - a, ap = p - a;
    const double d1 = ab.dot(ap), d2 = ac.dot(ap);
    if (d1 <= 0.0 && d2 <= 0.0) return ap.squaredNorm();

    const Vec3 bp = p - b;
    const double d3 = ab.dot(bp), d4 = ac.dot(bp);
    if (d3 >= 0.0 && d4 <= d3) return bp.squaredNorm();

    const double vc = d1 * d4 - d3 * d2;
    if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) {
        const double v = d1 / (d1 - d3);
        return (p - (a + v * ab)).squaredNorm();
    }

    const Vec3 cp = p - c;
    const double d5 = ab.dot(cp), d6 = ac.dot(cp);
    if (d6 >= 0.0 && d5 <= d6) return cp.squaredNorm();

    const double vb = d5 * d2 - d1 * d6;
    if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) {
        const double w = d2 / (d2 - d6);
        return (p - (a + w * ac)).squaredNorm();
    }

    const double va = d3 * d6 - d5 * d4;
    if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) {
        const double w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (p - (b + w * (c - b))).squaredNorm();
    }

    const double area2 = va + vb + vc;
    if (!(area2 > 0.0)) {
        // Zero-area triangle: closest of its three edges.
        auto seg = [&p](const Vec3& s, const Vec3& e) {
            const Vec3 d = e - s;
            const double l2 = d.squaredNorm();
            const double u = l2 > 0.0 ? std::clamp((p - s).dot(d) / l2, 0.0, 1.0) : 0.0;
            return (p - (s + u * d)).squaredNorm();
        };
        return std::min({seg(a, b), seg(b, c), seg(c, a)});
    }
    const double denom = 1.0 / area2;
    const double v = vb * denom, w = vc * denom;
    return (p - (a + ab * v + ac * w)).squaredNorm();
}

TriangleBvh::TriangleBvh(const TriangleMesh& mesh) : mesh_(mesh) {
    const auto n = static_cast<std::int32_t>(mesh.triangles.size());
    order_.resize(static_cast<std::size_t>(n));
    std::iota(order_.begin(), order_.end(), 0);
    centroid_.reserve(order_.size());
    for (const auto& t : mesh.triangles) {
        centroid_.push_back((mesh.vertices[t[0]] + mesh.vertices[t[1]] + mesh.vertices[t[2]]) / 3.0);
    }
    if (n > 0) {
        nodes_.reserve(2 * order_.size() / 4 + 2);
        build(0, n);
    }
}

std::int32_t TriangleBvh::build(std::int32_t begin, std::int32_t end) {
    Node n;
    n.begin = begin;
    n.end = end;
    n.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    n.hi = -n.lo;
    Vec3 clo = n.lo, chi = n.hi;
    for (std::int32_t i = begin; i < end; ++i) {
        for (auto v : mesh_.triangles[order_[i]]) {
            n.lo = n.lo.cwiseMin(mesh_.vertices[v]);
            n.hi = n.hi.cwiseMax(mesh_.vertices[v]);
        }
        clo = clo.cwiseMin(centroid_[order_[i]]);
        chi = chi.cwiseMax(centroid_[order_[i]]);
    }
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(n);
    if (end - begin <= 4) return id;

    const int axis = widest_axis(clo, chi);
    const std::int32_t mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](std::int32_t a, std::int32_t b) {
                         const double pa = centroid_[a][axis], pb = centroid_[b][axis];
                         return pa < pb || (pa == pb && a < b);
                     });
    const std::int32_t left = build(begin, mid);
    const std::int32_t right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

double TriangleBvh::box_distance2(const Node& n, const Vec3& q) const {
    const Vec3 d = (n.lo - q).cwiseMax(q - n.hi).cwiseMax(0.0);
    return d.squaredNorm();
}

double TriangleBvh::distance2(const Vec3& q) const {
    if (nodes_.empty()) throw PreconditionError("distance query against an empty mesh");
    double best = std::numeric_limits<double>::infinity();
    // Pruning leaves a relative margin so rounding in the box bound can
    // never discard the triangle that attains the brute-force minimum.
    auto prunable = [&best](double box_d2) { return box_d2 > best * (1.0 + 1e-9) + 1e-300; };

    std::vector<std::int32_t> stack{0};
    stack.reserve(64);
    while (!stack.empty()) {
        const Node& n = nodes_[stack.back()];
        stack.pop_back();
        if (prunable(box_distance2(n, q))) continue;
        if (n.left < 0) {
            for (std::int32_t i = n.begin; i < n.end; ++i) {
                const auto& t = mesh_.triangles[order_[i]];
                best = std::min(best, point_triangle_distance2(q, mesh_.vertices[t[0]], mesh_.vertices[t[1]],
                                                               mesh_.vertices[t[2]]));
            }
            continue;
        }
        const double dl = box_distance2(nodes_[n.left], q);
        const double dr = box_distance2(nodes_[n.right], q);
        // Push the farther child first so the nearer one is searched first.
        if (dl <= dr) {
            stack.push_back(n.right);
            stack.push_back(n.left);
        } else {
            stack.push_back(n.left);
            stack.push_back(n.right);
        }
    }
    return best;
}

}  // namespace spinereg
