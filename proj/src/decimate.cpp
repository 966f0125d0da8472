#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <queue>
#include <tuple>
#include <vector>

#include "spinereg/error.hpp"
#include "spinereg/mesh.hpp"

namespace spinereg {

void DecimationParams::validate() const {
    if (target_triangles < 4) throw PreconditionError("target_triangles must be at least 4");
    if (!(max_geometric_error > 0.0)) throw PreconditionError("max_geometric_error must be positive");
    if (!(max_edge_length >= 0.0)) throw PreconditionError("max_edge_length must be non-negative");
}

namespace {

using Quadric = Eigen::Matrix4d;

double quadric_cost(const Quadric& q, const Vec3& p) {
    const Eigen::Vector4d h(p[0], p[1], p[2], 1.0);
    return std::max(0.0, h.dot(q * h));
}

struct Candidate {
    double cost;
    std::int32_t u, v;
    std::uint32_t ver_u, ver_v;
    Vec3 position;

    // Min-heap on cost, ties broken by vertex ids for determinism.
    bool operator>(const Candidate& o) const { return std::tie(cost, u, v) > std::tie(o.cost, o.u, o.v); }
};

class Decimator {
public:
    Decimator(const TriangleMesh& mesh, const DecimationParams& params)
        : params_(params),
          pos_(mesh.vertices),
          tris_(mesh.triangles),
          tri_alive_(mesh.triangles.size(), true),
          quadric_(mesh.vertices.size(), Quadric::Zero()),
          vert_faces_(mesh.vertices.size()),
          version_(mesh.vertices.size(), 0),
          alive_faces_(static_cast<std::int64_t>(mesh.triangles.size())) {
        for (std::size_t f = 0; f < tris_.size(); ++f) {
            const auto& t = tris_[f];
            const Vec3 n = (pos_[t[1]] - pos_[t[0]]).cross(pos_[t[2]] - pos_[t[0]]);
            const double len = n.norm();
            if (len > 0.0) {
                const Vec3 u = n / len;
                const Eigen::Vector4d plane(u[0], u[1], u[2], -u.dot(pos_[t[0]]));
                const Quadric kp = plane * plane.transpose();
                for (auto v : t) quadric_[v] += kp;
            }
            for (auto v : t) vert_faces_[v].push_back(static_cast<std::int32_t>(f));
        }
    }

    TriangleMesh run() {
        for (std::size_t f = 0; f < tris_.size(); ++f) {
            const auto& t = tris_[f];
            for (int c = 0; c < 3; ++c) {
                // Each interior edge appears in two faces; push it from the lo->hi one.
                if (t[c] < t[(c + 1) % 3]) push(t[c], t[(c + 1) % 3]);
            }
        }
        const double max_cost = params_.max_geometric_error * params_.max_geometric_error;
        while (alive_faces_ > params_.target_triangles && alive_faces_ > 4 && !heap_.empty()) {
            const Candidate c = heap_.top();
            heap_.pop();
            if (version_[c.u] != c.ver_u || version_[c.v] != c.ver_v) continue;
            // Everything left in the heap costs at least as much.
            if (c.cost > max_cost) break;
            if (!link_condition(c.u, c.v) || too_long(c.position) || flips(c.u, c.v, c.position) ||
                flips(c.v, c.u, c.position)) {
                continue;
            }
            collapse(c.u, c.v, c.position);
        }
        TriangleMesh out;
        out.vertices = pos_;
        for (std::size_t f = 0; f < tris_.size(); ++f) {
            if (tri_alive_[f]) out.triangles.push_back(tris_[f]);
        }
        return compact(out);
    }

private:
    void push(std::int32_t a, std::int32_t b) {
        const std::int32_t u = std::min(a, b), v = std::max(a, b);
        const Quadric q = quadric_[u] + quadric_[v];
        // Candidate positions: quadric minimiser when well conditioned, else
        // the best of the endpoints and the midpoint.
        const Vec3 mid = 0.5 * (pos_[u] + pos_[v]);
        Vec3 best = mid;
        double best_cost = quadric_cost(q, mid);
        for (const Vec3& p : {pos_[u], pos_[v]}) {
            const double c = quadric_cost(q, p);
            if (c < best_cost) best_cost = c, best = p;
        }
        const Eigen::Matrix3d A = q.topLeftCorner<3, 3>();
        Eigen::JacobiSVD<Eigen::Matrix3d> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
        const auto& sv = svd.singularValues();
        if (sv[0] > 0.0 && sv[2] > 1e-6 * sv[0]) {
            const Vec3 p = svd.solve(-q.topRightCorner<3, 1>());
            // Reject minimisers that wander far from the edge.
            if ((p - mid).norm() <= (pos_[u] - pos_[v]).norm()) {
                const double c = quadric_cost(q, p);
                if (c < best_cost) best_cost = c, best = p;
            }
        }
        heap_.push({best_cost, u, v, version_[u], version_[v], best});
    }

    // Vertices opposite `a` across its incident faces, and the opposite edges.
    void ring(std::int32_t a, std::vector<std::int32_t>& verts, std::vector<std::pair<std::int32_t, std::int32_t>>& edges) const {
        verts.clear();
        edges.clear();
        for (auto f : vert_faces_[a]) {
            const auto& t = tris_[f];
            std::int32_t o[2];
            int n = 0;
            for (auto x : t) {
                if (x != a) o[n++] = x;
            }
            verts.push_back(o[0]);
            verts.push_back(o[1]);
            edges.emplace_back(std::min(o[0], o[1]), std::max(o[0], o[1]));
        }
        std::sort(verts.begin(), verts.end());
        verts.erase(std::unique(verts.begin(), verts.end()), verts.end());
        std::sort(edges.begin(), edges.end());
    }

    // Lk(u) n Lk(v) must equal Lk(uv) = {two opposite vertices}, with no shared edges.
    bool link_condition(std::int32_t u, std::int32_t v) {
        ring(u, ru_, eu_);
        ring(v, rv_, ev_);
        std::vector<std::int32_t> common;
        std::set_intersection(ru_.begin(), ru_.end(), rv_.begin(), rv_.end(), std::back_inserter(common));
        common.erase(std::remove_if(common.begin(), common.end(), [&](auto x) { return x == u || x == v; }),
                     common.end());
        int shared_faces = 0;
        for (auto f : vert_faces_[u]) {
            const auto& t = tris_[f];
            if (t[0] == v || t[1] == v || t[2] == v) ++shared_faces;
        }
        if (shared_faces != 2 || common.size() != 2) return false;
        std::vector<std::pair<std::int32_t, std::int32_t>> common_edges;
        std::set_intersection(eu_.begin(), eu_.end(), ev_.begin(), ev_.end(), std::back_inserter(common_edges));
        return common_edges.empty();
    }

    // Edges from p to the merged ring (rings as left by link_condition).
    bool too_long(const Vec3& p) const {
        const double lmax = params_.max_edge_length;
        if (lmax <= 0.0) return false;
        for (const auto* r : {&ru_, &rv_}) {
            for (auto w : *r) {
                if ((pos_[w] - p).squaredNorm() > lmax * lmax) return true;
            }
        }
        return false;
    }

    // True if moving `a` (merging with `b`) to p flips or degenerates a surviving face.
    bool flips(std::int32_t a, std::int32_t b, const Vec3& p) const {
        for (auto f : vert_faces_[a]) {
            const auto& t = tris_[f];
            if (t[0] == b || t[1] == b || t[2] == b) continue;
            std::array<Vec3, 3> q{pos_[t[0]], pos_[t[1]], pos_[t[2]]};
            const Vec3 before = (q[1] - q[0]).cross(q[2] - q[0]);
            for (int c = 0; c < 3; ++c) {
                if (t[c] == a) q[c] = p;
            }
            const Vec3 after = (q[1] - q[0]).cross(q[2] - q[0]);
            const double na = after.norm(), nb = before.norm();
            if (na <= 1e-12 * std::max(1.0, nb)) return true;
            if (before.dot(after) < 0.2 * na * nb) return true;
        }
        return false;
    }

    void collapse(std::int32_t u, std::int32_t v, const Vec3& p) {
        pos_[u] = p;
        quadric_[u] += quadric_[v];
        std::vector<std::int32_t> merged;
        for (auto f : vert_faces_[u]) {
            const auto& t = tris_[f];
            if (t[0] == v || t[1] == v || t[2] == v) {
                tri_alive_[f] = false;
                --alive_faces_;
            } else {
                merged.push_back(f);
            }
        }
        for (auto f : vert_faces_[v]) {
            if (!tri_alive_[f]) continue;
            for (auto& x : tris_[f]) {
                if (x == v) x = u;
            }
            merged.push_back(f);
        }
        // Drop the removed faces from the two opposite vertices' lists.
        for (auto f : vert_faces_[v]) {
            if (tri_alive_[f]) continue;
            for (auto x : tris_[f]) {
                if (x == u || x == v) continue;
                auto& lst = vert_faces_[x];
                lst.erase(std::remove(lst.begin(), lst.end(), f), lst.end());
            }
        }
        vert_faces_[u] = std::move(merged);
        vert_faces_[v].clear();
        ++version_[u];
        ++version_[v];

        ring(u, ru_, eu_);
        for (auto w : ru_) push(u, w);
    }

    DecimationParams params_;
    std::vector<Vec3> pos_;
    std::vector<Triangle> tris_;
    std::vector<bool> tri_alive_;
    std::vector<Quadric> quadric_;
    std::vector<std::vector<std::int32_t>> vert_faces_;
    std::vector<std::uint32_t> version_;
    std::int64_t alive_faces_;
    std::priority_queue<Candidate, std::vector<Candidate>, std::greater<>> heap_;

    std::vector<std::int32_t> ru_, rv_;
    std::vector<std::pair<std::int32_t, std::int32_t>> eu_, ev_;
};

}  // namespace

TriangleMesh decimate(const TriangleMesh& mesh, const DecimationParams& params) {
    params.validate();
    mesh.validate();
    if (mesh.empty()) return mesh;
    const auto stats = edge_stats(mesh);
    if (stats.boundary_edges || stats.nonmanifold_edges || stats.misoriented_edges) {
        throw PreconditionError("decimation requires a closed, consistently oriented manifold mesh (non-manifold input)");
    }
    if (static_cast<std::int64_t>(mesh.triangles.size()) <= params.target_triangles) return mesh;
    return Decimator(mesh, params).run();
}

}  // namespace spinereg
