#include "spinereg/mesh.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>

#include "spinereg/error.hpp"

namespace spinereg {

void TriangleMesh::validate() const {
    const auto n = static_cast<std::int64_t>(vertices.size());
    std::vector<bool> used(vertices.size(), false);
    for (const auto& t : triangles) {
        for (int c = 0; c < 3; ++c) {
            if (t[c] < 0 || t[c] >= n) throw PreconditionError("triangle references a vertex out of range");
            used[t[c]] = true;
        }
        if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) {
            throw PreconditionError("triangle repeats a vertex index");
        }
    }
    for (std::size_t i = 0; i < vertices.size(); ++i) {
        if (!vertices[i].allFinite()) throw PreconditionError("mesh has non-finite vertex coordinates");
        if (!used[i]) throw PreconditionError("mesh has unreferenced vertices");
    }
}

Eigen::Matrix3Xd TriangleMesh::points() const {
    Eigen::Matrix3Xd out(3, static_cast<Eigen::Index>(vertices.size()));
    for (std::size_t i = 0; i < vertices.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = vertices[i];
    return out;
}

TriangleMesh compact(const TriangleMesh& mesh) {
    std::vector<std::int32_t> remap(mesh.vertices.size(), -1);
    TriangleMesh out;
    out.triangles.reserve(mesh.triangles.size());
    for (const auto& t : mesh.triangles) {
        Triangle nt{};
        for (int c = 0; c < 3; ++c) {
            auto& r = remap[t[c]];
            if (r < 0) {
                r = static_cast<std::int32_t>(out.vertices.size());
                out.vertices.push_back(mesh.vertices[t[c]]);
            }
            nt[c] = r;
        }
        out.triangles.push_back(nt);
    }
    return out;
}

namespace {

std::uint64_t edge_key(std::int32_t a, std::int32_t b) {
    const auto lo = static_cast<std::uint32_t>(std::min(a, b));
    const auto hi = static_cast<std::uint32_t>(std::max(a, b));
    return (std::uint64_t{lo} << 32) | hi;
}

}  // namespace

EdgeStats edge_stats(const TriangleMesh& mesh) {
    // per undirected edge: total uses and net direction (+1 for lo->hi)
    std::unordered_map<std::uint64_t, std::pair<int, int>> uses;
    uses.reserve(mesh.triangles.size() * 2);
    for (const auto& t : mesh.triangles) {
        for (int c = 0; c < 3; ++c) {
            const auto a = t[c], b = t[(c + 1) % 3];
            auto& u = uses[edge_key(a, b)];
            ++u.first;
            u.second += a < b ? 1 : -1;
        }
    }
    EdgeStats s;
    s.edges = uses.size();
    for (const auto& [key, u] : uses) {
        if (u.first == 1) ++s.boundary_edges;
        if (u.first > 2) ++s.nonmanifold_edges;
        if (u.first == 2 && u.second != 0) ++s.misoriented_edges;
    }
    return s;
}

bool is_watertight(const TriangleMesh& mesh) {
    if (mesh.triangles.empty()) return false;
    const auto s = edge_stats(mesh);
    return s.boundary_edges == 0 && s.nonmanifold_edges == 0 && s.misoriented_edges == 0;
}

std::int64_t euler_characteristic(const TriangleMesh& mesh) {
    const auto s = edge_stats(mesh);
    std::vector<bool> used(mesh.vertices.size(), false);
    for (const auto& t : mesh.triangles) {
        for (auto v : t) used[v] = true;
    }
    const auto v = std::count(used.begin(), used.end(), true);
    return static_cast<std::int64_t>(v) - static_cast<std::int64_t>(s.edges) +
           static_cast<std::int64_t>(mesh.triangles.size());
}

double signed_volume(const TriangleMesh& mesh) {
    // Reference point at the vertex centroid keeps the summands small.
    Vec3 ref = Vec3::Zero();
    for (const auto& v : mesh.vertices) ref += v;
    if (!mesh.vertices.empty()) ref /= static_cast<double>(mesh.vertices.size());
    double vol = 0.0;
    for (const auto& t : mesh.triangles) {
        const Vec3 a = mesh.vertices[t[0]] - ref;
        const Vec3 b = mesh.vertices[t[1]] - ref;
        const Vec3 c = mesh.vertices[t[2]] - ref;
        vol += a.dot(b.cross(c));
    }
    return vol / 6.0;
}

double enclosed_volume(const TriangleMesh& mesh) {
    if (mesh.empty()) return 0.0;
    if (!is_watertight(mesh)) throw PreconditionError("enclosed volume requires a watertight, consistently oriented mesh");
    return std::abs(signed_volume(mesh));
}

double surface_area(const TriangleMesh& mesh) {
    double area = 0.0;
    for (const auto& t : mesh.triangles) {
        const Vec3& a = mesh.vertices[t[0]];
        area += 0.5 * (mesh.vertices[t[1]] - a).cross(mesh.vertices[t[2]] - a).norm();
    }
    return area;
}

TriangleMesh apply_transform_to_mesh(const TriangleMesh& mesh, const RigidTransform& T) {
    TriangleMesh out = mesh;
    for (auto& v : out.vertices) v = T(v);
    return out;
}

// ---------------------------------------------------------------------------
// PLY

namespace {

void append_double(std::string& out, double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

}  // namespace

void write_ply(const TriangleMesh& mesh, const std::filesystem::path& path) {
    std::string out;
    out += "ply\nformat ascii 1.0\ncomment spinereg surface (mm)\n";
    out += "element vertex " + std::to_string(mesh.vertices.size()) + "\n";
    out += "property float x\nproperty float y\nproperty float z\n";
    out += "element face " + std::to_string(mesh.triangles.size()) + "\n";
    out += "property list uchar int vertex_indices\nend_header\n";
    for (const auto& v : mesh.vertices) {
        append_double(out, v[0]);
        out += ' ';
        append_double(out, v[1]);
        out += ' ';
        append_double(out, v[2]);
        out += '\n';
    }
    for (const auto& t : mesh.triangles) {
        out += "3 " + std::to_string(t[0]) + ' ' + std::to_string(t[1]) + ' ' + std::to_string(t[2]) + '\n';
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path.string() + "' for writing");
    os << out;
    if (!os) throw IoError("error while writing '" + path.string() + "'");
}

TriangleMesh read_ply(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    const std::string where = path.string();

    struct Element {
        std::string name;
        std::size_t count = 0;
        std::vector<std::string> props;  // scalar property names; "list" for list properties
    };
    std::vector<Element> elements;

    std::string line;
    if (!std::getline(in, line) || line.substr(0, 3) != "ply") throw IoError(where + ": malformed PLY (missing magic)");
    bool header_done = false;
    bool ascii = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "ascii") throw IoError(where + ": binary PLY is not supported");
            ascii = true;
        } else if (word == "element") {
            Element e;
            if (!(ls >> e.name >> e.count)) throw IoError(where + ": malformed PLY element line");
            elements.push_back(e);
        } else if (word == "property") {
            if (elements.empty()) throw IoError(where + ": PLY property before element");
            std::string type, name;
            ls >> type;
            if (type == "list") {
                std::string ct, it;
                ls >> ct >> it >> name;
                elements.back().props.push_back("list");
            } else {
                ls >> name;
                elements.back().props.push_back(name);
            }
        } else if (word == "end_header") {
            header_done = true;
            break;
        } else if (word == "comment" || word == "obj_info" || word.empty()) {
            continue;
        } else {
            throw IoError(where + ": malformed PLY header line '" + line + "'");
        }
    }
    if (!header_done || !ascii) throw IoError(where + ": malformed PLY header");

    TriangleMesh mesh;
    for (const auto& e : elements) {
        if (e.name == "vertex") {
            int ix = -1, iy = -1, iz = -1;
            for (int p = 0; p < static_cast<int>(e.props.size()); ++p) {
                if (e.props[p] == "x") ix = p;
                if (e.props[p] == "y") iy = p;
                if (e.props[p] == "z") iz = p;
                if (e.props[p] == "list") throw IoError(where + ": list property on vertex element");
            }
            if (ix < 0 || iy < 0 || iz < 0) throw IoError(where + ": PLY vertex element lacks x/y/z");
            mesh.vertices.reserve(e.count);
            std::vector<double> vals(e.props.size());
            for (std::size_t i = 0; i < e.count; ++i) {
                for (auto& v : vals) {
                    if (!(in >> v)) throw IoError(where + ": truncated or malformed vertex data");
                }
                mesh.vertices.emplace_back(vals[ix], vals[iy], vals[iz]);
            }
        } else if (e.name == "face") {
            if (e.props.size() != 1 || e.props[0] != "list") {
                throw IoError(where + ": PLY face element must be a single index list");
            }
            mesh.triangles.reserve(e.count);
            for (std::size_t i = 0; i < e.count; ++i) {
                long n = 0;
                if (!(in >> n)) throw IoError(where + ": truncated or malformed face data");
                if (n != 3) throw IoError(where + ": non-triangular face (" + std::to_string(n) + " indices)");
                Triangle t{};
                for (auto& idx : t) {
                    long v = 0;
                    if (!(in >> v)) throw IoError(where + ": truncated or malformed face data");
                    if (v < 0 || v >= static_cast<long>(mesh.vertices.size())) {
                        throw IoError(where + ": face index out of range");
                    }
                    idx = static_cast<std::int32_t>(v);
                }
                mesh.triangles.push_back(t);
            }
        } else {
            // Unknown element: skip its rows.
            std::getline(in, line);
            for (std::size_t i = 0; i < e.count; ++i) {
                if (!std::getline(in, line)) throw IoError(where + ": truncated PLY element '" + e.name + "'");
            }
        }
    }
    for (const auto& t : mesh.triangles) {
        if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) throw IoError(where + ": degenerate face repeats a vertex");
    }
    return mesh;
}

// ---------------------------------------------------------------------------

TriangleMesh make_icosphere(int level, double radius, const Vec3& center) {
    if (level < 0) throw PreconditionError("icosphere level must be non-negative");
    const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> v = {{-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0},
                           {0, -1, phi}, {0, 1, phi}, {0, -1, -phi}, {0, 1, -phi},
                           {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1}};
    for (auto& p : v) p.normalize();
    std::vector<Triangle> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9}, {5, 11, 4},
                               {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6}, {3, 6, 8},
                               {3, 8, 9},  {4, 9, 5},  {2, 4, 11}, {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
    for (int l = 0; l < level; ++l) {
        std::map<std::pair<int, int>, int> mid;
        auto midpoint = [&](int a, int b) {
            const auto key = std::minmax(a, b);
            auto it = mid.find(key);
            if (it != mid.end()) return it->second;
            v.push_back((v[a] + v[b]).normalized());
            const int id = static_cast<int>(v.size()) - 1;
            mid.emplace(key, id);
            return id;
        };
        std::vector<Triangle> nf;
        nf.reserve(f.size() * 4);
        for (const auto& t : f) {
            const int a = midpoint(t[0], t[1]), b = midpoint(t[1], t[2]), c = midpoint(t[2], t[0]);
            nf.push_back({t[0], a, c});
            nf.push_back({t[1], b, a});
            nf.push_back({t[2], c, b});
            nf.push_back({a, b, c});
        }
        f = std::move(nf);
    }
    TriangleMesh mesh;
    mesh.vertices.reserve(v.size());
    for (const auto& p : v) mesh.vertices.push_back(center + radius * p);
    mesh.triangles = std::move(f);
    return mesh;
}

}  // namespace spinereg
