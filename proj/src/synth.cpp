#include "spinereg/synth.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "spinereg/error.hpp"
#include "spinereg/random.hpp"

namespace spinereg {

namespace {

// Depth (mm) by which the posterior box reaches into the body so the two
// parts form one connected solid.
constexpr double kProcessOverlap = 1.0;
// Fraction of the body's z semi-axis by which the box is shifted upward;
// removes the body+box symmetry under a half-turn about y.
constexpr double kProcessLift = 0.2;

}  // namespace

void PhantomSpec::validate() const {
    if (n_vertebrae < 1 || n_vertebrae > 65535) throw PreconditionError("n_vertebrae must be in [1, 65535]");
    if ((spacing.array() <= 0.0).any()) throw PreconditionError("phantom spacing must be positive");
    if ((body_radii.array() <= 0.0).any()) throw PreconditionError("body radii must be positive");
    if ((process_size.array() < 0.0).any()) throw PreconditionError("process size must be non-negative");
    if (inter_body_gap < 0.0 || margin < 0.0) throw PreconditionError("gap and margin must be non-negative");
    if (!(shape_jitter >= 0.0 && shape_jitter < 0.5)) throw PreconditionError("shape_jitter must lie in [0, 0.5)");
    if (!(max_tilt >= 0.0 && max_tilt <= 90.0)) throw PreconditionError("max_tilt must lie in [0, 90] degrees");
}

bool VertebraShape::contains(const Vec3& p) const {
    const Vec3 q = orientation.transpose() * (p - center);
    if (q.cwiseQuotient(radii).squaredNorm() <= 1.0) return true;
    return (q.array() >= process_lo.array()).all() && (q.array() <= process_hi.array()).all();
}

void VertebraShape::bounds(Vec3& lo, Vec3& hi) const {
    const Vec3 llo = (-radii).cwiseMin(process_lo), lhi = radii.cwiseMax(process_hi);
    lo = Vec3::Constant(std::numeric_limits<double>::infinity());
    hi = -lo;
    for (int c = 0; c < 8; ++c) {
        const Vec3 corner(c & 1 ? lhi[0] : llo[0], c & 2 ? lhi[1] : llo[1], c & 4 ? lhi[2] : llo[2]);
        const Vec3 w = center + orientation * corner;
        lo = lo.cwiseMin(w);
        hi = hi.cwiseMax(w);
    }
}

double VertebraShape::analytic_volume() const {
    return 4.0 / 3.0 * std::numbers::pi * radii.prod() + (process_hi - process_lo).prod();
}

namespace {

// Writes each shape's label into `vol` at voxel centres it contains. Throws
// `outside` if a shape reaches within `border` voxels of the grid edge.
void rasterize_into(LabelVolume& vol, const VertebraShape& s, const RigidTransform& T, std::int64_t border,
                    const char* outside) {
    const auto& g = vol.geometry();
    const RigidTransform inv = invert(T);
    Vec3 lo, hi;
    s.bounds(lo, hi);
    Vec3 vlo = Vec3::Constant(std::numeric_limits<double>::infinity()), vhi = -vlo;
    for (int c = 0; c < 8; ++c) {
        const Vec3 corner(c & 1 ? hi[0] : lo[0], c & 2 ? hi[1] : lo[1], c & 4 ? hi[2] : lo[2]);
        const Vec3 v = world_to_voxel(g, T(corner));
        vlo = vlo.cwiseMin(v);
        vhi = vhi.cwiseMax(v);
    }
    Index3 ilo, ihi;
    for (int a = 0; a < 3; ++a) {
        ilo[a] = static_cast<std::int64_t>(std::floor(vlo[a]));
        ihi[a] = static_cast<std::int64_t>(std::ceil(vhi[a]));
    }
    bool hit_border = false;
    for (std::int64_t k = ilo[2]; k <= ihi[2]; ++k) {
        for (std::int64_t j = ilo[1]; j <= ihi[1]; ++j) {
            for (std::int64_t i = ilo[0]; i <= ihi[0]; ++i) {
                if (!s.contains(inv(voxel_to_world(g, Vec3(double(i), double(j), double(k)))))) continue;
                const bool inside = i >= border && j >= border && k >= border && i < g.dims[0] - border &&
                                    j < g.dims[1] - border && k < g.dims[2] - border;
                if (!inside) {
                    hit_border = true;
                    if (!g.contains(i, j, k)) continue;
                }
                auto& v = vol.at(i, j, k);
                if (v != 0 && v != s.label) throw DegenerateError("vertebrae overlap; increase inter_body_gap");
                v = s.label;
            }
        }
    }
    if (hit_border) throw PreconditionError("label " + std::to_string(s.label) + " " + outside);
}

}  // namespace

Phantom make_phantom(const PhantomSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);

    const Vec3& ps = spec.process_size;
    const double half_height = std::max(spec.body_radii.z(), kProcessLift * spec.body_radii.z() + ps.z() / 2.0) *
                               (1.0 + spec.shape_jitter);

    Phantom ph;
    for (int i = 0; i < spec.n_vertebrae; ++i) {
        VertebraShape s;
        s.label = static_cast<LabelVolume::Label>(i + 1);
        for (int a = 0; a < 3; ++a) s.radii[a] = spec.body_radii[a] * (1.0 + spec.shape_jitter * rng.uniform(-1.0, 1.0));
        const Vec3 axis = rng.unit_vector();
        const double tilt = rng.uniform(0.0, spec.max_tilt) * std::numbers::pi / 180.0;
        s.orientation = RigidTransform::from_axis_angle(axis, tilt).rotation();
        s.center = Vec3(0.0, 0.0, i * (2.0 * half_height + spec.inter_body_gap));
        const double y0 = s.radii.y() - kProcessOverlap;
        const double zc = kProcessLift * s.radii.z();
        s.process_lo = Vec3(-ps.x() / 2.0, y0, zc - ps.z() / 2.0);
        s.process_hi = Vec3(ps.x() / 2.0, y0 + ps.y(), zc + ps.z() / 2.0);
        ph.shapes.push_back(s);
    }

    // Place the stack `margin` mm from the grid origin.
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    for (const auto& s : ph.shapes) {
        Vec3 slo, shi;
        s.bounds(slo, shi);
        lo = lo.cwiseMin(slo);
        hi = hi.cwiseMax(shi);
    }
    const Vec3 shift = Vec3::Constant(spec.margin) - lo;
    for (auto& s : ph.shapes) s.center += shift;

    VolumeGeometry g;
    g.spacing = spec.spacing;
    const Vec3 extent = (hi - lo).array() + 2.0 * spec.margin;
    for (int a = 0; a < 3; ++a) {
        g.dims[a] = spec.dims[a] > 0 ? spec.dims[a] : static_cast<std::int64_t>(std::ceil(extent[a] / spec.spacing[a])) + 1;
    }
    g.validate();

    LabelVolume vol(g);
    for (const auto& s : ph.shapes) {
        rasterize_into(vol, s, RigidTransform::identity(), 2,
                       "exceeds the volume bounds (shapes need a 2-voxel background margin)");
    }
    for (const auto& s : ph.shapes) ph.voxel_counts[s.label] = vol.count(s.label);
    ph.volume = std::move(vol);
    return ph;
}

// ---------------------------------------------------------------------------

void PerturbationSpec::validate() const {
    if (max_rotation < 0.0 || max_rotation > 180.0) throw PreconditionError("max_rotation must lie in [0, 180] degrees");
    if (max_translation < 0.0) throw PreconditionError("max_translation must be non-negative");
    if (!(lesion_fraction >= 0.0 && lesion_fraction < 1.0)) throw PreconditionError("lesion_fraction must lie in [0, 1)");
    if (vertex_noise_sd < 0.0) throw PreconditionError("vertex_noise_sd must be non-negative");
    if (max_grid_offset < 0.0) throw PreconditionError("max_grid_offset must be non-negative");
}

LabelVolume move_labels(const LabelVolume& vol, const VolumeGeometry& target,
                        const std::map<LabelVolume::Label, RigidTransform>& transforms) {
    LabelVolume out(target);
    for (const auto& [label, T] : transforms) {
        const BinaryMask mask = extract_label(vol, label);
        Index3 lo, hi;
        if (!mask.bounds(lo, hi)) continue;
        for (int c = 0; c < 8; ++c) {
            const Vec3 corner(double(c & 1 ? hi[0] : lo[0]), double(c & 2 ? hi[1] : lo[1]), double(c & 4 ? hi[2] : lo[2]));
            const Vec3 v = world_to_voxel(target, T(voxel_to_world(vol.geometry(), corner)));
            for (int a = 0; a < 3; ++a) {
                if (v[a] < 0.0 || v[a] > double(target.dims[a] - 1)) {
                    throw PreconditionError("label " + std::to_string(label) + " leaves the volume bounds after its motion");
                }
            }
        }
        const BinaryMask moved = resample_mask(mask, target, T);
        for (std::size_t i = 0; i < moved.bits().size(); ++i) {
            if (!moved.bits()[i]) continue;
            auto& v = out.voxels()[i];
            if (v != 0) throw DegenerateError("labels overlap after their motions; increase inter_body_gap");
            v = label;
        }
    }
    return out;
}

LabelVolume rasterize_shapes(const std::vector<VertebraShape>& shapes, const VolumeGeometry& target,
                             const std::map<LabelVolume::Label, RigidTransform>& transforms) {
    target.validate();
    LabelVolume out(target);
    for (const auto& s : shapes) {
        const auto it = transforms.find(s.label);
        if (it != transforms.end()) rasterize_into(out, s, it->second, 0, "leaves the volume bounds after its motion");
    }
    return out;
}

void erode_lesion(LabelVolume& vol, LabelVolume::Label label, double fraction, std::uint64_t seed) {
    if (!(fraction >= 0.0 && fraction < 1.0)) throw PreconditionError("lesion fraction must lie in [0, 1)");
    const auto& g = vol.geometry();
    auto is_label = [&](std::int64_t i, std::int64_t j, std::int64_t k) {
        return g.contains(i, j, k) && vol.at(i, j, k) == label;
    };
    static constexpr std::array<std::array<int, 3>, 6> kNeighbours{
        {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}};

    // Surface voxels: any of the 26 neighbours lies outside the label.
    auto on_surface = [&](std::int64_t i, std::int64_t j, std::int64_t k) {
        for (int dk = -1; dk <= 1; ++dk)
            for (int dj = -1; dj <= 1; ++dj)
                for (int di = -1; di <= 1; ++di)
                    if (!is_label(i + di, j + dj, k + dk)) return true;
        return false;
    };
    std::vector<Index3> surface;
    for (std::int64_t k = 0; k < g.dims[2]; ++k) {
        for (std::int64_t j = 0; j < g.dims[1]; ++j) {
            for (std::int64_t i = 0; i < g.dims[0]; ++i) {
                if (vol.at(i, j, k) == label && on_surface(i, j, k)) surface.push_back({i, j, k});
            }
        }
    }
    const auto target = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(surface.size())));
    if (target == 0) return;
    Rng rng(seed);
    std::vector<Index3> frontier{surface[rng.below(surface.size())]};
    std::size_t removed = 0;
    while (removed < target && !frontier.empty()) {
        const std::size_t pick = rng.below(frontier.size());
        const Index3 v = frontier[pick];
        frontier[pick] = frontier.back();
        frontier.pop_back();
        if (!is_label(v[0], v[1], v[2])) continue;
        vol.at(v[0], v[1], v[2]) = 0;
        ++removed;
        for (const auto& d : kNeighbours) {
            if (is_label(v[0] + d[0], v[1] + d[1], v[2] + d[2])) frontier.push_back({v[0] + d[0], v[1] + d[1], v[2] + d[2]});
        }
    }
}

FollowUp make_followup(const LabelVolume& vol, const PerturbationSpec& perturb) {
    perturb.validate();
    Rng rng(perturb.seed);

    VolumeGeometry target = vol.geometry();
    Vec3 offset;
    for (int a = 0; a < 3; ++a) offset[a] = rng.uniform(-perturb.max_grid_offset, perturb.max_grid_offset);
    target.origin += target.direction * offset;

    FollowUp fu;
    const auto& g = vol.geometry();
    for (const auto label : vol.labels()) {
        // Centroid of the label, world frame.
        Vec3 sum = Vec3::Zero();
        std::size_t n = 0;
        for (std::int64_t k = 0; k < g.dims[2]; ++k) {
            for (std::int64_t j = 0; j < g.dims[1]; ++j) {
                for (std::int64_t i = 0; i < g.dims[0]; ++i) {
                    if (vol.at(i, j, k) == label) {
                        sum += Vec3(double(i), double(j), double(k));
                        ++n;
                    }
                }
            }
        }
        const Vec3 c = voxel_to_world(g, sum / double(n));
        const Vec3 axis = rng.unit_vector();
        const double angle = rng.uniform(0.0, perturb.max_rotation) * std::numbers::pi / 180.0;
        const Vec3 dir = rng.unit_vector();
        const double mag = rng.uniform(0.0, perturb.max_translation);
        const RigidTransform rot = RigidTransform::from_axis_angle(axis, angle);
        // p -> R (p - c) + c + d
        fu.transforms.emplace(label, RigidTransform(rot.rotation(), c - rot.rotation() * c + mag * dir, 1.0));
    }
    fu.volume = move_labels(vol, target, fu.transforms);
    if (perturb.lesion_fraction > 0.0) {
        for (const auto& [label, T] : fu.transforms) erode_lesion(fu.volume, label, perturb.lesion_fraction, rng.bits());
    }
    return fu;
}

TriangleMesh jitter_vertices(const TriangleMesh& mesh, double sd, std::uint64_t seed) {
    if (sd < 0.0) throw PreconditionError("noise sd must be non-negative");
    TriangleMesh out = mesh;
    if (sd == 0.0) return out;
    Rng rng(seed);
    for (auto& v : out.vertices) {
        const double a = rng.normal(), b = rng.normal(), c = rng.normal();
        v += sd * Vec3(a, b, c);
    }
    return out;
}

SyntheticStudy make_study(const PhantomSpec& phantom, const PerturbationSpec& perturb,
                          const std::vector<std::string>& timepoints) {
    SyntheticStudy study;
    study.baseline = make_phantom(phantom);
    for (std::size_t k = 0; k < timepoints.size(); ++k) {
        PerturbationSpec p = perturb;
        p.seed = perturb.seed + k;
        study.followups.emplace_back(timepoints[k], make_followup(study.baseline.volume, p));
    }
    return study;
}

}  // namespace spinereg
