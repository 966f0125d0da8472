#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "spinereg/mesh.hpp"
#include "spinereg/transform.hpp"
#include "spinereg/volume.hpp"

namespace spinereg {

/// Stack of vertebra-like bodies along the volume's third axis. Each body is
/// an ellipsoid plus a posterior box (the "process") offset towards +y.
struct PhantomSpec {
    int n_vertebrae = 3;
    /// Voxel grid. Zero dims are sized automatically from the shapes and margin.
    std::array<std::int64_t, 3> dims{0, 0, 0};
    Vec3 spacing = Vec3::Ones();
    Vec3 body_radii{22.0, 16.0, 12.0};    // mm, ellipsoid semi-axes (lumbar-sized body)
    Vec3 process_size{12.0, 25.0, 10.0};  // mm, posterior box extent
    double inter_body_gap = 40.0;         // mm between neighbouring bodies
    double margin = 25.0;                 // mm of background around the stack (room for motion)
    double shape_jitter = 0.05;           // relative per-vertebra radius variation
    /// Largest random tilt (degrees) of each vertebra about its centre, so
    /// that no shape face lies flat on the voxel grid.
    double max_tilt = 15.0;
    std::uint64_t seed = 1;

    void validate() const;
};

/// One vertebra in its own frame: `center` + orientation * (local offset).
struct VertebraShape {
    LabelVolume::Label label = 0;
    Vec3 center = Vec3::Zero();  // ellipsoid centre, world mm
    Mat3 orientation = Mat3::Identity();
    Vec3 radii = Vec3::Zero();
    Vec3 process_lo = Vec3::Zero(), process_hi = Vec3::Zero();  // box corners, local offsets from center (mm)

    bool contains(const Vec3& p) const;
    /// World-frame bounding box of the shape.
    void bounds(Vec3& lo, Vec3& hi) const;
    /// Ellipsoid plus box volume (their small overlap is not subtracted).
    double analytic_volume() const;
};

struct Phantom {
    LabelVolume volume;
    std::map<LabelVolume::Label, std::size_t> voxel_counts;
    std::vector<VertebraShape> shapes;
};

Phantom make_phantom(const PhantomSpec& spec);

struct PerturbationSpec {
    double max_rotation = 15.0;     // degrees
    double max_translation = 10.0;  // mm, norm of the centroid displacement
    /// Lesion size as a fraction of the vertebra's surface-voxel count; the
    /// lesion grows inward from a random surface voxel.
    double lesion_fraction = 0.0;
    double vertex_noise_sd = 0.0;   // mm, applied by jitter_vertices to extracted surfaces
    double max_grid_offset = 2.0;   // mm, per-axis shift of the follow-up grid origin
    std::uint64_t seed = 2;

    void validate() const;
};

struct FollowUp {
    LabelVolume volume;
    /// Per-label motion, baseline world frame -> follow-up world frame.
    std::map<LabelVolume::Label, RigidTransform> transforms;
};

/// Moves each label by its own random rigid motion about its centroid,
/// resamples (nearest neighbour) onto an offset grid, then applies lesions.
FollowUp make_followup(const LabelVolume& vol, const PerturbationSpec& perturb);

/// Deterministic core of make_followup: moves labels by the given transforms
/// onto `target`. Labels without a transform are dropped. Throws
/// PreconditionError if a moved label leaves the grid and DegenerateError if
/// two moved labels overlap.
LabelVolume move_labels(const LabelVolume& vol, const VolumeGeometry& target,
                        const std::map<LabelVolume::Label, RigidTransform>& transforms);

/// Samples the analytic shapes, each moved by its transform, at the voxel
/// centres of `target` (an independent re-acquisition of the continuous
/// phantom). Shapes without a transform are dropped; errors as move_labels.
LabelVolume rasterize_shapes(const std::vector<VertebraShape>& shapes, const VolumeGeometry& target,
                             const std::map<LabelVolume::Label, RigidTransform>& transforms);

/// Removes round(fraction * S) voxels of `label`, S being its surface-voxel
/// count (voxels with any of their 26 neighbours outside the label), by seeded Eden growth
/// from a random surface voxel.
void erode_lesion(LabelVolume& vol, LabelVolume::Label label, double fraction, std::uint64_t seed);

/// Adds isotropic Gaussian noise (sd mm) to every vertex.
TriangleMesh jitter_vertices(const TriangleMesh& mesh, double sd, std::uint64_t seed);

struct SyntheticStudy {
    Phantom baseline;
    std::vector<std::pair<std::string, FollowUp>> followups;
};

/// Baseline phantom plus one follow-up per timepoint; follow-up k uses
/// perturbation seed `perturb.seed + k`.
SyntheticStudy make_study(const PhantomSpec& phantom, const PerturbationSpec& perturb,
                          const std::vector<std::string>& timepoints);

}  // namespace spinereg
