#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "spinereg/transform.hpp"

namespace spinereg {

using Index3 = std::array<std::int64_t, 3>;

/// Voxel grid placement in world millimetres.
///
/// Voxel centres sit at integer indices; world = origin + direction * (spacing .* ijk).
/// Columns of `direction` are the voxel axes expressed in the world frame.
struct VolumeGeometry {
    static constexpr double kOrthonormalTolerance = 1e-6;

    std::array<std::int64_t, 3> dims{1, 1, 1};
    Vec3 spacing = Vec3::Ones();
    Vec3 origin = Vec3::Zero();
    Mat3 direction = Mat3::Identity();

    /// Throws PreconditionError unless dims > 0, spacing > 0 and direction is
    /// orthonormal within kOrthonormalTolerance.
    void validate() const;

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
               static_cast<std::size_t>(dims[2]);
    }
    std::size_t linear_index(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return static_cast<std::size_t>(i + dims[0] * (j + dims[1] * k));
    }
    bool contains(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] && k < dims[2];
    }

    /// Voxel volume in mm^3.
    double voxel_volume() const { return spacing.prod(); }

    /// Same grid (dims exact, placement within `tol`).
    bool same_grid(const VolumeGeometry& other, double tol = 1e-6) const;
};

Vec3 voxel_to_world(const VolumeGeometry& geom, const Vec3& ijk);
Vec3 world_to_voxel(const VolumeGeometry& geom, const Vec3& xyz);

/// Dense label grid, first axis fastest.
class LabelVolume {
public:
    using Label = std::uint16_t;

    LabelVolume() = default;
    explicit LabelVolume(VolumeGeometry geometry);  // all background
    LabelVolume(VolumeGeometry geometry, std::vector<Label> voxels);

    const VolumeGeometry& geometry() const { return geometry_; }
    const std::vector<Label>& voxels() const { return voxels_; }
    std::vector<Label>& voxels() { return voxels_; }

    Label at(std::int64_t i, std::int64_t j, std::int64_t k) const { return voxels_[geometry_.linear_index(i, j, k)]; }
    Label& at(std::int64_t i, std::int64_t j, std::int64_t k) { return voxels_[geometry_.linear_index(i, j, k)]; }

    /// Sorted distinct non-zero labels.
    std::vector<Label> labels() const;
    std::size_t count(Label label) const;

    bool operator==(const LabelVolume& other) const;

private:
    VolumeGeometry geometry_;
    std::vector<Label> voxels_;
};

/// Dense boolean grid sharing LabelVolume's ordering.
class BinaryMask {
public:
    BinaryMask() = default;
    explicit BinaryMask(VolumeGeometry geometry);  // all false
    BinaryMask(VolumeGeometry geometry, std::vector<std::uint8_t> bits);

    const VolumeGeometry& geometry() const { return geometry_; }
    const std::vector<std::uint8_t>& bits() const { return bits_; }

    bool at(std::int64_t i, std::int64_t j, std::int64_t k) const { return bits_[geometry_.linear_index(i, j, k)] != 0; }
    void set(std::int64_t i, std::int64_t j, std::int64_t k, bool v) { bits_[geometry_.linear_index(i, j, k)] = v ? 1 : 0; }
    /// Out-of-grid indices read as false.
    bool get_or_false(std::int64_t i, std::int64_t j, std::int64_t k) const {
        return geometry_.contains(i, j, k) && at(i, j, k);
    }

    std::size_t count() const;
    bool empty() const { return count() == 0; }

    /// Inclusive index bounds of set voxels; returns false if the mask is empty.
    bool bounds(Index3& lo, Index3& hi) const;

    bool operator==(const BinaryMask& other) const;

private:
    VolumeGeometry geometry_;
    std::vector<std::uint8_t> bits_;  // 0/1; vector<bool> is avoided for span-friendly access
};

BinaryMask extract_label(const LabelVolume& vol, LabelVolume::Label label);

/// Nearest-neighbour resampling of `mask` onto `target`.
///
/// `transform` maps the mask's world frame into the target's world frame, so
/// output voxel v samples mask at invert(transform)(voxel_to_world(target, v)).
BinaryMask resample_mask(const BinaryMask& mask, const VolumeGeometry& target, const RigidTransform& transform);

/// Same as resample_mask for every label of a volume at once.
LabelVolume resample_labels(const LabelVolume& vol, const VolumeGeometry& target, const RigidTransform& transform);

}  // namespace spinereg
