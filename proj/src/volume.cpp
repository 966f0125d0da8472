#include "spinereg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "spinereg/error.hpp"

namespace spinereg {

void VolumeGeometry::validate() const {
    for (int a = 0; a < 3; ++a) {
        if (dims[a] <= 0) throw PreconditionError("volume dimensions must be positive");
        if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
            throw PreconditionError("voxel spacing must be positive");
        }
    }
    if (!origin.allFinite() || !direction.allFinite()) {
        throw PreconditionError("volume placement has non-finite entries");
    }
    const double dev = (direction.transpose() * direction - Mat3::Identity()).cwiseAbs().maxCoeff();
    if (dev > kOrthonormalTolerance) {
        std::ostringstream os;
        os << "direction matrix is not orthonormal (max |D^T D - I| = " << dev << ")";
        throw PreconditionError(os.str());
    }
}

bool VolumeGeometry::same_grid(const VolumeGeometry& other, double tol) const {
    return dims == other.dims && (spacing - other.spacing).cwiseAbs().maxCoeff() <= tol &&
           (origin - other.origin).cwiseAbs().maxCoeff() <= tol &&
           (direction - other.direction).cwiseAbs().maxCoeff() <= tol;
}

Vec3 voxel_to_world(const VolumeGeometry& geom, const Vec3& ijk) {
    return geom.origin + geom.direction * geom.spacing.cwiseProduct(ijk);
}

Vec3 world_to_voxel(const VolumeGeometry& geom, const Vec3& xyz) {
    return (geom.direction.transpose() * (xyz - geom.origin)).cwiseQuotient(geom.spacing);
}

// ---------------------------------------------------------------------------

LabelVolume::LabelVolume(VolumeGeometry geometry) : geometry_(geometry) {
    geometry_.validate();
    voxels_.assign(geometry_.voxel_count(), 0);
}

LabelVolume::LabelVolume(VolumeGeometry geometry, std::vector<Label> voxels)
    : geometry_(geometry), voxels_(std::move(voxels)) {
    geometry_.validate();
    if (voxels_.size() != geometry_.voxel_count()) {
        throw PreconditionError("voxel array length does not match volume dimensions");
    }
}

std::vector<LabelVolume::Label> LabelVolume::labels() const {
    std::vector<bool> seen(std::numeric_limits<Label>::max() + 1, false);
    for (Label v : voxels_) seen[v] = true;
    std::vector<Label> out;
    for (std::size_t l = 1; l < seen.size(); ++l) {
        if (seen[l]) out.push_back(static_cast<Label>(l));
    }
    return out;
}

std::size_t LabelVolume::count(Label label) const {
    return static_cast<std::size_t>(std::count(voxels_.begin(), voxels_.end(), label));
}

bool LabelVolume::operator==(const LabelVolume& other) const {
    return geometry_.same_grid(other.geometry_, 0.0) && voxels_ == other.voxels_;
}

// ---------------------------------------------------------------------------

BinaryMask::BinaryMask(VolumeGeometry geometry) : geometry_(geometry) {
    geometry_.validate();
    bits_.assign(geometry_.voxel_count(), 0);
}

BinaryMask::BinaryMask(VolumeGeometry geometry, std::vector<std::uint8_t> bits)
    : geometry_(geometry), bits_(std::move(bits)) {
    geometry_.validate();
    if (bits_.size() != geometry_.voxel_count()) {
        throw PreconditionError("mask length does not match volume dimensions");
    }
    for (auto& b : bits_) b = b ? 1 : 0;
}

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

bool BinaryMask::bounds(Index3& lo, Index3& hi) const {
    const auto& d = geometry_.dims;
    lo = {d[0], d[1], d[2]};
    hi = {-1, -1, -1};
    std::size_t idx = 0;
    for (std::int64_t k = 0; k < d[2]; ++k) {
        for (std::int64_t j = 0; j < d[1]; ++j) {
            for (std::int64_t i = 0; i < d[0]; ++i, ++idx) {
                if (!bits_[idx]) continue;
                lo = {std::min(lo[0], i), std::min(lo[1], j), std::min(lo[2], k)};
                hi = {std::max(hi[0], i), std::max(hi[1], j), std::max(hi[2], k)};
            }
        }
    }
    return hi[0] >= 0;
}

bool BinaryMask::operator==(const BinaryMask& other) const {
    return geometry_.same_grid(other.geometry_, 0.0) && bits_ == other.bits_;
}

BinaryMask extract_label(const LabelVolume& vol, LabelVolume::Label label) {
    std::vector<std::uint8_t> bits(vol.voxels().size());
    std::transform(vol.voxels().begin(), vol.voxels().end(), bits.begin(),
                   [label](LabelVolume::Label v) { return static_cast<std::uint8_t>(v == label); });
    return BinaryMask(vol.geometry(), std::move(bits));
}

namespace {

// Affine map from target voxel index to source continuous voxel index.
struct IndexMap {
    Mat3 linear;
    Vec3 offset;

    Vec3 operator()(const Vec3& v) const { return linear * v + offset; }
};

IndexMap target_to_source(const VolumeGeometry& source, const VolumeGeometry& target, const RigidTransform& transform) {
    // source_idx = S_s^-1 D_s^T (T^-1(o_t + D_t S_t v) - o_s)
    const RigidTransform inv = invert(transform);
    const Mat3 to_src = source.spacing.cwiseInverse().asDiagonal() * source.direction.transpose();
    IndexMap m;
    m.linear = to_src * (inv.scale() * inv.rotation()) * target.direction * target.spacing.asDiagonal();
    m.offset = to_src * (inv(target.origin) - source.origin);
    return m;
}

std::int64_t nearest(double x) { return static_cast<std::int64_t>(std::floor(x + 0.5)); }

// Target index box that can receive samples from the source index box [lo, hi].
bool target_window(const VolumeGeometry& source, const VolumeGeometry& target, const RigidTransform& transform,
                   const Index3& lo, const Index3& hi, Index3& out_lo, Index3& out_hi) {
    Vec3 mn = Vec3::Constant(std::numeric_limits<double>::infinity());
    Vec3 mx = -mn;
    for (int c = 0; c < 8; ++c) {
        const Vec3 corner((c & 1 ? hi[0] + 0.5 : lo[0] - 0.5), (c & 2 ? hi[1] + 0.5 : lo[1] - 0.5),
                          (c & 4 ? hi[2] + 0.5 : lo[2] - 0.5));
        const Vec3 v = world_to_voxel(target, transform(voxel_to_world(source, corner)));
        mn = mn.cwiseMin(v);
        mx = mx.cwiseMax(v);
    }
    for (int a = 0; a < 3; ++a) {
        out_lo[a] = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(mn[a])) - 1);
        out_hi[a] = std::min<std::int64_t>(target.dims[a] - 1, static_cast<std::int64_t>(std::ceil(mx[a])) + 1);
        if (out_lo[a] > out_hi[a]) return false;
    }
    return true;
}

}  // namespace

BinaryMask resample_mask(const BinaryMask& mask, const VolumeGeometry& target, const RigidTransform& transform) {
    target.validate();
    BinaryMask out(target);
    Index3 lo, hi, tlo, thi;
    if (!mask.bounds(lo, hi)) return out;
    if (!target_window(mask.geometry(), target, transform, lo, hi, tlo, thi)) return out;

    const IndexMap map = target_to_source(mask.geometry(), target, transform);
    for (std::int64_t k = tlo[2]; k <= thi[2]; ++k) {
        for (std::int64_t j = tlo[1]; j <= thi[1]; ++j) {
            for (std::int64_t i = tlo[0]; i <= thi[0]; ++i) {
                const Vec3 s = map(Vec3(double(i), double(j), double(k)));
                if (mask.get_or_false(nearest(s[0]), nearest(s[1]), nearest(s[2]))) out.set(i, j, k, true);
            }
        }
    }
    return out;
}

LabelVolume resample_labels(const LabelVolume& vol, const VolumeGeometry& target, const RigidTransform& transform) {
    target.validate();
    LabelVolume out(target);
    const IndexMap map = target_to_source(vol.geometry(), target, transform);
    const auto& g = vol.geometry();
    for (std::int64_t k = 0; k < target.dims[2]; ++k) {
        for (std::int64_t j = 0; j < target.dims[1]; ++j) {
            for (std::int64_t i = 0; i < target.dims[0]; ++i) {
                const Vec3 s = map(Vec3(double(i), double(j), double(k)));
                const std::int64_t a = nearest(s[0]), b = nearest(s[1]), c = nearest(s[2]);
                if (g.contains(a, b, c)) out.at(i, j, k) = vol.at(a, b, c);
            }
        }
    }
    return out;
}

}  // namespace spinereg
