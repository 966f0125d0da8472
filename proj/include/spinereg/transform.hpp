#pragma once

#include <Eigen/Core>

namespace spinereg {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Similarity transform p -> s * R * p + t.
///
/// R is a proper rotation (R^T R = I, det R = +1, both to 1e-9) and s > 0.
/// The constructor enforces these and throws PreconditionError otherwise, so
/// every RigidTransform in circulation is invertible.
class RigidTransform {
public:
    static constexpr double kRotationTolerance = 1e-9;

    RigidTransform() = default;
    RigidTransform(const Mat3& rotation, const Vec3& translation, double scale = 1.0);

    static RigidTransform identity() { return {}; }
    static RigidTransform translation(const Vec3& t) { return {Mat3::Identity(), t, 1.0}; }
    /// Rotation of `angle_rad` about `axis` (normalized internally) followed by `t`.
    static RigidTransform from_axis_angle(const Vec3& axis, double angle_rad, const Vec3& t = Vec3::Zero());

    const Mat3& rotation() const { return rotation_; }
    const Vec3& translation() const { return translation_; }
    double scale() const { return scale_; }

    Vec3 operator()(const Vec3& p) const { return scale_ * (rotation_ * p) + translation_; }

    bool operator==(const RigidTransform&) const = default;

private:
    Mat3 rotation_ = Mat3::Identity();
    Vec3 translation_ = Vec3::Zero();
    double scale_ = 1.0;
};

Vec3 apply(const RigidTransform& T, const Vec3& p);
RigidTransform invert(const RigidTransform& T);
/// compose(T2, T1) applies T1 first: apply(compose(T2,T1), p) == apply(T2, apply(T1, p)).
RigidTransform compose(const RigidTransform& T2, const RigidTransform& T1);

/// Geodesic angle (radians) between the rotation parts of two transforms.
double rotation_angle_between(const Mat3& a, const Mat3& b);

/// Closest proper rotation to `m` in the Frobenius sense (polar factor with det +1).
Mat3 nearest_rotation(const Mat3& m);

}  // namespace spinereg
