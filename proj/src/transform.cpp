#include "spinereg/transform.hpp"

#include <Eigen/Geometry>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "spinereg/error.hpp"

namespace spinereg {

RigidTransform::RigidTransform(const Mat3& rotation, const Vec3& translation, double scale)
    : rotation_(rotation), translation_(translation), scale_(scale) {
    if (!rotation.allFinite() || !translation.allFinite() || !std::isfinite(scale)) {
        throw PreconditionError("rigid transform has non-finite entries");
    }
    if (!(scale > 0.0)) {
        throw PreconditionError("rigid transform scale must be positive");
    }
    const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).norm();
    const double det = rotation.determinant();
    if (ortho > kRotationTolerance || std::abs(det - 1.0) > kRotationTolerance) {
        std::ostringstream os;
        os << "matrix is not a proper rotation (|R^T R - I|_F = " << ortho << ", det = " << det << ")";
        throw PreconditionError(os.str());
    }
}

RigidTransform RigidTransform::from_axis_angle(const Vec3& axis, double angle_rad, const Vec3& t) {
    if (axis.norm() == 0.0) {
        throw PreconditionError("rotation axis must be non-zero");
    }
    const Mat3 R = Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
    return {nearest_rotation(R), t, 1.0};
}

Vec3 apply(const RigidTransform& T, const Vec3& p) { return T(p); }

RigidTransform invert(const RigidTransform& T) {
    // (sR)^-1 = (1/s) R^T ; t' = -(1/s) R^T t
    const Mat3 Rt = T.rotation().transpose();
    const double inv_s = 1.0 / T.scale();
    return {Rt, -inv_s * (Rt * T.translation()), inv_s};
}

RigidTransform compose(const RigidTransform& T2, const RigidTransform& T1) {
    // s2 R2 (s1 R1 p + t1) + t2
    const Mat3 R = nearest_rotation(T2.rotation() * T1.rotation());
    const Vec3 t = T2.scale() * (T2.rotation() * T1.translation()) + T2.translation();
    return {R, t, T2.scale() * T1.scale()};
}

double rotation_angle_between(const Mat3& a, const Mat3& b) {
    const Mat3 rel = a.transpose() * b;
    const double c = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
    // acos loses precision near 0; recover from the skew part there.
    const Vec3 skew(rel(2, 1) - rel(1, 2), rel(0, 2) - rel(2, 0), rel(1, 0) - rel(0, 1));
    return std::atan2(0.5 * skew.norm(), c);
}

Mat3 nearest_rotation(const Mat3& m) {
    Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Mat3& U = svd.matrixU();
    const Mat3& V = svd.matrixV();
    Vec3 d(1.0, 1.0, (U * V.transpose()).determinant() < 0.0 ? -1.0 : 1.0);
    return U * d.asDiagonal() * V.transpose();
}

}  // namespace spinereg
