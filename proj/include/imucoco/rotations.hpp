#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <array>
#include <cmath>

#include "imucoco/errors.hpp"

namespace imucoco {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

// 6D rotation representation: first two columns of the rotation matrix,
// column-major, i.e. (R00, R10, R20, R01, R11, R21).
using Rot6d = Eigen::Matrix<double, 6, 1>;

inline Rot6d rotation_to_6d(const Mat3& r) {
    Rot6d out;
    out << r(0, 0), r(1, 0), r(2, 0), r(0, 1), r(1, 1), r(2, 1);
    return out;
}

// Gram-Schmidt on the two encoded columns, third column by cross product.
// Degenerate inputs fall back to completing whatever direction survives.
inline Mat3 rotation_from_6d(const Rot6d& v) {
    Vec3 a1(v[0], v[1], v[2]);
    Vec3 a2(v[3], v[4], v[5]);
    Vec3 c1, c2;
    if (a1.norm() < 1e-12) {
        c1 = Vec3::UnitX();
    } else {
        c1 = a1.normalized();
    }
    Vec3 residual = a2 - c1.dot(a2) * c1;
    if (residual.norm() < 1e-12) {
        // pick any direction orthogonal to c1
        Vec3 helper = std::abs(c1.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
        c2 = c1.cross(helper).normalized();
    } else {
        c2 = residual.normalized();
    }
    Mat3 r;
    r.col(0) = c1;
    r.col(1) = c2;
    r.col(2) = c1.cross(c2);
    return r;
}

inline void check_unit_quaternion(const Quat& q, double tol = 1e-6) {
    if (std::abs(q.norm() - 1.0) > tol)
        throw ValidationError("quaternion norm " + std::to_string(q.norm()) +
                              " deviates from 1 beyond tolerance");
}

// Geodesic angle between two rotations, in degrees.
inline double rotation_angle_deg(const Mat3& r_gt, const Mat3& r_pred) {
    double tr = (r_gt.transpose() * r_pred).trace();
    double c = std::clamp((tr - 1.0) / 2.0, -1.0, 1.0);
    return std::acos(c) * 180.0 / M_PI;
}

}  // namespace imucoco
