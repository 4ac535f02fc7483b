// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/error.hpp>

#include <Eigen/Core>

#include <cmath>

namespace splatkern::geom {

template <typename T> using Vec2 = Eigen::Matrix<T, 2, 1>;
template <typename T> using Vec3 = Eigen::Matrix<T, 3, 1>;
template <typename T> using Mat2 = Eigen::Matrix<T, 2, 2>;
template <typename T> using Mat3 = Eigen::Matrix<T, 3, 3>;

/// Rotation quaternion, scalar first. Stored unnormalized; every consumer
/// normalizes on read.
template <typename T> struct Quaternion {
    T w = T(1);
    T x = T(0);
    T y = T(0);
    T z = T(0);

    T squared_norm() const { return w * w + x * x + y * y + z * z; }

    Quaternion normalized() const {
        const T n2 = squared_norm();
        if (!(n2 > T(0)) || !std::isfinite(n2)) {
            throw DegenerateInputError("quaternion has zero or non-finite norm");
        }
        const T inv = T(1) / std::sqrt(n2);
        return {w * inv, x * inv, y * inv, z * inv};
    }
};

/// Rotation matrix of a quaternion (normalized internally).
template <typename T> Mat3<T> quat_to_rotation(const Quaternion<T> &q_raw) {
    const Quaternion<T> q = q_raw.normalized();
    const T w = q.w, x = q.x, y = q.y, z = q.z;
    Mat3<T> r;
    r << T(1) - T(2) * (y * y + z * z), T(2) * (x * y - w * z), T(2) * (x * z + w * y),
        T(2) * (x * y + w * z), T(1) - T(2) * (x * x + z * z), T(2) * (y * z - w * x),
        T(2) * (x * z - w * y), T(2) * (y * z + w * x), T(1) - T(2) * (x * x + y * y);
    return r;
}

/// Pulls dL/dR back onto the raw (unnormalized) quaternion components.
template <typename T>
Quaternion<T> quat_to_rotation_backward(const Quaternion<T> &q_raw, const Mat3<T> &g) {
    const T norm = std::sqrt(q_raw.squared_norm());
    const Quaternion<T> q = q_raw.normalized();
    const T w = q.w, x = q.x, y = q.y, z = q.z;

    const T dw = T(2) * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) +
                         x * g(2, 1));
    const T dx = T(2) * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - T(2) * x * g(1, 1) -
                         w * g(1, 2) + z * g(2, 0) + w * g(2, 1) - T(2) * x * g(2, 2));
    const T dy = T(2) * (-T(2) * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) +
                         z * g(1, 2) - w * g(2, 0) + z * g(2, 1) - T(2) * y * g(2, 2));
    const T dz = T(2) * (-T(2) * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) -
                         T(2) * z * g(1, 1) + y * g(1, 2) + x * g(2, 0) + y * g(2, 1));

    // Project out the radial component: d(q/|q|)/dq = (I - q q^T) / |q|.
    const T radial = w * dw + x * dx + y * dy + z * dz;
    return {(dw - w * radial) / norm, (dx - x * radial) / norm, (dy - y * radial) / norm,
            (dz - z * radial) / norm};
}

/// World-space covariance R diag(s^2) R^T from exponentiated scales.
template <typename T> Mat3<T> build_cov3d(const Vec3<T> &scale, const Quaternion<T> &q) {
    const Mat3<T> m = quat_to_rotation(q) * scale.asDiagonal();
    return m * m.transpose();
}

template <typename T> struct Cov3dGrad {
    Vec3<T> scale;
    Mat3<T> rotation; // dL/dR, to be chained through quat_to_rotation_backward
};

/// Backward of build_cov3d given the full-matrix gradient dL/dSigma.
template <typename T>
Cov3dGrad<T> build_cov3d_backward(const Vec3<T> &scale, const Mat3<T> &rotation,
                                  const Mat3<T> &d_sigma) {
    const Mat3<T> m = rotation * scale.asDiagonal();
    const Mat3<T> d_m = (d_sigma + d_sigma.transpose()) * m;
    Cov3dGrad<T> out;
    out.rotation = d_m * scale.asDiagonal();
    for (int i = 0; i < 3; ++i) {
        out.scale[i] = d_m.col(i).dot(rotation.col(i));
    }
    return out;
}

} // namespace splatkern::geom
