// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/geom/camera.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>

namespace splatkern::geom {

/// Inverse 2D covariance plus screen placement of a projected ellipsoid.
/// r^2 = a dx^2 + 2 b dx dy + c dy^2 with (dx, dy) = pixel - mu2d.
template <typename T> struct Conic2D {
    T a = T(1), b = T(0), c = T(1);
    Vec2<T> mu2d = Vec2<T>::Zero();
    T depth = T(0);
    T extent_x = T(0); // half-width of the r = 1 ellipse's bounding box
    T extent_y = T(0);
    T extent_radius = T(0);
};

template <typename T> struct ProjectionSettings {
    T near_plane = T(0.01);
    T dilation = T(1e-4); // px^2 added to the screen covariance diagonal
    bool clamp_fov = true;
    T fov_clamp = T(1.3); // multiple of the tangent of the half field of view
};

/// Everything project_cov computes on the way, kept for the backward pass.
template <typename T> struct ProjectedCov {
    Conic2D<T> conic;
    Vec3<T> mu_cam;
    Eigen::Matrix<T, 2, 3> jacobian;
    Mat3<T> cov_cam;
    Mat2<T> cov2d;
    T tx = T(0), ty = T(0); // possibly clamped camera-space x, y used inside J
    int clamp_x = 0, clamp_y = 0; // -1/+1 when clamped to the lower/upper limit
};

/// Squared Mahalanobis distance of a pixel position from the conic center.
template <typename T> T mahalanobis_sq(const Vec2<T> &pixel, const Conic2D<T> &q) {
    const T dx = pixel.x() - q.mu2d.x();
    const T dy = pixel.y() - q.mu2d.y();
    return q.a * dx * dx + T(2) * q.b * dx * dy + q.c * dy * dy;
}

/// Affine (EWA) projection of a world-space ellipsoid. Returns nullopt when
/// the primitive is culled (behind the near plane or numerically singular).
template <typename T>
std::optional<ProjectedCov<T>> project_cov(const Vec3<T> &mu3d, const Mat3<T> &cov3d,
                                           const Camera<T> &cam,
                                           const ProjectionSettings<T> &settings = {}) {
    ProjectedCov<T> out;
    out.mu_cam = cam.to_camera(mu3d);
    const T x = out.mu_cam.x(), y = out.mu_cam.y(), z = out.mu_cam.z();
    if (!(z > settings.near_plane)) {
        return std::nullopt;
    }

    out.tx = x;
    out.ty = y;
    if (settings.clamp_fov) {
        const T lim_x = settings.fov_clamp * std::max(cam.cx, T(cam.width) - cam.cx) / cam.fx;
        const T lim_y = settings.fov_clamp * std::max(cam.cy, T(cam.height) - cam.cy) / cam.fy;
        const T ux = x / z, uy = y / z;
        if (ux > lim_x) {
            out.tx = lim_x * z;
            out.clamp_x = 1;
        } else if (ux < -lim_x) {
            out.tx = -lim_x * z;
            out.clamp_x = -1;
        }
        if (uy > lim_y) {
            out.ty = lim_y * z;
            out.clamp_y = 1;
        } else if (uy < -lim_y) {
            out.ty = -lim_y * z;
            out.clamp_y = -1;
        }
    }

    const T inv_z = T(1) / z;
    const T inv_z2 = inv_z * inv_z;
    out.jacobian << cam.fx * inv_z, T(0), -cam.fx * out.tx * inv_z2, T(0), cam.fy * inv_z,
        -cam.fy * out.ty * inv_z2;

    out.cov_cam = cam.rotation * cov3d * cam.rotation.transpose();
    out.cov2d = out.jacobian * out.cov_cam * out.jacobian.transpose();
    out.cov2d(0, 0) += settings.dilation;
    out.cov2d(1, 1) += settings.dilation;

    const T det = out.cov2d(0, 0) * out.cov2d(1, 1) - out.cov2d(0, 1) * out.cov2d(1, 0);
    if (!(det > T(0)) || !std::isfinite(det)) {
        return std::nullopt;
    }
    auto &q = out.conic;
    q.a = out.cov2d(1, 1) / det;
    q.b = -out.cov2d(0, 1) / det;
    q.c = out.cov2d(0, 0) / det;
    q.mu2d = cam.project(out.mu_cam);
    q.depth = z;
    q.extent_x = std::sqrt(out.cov2d(0, 0));
    q.extent_y = std::sqrt(out.cov2d(1, 1));
    q.extent_radius = std::max(q.extent_x, q.extent_y);
    return out;
}

template <typename T> struct ProjectCovGrad {
    Vec3<T> mu_cam; // chain with R_w^T for the world-space mean
    Mat3<T> cov3d;  // full-matrix dL/dSigma_3D
};

/// Backward of project_cov. `d_abc` holds dL/da, dL/db, dL/dc for the conic
/// entries as they appear in r^2 (b counted once); `d_mu2d` is dL/dmu_2D.
template <typename T>
ProjectCovGrad<T> project_cov_backward(const ProjectedCov<T> &p, const Camera<T> &cam,
                                       const Vec3<T> &d_abc, const Vec2<T> &d_mu2d) {
    const auto &q = p.conic;
    Mat2<T> conic;
    conic << q.a, q.b, q.b, q.c;
    Mat2<T> d_conic;
    d_conic << d_abc[0], T(0.5) * d_abc[1], T(0.5) * d_abc[1], d_abc[2];
    const Mat2<T> d_cov2d = -(conic * d_conic * conic);

    const auto &jac = p.jacobian;
    const Mat3<T> d_cov_cam = jac.transpose() * d_cov2d * jac;
    const Eigen::Matrix<T, 2, 3> d_jac = (d_cov2d + d_cov2d.transpose()) * jac * p.cov_cam;

    ProjectCovGrad<T> out;
    out.cov3d = cam.rotation.transpose() * d_cov_cam * cam.rotation;

    const T x = p.mu_cam.x(), y = p.mu_cam.y(), z = p.mu_cam.z();
    const T inv_z = T(1) / z;
    const T inv_z2 = inv_z * inv_z;
    const T inv_z3 = inv_z2 * inv_z;

    // J00 = fx/z, J02 = -fx tx/z^2, J11 = fy/z, J12 = -fy ty/z^2.
    T d_tx = -cam.fx * inv_z2 * d_jac(0, 2);
    T d_ty = -cam.fy * inv_z2 * d_jac(1, 2);
    T d_z = -cam.fx * inv_z2 * d_jac(0, 0) + T(2) * cam.fx * p.tx * inv_z3 * d_jac(0, 2) -
            cam.fy * inv_z2 * d_jac(1, 1) + T(2) * cam.fy * p.ty * inv_z3 * d_jac(1, 2);
    T d_x = T(0), d_y = T(0);
    if (p.clamp_x == 0) {
        d_x += d_tx;
    } else {
        d_z += d_tx * p.tx * inv_z;
    }
    if (p.clamp_y == 0) {
        d_y += d_ty;
    } else {
        d_z += d_ty * p.ty * inv_z;
    }

    // mu2d = (fx x/z + cx, fy y/z + cy)
    d_x += cam.fx * inv_z * d_mu2d.x();
    d_y += cam.fy * inv_z * d_mu2d.y();
    d_z += -cam.fx * x * inv_z2 * d_mu2d.x() - cam.fy * y * inv_z2 * d_mu2d.y();

    out.mu_cam = {d_x, d_y, d_z};
    return out;
}

} // namespace splatkern::geom
