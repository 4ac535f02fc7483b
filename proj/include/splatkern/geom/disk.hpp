// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/geom/camera.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <optional>

namespace splatkern::geom {

/// Ray/plane hit in the local frame of a planar primitive. (u, v) are in
/// units of the scaled tangent axes, so the bounding ellipse is u^2+v^2 <= 1.
template <typename T> struct DiskHit {
    T u = T(0);
    T v = T(0);
    T depth = T(0);
};

/// Camera-space intersection state, retained for the backward pass.
template <typename T> struct DiskSolve {
    DiskHit<T> hit;
    Mat3<T> inverse; // inverse of [dir | -tu | -tv]
};

/// Intersects the camera ray `dir_cam` (z = 1) with the plane through `mu_cam`
/// spanned by `tu_cam`, `tv_cam`. Returns nullopt on a miss (ray parallel to
/// the plane or hit behind the camera).
template <typename T>
std::optional<DiskSolve<T>> intersect_disk_cam(const Vec3<T> &dir_cam, const Vec3<T> &mu_cam,
                                               const Vec3<T> &tu_cam, const Vec3<T> &tv_cam) {
    const Vec3<T> normal = tu_cam.cross(tv_cam);
    const T normal_len = normal.norm();
    if (!(normal_len >= T(1e-12))) {
        throw DegenerateInputError("planar primitive has a degenerate tangent frame");
    }
    const T cosine = normal.dot(dir_cam) / (normal_len * dir_cam.norm());
    if (!(std::abs(cosine) >= T(1e-9))) {
        return std::nullopt;
    }
    Mat3<T> system;
    system.col(0) = dir_cam;
    system.col(1) = -tu_cam;
    system.col(2) = -tv_cam;
    DiskSolve<T> out;
    out.inverse = system.inverse();
    const Vec3<T> x = out.inverse * mu_cam;
    if (!(x[0] > T(0))) {
        return std::nullopt;
    }
    out.hit = {x[1], x[2], x[0] * dir_cam.z()};
    return out;
}

/// World-space convenience wrapper: back-projects `pixel` through `cam`.
template <typename T>
std::optional<DiskHit<T>> ray_disk_intersect(const Vec2<T> &pixel, const Camera<T> &cam,
                                             const Vec3<T> &center, const Vec3<T> &tangent_u,
                                             const Vec3<T> &tangent_v) {
    const auto solve =
        intersect_disk_cam(cam.ray_direction(pixel.x(), pixel.y()), cam.to_camera(center),
                           Vec3<T>(cam.rotation * tangent_u), Vec3<T>(cam.rotation * tangent_v));
    if (!solve) {
        return std::nullopt;
    }
    return solve->hit;
}

template <typename T> struct DiskGrad {
    Vec3<T> mu_cam;
    Vec3<T> tu_cam;
    Vec3<T> tv_cam;
};

/// Backward of intersect_disk_cam for dL/du and dL/dv (depth is not differentiated).
template <typename T> DiskGrad<T> intersect_disk_backward(const DiskSolve<T> &s, T d_u, T d_v) {
    const Vec3<T> d_x(T(0), d_u, d_v);
    const Vec3<T> g = s.inverse.transpose() * d_x;
    return {g, g * s.hit.u, g * s.hit.v};
}

} // namespace splatkern::geom
