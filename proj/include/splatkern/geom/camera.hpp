// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/error.hpp>
#include <splatkern/geom/rotation.hpp>

#include <algorithm>
#include <array>
#include <string>

namespace splatkern::geom {

/// Pinhole camera. Camera space is x right, y down, z forward; pixel (i, j)
/// has its center at (i + 0.5, j + 0.5).
template <typename T> struct Camera {
    int width = 0;
    int height = 0;
    T fx = T(1), fy = T(1), cx = T(0), cy = T(0);
    Mat3<T> rotation = Mat3<T>::Identity(); // world -> camera
    Vec3<T> translation = Vec3<T>::Zero();

    Vec3<T> to_camera(const Vec3<T> &world) const { return rotation * world + translation; }

    Vec3<T> center() const { return -(rotation.transpose() * translation); }

    /// Camera-space ray direction (z = 1) through a continuous pixel position.
    Vec3<T> ray_direction(T px, T py) const { return {(px - cx) / fx, (py - cy) / fy, T(1)}; }

    Vec2<T> project(const Vec3<T> &cam_point) const {
        return {fx * cam_point.x() / cam_point.z() + cx, fy * cam_point.y() / cam_point.z() + cy};
    }

    /// Row-major 4x4 world-to-camera matrix.
    std::array<T, 16> world_to_cam() const {
        std::array<T, 16> m{};
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) {
                m[r * 4 + c] = rotation(r, c);
            }
            m[r * 4 + 3] = translation[r];
        }
        m[15] = T(1);
        return m;
    }

    void set_world_to_cam(const std::array<T, 16> &m) {
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) {
                rotation(r, c) = m[r * 4 + c];
            }
            translation[r] = m[r * 4 + 3];
        }
    }

    template <typename U> Camera<U> cast() const {
        Camera<U> out;
        out.width = width;
        out.height = height;
        out.fx = U(fx);
        out.fy = U(fy);
        out.cx = U(cx);
        out.cy = U(cy);
        out.rotation = rotation.template cast<U>();
        out.translation = translation.template cast<U>();
        return out;
    }

    /// Throws ValidationError when intrinsics or the rotation are out of contract.
    void validate(T orthonormal_tol = T(1e-5)) const {
        if (width <= 0 || height <= 0) {
            throw ValidationError("camera has non-positive image size");
        }
        if (!(fx > T(0)) || !(fy > T(0))) {
            throw ValidationError("camera focal lengths must be positive");
        }
        if (!(cx > T(0) && cx < T(width)) || !(cy > T(0) && cy < T(height))) {
            throw ValidationError("camera principal point lies outside the image");
        }
        const T err = (rotation.transpose() * rotation - Mat3<T>::Identity()).cwiseAbs().maxCoeff();
        if (!(err <= orthonormal_tol)) {
            throw ValidationError("camera rotation is not orthonormal (error " +
                                  std::to_string(double(err)) + ")");
        }
    }
};

/// Camera at `eye` looking at `target`; `up` is the approximate world up.
template <typename T>
Camera<T> look_at(const Vec3<T> &eye, const Vec3<T> &target, const Vec3<T> &up, int width,
                  int height, T focal) {
    const Vec3<T> forward = (target - eye).normalized();
    Vec3<T> right = forward.cross(up);
    if (right.norm() < T(1e-9)) {
        right = forward.cross(Vec3<T>::UnitX());
    }
    right.normalize();
    const Vec3<T> down = forward.cross(right);
    Camera<T> cam;
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = focal;
    cam.cx = T(width) / T(2);
    cam.cy = T(height) / T(2);
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = forward.transpose();
    cam.translation = -(cam.rotation * eye);
    return cam;
}

} // namespace splatkern::geom
