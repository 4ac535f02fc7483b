// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/error.hpp>
#include <splatkern/geom/rotation.hpp>

#include <array>
#include <string>

namespace splatkern::raster {

/// Real spherical-harmonic basis constants (degree 0..3).
inline constexpr double kShC0 = 0.28209479177387814;
inline constexpr double kShC1 = 0.4886025119029199;
inline constexpr std::array<double, 5> kShC2 = {1.0925484305920792, -1.0925484305920792,
                                                0.31539156525252005, -1.0925484305920792,
                                                0.5462742152960396};
inline constexpr std::array<double, 7> kShC3 = {
    -0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
    -0.4570457994644658, 1.445305721320277, -0.5900435899266435};

inline int sh_coeff_count(int degree) {
    if (degree < 0 || degree > 3) {
        throw ConfigError("SH degree must be in 0..3, got " + std::to_string(degree));
    }
    return (degree + 1) * (degree + 1);
}

/// Basis values Y_j(dir) for j < (degree+1)^2 and, if requested, their
/// derivatives with respect to the (unit) direction components.
template <typename T>
void sh_basis(int degree, const geom::Vec3<T> &dir, T *basis, geom::Vec3<T> *d_basis = nullptr) {
    const T x = dir.x(), y = dir.y(), z = dir.z();
    auto set = [&](int j, T value, T dx, T dy, T dz) {
        basis[j] = value;
        if (d_basis) {
            d_basis[j] = {dx, dy, dz};
        }
    };
    set(0, T(kShC0), T(0), T(0), T(0));
    if (degree < 1) {
        return;
    }
    const T c1 = T(kShC1);
    set(1, -c1 * y, T(0), -c1, T(0));
    set(2, c1 * z, T(0), T(0), c1);
    set(3, -c1 * x, -c1, T(0), T(0));
    if (degree < 2) {
        return;
    }
    const T xx = x * x, yy = y * y, zz = z * z;
    const auto &c2 = kShC2;
    set(4, T(c2[0]) * x * y, T(c2[0]) * y, T(c2[0]) * x, T(0));
    set(5, T(c2[1]) * y * z, T(0), T(c2[1]) * z, T(c2[1]) * y);
    set(6, T(c2[2]) * (T(2) * zz - xx - yy), T(c2[2]) * -T(2) * x, T(c2[2]) * -T(2) * y,
        T(c2[2]) * T(4) * z);
    set(7, T(c2[3]) * x * z, T(c2[3]) * z, T(0), T(c2[3]) * x);
    set(8, T(c2[4]) * (xx - yy), T(c2[4]) * T(2) * x, T(c2[4]) * -T(2) * y, T(0));
    if (degree < 3) {
        return;
    }
    const auto &c3 = kShC3;
    set(9, T(c3[0]) * y * (T(3) * xx - yy), T(c3[0]) * T(6) * x * y,
        T(c3[0]) * (T(3) * xx - T(3) * yy), T(0));
    set(10, T(c3[1]) * x * y * z, T(c3[1]) * y * z, T(c3[1]) * x * z, T(c3[1]) * x * y);
    set(11, T(c3[2]) * y * (T(4) * zz - xx - yy), T(c3[2]) * -T(2) * x * y,
        T(c3[2]) * (T(4) * zz - xx - T(3) * yy), T(c3[2]) * T(8) * y * z);
    set(12, T(c3[3]) * z * (T(2) * zz - T(3) * xx - T(3) * yy), T(c3[3]) * -T(6) * x * z,
        T(c3[3]) * -T(6) * y * z, T(c3[3]) * (T(6) * zz - T(3) * xx - T(3) * yy));
    set(13, T(c3[4]) * x * (T(4) * zz - xx - yy), T(c3[4]) * (T(4) * zz - T(3) * xx - yy),
        T(c3[4]) * -T(2) * x * y, T(c3[4]) * T(8) * x * z);
    set(14, T(c3[5]) * z * (xx - yy), T(c3[5]) * T(2) * x * z, T(c3[5]) * -T(2) * y * z,
        T(c3[5]) * (xx - yy));
    set(15, T(c3[6]) * x * (xx - T(3) * yy), T(c3[6]) * (T(3) * xx - T(3) * yy),
        T(c3[6]) * -T(6) * x * y, T(0));
}

/// RGB = max(0, sum_j Y_j(dir) c_j + 0.5). `coeffs` is coefficient-major:
/// coeffs[3 j + channel]. Returns a per-channel mask of clamped outputs.
template <typename T>
std::array<bool, 3> eval_sh_color(int degree, const T *coeffs, const geom::Vec3<T> &dir,
                                  T *rgb) {
    T basis[16];
    sh_basis(degree, dir, basis);
    const int n = sh_coeff_count(degree);
    std::array<bool, 3> clamped{};
    for (int ch = 0; ch < 3; ++ch) {
        T acc = T(0.5);
        for (int j = 0; j < n; ++j) {
            acc += basis[j] * coeffs[3 * j + ch];
        }
        clamped[size_t(ch)] = acc < T(0);
        rgb[ch] = clamped[size_t(ch)] ? T(0) : acc;
    }
    return clamped;
}

/// Backward of eval_sh_color: accumulates into `d_coeffs` and returns dL/ddir.
template <typename T>
geom::Vec3<T> eval_sh_color_backward(int degree, const T *coeffs, const geom::Vec3<T> &dir,
                                     const std::array<bool, 3> &clamped, const T *d_rgb,
                                     T *d_coeffs) {
    T basis[16];
    geom::Vec3<T> d_basis[16];
    sh_basis(degree, dir, basis, d_basis);
    const int n = sh_coeff_count(degree);
    geom::Vec3<T> d_dir = geom::Vec3<T>::Zero();
    for (int ch = 0; ch < 3; ++ch) {
        if (clamped[size_t(ch)]) {
            continue;
        }
        const T g = d_rgb[ch];
        for (int j = 0; j < n; ++j) {
            d_coeffs[3 * j + ch] += g * basis[j];
            d_dir += g * coeffs[3 * j + ch] * d_basis[j];
        }
    }
    return d_dir;
}

/// Gradient of dir = v / |v| pulled back onto v.
template <typename T>
geom::Vec3<T> normalize_backward(const geom::Vec3<T> &v, const geom::Vec3<T> &d_dir) {
    const T len = v.norm();
    const geom::Vec3<T> dir = v / len;
    return (d_dir - dir * dir.dot(d_dir)) / len;
}

} // namespace splatkern::raster
