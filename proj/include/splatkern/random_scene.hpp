// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/geom/camera.hpp>
#include <splatkern/model.hpp>

#include <cmath>
#include <cstdint>
#include <random>

namespace splatkern {

/// Ranges for randomly drawn primitives. Lengths are world units for 3D modes
/// and fractions of the canvas width in image mode.
struct RandomSceneParams {
    int count = 3;
    int width = 32, height = 32;
    double scale_lo = 0.3, scale_hi = 0.8;
    double extent = 0.8; // positions in [-extent, extent]^2 x [-extent/2, extent/2]
    double opacity_lo = 0.4, opacity_hi = 0.85;
    double rotation_spread = 0.3; // planar: tilt of the disk normal away from the camera axis
    double camera_distance = 3.0;
    std::uint64_t seed = 0;
};

template <typename T> struct RandomScene {
    Model<T> model;
    geom::Camera<T> camera;
};

/// A camera on the -z axis looking at the origin with a ~50 degree field of view.
template <typename T> geom::Camera<T> default_test_camera(int width, int height, T distance) {
    const T focal = T(0.5) * T(width) / T(std::tan(25.0 * 3.14159265358979323846 / 180.0));
    return geom::look_at<T>({T(0), T(0), -distance}, {T(0), T(0), T(0)}, {T(0), T(-1), T(0)},
                            width, height, focal);
}

/// Random primitives plus freshly initialized networks for `spec`.
template <typename T> RandomScene<T> random_scene(ModelSpec spec, const RandomSceneParams &p) {
    if (spec.mode == Mode::Image2D) {
        spec.width = p.width;
        spec.height = p.height;
    }
    spec.validate();
    RandomScene<T> out;
    auto &m = out.model;
    m.spec = spec;
    m.prims.reset(spec, p.count);
    init_networks(m, p.seed * 7919 + 17);
    out.camera = default_test_camera<T>(p.width, p.height, T(p.camera_distance));

    std::mt19937_64 rng(p.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
    auto logit = [](double o) { return std::log(o / (1.0 - o)); };

    for (int i = 0; i < p.count; ++i) {
        T *pos = m.prims.row(Group::Position, i);
        T *ls = m.prims.row(Group::LogScale, i);
        T *rot = m.prims.row(Group::Rotation, i);
        T *lat = m.prims.row(Group::Latent, i);
        T *col = m.prims.row(Group::Color, i);
        if (spec.mode == Mode::Image2D) {
            pos[0] = T(uniform(0.2, 0.8) * p.width);
            pos[1] = T(uniform(0.2, 0.8) * p.height);
            ls[0] = T(std::log(uniform(p.scale_lo, p.scale_hi) * p.width));
            ls[1] = T(std::log(uniform(p.scale_lo, p.scale_hi) * p.width));
            rot[0] = T(uniform(0.0, 3.14159265358979323846));
            for (int c = 0; c < 3; ++c) {
                col[c] = T(unit(rng));
            }
        } else {
            pos[0] = T(uniform(-p.extent, p.extent));
            pos[1] = T(uniform(-p.extent, p.extent));
            pos[2] = T(uniform(-0.5 * p.extent, 0.5 * p.extent));
            for (int a = 0; a < spec.scale_dim(); ++a) {
                ls[a] = T(std::log(uniform(p.scale_lo, p.scale_hi)));
            }
            if (spec.mode == Mode::Planar) {
                // near camera-facing so rays never graze the disk plane
                rot[0] = T(1);
                for (int a = 1; a < 4; ++a) {
                    rot[a] = T(p.rotation_spread * uniform(-1.0, 1.0));
                }
            } else {
                for (int a = 0; a < 4; ++a) {
                    rot[a] = T(normal(rng));
                }
            }
            const int coeffs = m.prims.dim(Group::Color);
            for (int c = 0; c < coeffs; ++c) {
                col[c] = T(c < 3 ? uniform(-1.0, 1.0) : 0.3 * uniform(-1.0, 1.0));
            }
        }
        for (int j = 0; j < spec.latent_dim; ++j) {
            lat[j] = T(0.5 * normal(rng));
        }
        *m.prims.row(Group::OpacityLogit, i) = T(logit(uniform(p.opacity_lo, p.opacity_hi)));
    }
    return out;
}

} // namespace splatkern
