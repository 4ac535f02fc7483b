// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/error.hpp>
#include <splatkern/geom/rotation.hpp>

#include <cstdint>
#include <span>
#include <sstream>
#include <string>

namespace splatkern::kernel {

/// Which per-primitive quantities feed the projection network. The default
/// is {latent, camera-space center, scale, camera-space rotation}.
struct ProjInputSet {
    bool latent = true;
    bool mu_cam = true;
    bool scale = true;
    bool r_cam = true;
    bool view_dir = false; // unit vector from the camera center to the primitive

    int dim(int latent_dim, int scale_dim) const {
        return (latent ? latent_dim : 0) + (mu_cam ? 3 : 0) + (scale ? scale_dim : 0) +
               (r_cam ? 9 : 0) + (view_dir ? 3 : 0);
    }

    std::uint32_t bits() const {
        return (latent ? 1u : 0u) | (mu_cam ? 2u : 0u) | (scale ? 4u : 0u) | (r_cam ? 8u : 0u) |
               (view_dir ? 16u : 0u);
    }

    static ProjInputSet from_bits(std::uint32_t b) {
        return {(b & 1u) != 0, (b & 2u) != 0, (b & 4u) != 0, (b & 8u) != 0, (b & 16u) != 0};
    }

    /// Comma-separated names: z3d, mu_cam, s, r_cam, omega_o.
    static ProjInputSet parse(const std::string &text) {
        ProjInputSet set{false, false, false, false, false};
        std::stringstream ss(text);
        std::string item;
        while (std::getline(ss, item, ',')) {
            if (item == "z3d" || item == "z") {
                set.latent = true;
            } else if (item == "mu_cam") {
                set.mu_cam = true;
            } else if (item == "s") {
                set.scale = true;
            } else if (item == "r_cam") {
                set.r_cam = true;
            } else if (item == "omega_o") {
                set.view_dir = true;
            } else if (!item.empty()) {
                throw ConfigError("unknown projection input '" + item + "'");
            }
        }
        if (set.bits() == 0) {
            throw ConfigError("projection input set is empty");
        }
        return set;
    }
};

/// Per-primitive values the projection network may see.
template <typename T> struct ProjFeatures {
    std::span<const T> latent;
    geom::Vec3<T> mu_cam;
    std::span<const T> scale; // exponentiated
    geom::Mat3<T> r_cam;
};

/// Writes the selected features into `out` (length set.dim(...)). `mu_scale`
/// multiplies mu_cam (1 keeps raw coordinates).
template <typename T>
void write_proj_input(const ProjInputSet &set, const ProjFeatures<T> &f, T mu_scale, T *out) {
    int o = 0;
    if (set.latent) {
        for (T v : f.latent) {
            out[o++] = v;
        }
    }
    if (set.mu_cam) {
        for (int i = 0; i < 3; ++i) {
            out[o++] = f.mu_cam[i] * mu_scale;
        }
    }
    if (set.scale) {
        for (T v : f.scale) {
            out[o++] = v;
        }
    }
    if (set.r_cam) {
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) {
                out[o++] = f.r_cam(r, c);
            }
        }
    }
    if (set.view_dir) {
        const geom::Vec3<T> w = f.mu_cam.normalized();
        for (int i = 0; i < 3; ++i) {
            out[o++] = w[i];
        }
    }
}

/// Gradients of the projection-network input, split back per feature.
template <typename T> struct ProjFeatureGrads {
    std::span<T> latent; // caller-provided, accumulated into
    geom::Vec3<T> mu_cam = geom::Vec3<T>::Zero();
    std::span<T> scale; // caller-provided, accumulated into
    geom::Mat3<T> r_cam = geom::Mat3<T>::Zero();
};

template <typename T>
void split_proj_input_grad(const ProjInputSet &set, const ProjFeatures<T> &f, T mu_scale,
                           const T *grad, ProjFeatureGrads<T> &out) {
    int o = 0;
    if (set.latent) {
        for (auto &v : out.latent) {
            v += grad[o++];
        }
    }
    if (set.mu_cam) {
        for (int i = 0; i < 3; ++i) {
            out.mu_cam[i] += grad[o++] * mu_scale;
        }
    }
    if (set.scale) {
        for (auto &v : out.scale) {
            v += grad[o++];
        }
    }
    if (set.r_cam) {
        for (int r = 0; r < 3; ++r) {
            for (int c = 0; c < 3; ++c) {
                out.r_cam(r, c) += grad[o++];
            }
        }
    }
    if (set.view_dir) {
        const T len = f.mu_cam.norm();
        const geom::Vec3<T> w = f.mu_cam / len;
        const geom::Vec3<T> g(grad[o], grad[o + 1], grad[o + 2]);
        out.mu_cam += (g - w * w.dot(g)) / len;
    }
}

} // namespace splatkern::kernel
