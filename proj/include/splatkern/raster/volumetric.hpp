// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/geom/camera.hpp>
#include <splatkern/geom/projection.hpp>
#include <splatkern/geom/rotation.hpp>
#include <splatkern/kernel/field.hpp>
#include <splatkern/kernel/profile.hpp>
#include <splatkern/model.hpp>
#include <splatkern/raster/common.hpp>
#include <splatkern/raster/sh.hpp>

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

namespace splatkern::raster {

/// Splats with a per-primitive radial profile on an elliptical footprint:
/// alpha = o * d(r^2), r^2 the conic distance, zero for r > 1.
template <typename T> struct VolumetricKernel {
    int k = 2;
    std::vector<geom::Conic2D<T>> conics;
    std::vector<PixelRect> rects;
    std::vector<T> opacity;
    std::vector<T> colors;   // 3 per splat
    std::vector<T> profiles; // k per splat

    // Scratch layout per slot.
    static constexpr int kAbc = 0, kMu2d = 3, kOpacity = 5, kColor = 6, kProfile = 9;

    int size() const { return int(opacity.size()); }
    PixelRect rect(int i) const { return rects[size_t(i)]; }
    const T *color(int i) const { return colors.data() + 3 * size_t(i); }
    std::span<const T> profile(int i) const {
        return {profiles.data() + size_t(k) * size_t(i), size_t(k)};
    }

    T r_sq(int i, int px, int py) const {
        const geom::Vec2<T> p(T(px) + T(0.5), T(py) + T(0.5));
        return geom::mahalanobis_sq(p, conics[size_t(i)]);
    }

    T alpha(int i, int px, int py) const {
        const T r2 = r_sq(i, px, py);
        if (!(r2 <= T(1))) {
            return T(0);
        }
        return opacity[size_t(i)] * kernel::eval_kernel(profile(i), r2);
    }

    using Scratch = SlotScratch;
    Scratch make_scratch(int slots) const { return Scratch(slots, kProfile + k); }

    void accumulate(int i, int slot, int px, int py, T d_alpha, const T *d_color,
                    Scratch &s) const {
        double *g = s.slot(slot);
        for (int ch = 0; ch < 3; ++ch) {
            g[kColor + ch] += double(d_color[ch]);
        }
        if (d_alpha == T(0)) {
            return;
        }
        const auto &q = conics[size_t(i)];
        const T dx = T(px) + T(0.5) - q.mu2d.x();
        const T dy = T(py) + T(0.5) - q.mu2d.y();
        const T r2 = q.a * dx * dx + T(2) * q.b * dx * dy + q.c * dy * dy;
        if (!(r2 <= T(1))) {
            return;
        }
        const auto prof = profile(i);
        g[kOpacity] += double(d_alpha * kernel::eval_kernel(prof, r2));
        const auto kg = kernel::eval_kernel_backward(prof, r2, d_alpha * opacity[size_t(i)]);
        g[kProfile + kg.segment] += double(kg.d_left);
        g[kProfile + kg.segment + 1] += double(kg.d_right);
        if (kg.d_r_sq != T(0)) {
            const double dr = double(kg.d_r_sq);
            const double x = double(dx), y = double(dy);
            g[kAbc + 0] += dr * x * x;
            g[kAbc + 1] += dr * 2.0 * x * y;
            g[kAbc + 2] += dr * y * y;
            g[kMu2d + 0] -= dr * 2.0 * (double(q.a) * x + double(q.b) * y);
            g[kMu2d + 1] -= dr * 2.0 * (double(q.b) * x + double(q.c) * y);
        }
    }

    void merge(Scratch &total, const Scratch &tile, std::span<const int> slot_to_splat) const {
        total.merge_from(tile, slot_to_splat);
    }
};

/// Everything the backward pass needs from one volumetric forward pass.
template <typename T> struct VolumetricView {
    std::vector<int> ids; // primitive index per splat, in compositing order
    std::vector<geom::ProjectedCov<T>> projected;
    std::vector<geom::Mat3<T>> rotation;  // world rotation
    std::vector<geom::Vec3<T>> scale;     // exponentiated
    std::vector<geom::Vec3<T>> view_vec;  // mu - camera center
    std::vector<std::array<bool, 3>> clamped;
    nn::ForwardCache<T> proj_cache, dec_cache;
    nn::Matrix<T> proj_in;
    VolumetricKernel<T> kernel;
    TileBinning bins;
};

namespace detail {

template <typename T>
kernel::ProjFeatures<T> volumetric_features(const Model<T> &m, const VolumetricView<T> &v,
                                            const geom::Camera<T> &cam, size_t n) {
    kernel::ProjFeatures<T> f;
    f.latent = {m.prims.row(Group::Latent, v.ids[n]), size_t(m.spec.latent_dim)};
    f.mu_cam = v.projected[n].mu_cam;
    f.scale = {v.scale[n].data(), 3};
    f.r_cam = cam.rotation * v.rotation[n];
    return f;
}

} // namespace detail

template <typename T>
void prepare_volumetric(const Model<T> &m, const geom::Camera<T> &cam,
                        const RenderOptions<T> &opts, VolumetricView<T> &v, RenderStats &stats) {
    const auto &spec = m.spec;
    const int n_all = m.size();
    struct Candidate {
        T depth;
        int id;
        geom::ProjectedCov<T> p;
        geom::Mat3<T> rot;
        geom::Vec3<T> scale;
    };
    std::vector<Candidate> cand;
    cand.reserve(size_t(n_all));
    for (int i = 0; i < n_all; ++i) {
        const T *pos = m.prims.row(Group::Position, i);
        const T *ls = m.prims.row(Group::LogScale, i);
        const T *qr = m.prims.row(Group::Rotation, i);
        const geom::Vec3<T> mu(pos[0], pos[1], pos[2]);
        const geom::Vec3<T> s(std::exp(ls[0]), std::exp(ls[1]), std::exp(ls[2]));
        const geom::Quaternion<T> q{qr[0], qr[1], qr[2], qr[3]};
        if (!(q.squared_norm() > T(0))) {
            continue;
        }
        const geom::Mat3<T> rot = geom::quat_to_rotation(q);
        const geom::Mat3<T> m3 = rot * s.asDiagonal();
        const geom::Mat3<T> cov = m3 * m3.transpose();
        auto p = geom::project_cov(mu, cov, cam, opts.projection);
        if (!p) {
            continue;
        }
        const auto &c = p->conic;
        if (!box_on_screen(c.mu2d.x(), c.mu2d.y(), c.extent_x, c.extent_y, cam.width,
                           cam.height)) {
            continue;
        }
        cand.push_back({c.depth, i, *p, rot, s});
    }
    std::sort(cand.begin(), cand.end(), [](const Candidate &a, const Candidate &b) {
        return a.depth < b.depth || (a.depth == b.depth && a.id < b.id);
    });

    const size_t n = cand.size();
    const int k = spec.k;
    v = {};
    v.ids.resize(n);
    v.projected.resize(n);
    v.rotation.resize(n);
    v.scale.resize(n);
    v.view_vec.resize(n);
    v.clamped.resize(n);
    auto &ker = v.kernel;
    ker.k = k;
    ker.conics.resize(n);
    ker.rects.resize(n);
    ker.opacity.resize(n);
    ker.colors.resize(3 * n);
    ker.profiles.resize(size_t(k) * n);
    const geom::Vec3<T> center = cam.center();
    for (size_t j = 0; j < n; ++j) {
        const auto &c = cand[j];
        v.ids[j] = c.id;
        v.projected[j] = c.p;
        v.rotation[j] = c.rot;
        v.scale[j] = c.scale;
        const T *pos = m.prims.row(Group::Position, c.id);
        v.view_vec[j] = geom::Vec3<T>(pos[0], pos[1], pos[2]) - center;
        const auto &q = c.p.conic;
        ker.conics[j] = q;
        ker.rects[j] = pixel_rect(q.mu2d.x(), q.mu2d.y(), q.extent_x, q.extent_y, cam.width,
                                  cam.height);
        ker.opacity[j] = nn::sigmoid(*m.prims.row(Group::OpacityLogit, c.id));
        v.clamped[j] = eval_sh_color(spec.sh_degree, m.prims.row(Group::Color, c.id),
                                     geom::Vec3<T>(v.view_vec[j].normalized()),
                                     ker.colors.data() + 3 * j);
    }

    if (spec.source == kernel::KernelSource::FrozenGaussian) {
        const auto prof = kernel::frozen_gaussian_profile<T>(k);
        for (size_t j = 0; j < n; ++j) {
            std::copy(prof.data(), prof.data() + k, ker.profiles.data() + size_t(k) * j);
        }
    } else if (n > 0) {
        const int in_dim = spec.proj_input_dim();
        v.proj_in.resize(in_dim, Eigen::Index(n));
        for (size_t j = 0; j < n; ++j) {
            const auto f = detail::volumetric_features(m, v, cam, j);
            kernel::write_proj_input(spec.inputs, f, T(spec.mu_scale),
                                     v.proj_in.col(Eigen::Index(j)).data());
        }
        const nn::Matrix<T> z2d = nn::mlp_forward(m.proj, v.proj_in, &v.proj_cache);
        const nn::Matrix<T> prof =
            kernel::decode_profiles(m.dec, z2d, k, &v.dec_cache, &stats.decoder_calls);
        std::copy(prof.data(), prof.data() + prof.size(), ker.profiles.data());
    }
    stats.visible = int(n);
    v.bins = bin_tiles(ker, cam.width, cam.height, opts.raster.tile_size);
}

/// Pulls the per-splat rasterizer gradients back through colour, opacity,
/// the kernel networks and the projection onto the model parameters.
template <typename T>
void volumetric_backward(const Model<T> &m, const geom::Camera<T> &cam,
                         const VolumetricView<T> &v, const SlotScratch &s, ModelGrads<T> &grads) {
    using K = VolumetricKernel<T>;
    const auto &spec = m.spec;
    const size_t n = v.ids.size();
    const int k = spec.k;
    const bool learned = spec.source == kernel::KernelSource::Learned;
    const geom::Mat3<T> w_rot_t = cam.rotation.transpose();

    nn::Matrix<T> d_in;
    if (learned && n > 0) {
        nn::Matrix<T> d_prof(k, Eigen::Index(n));
        for (size_t j = 0; j < n; ++j) {
            const double *g = s.slot(int(j));
            for (int i = 0; i < k; ++i) {
                d_prof(i, Eigen::Index(j)) = T(g[K::kProfile + i]);
            }
        }
        const nn::Matrix<T> dz2d =
            kernel::decode_profiles_backward(m.dec, v.dec_cache, d_prof, grads.dec);
        d_in = nn::mlp_backward(m.proj, v.proj_cache, dz2d, grads.proj);
    }

    for (size_t j = 0; j < n; ++j) {
        const int id = v.ids[j];
        const double *g = s.slot(int(j));
        T *d_pos = grads.prims.row(Group::Position, id);
        T *d_ls = grads.prims.row(Group::LogScale, id);
        T *d_q = grads.prims.row(Group::Rotation, id);
        geom::Vec3<T> d_mu = geom::Vec3<T>::Zero();

        const T d_color[3] = {T(g[K::kColor]), T(g[K::kColor + 1]), T(g[K::kColor + 2])};
        const geom::Vec3<T> dir = v.view_vec[j].normalized();
        const geom::Vec3<T> d_dir = eval_sh_color_backward(
            spec.sh_degree, m.prims.row(Group::Color, id), dir, v.clamped[j], d_color,
            grads.prims.row(Group::Color, id));
        d_mu += normalize_backward(v.view_vec[j], d_dir);

        const T o = v.kernel.opacity[j];
        *grads.prims.row(Group::OpacityLogit, id) += T(g[K::kOpacity]) * o * (T(1) - o);

        kernel::ProjFeatureGrads<T> fg;
        geom::Vec3<T> d_scale_feat = geom::Vec3<T>::Zero();
        if (learned) {
            const auto f = detail::volumetric_features(m, v, cam, j);
            fg.latent = {grads.prims.row(Group::Latent, id), size_t(spec.latent_dim)};
            fg.scale = {d_scale_feat.data(), 3};
            kernel::split_proj_input_grad(spec.inputs, f, T(spec.mu_scale),
                                          d_in.col(Eigen::Index(j)).data(), fg);
        }

        const geom::Vec3<T> d_abc{T(g[K::kAbc]), T(g[K::kAbc + 1]), T(g[K::kAbc + 2])};
        const geom::Vec2<T> d_mu2d{T(g[K::kMu2d]), T(g[K::kMu2d + 1])};
        const auto pg = geom::project_cov_backward(v.projected[j], cam, d_abc, d_mu2d);
        d_mu += w_rot_t * (pg.mu_cam + fg.mu_cam);

        const auto cg = geom::build_cov3d_backward(v.scale[j], v.rotation[j], pg.cov3d);
        const geom::Mat3<T> d_rot = cg.rotation + w_rot_t * fg.r_cam;
        const geom::Vec3<T> d_scale = cg.scale + d_scale_feat;
        for (int a = 0; a < 3; ++a) {
            d_pos[a] += d_mu[a];
            d_ls[a] += d_scale[a] * v.scale[j][a];
        }
        const T *qr = m.prims.row(Group::Rotation, id);
        const auto dq = geom::quat_to_rotation_backward(
            geom::Quaternion<T>{qr[0], qr[1], qr[2], qr[3]}, d_rot);
        d_q[0] += dq.w;
        d_q[1] += dq.x;
        d_q[2] += dq.y;
        d_q[3] += dq.z;
    }
}

} // namespace splatkern::raster
