// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/geom/camera.hpp>
#include <splatkern/geom/disk.hpp>
#include <splatkern/geom/rotation.hpp>
#include <splatkern/kernel/field.hpp>
#include <splatkern/model.hpp>
#include <splatkern/raster/common.hpp>
#include <splatkern/raster/sh.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace splatkern::raster {

/// Oriented disks: each pixel ray is intersected with the disk plane and the
/// local (u, v) coordinates drive a learned 2D kernel d(u, v), zero outside
/// the unit disk.
template <typename T> struct PlanarKernel {
    geom::Camera<T> cam;
    bool frozen = false;
    kernel::PixelDecoder<T> decoder;
    int hidden = 0; // width of the decoder's first layer
    std::vector<geom::Vec3<T>> mu_cam, tu_cam, tv_cam;
    std::vector<PixelRect> rects;
    std::vector<T> opacity;
    std::vector<T> colors; // 3 per splat
    std::vector<T> h0;     // `hidden` per splat

    static constexpr int kMu = 0, kTu = 3, kTv = 6, kOpacity = 9, kColor = 10, kH0 = 13;

    int size() const { return int(opacity.size()); }
    PixelRect rect(int i) const { return rects[size_t(i)]; }
    const T *color(int i) const { return colors.data() + 3 * size_t(i); }
    const T *h0_of(int i) const { return h0.data() + size_t(hidden) * size_t(i); }

    std::optional<geom::DiskSolve<T>> hit(int i, int px, int py) const {
        const auto dir = cam.ray_direction(T(px) + T(0.5), T(py) + T(0.5));
        auto s = geom::intersect_disk_cam(dir, mu_cam[size_t(i)], tu_cam[size_t(i)],
                                          tv_cam[size_t(i)]);
        if (!s || !(s->hit.u * s->hit.u + s->hit.v * s->hit.v <= T(1))) {
            return std::nullopt;
        }
        return s;
    }

    T shape(int i, T u, T v) const {
        return frozen ? kernel::frozen_gaussian(u * u + v * v) : decoder.eval(h0_of(i), u, v);
    }

    T alpha(int i, int px, int py) const {
        const auto s = hit(i, px, py);
        if (!s) {
            return T(0);
        }
        return opacity[size_t(i)] * shape(i, s->hit.u, s->hit.v);
    }

    /// Learned-kernel pairs are queued and run through the decoder together in finish().
    struct Scratch : SlotScratch {
        using SlotScratch::SlotScratch;
        kernel::DecoderBatch<T> batch;
        std::vector<T> d_alpha;
        std::vector<geom::DiskSolve<T>> solves;
    };
    Scratch make_scratch(int slots) const {
        Scratch s(slots, kH0 + hidden);
        if (!frozen) {
            s.dec = nn::MlpGrads<double>::zeros_like(decoder.net());
        }
        return s;
    }

    void accumulate(int i, int slot, int px, int py, T d_alpha, const T *d_color,
                    Scratch &s) const {
        double *g = s.slot(slot);
        for (int ch = 0; ch < 3; ++ch) {
            g[kColor + ch] += double(d_color[ch]);
        }
        if (d_alpha == T(0)) {
            return;
        }
        const auto sol = hit(i, px, py);
        if (!sol) {
            return;
        }
        const T u = sol->hit.u, v = sol->hit.v;
        const T o = opacity[size_t(i)];
        if (!frozen) {
            s.batch.push(slot, i, u, v, d_alpha * o);
            s.d_alpha.push_back(d_alpha);
            s.solves.push_back(*sol);
            return;
        }
        const T d = kernel::frozen_gaussian(u * u + v * v);
        const T d_rho = d_alpha * o * d * T(-kernel::kFrozenGaussianFalloff);
        apply(g, *sol, d_alpha, d, d_rho * T(2) * u, d_rho * T(2) * v);
    }

    /// Runs the queued decoder pairs.
    void finish(Scratch &s) const {
        if (s.batch.size() == 0) {
            return;
        }
        std::vector<T> d, du, dv;
        decoder.backward_batch(h0.data(), s.batch, s.values.data() + kH0, s.stride, d, du, dv,
                               s.dec);
        for (size_t p = 0; p < s.batch.size(); ++p) {
            apply(s.slot(s.batch.slot[p]), s.solves[p], s.d_alpha[p], d[p], du[p], dv[p]);
        }
        s.batch.clear();
        s.d_alpha.clear();
        s.solves.clear();
    }

    /// Chain rule from (d, dL/du, dL/dv) to opacity and the disk frame.
    void apply(double *g, const geom::DiskSolve<T> &sol, T d_alpha, T d, T du, T dv) const {
        g[kOpacity] += double(d_alpha * d);
        const auto dg = geom::intersect_disk_backward(sol, du, dv);
        for (int a = 0; a < 3; ++a) {
            g[kMu + a] += double(dg.mu_cam[a]);
            g[kTu + a] += double(dg.tu_cam[a]);
            g[kTv + a] += double(dg.tv_cam[a]);
        }
    }

    void merge(SlotScratch &total, const SlotScratch &tile,
               std::span<const int> slot_to_splat) const {
        total.merge_from(tile, slot_to_splat);
    }
};

template <typename T> struct PlanarView {
    std::vector<int> ids;
    std::vector<geom::Mat3<T>> rotation; // world rotation
    std::vector<geom::Vec2<T>> scale;    // exponentiated
    std::vector<geom::Vec3<T>> view_vec; // mu - camera center
    std::vector<std::array<bool, 3>> clamped;
    nn::Matrix<T> z_after; // decoder latent per splat (columns)
    nn::ForwardCache<T> proj_cache;
    PlanarKernel<T> kernel;
    TileBinning bins;
};

namespace detail {

template <typename T>
kernel::ProjFeatures<T> planar_features(const Model<T> &m, const PlanarView<T> &v,
                                        const geom::Camera<T> &cam, size_t n) {
    kernel::ProjFeatures<T> f;
    f.latent = {m.prims.row(Group::Latent, v.ids[n]), size_t(m.spec.latent_dim)};
    f.mu_cam = v.kernel.mu_cam[n];
    f.scale = {v.scale[n].data(), 2};
    f.r_cam = cam.rotation * v.rotation[n];
    return f;
}

} // namespace detail

template <typename T>
void prepare_planar(const Model<T> &m, const geom::Camera<T> &cam, const RenderOptions<T> &opts,
                    PlanarView<T> &v, RenderStats &stats) {
    const auto &spec = m.spec;
    const T near = opts.projection.near_plane;
    struct Candidate {
        T depth;
        int id;
        geom::Mat3<T> rot;
        geom::Vec2<T> scale;
        geom::Vec3<T> mu_c, tu_c, tv_c;
        PixelRect rect;
    };
    std::vector<Candidate> cand;
    for (int i = 0; i < m.size(); ++i) {
        const T *pos = m.prims.row(Group::Position, i);
        const T *ls = m.prims.row(Group::LogScale, i);
        const T *qr = m.prims.row(Group::Rotation, i);
        const geom::Quaternion<T> q{qr[0], qr[1], qr[2], qr[3]};
        if (!(q.squared_norm() > T(0))) {
            continue;
        }
        const geom::Vec2<T> s(std::exp(ls[0]), std::exp(ls[1]));
        const geom::Mat3<T> rot = geom::quat_to_rotation(q);
        const geom::Vec3<T> mu_c = cam.to_camera(geom::Vec3<T>(pos[0], pos[1], pos[2]));
        const geom::Vec3<T> tu_c = cam.rotation * (rot.col(0) * s[0]);
        const geom::Vec3<T> tv_c = cam.rotation * (rot.col(1) * s[1]);
        if (!(tu_c.cross(tv_c).norm() >= T(1e-12))) {
            continue;
        }
        T x0 = std::numeric_limits<T>::max(), y0 = x0;
        T x1 = std::numeric_limits<T>::lowest(), y1 = x1;
        bool in_front = true;
        for (int c = 0; c < 4; ++c) {
            const T su = (c & 1) ? T(1) : T(-1), sv = (c & 2) ? T(1) : T(-1);
            const geom::Vec3<T> p = mu_c + su * tu_c + sv * tv_c;
            if (!(p.z() > near)) {
                in_front = false;
                break;
            }
            const geom::Vec2<T> px = cam.project(p);
            x0 = std::min(x0, px.x());
            x1 = std::max(x1, px.x());
            y0 = std::min(y0, px.y());
            y1 = std::max(y1, px.y());
        }
        if (!in_front) {
            continue;
        }
        const T mx = T(0.5) * (x0 + x1), my = T(0.5) * (y0 + y1);
        const T ex = T(0.5) * (x1 - x0), ey = T(0.5) * (y1 - y0);
        if (!box_on_screen(mx, my, ex, ey, cam.width, cam.height)) {
            continue;
        }
        cand.push_back({mu_c.z(), i, rot, s, mu_c, tu_c, tv_c,
                        pixel_rect(mx, my, ex, ey, cam.width, cam.height)});
    }
    std::sort(cand.begin(), cand.end(), [](const Candidate &a, const Candidate &b) {
        return a.depth < b.depth || (a.depth == b.depth && a.id < b.id);
    });

    const size_t n = cand.size();
    v = {};
    auto &ker = v.kernel;
    ker.cam = cam;
    ker.frozen = spec.source == kernel::KernelSource::FrozenGaussian;
    if (!ker.frozen) {
        ker.decoder = kernel::PixelDecoder<T>(&m.dec);
        ker.hidden = ker.decoder.first_width();
    }
    v.ids.resize(n);
    v.rotation.resize(n);
    v.scale.resize(n);
    v.view_vec.resize(n);
    v.clamped.resize(n);
    ker.mu_cam.resize(n);
    ker.tu_cam.resize(n);
    ker.tv_cam.resize(n);
    ker.rects.resize(n);
    ker.opacity.resize(n);
    ker.colors.resize(3 * n);
    ker.h0.resize(size_t(ker.hidden) * n);
    const geom::Vec3<T> center = cam.center();
    for (size_t j = 0; j < n; ++j) {
        const auto &c = cand[j];
        v.ids[j] = c.id;
        v.rotation[j] = c.rot;
        v.scale[j] = c.scale;
        const T *pos = m.prims.row(Group::Position, c.id);
        v.view_vec[j] = geom::Vec3<T>(pos[0], pos[1], pos[2]) - center;
        ker.mu_cam[j] = c.mu_c;
        ker.tu_cam[j] = c.tu_c;
        ker.tv_cam[j] = c.tv_c;
        ker.rects[j] = c.rect;
        ker.opacity[j] = nn::sigmoid(*m.prims.row(Group::OpacityLogit, c.id));
        v.clamped[j] = eval_sh_color(spec.sh_degree, m.prims.row(Group::Color, c.id),
                                     geom::Vec3<T>(v.view_vec[j].normalized()),
                                     ker.colors.data() + 3 * j);
    }
    if (!ker.frozen && n > 0) {
        nn::Matrix<T> x(spec.proj_input_dim(), Eigen::Index(n));
        for (size_t j = 0; j < n; ++j) {
            kernel::write_proj_input(spec.inputs, detail::planar_features(m, v, cam, j),
                                     T(spec.mu_scale), x.col(Eigen::Index(j)).data());
        }
        v.z_after = nn::mlp_forward(m.proj, x, &v.proj_cache);
        for (size_t j = 0; j < n; ++j) {
            const T *z = v.z_after.col(Eigen::Index(j)).data();
            ker.decoder.precompute({z, size_t(spec.code_dim)},
                                   ker.h0.data() + size_t(ker.hidden) * j);
        }
    }
    stats.visible = int(n);
    v.bins = bin_tiles(ker, cam.width, cam.height, opts.raster.tile_size);
}

template <typename T>
void planar_backward(const Model<T> &m, const geom::Camera<T> &cam, const PlanarView<T> &v,
                     const SlotScratch &s, ModelGrads<T> &grads) {
    using K = PlanarKernel<T>;
    const auto &spec = m.spec;
    const auto &ker = v.kernel;
    const size_t n = v.ids.size();
    const geom::Mat3<T> w_rot_t = cam.rotation.transpose();

    nn::Matrix<T> d_in;
    if (!ker.frozen && n > 0) {
        nn::Matrix<T> dz = nn::Matrix<T>::Zero(spec.code_dim, Eigen::Index(n));
        nn::MlpGrads<double> dec = s.dec;
        std::vector<double> dh0(size_t(ker.hidden));
        for (size_t j = 0; j < n; ++j) {
            const double *g = s.slot(int(j));
            std::copy(g + K::kH0, g + K::kH0 + ker.hidden, dh0.begin());
            ker.decoder.finish_primitive(
                std::span<const T>(v.z_after.col(Eigen::Index(j)).data(), size_t(spec.code_dim)),
                dh0.data(), std::span<T>(dz.col(Eigen::Index(j)).data(), size_t(spec.code_dim)),
                dec);
        }
        grads.dec.add(dec);
        d_in = nn::mlp_backward(m.proj, v.proj_cache, dz, grads.proj);
    }

    for (size_t j = 0; j < n; ++j) {
        const int id = v.ids[j];
        const double *g = s.slot(int(j));
        geom::Vec3<T> d_mu = geom::Vec3<T>::Zero();

        const T d_color[3] = {T(g[K::kColor]), T(g[K::kColor + 1]), T(g[K::kColor + 2])};
        const geom::Vec3<T> d_dir = eval_sh_color_backward(
            spec.sh_degree, m.prims.row(Group::Color, id),
            geom::Vec3<T>(v.view_vec[j].normalized()), v.clamped[j], d_color,
            grads.prims.row(Group::Color, id));
        d_mu += normalize_backward(v.view_vec[j], d_dir);

        const T o = ker.opacity[j];
        *grads.prims.row(Group::OpacityLogit, id) += T(g[K::kOpacity]) * o * (T(1) - o);

        kernel::ProjFeatureGrads<T> fg;
        geom::Vec2<T> d_scale = geom::Vec2<T>::Zero();
        if (!ker.frozen) {
            fg.latent = {grads.prims.row(Group::Latent, id), size_t(spec.latent_dim)};
            fg.scale = {d_scale.data(), 2};
            kernel::split_proj_input_grad(spec.inputs, detail::planar_features(m, v, cam, j),
                                          T(spec.mu_scale), d_in.col(Eigen::Index(j)).data(),
                                          fg);
        }
        const geom::Vec3<T> d_mu_c =
            geom::Vec3<T>{T(g[K::kMu]), T(g[K::kMu + 1]), T(g[K::kMu + 2])} + fg.mu_cam;
        d_mu += w_rot_t * d_mu_c;
        const geom::Vec3<T> d_tu =
            w_rot_t * geom::Vec3<T>{T(g[K::kTu]), T(g[K::kTu + 1]), T(g[K::kTu + 2])};
        const geom::Vec3<T> d_tv =
            w_rot_t * geom::Vec3<T>{T(g[K::kTv]), T(g[K::kTv + 1]), T(g[K::kTv + 2])};
        const auto &rot = v.rotation[j];
        const auto &sc = v.scale[j];
        geom::Mat3<T> d_rot = w_rot_t * fg.r_cam;
        d_rot.col(0) += sc[0] * d_tu;
        d_rot.col(1) += sc[1] * d_tv;
        d_scale[0] += rot.col(0).dot(d_tu);
        d_scale[1] += rot.col(1).dot(d_tv);

        T *d_pos = grads.prims.row(Group::Position, id);
        T *d_ls = grads.prims.row(Group::LogScale, id);
        for (int a = 0; a < 3; ++a) {
            d_pos[a] += d_mu[a];
        }
        d_ls[0] += d_scale[0] * sc[0];
        d_ls[1] += d_scale[1] * sc[1];
        const T *qr = m.prims.row(Group::Rotation, id);
        const auto dq = geom::quat_to_rotation_backward(
            geom::Quaternion<T>{qr[0], qr[1], qr[2], qr[3]}, d_rot);
        T *d_q = grads.prims.row(Group::Rotation, id);
        d_q[0] += dq.w;
        d_q[1] += dq.x;
        d_q[2] += dq.y;
        d_q[3] += dq.z;
    }
}

} // namespace splatkern::raster
