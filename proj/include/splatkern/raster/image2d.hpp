// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/kernel/field.hpp>
#include <splatkern/model.hpp>
#include <splatkern/raster/common.hpp>

#include <cmath>
#include <span>
#include <vector>

namespace splatkern::raster {

/// Screen-space splats for image fitting: centre in pixels, two log-scales,
/// one rotation angle, raw RGB. Local coordinates
///   u = ( cos t dx + sin t dy) / s_u,   v = (-sin t dx + cos t dy) / s_v
/// feed the same 2D kernel as the planar mode.
template <typename T> struct Image2DKernel {
    bool frozen = false;
    kernel::PixelDecoder<T> decoder;
    int hidden = 0;
    std::vector<T> center; // 2 per splat
    std::vector<T> su, sv, cos_t, sin_t;
    std::vector<PixelRect> rects;
    std::vector<T> opacity;
    std::vector<T> colors;
    std::vector<T> h0;

    static constexpr int kCenter = 0, kLogScale = 2, kTheta = 4, kOpacity = 5, kColor = 6,
                         kH0 = 9;

    int size() const { return int(opacity.size()); }
    PixelRect rect(int i) const { return rects[size_t(i)]; }
    const T *color(int i) const { return colors.data() + 3 * size_t(i); }
    const T *h0_of(int i) const { return h0.data() + size_t(hidden) * size_t(i); }

    void local(int i, int px, int py, T &u, T &v) const {
        const size_t n = size_t(i);
        const T dx = T(px) + T(0.5) - center[2 * n];
        const T dy = T(py) + T(0.5) - center[2 * n + 1];
        u = (cos_t[n] * dx + sin_t[n] * dy) / su[n];
        v = (-sin_t[n] * dx + cos_t[n] * dy) / sv[n];
    }

    T alpha(int i, int px, int py) const {
        T u, v;
        local(i, px, py, u, v);
        const T rho = u * u + v * v;
        if (!(rho <= T(1))) {
            return T(0);
        }
        const T d = frozen ? kernel::frozen_gaussian(rho) : decoder.eval(h0_of(i), u, v);
        return opacity[size_t(i)] * d;
    }

    /// Learned-kernel pairs are queued and run through the decoder together in finish().
    struct Scratch : SlotScratch {
        using SlotScratch::SlotScratch;
        kernel::DecoderBatch<T> batch;
        std::vector<T> d_alpha;
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
        T u, v;
        local(i, px, py, u, v);
        const T rho = u * u + v * v;
        if (!(rho <= T(1))) {
            return;
        }
        const T o = opacity[size_t(i)];
        if (!frozen) {
            s.batch.push(slot, i, u, v, d_alpha * o);
            s.d_alpha.push_back(d_alpha);
            return;
        }
        const T d = kernel::frozen_gaussian(rho);
        const T d_rho = d_alpha * o * d * T(-kernel::kFrozenGaussianFalloff);
        apply(i, g, u, v, d_alpha, d, d_rho * T(2) * u, d_rho * T(2) * v);
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
            apply(s.batch.splat[p], s.slot(s.batch.slot[p]), s.batch.u[p], s.batch.v[p],
                  s.d_alpha[p], d[p], du[p], dv[p]);
        }
        s.batch.clear();
        s.d_alpha.clear();
    }

    /// Chain rule from (d, dL/du, dL/dv) to opacity and geometry.
    void apply(int i, double *g, T u, T v, T d_alpha, T d, T du, T dv) const {
        const size_t n = size_t(i);
        g[kOpacity] += double(d_alpha * d);
        const T c = cos_t[n], sn = sin_t[n];
        g[kCenter + 0] += double(-du * c / su[n] + dv * sn / sv[n]);
        g[kCenter + 1] += double(-du * sn / su[n] - dv * c / sv[n]);
        g[kLogScale + 0] += double(-du * u);
        g[kLogScale + 1] += double(-dv * v);
        g[kTheta] += double(du * v * sv[n] / su[n] - dv * u * su[n] / sv[n]);
    }

    void merge(SlotScratch &total, const SlotScratch &tile,
               std::span<const int> slot_to_splat) const {
        total.merge_from(tile, slot_to_splat);
    }
};

template <typename T> struct Image2DView {
    Image2DKernel<T> kernel;
    TileBinning bins;
};

template <typename T>
void prepare_image2d(const Model<T> &m, const RenderOptions<T> &opts, Image2DView<T> &view,
                     RenderStats &stats) {
    const auto &spec = m.spec;
    const size_t n = size_t(m.size());
    view = {};
    auto &ker = view.kernel;
    ker.frozen = spec.source == kernel::KernelSource::FrozenGaussian;
    if (!ker.frozen) {
        ker.decoder = kernel::PixelDecoder<T>(&m.dec);
        ker.hidden = ker.decoder.first_width();
    }
    ker.center.resize(2 * n);
    ker.su.resize(n);
    ker.sv.resize(n);
    ker.cos_t.resize(n);
    ker.sin_t.resize(n);
    ker.rects.resize(n);
    ker.opacity.resize(n);
    ker.colors.resize(3 * n);
    ker.h0.resize(size_t(ker.hidden) * n);
    for (size_t i = 0; i < n; ++i) {
        const int id = int(i);
        const T *pos = m.prims.row(Group::Position, id);
        const T *ls = m.prims.row(Group::LogScale, id);
        const T theta = *m.prims.row(Group::Rotation, id);
        ker.center[2 * i] = pos[0];
        ker.center[2 * i + 1] = pos[1];
        ker.su[i] = std::exp(ls[0]);
        ker.sv[i] = std::exp(ls[1]);
        ker.cos_t[i] = std::cos(theta);
        ker.sin_t[i] = std::sin(theta);
        const T c2 = ker.cos_t[i] * ker.cos_t[i], s2 = ker.sin_t[i] * ker.sin_t[i];
        const T su2 = ker.su[i] * ker.su[i], sv2 = ker.sv[i] * ker.sv[i];
        const T ex = std::sqrt(su2 * c2 + sv2 * s2);
        const T ey = std::sqrt(su2 * s2 + sv2 * c2);
        ker.rects[i] = box_on_screen(pos[0], pos[1], ex, ey, spec.width, spec.height)
                           ? pixel_rect(pos[0], pos[1], ex, ey, spec.width, spec.height)
                           : PixelRect{};
        ker.opacity[i] = nn::sigmoid(*m.prims.row(Group::OpacityLogit, id));
        std::copy_n(m.prims.row(Group::Color, id), 3, ker.colors.data() + 3 * i);
        if (!ker.frozen) {
            ker.decoder.precompute({m.prims.row(Group::Latent, id), size_t(spec.latent_dim)},
                                   ker.h0.data() + size_t(ker.hidden) * i);
        }
    }
    stats.visible = int(n);
    view.bins = bin_tiles(ker, spec.width, spec.height, opts.raster.tile_size);
}

template <typename T>
void image2d_backward(const Model<T> &m, const Image2DView<T> &view, const SlotScratch &s,
                      ModelGrads<T> &grads) {
    using K = Image2DKernel<T>;
    const auto &spec = m.spec;
    const auto &ker = view.kernel;
    const int n = ker.size();
    nn::MlpGrads<double> dec = s.dec;
    std::vector<double> dh0(size_t(ker.hidden));
    for (int i = 0; i < n; ++i) {
        const double *g = s.slot(i);
        T *d_pos = grads.prims.row(Group::Position, i);
        T *d_ls = grads.prims.row(Group::LogScale, i);
        d_pos[0] += T(g[K::kCenter]);
        d_pos[1] += T(g[K::kCenter + 1]);
        d_ls[0] += T(g[K::kLogScale]);
        d_ls[1] += T(g[K::kLogScale + 1]);
        *grads.prims.row(Group::Rotation, i) += T(g[K::kTheta]);
        const T o = ker.opacity[size_t(i)];
        *grads.prims.row(Group::OpacityLogit, i) += T(g[K::kOpacity]) * o * (T(1) - o);
        T *d_col = grads.prims.row(Group::Color, i);
        for (int ch = 0; ch < 3; ++ch) {
            d_col[ch] += T(g[K::kColor + ch]);
        }
        if (!ker.frozen) {
            std::copy(g + K::kH0, g + K::kH0 + ker.hidden, dh0.begin());
            ker.decoder.finish_primitive(
                std::span<const T>(m.prims.row(Group::Latent, i), size_t(spec.latent_dim)),
                dh0.data(),
                std::span<T>(grads.prims.row(Group::Latent, i), size_t(spec.latent_dim)), dec);
        }
    }
    if (!ker.frozen) {
        grads.dec.add(dec);
    }
}

} // namespace splatkern::raster
