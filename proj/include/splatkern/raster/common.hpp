// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/geom/projection.hpp>
#include <splatkern/nn/mlp.hpp>
#include <splatkern/raster/composite.hpp>

#include <cstdint>
#include <span>
#include <vector>

namespace splatkern::raster {

template <typename T> struct RenderOptions {
    RenderSettings<T> raster;
    geom::ProjectionSettings<T> projection;
    bool tiled = true; // false walks every splat for every pixel (test oracle)
};

struct RenderStats {
    int visible = 0;                 // splats handed to the rasterizer
    std::uint64_t decoder_calls = 0; // profile decoder evaluations in this view
};

/// Fixed-stride per-slot gradient storage. Accumulates in double so the tiled
/// and reference reductions agree closely even for float models.
struct SlotScratch {
    int stride = 0;
    std::vector<double> values;
    nn::MlpGrads<double> dec; // per-pixel decoder parameters (planar and image modes)

    SlotScratch() = default;
    SlotScratch(int slots, int stride_) : stride(stride_), values(size_t(slots) * size_t(stride_)) {}

    double *slot(int s) { return values.data() + size_t(s) * size_t(stride); }
    const double *slot(int s) const { return values.data() + size_t(s) * size_t(stride); }

    /// Adds `tile` into this scratch; tile slot j belongs to splat slot_to_splat[j].
    void merge_from(const SlotScratch &tile, std::span<const int> slot_to_splat) {
        for (size_t j = 0; j < slot_to_splat.size(); ++j) {
            const double *src = tile.slot(int(j));
            double *dst = slot(slot_to_splat[j]);
            for (int c = 0; c < stride; ++c) {
                dst[c] += src[c];
            }
        }
        if (!tile.dec.empty()) {
            dec += tile.dec;
        }
    }
};

template <typename T, typename Kernel>
RenderBuffers<T> rasterize(const Kernel &kernel, const TileBinning &bins, int width, int height,
                           const RenderOptions<T> &opts) {
    return opts.tiled ? render_tiled(kernel, width, height, opts.raster, &bins)
                      : render_reference(kernel, width, height, opts.raster);
}

template <typename T, typename Kernel>
SlotScratch rasterize_backward(const Kernel &kernel, const TileBinning &bins,
                               const RenderBuffers<T> &buffers, const Image<T> &d_image,
                               const RenderOptions<T> &opts) {
    return opts.tiled ? backward_tiled(kernel, buffers, d_image, opts.raster, &bins)
                      : backward_reference(kernel, buffers, d_image, opts.raster);
}

} // namespace splatkern::raster
