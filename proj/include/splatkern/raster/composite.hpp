// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/error.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace splatkern::raster {

/// Half-open range of pixel indices [x0, x1) x [y0, y1).
struct PixelRect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    bool empty() const { return x0 >= x1 || y0 >= y1; }
};

/// Pixel indices whose centers can lie within `ex`, `ey` of (mx, my), padded
/// by one pixel against rounding and clipped to the image.
template <typename T> PixelRect pixel_rect(T mx, T my, T ex, T ey, int width, int height) {
    auto lo = [](T v, int limit) {
        return int(std::clamp<double>(std::floor(double(v) - 0.5) - 1.0, 0.0, double(limit)));
    };
    auto hi = [](T v, int limit) {
        return int(std::clamp<double>(std::ceil(double(v) - 0.5) + 2.0, 0.0, double(limit)));
    };
    return {lo(mx - ex, width), lo(my - ey, height), hi(mx + ex, width), hi(my + ey, height)};
}

/// True when the box [mx - ex, mx + ex] x [my - ey, my + ey] meets the image
/// rectangle. Scale invariant, so it decides visibility independently of resolution.
template <typename T> bool box_on_screen(T mx, T my, T ex, T ey, int width, int height) {
    return mx + ex > T(0) && mx - ex < T(width) && my + ey > T(0) && my - ey < T(height);
}

template <typename T> struct RenderSettings {
    int tile_size = 16;
    std::array<T, 3> background{T(0), T(0), T(0)};
    T min_transmittance = T(1e-4); // a pixel stops once T falls below this
    T max_alpha = T(0.999);
};

/// Row-major H x W x C image.
template <typename T> struct Image {
    int width = 0, height = 0, channels = 3;
    std::vector<T> data;

    Image() = default;
    Image(int w, int h, int c = 3, T fill = T(0))
        : width(w), height(h), channels(c), data(size_t(w) * size_t(h) * size_t(c), fill) {}

    T &at(int x, int y, int ch = 0) {
        return data[(size_t(y) * size_t(width) + size_t(x)) * size_t(channels) + size_t(ch)];
    }
    T at(int x, int y, int ch = 0) const {
        return data[(size_t(y) * size_t(width) + size_t(x)) * size_t(channels) + size_t(ch)];
    }
    size_t pixel_count() const { return size_t(width) * size_t(height); }
    bool same_shape(const Image &o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }

    template <typename U> Image<U> cast() const {
        Image<U> out(width, height, channels);
        std::transform(data.begin(), data.end(), out.data.begin(), [](T v) { return U(v); });
        return out;
    }
};

template <typename T> struct RenderBuffers {
    Image<T> color;
    std::vector<T> transmittance;  // final T per pixel
    std::vector<int> contributors; // splats with non-zero alpha that were composited
    std::vector<int> last;         // order index of the last composited splat, -1 if none

    // Composited (splat, raw alpha) pairs in front-to-back order, kept so the
    // reverse pass does not re-evaluate kernels. Pixel p owns
    // [hit_begin[p], hit_begin[p] + contributors[p]) of chunk hit_chunk[p].
    std::vector<std::vector<int>> hit_ids;
    std::vector<std::vector<T>> hit_alpha;
    std::vector<int> hit_chunk;
    std::vector<int> hit_begin;

    RenderBuffers() = default;
    RenderBuffers(int w, int h, int chunks = 1)
        : color(w, h, 3), transmittance(size_t(w) * size_t(h), T(1)),
          contributors(size_t(w) * size_t(h), 0), last(size_t(w) * size_t(h), -1),
          hit_ids(size_t(chunks)), hit_alpha(size_t(chunks)), hit_chunk(size_t(w) * size_t(h), -1),
          hit_begin(size_t(w) * size_t(h), 0) {}

    int width() const { return color.width; }
    int height() const { return color.height; }
    bool has_hits(size_t p) const { return p < hit_chunk.size() && hit_chunk[p] >= 0; }
};

/// Splats binned to square tiles; each list is ascending in splat order, which
/// is also compositing order.
struct TileBinning {
    int tile_size = 16;
    int tiles_x = 0, tiles_y = 0;
    std::vector<std::vector<int>> lists;

    int tile_count() const { return tiles_x * tiles_y; }
    PixelRect tile_rect(int t, int width, int height) const {
        const int tx = t % tiles_x, ty = t / tiles_x;
        return {tx * tile_size, ty * tile_size, std::min(width, (tx + 1) * tile_size),
                std::min(height, (ty + 1) * tile_size)};
    }
};

template <typename Kernel> TileBinning bin_tiles(const Kernel &kernel, int width, int height,
                                                 int tile_size) {
    if (tile_size < 1) {
        throw ConfigError("tile size must be positive");
    }
    TileBinning bins;
    bins.tile_size = tile_size;
    bins.tiles_x = (width + tile_size - 1) / tile_size;
    bins.tiles_y = (height + tile_size - 1) / tile_size;
    bins.lists.resize(size_t(bins.tile_count()));
    for (int i = 0; i < kernel.size(); ++i) {
        const PixelRect r = kernel.rect(i);
        if (r.empty()) {
            continue;
        }
        for (int ty = r.y0 / tile_size; ty <= (r.y1 - 1) / tile_size; ++ty) {
            for (int tx = r.x0 / tile_size; tx <= (r.x1 - 1) / tile_size; ++tx) {
                bins.lists[size_t(ty * bins.tiles_x + tx)].push_back(i);
            }
        }
    }
    return bins;
}

namespace detail {

/// Kernels that defer work during the per-pixel backward expose finish().
template <typename Kernel, typename Scratch> void finish_scratch(const Kernel &k, Scratch &s) {
    if constexpr (requires { k.finish(s); }) {
        k.finish(s);
    }
}

/// `order(j)` maps a list position to a splat index; `n` is the list length.
template <typename T, typename Kernel, typename Order>
void composite_pixel(const Kernel &kernel, const Order &order, int n, int px, int py,
                     const RenderSettings<T> &settings, RenderBuffers<T> &out, int chunk) {
    const size_t p = size_t(py) * size_t(out.width()) + size_t(px);
    auto &ids = out.hit_ids[size_t(chunk)];
    auto &alphas = out.hit_alpha[size_t(chunk)];
    out.hit_chunk[p] = chunk;
    out.hit_begin[p] = int(ids.size());
    T trans = T(1);
    T rgb[3] = {T(0), T(0), T(0)};
    int count = 0, last = -1;
    for (int j = 0; j < n; ++j) {
        const int i = order(j);
        T alpha = kernel.alpha(i, px, py);
        if (!(alpha > T(0))) {
            continue;
        }
        ids.push_back(i);
        alphas.push_back(alpha);
        alpha = std::min(alpha, settings.max_alpha);
        const T *c = kernel.color(i);
        const T w = alpha * trans;
        rgb[0] += c[0] * w;
        rgb[1] += c[1] * w;
        rgb[2] += c[2] * w;
        trans *= T(1) - alpha;
        ++count;
        last = i;
        if (trans < settings.min_transmittance) {
            break;
        }
    }
    for (int ch = 0; ch < 3; ++ch) {
        out.color.at(px, py, ch) = rgb[ch] + settings.background[size_t(ch)] * trans;
    }
    out.transmittance[p] = trans;
    out.contributors[p] = count;
    out.last[p] = last;
}

/// Back-to-front pass over positions [0, start] of a pixel's list. The
/// transmittance in front of each splat is recovered from the stored final
/// value as T_j = T_{j+1} / (1 - alpha_j). Alphas come from the forward
/// pass when recorded there, otherwise they are re-evaluated.
template <typename T, typename Kernel, typename Order, typename SlotOf>
void backward_pixel(const Kernel &kernel, const Order &order, const SlotOf &slot_of, int start,
                    int px, int py, const RenderSettings<T> &settings,
                    const RenderBuffers<T> &buffers, const T *d_pixel,
                    typename Kernel::Scratch &scratch) {
    const size_t p = size_t(py) * size_t(buffers.width()) + size_t(px);
    T trans = buffers.transmittance[p];
    // Color accumulated behind the current splat, background included.
    T behind[3];
    for (int ch = 0; ch < 3; ++ch) {
        behind[ch] = settings.background[size_t(ch)] * trans;
    }
    auto step = [&](int i, int slot, T raw) {
        const bool clamped = raw > settings.max_alpha;
        const T alpha = clamped ? settings.max_alpha : raw;
        const T one_minus = T(1) - alpha;
        trans /= one_minus;
        const T *c = kernel.color(i);
        const T w = alpha * trans;
        T d_color[3];
        T d_alpha = T(0);
        for (int ch = 0; ch < 3; ++ch) {
            d_color[ch] = d_pixel[ch] * w;
            d_alpha += d_pixel[ch] * (c[ch] * trans - behind[ch] / one_minus);
            behind[ch] += c[ch] * w;
        }
        kernel.accumulate(i, slot, px, py, clamped ? T(0) : d_alpha, d_color, scratch);
    };
    if (buffers.has_hits(p)) {
        const auto &ids = buffers.hit_ids[size_t(buffers.hit_chunk[p])];
        const auto &alphas = buffers.hit_alpha[size_t(buffers.hit_chunk[p])];
        const size_t begin = size_t(buffers.hit_begin[p]);
        int j = start;
        for (size_t h = size_t(buffers.contributors[p]); h-- > 0;) {
            const int i = ids[begin + h];
            // Hits are a subsequence of the list, so walk back to this splat.
            while (j > 0 && order(j) != i) {
                --j;
            }
            step(i, slot_of(j), alphas[begin + h]);
        }
        return;
    }
    for (int j = start; j >= 0; --j) {
        const int i = order(j);
        const T raw = kernel.alpha(i, px, py);
        if (!(raw > T(0))) {
            continue;
        }
        step(i, slot_of(j), raw);
    }
}

template <typename T> void check_image_gradient(const Image<T> &d_image, int width, int height) {
    if (d_image.width != width || d_image.height != height || d_image.channels != 3) {
        throw ShapeError("image gradient is " + std::to_string(d_image.width) + "x" +
                         std::to_string(d_image.height) + "x" +
                         std::to_string(d_image.channels) + ", expected " +
                         std::to_string(width) + "x" + std::to_string(height) + "x3");
    }
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            for (int ch = 0; ch < 3; ++ch) {
                if (!std::isfinite(double(d_image.at(x, y, ch)))) {
                    throw GradientExplosionError("non-finite image gradient at pixel (" +
                                                 std::to_string(x) + ", " + std::to_string(y) +
                                                 ")");
                }
            }
        }
    }
}

} // namespace detail

/// Per-pixel oracle: every pixel walks every splat in order.
template <typename T, typename Kernel>
RenderBuffers<T> render_reference(const Kernel &kernel, int width, int height,
                                  const RenderSettings<T> &settings) {
    RenderBuffers<T> out(width, height);
    const int n = kernel.size();
    auto order = [](int j) { return j; };
    for (int py = 0; py < height; ++py) {
        for (int px = 0; px < width; ++px) {
            detail::composite_pixel(kernel, order, n, px, py, settings, out, 0);
        }
    }
    return out;
}

template <typename T, typename Kernel>
RenderBuffers<T> render_tiled(const Kernel &kernel, int width, int height,
                              const RenderSettings<T> &settings,
                              const TileBinning *binning = nullptr) {
    TileBinning local;
    if (!binning) {
        local = bin_tiles(kernel, width, height, settings.tile_size);
        binning = &local;
    }
    const int tiles = binning->tile_count();
    RenderBuffers<T> out(width, height, std::max(tiles, 1));
#pragma omp parallel for schedule(dynamic)
    for (int t = 0; t < tiles; ++t) {
        const auto &list = binning->lists[size_t(t)];
        const PixelRect r = binning->tile_rect(t, width, height);
        auto order = [&list](int j) { return list[size_t(j)]; };
        const int n = int(list.size());
        for (int py = r.y0; py < r.y1; ++py) {
            for (int px = r.x0; px < r.x1; ++px) {
                detail::composite_pixel(kernel, order, n, px, py, settings, out, t);
            }
        }
    }
    return out;
}

/// Reverse pass of render_reference. Per-splat gradients land in the returned
/// scratch, whose slots are splat indices.
template <typename T, typename Kernel>
typename Kernel::Scratch backward_reference(const Kernel &kernel,
                                            const RenderBuffers<T> &buffers,
                                            const Image<T> &d_image,
                                            const RenderSettings<T> &settings) {
    const int width = buffers.width(), height = buffers.height();
    detail::check_image_gradient(d_image, width, height);
    auto scratch = kernel.make_scratch(kernel.size());
    auto order = [](int j) { return j; };
    for (int py = 0; py < height; ++py) {
        for (int px = 0; px < width; ++px) {
            const int last = buffers.last[size_t(py) * size_t(width) + size_t(px)];
            if (last < 0) {
                continue;
            }
            const T *d_pixel = &d_image.data[(size_t(py) * size_t(width) + size_t(px)) * 3];
            detail::backward_pixel(kernel, order, order, last, px, py, settings, buffers,
                                   d_pixel, scratch);
        }
    }
    detail::finish_scratch(kernel, scratch);
    return scratch;
}

/// Reverse pass of render_tiled. Each tile accumulates into its own scratch
/// (slots are positions in the tile list); tiles are merged in index order so
/// the result does not depend on the thread count.
template <typename T, typename Kernel>
typename Kernel::Scratch backward_tiled(const Kernel &kernel, const RenderBuffers<T> &buffers,
                                        const Image<T> &d_image,
                                        const RenderSettings<T> &settings,
                                        const TileBinning *binning = nullptr) {
    const int width = buffers.width(), height = buffers.height();
    detail::check_image_gradient(d_image, width, height);
    TileBinning local;
    if (!binning) {
        local = bin_tiles(kernel, width, height, settings.tile_size);
        binning = &local;
    }
    const int tiles = binning->tile_count();
    std::vector<typename Kernel::Scratch> per_tile(static_cast<size_t>(tiles));
    int mismatch = 0;
#pragma omp parallel for schedule(dynamic) reduction(+ : mismatch)
    for (int t = 0; t < tiles; ++t) {
        const auto &list = binning->lists[size_t(t)];
        if (list.empty()) {
            continue;
        }
        auto &scratch = per_tile[size_t(t)];
        scratch = kernel.make_scratch(int(list.size()));
        const PixelRect r = binning->tile_rect(t, width, height);
        auto order = [&list](int j) { return list[size_t(j)]; };
        auto slot_of = [](int j) { return j; };
        for (int py = r.y0; py < r.y1; ++py) {
            for (int px = r.x0; px < r.x1; ++px) {
                const int last = buffers.last[size_t(py) * size_t(width) + size_t(px)];
                if (last < 0) {
                    continue;
                }
                const auto it = std::lower_bound(list.begin(), list.end(), last);
                if (it == list.end() || *it != last) {
                    ++mismatch;
                    continue;
                }
                const int start = int(it - list.begin());
                const T *d_pixel = &d_image.data[(size_t(py) * size_t(width) + size_t(px)) * 3];
                detail::backward_pixel(kernel, order, slot_of, start, px, py, settings, buffers,
                                       d_pixel, scratch);
            }
        }
        detail::finish_scratch(kernel, scratch);
    }
    if (mismatch > 0) {
        throw ShapeError("render buffers do not match the tile binning");
    }
    auto total = kernel.make_scratch(kernel.size());
    for (int t = 0; t < tiles; ++t) {
        const auto &list = binning->lists[size_t(t)];
        if (!list.empty()) {
            kernel.merge(total, per_tile[size_t(t)], std::span<const int>(list));
        }
    }
    return total;
}

} // namespace splatkern::raster
