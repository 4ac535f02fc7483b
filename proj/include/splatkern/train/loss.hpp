// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/error.hpp>
#include <splatkern/model.hpp>
#include <splatkern/raster/composite.hpp>

#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace splatkern::train {

using raster::Image;

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr double kPsnrMseFloor = 1e-10;

template <typename A, typename B> void check_same_shape(const Image<A> &a, const Image<B> &b) {
    if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
        throw ShapeError("image shapes differ: " + std::to_string(a.width) + "x" +
                         std::to_string(a.height) + "x" + std::to_string(a.channels) + " vs " +
                         std::to_string(b.width) + "x" + std::to_string(b.height) + "x" +
                         std::to_string(b.channels));
    }
}

/// 10 log10(1 / MSE) with the MSE floored at 1e-10, so identical images give 100 dB.
template <typename A, typename B> double psnr(const Image<A> &a, const Image<B> &b) {
    check_same_shape(a, b);
    double se = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = double(a.data[i]) - double(b.data[i]);
        se += d * d;
    }
    const double mse = a.data.empty() ? 0.0 : se / double(a.data.size());
    return 10.0 * std::log10(1.0 / std::max(mse, kPsnrMseFloor));
}

/// Normalized 1D Gaussian taps of the SSIM window.
inline std::array<double, kSsimWindow> ssim_taps() {
    std::array<double, kSsimWindow> w{};
    double sum = 0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double x = i - kSsimWindow / 2;
        w[size_t(i)] = std::exp(-x * x / (2 * kSsimSigma * kSsimSigma));
        sum += w[size_t(i)];
    }
    for (auto &v : w) {
        v /= sum;
    }
    return w;
}

namespace detail {

/// Valid-mode separable filter of a single-channel plane (W x H -> (W-10) x (H-10)).
inline std::vector<double> filter_valid(const std::vector<double> &src, int w, int h) {
    const auto taps = ssim_taps();
    const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
    std::vector<double> tmp(size_t(ow) * size_t(h));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int t = 0; t < kSsimWindow; ++t) {
                acc += taps[size_t(t)] * src[size_t(y) * size_t(w) + size_t(x + t)];
            }
            tmp[size_t(y) * size_t(ow) + size_t(x)] = acc;
        }
    }
    std::vector<double> out(size_t(ow) * size_t(oh));
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            double acc = 0;
            for (int t = 0; t < kSsimWindow; ++t) {
                acc += taps[size_t(t)] * tmp[size_t(y + t) * size_t(ow) + size_t(x)];
            }
            out[size_t(y) * size_t(ow) + size_t(x)] = acc;
        }
    }
    return out;
}

/// Adjoint of filter_valid: scatters an (W-10) x (H-10) map back onto W x H.
inline std::vector<double> filter_valid_adjoint(const std::vector<double> &src, int w, int h) {
    const auto taps = ssim_taps();
    const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
    std::vector<double> tmp(size_t(ow) * size_t(h), 0.0);
    for (int y = 0; y < oh; ++y) {
        for (int x = 0; x < ow; ++x) {
            const double v = src[size_t(y) * size_t(ow) + size_t(x)];
            for (int t = 0; t < kSsimWindow; ++t) {
                tmp[size_t(y + t) * size_t(ow) + size_t(x)] += taps[size_t(t)] * v;
            }
        }
    }
    std::vector<double> out(size_t(w) * size_t(h), 0.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < ow; ++x) {
            const double v = tmp[size_t(y) * size_t(ow) + size_t(x)];
            for (int t = 0; t < kSsimWindow; ++t) {
                out[size_t(y) * size_t(w) + size_t(x + t)] += taps[size_t(t)] * v;
            }
        }
    }
    return out;
}

template <typename T> std::vector<double> channel_plane(const Image<T> &img, int ch) {
    std::vector<double> out(img.pixel_count());
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            out[size_t(y) * size_t(img.width) + size_t(x)] = double(img.at(x, y, ch));
        }
    }
    return out;
}

} // namespace detail

/// Mean SSIM over channels and valid window positions. When `grad_a` is
/// given it receives dSSIM/da (same shape as `a`).
template <typename A, typename B>
double ssim(const Image<A> &a, const Image<B> &b, Image<double> *grad_a = nullptr) {
    check_same_shape(a, b);
    const int w = a.width, h = a.height;
    if (w < kSsimWindow || h < kSsimWindow) {
        throw ConfigError("SSIM needs images of at least " + std::to_string(kSsimWindow) + "x" +
                          std::to_string(kSsimWindow) + " pixels, got " + std::to_string(w) +
                          "x" + std::to_string(h));
    }
    const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;
    const size_t n_out = size_t(ow) * size_t(oh);
    const double norm = 1.0 / (double(n_out) * double(a.channels));
    if (grad_a) {
        *grad_a = Image<double>(w, h, a.channels);
    }
    double total = 0;
    for (int ch = 0; ch < a.channels; ++ch) {
        const auto pa = detail::channel_plane(a, ch);
        const auto pb = detail::channel_plane(b, ch);
        std::vector<double> aa(pa.size()), bb(pa.size()), ab(pa.size());
        for (size_t i = 0; i < pa.size(); ++i) {
            aa[i] = pa[i] * pa[i];
            bb[i] = pb[i] * pb[i];
            ab[i] = pa[i] * pb[i];
        }
        const auto mu_a = detail::filter_valid(pa, w, h);
        const auto mu_b = detail::filter_valid(pb, w, h);
        const auto e_aa = detail::filter_valid(aa, w, h);
        const auto e_bb = detail::filter_valid(bb, w, h);
        const auto e_ab = detail::filter_valid(ab, w, h);
        std::vector<double> d_mu, d_eaa, d_eab;
        if (grad_a) {
            d_mu.resize(n_out);
            d_eaa.resize(n_out);
            d_eab.resize(n_out);
        }
        for (size_t i = 0; i < n_out; ++i) {
            const double ma = mu_a[i], mb = mu_b[i];
            const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb;
            const double cov = e_ab[i] - ma * mb;
            const double a1 = 2 * ma * mb + kSsimC1, a2 = 2 * cov + kSsimC2;
            const double b1 = ma * ma + mb * mb + kSsimC1, b2 = va + vb + kSsimC2;
            const double s = (a1 * a2) / (b1 * b2);
            total += s;
            if (grad_a) {
                const double ds_dcov = 2 * a1 / (b1 * b2);
                const double ds_dva = -s / b2;
                d_mu[i] = norm * (2 * mb * a2 / (b1 * b2) - 2 * ma * s / b1 - mb * ds_dcov -
                                  2 * ma * ds_dva);
                d_eaa[i] = norm * ds_dva;
                d_eab[i] = norm * ds_dcov;
            }
        }
        if (grad_a) {
            const auto g_mu = detail::filter_valid_adjoint(d_mu, w, h);
            const auto g_aa = detail::filter_valid_adjoint(d_eaa, w, h);
            const auto g_ab = detail::filter_valid_adjoint(d_eab, w, h);
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    const size_t p = size_t(y) * size_t(w) + size_t(x);
                    grad_a->at(x, y, ch) = g_mu[p] + 2 * pa[p] * g_aa[p] + pb[p] * g_ab[p];
                }
            }
        }
    }
    return total * norm;
}

template <typename A, typename B>
double l1(const Image<A> &a, const Image<B> &b, Image<double> *grad_a = nullptr) {
    check_same_shape(a, b);
    const double inv_n = a.data.empty() ? 0.0 : 1.0 / double(a.data.size());
    if (grad_a) {
        *grad_a = Image<double>(a.width, a.height, a.channels);
    }
    double acc = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = double(a.data[i]) - double(b.data[i]);
        acc += std::abs(d);
        if (grad_a) {
            grad_a->data[i] = d > 0 ? inv_n : (d < 0 ? -inv_n : 0.0);
        }
    }
    return acc * inv_n;
}

struct LossWeights {
    double ssim = 0.2;
    double opacity = 0.01;
    double scale = 0.01;
};

struct LossReport {
    double total = 0;
    double image_l1 = 0;
    double dssim = 0;
    double opacity_reg = 0;
    double scale_reg = 0;
};

/// Image term (1 - l) L1 + l (1 - SSIM) / 2 plus the mean-opacity and
/// mean-scale regularizers. Writes dL/drendered into `d_image` and the
/// regularizer gradients straight into `grads` (opacity logits, log-scales).
template <typename T, typename U>
LossReport compute_loss(const Image<T> &rendered, const Image<U> &target, const Model<T> &model,
                        const LossWeights &w, Image<T> &d_image, ModelGrads<T> &grads) {
    LossReport r;
    Image<double> g_l1, g_ssim;
    r.image_l1 = l1(rendered, target, &g_l1);
    const bool with_ssim = w.ssim > 0;
    if (with_ssim) {
        r.dssim = 0.5 * (1.0 - ssim(rendered, target, &g_ssim));
    } else {
        r.dssim = 0.5 * (1.0 - ssim(rendered, target));
    }
    d_image = Image<T>(rendered.width, rendered.height, rendered.channels);
    for (size_t i = 0; i < d_image.data.size(); ++i) {
        double g = (1.0 - w.ssim) * g_l1.data[i];
        if (with_ssim) {
            g -= 0.5 * w.ssim * g_ssim.data[i];
        }
        d_image.data[i] = T(g);
    }

    const int n = model.size();
    if (n > 0) {
        const int sd = model.prims.dim(Group::LogScale);
        double o_sum = 0, s_sum = 0;
        const double o_norm = 1.0 / double(n), s_norm = 1.0 / (double(n) * double(sd));
        for (int i = 0; i < n; ++i) {
            const double o = nn::sigmoid(double(*model.prims.row(Group::OpacityLogit, i)));
            o_sum += o;
            *grads.prims.row(Group::OpacityLogit, i) += T(w.opacity * o_norm * o * (1 - o));
            const T *ls = model.prims.row(Group::LogScale, i);
            T *d_ls = grads.prims.row(Group::LogScale, i);
            for (int a = 0; a < sd; ++a) {
                const double s = std::exp(double(ls[a]));
                s_sum += s;
                d_ls[a] += T(w.scale * s_norm * s);
            }
        }
        r.opacity_reg = o_sum * o_norm;
        r.scale_reg = s_sum * s_norm;
    }
    r.total = r.image_l1 * (1.0 - w.ssim) + r.dssim * w.ssim + w.opacity * r.opacity_reg +
              w.scale * r.scale_reg;
    return r;
}

} // namespace splatkern::train
