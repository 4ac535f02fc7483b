// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/error.hpp>
#include <splatkern/kernel/inputs.hpp>
#include <splatkern/kernel/profile.hpp>
#include <splatkern/nn/mlp.hpp>

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

namespace splatkern::kernel {

using nn::Matrix;
using nn::Mlp;
using nn::Vector;

/// Where a primitive's kernel comes from. FrozenGaussian replaces the decoder
/// with exp(-4.5 r^2) (a 3-sigma Gaussian truncated at r = 1) and bypasses
/// the projection network; it is the analytic baseline.
enum class KernelSource : std::uint32_t { Learned = 0, FrozenGaussian = 1 };

constexpr double kFrozenGaussianFalloff = 4.5;

template <typename T> T frozen_gaussian(T rho_sq) {
    return std::exp(-T(kFrozenGaussianFalloff) * rho_sq);
}

/// Target profiles for pre-training, as functions of r^2 on [0, 1].
enum class ProfileTarget { Cosine, Gaussian, Polynomial, Linear };

inline double profile_target(ProfileTarget target, double r_sq) {
    switch (target) {
    case ProfileTarget::Cosine:
        return std::cos(0.5 * std::numbers::pi * r_sq);
    case ProfileTarget::Gaussian:
        return std::exp(-kFrozenGaussianFalloff * r_sq);
    case ProfileTarget::Polynomial:
        return (1.0 - r_sq) * (1.0 - r_sq);
    case ProfileTarget::Linear:
        return std::max(0.0, 1.0 - std::sqrt(r_sq));
    }
    return 0.0;
}

inline ProfileTarget parse_profile_target(const std::string &name) {
    if (name == "cosine") {
        return ProfileTarget::Cosine;
    }
    if (name == "gaussian") {
        return ProfileTarget::Gaussian;
    }
    if (name == "polynomial") {
        return ProfileTarget::Polynomial;
    }
    if (name == "linear") {
        return ProfileTarget::Linear;
    }
    throw ConfigError("unknown pre-training target '" + name + "'");
}

// Default architectures.
inline constexpr int kProjHidden = 64;
inline constexpr int kDecoderHidden = 4;
inline constexpr int kPlanarDecoderHidden = 8;

template <typename T> Mlp<T> make_projection_net(int in_dim, int out_dim, std::uint64_t seed) {
    return nn::mlp_new<T>({in_dim, kProjHidden, kProjHidden, kProjHidden, out_dim}, false, seed);
}

/// Phi_dec: (r^2, z2d) -> d, 3 layers, 4 hidden units, sigmoid output.
template <typename T> Mlp<T> make_decoder_net(int latent_dim, std::uint64_t seed) {
    return nn::mlp_new<T>({1 + latent_dim, kDecoderHidden, kDecoderHidden, 1}, true, seed);
}

/// Planar decoder: (u, v, z) -> d, 3 layers, 8 hidden units, sigmoid output.
template <typename T> Mlp<T> make_planar_decoder_net(int latent_dim, std::uint64_t seed) {
    return nn::mlp_new<T>({2 + latent_dim, kPlanarDecoderHidden, kPlanarDecoderHidden, 1}, true,
                          seed);
}

/// z2d = Phi_proj(features) for a single primitive.
template <typename T>
Vector<T> project_kernel(const Mlp<T> &phi_proj, const ProjInputSet &set,
                         const ProjFeatures<T> &features, T mu_scale = T(1)) {
    const int scale_dim = int(features.scale.size());
    const int in_dim = set.dim(int(features.latent.size()), scale_dim);
    if (in_dim != phi_proj.input_dim()) {
        throw ConfigError("projection network expects " + std::to_string(phi_proj.input_dim()) +
                          " inputs but the input set provides " + std::to_string(in_dim));
    }
    Matrix<T> x(in_dim, 1);
    write_proj_input(set, features, mu_scale, x.data());
    return nn::mlp_forward(phi_proj, x);
}

/// Builds the (1 + dz) x (B k) decoder input: column b k + i = [r_i^2, z2d_b].
template <typename T> Matrix<T> profile_decoder_input(const Matrix<T> &z2d, int k) {
    if (k < 2) {
        throw ConfigError("profile needs at least 2 samples, got " + std::to_string(k));
    }
    const Eigen::Index dz = z2d.rows();
    Matrix<T> x(1 + dz, z2d.cols() * k);
    for (Eigen::Index b = 0; b < z2d.cols(); ++b) {
        for (int i = 0; i < k; ++i) {
            const T r = T(i) / T(k - 1);
            const Eigen::Index col = b * k + i;
            x(0, col) = r * r;
            x.block(1, col, dz, 1) = z2d.col(b);
        }
    }
    return x;
}

/// Samples d_i = Phi_dec(r_i^2, z2d) for every column of `z2d`; returns k x B.
/// `decoder_calls` (optional) is incremented by the number of decoder evaluations.
template <typename T>
Matrix<T> decode_profiles(const Mlp<T> &phi_dec, const Matrix<T> &z2d, int k,
                          nn::ForwardCache<T> *cache = nullptr,
                          std::uint64_t *decoder_calls = nullptr) {
    if (phi_dec.input_dim() != 1 + z2d.rows()) {
        throw ConfigError("decoder expects " + std::to_string(phi_dec.input_dim()) +
                          " inputs, latent provides " + std::to_string(1 + z2d.rows()));
    }
    const Matrix<T> x = profile_decoder_input(z2d, k);
    const Matrix<T> y = nn::mlp_forward(phi_dec, x, cache);
    if (decoder_calls) {
        *decoder_calls += std::uint64_t(x.cols());
    }
    return Eigen::Map<const Matrix<T>>(y.data(), k, z2d.cols());
}

template <typename T>
Vector<T> decode_profile(const Mlp<T> &phi_dec, const Vector<T> &z2d, int k) {
    return decode_profiles(phi_dec, Matrix<T>(z2d), k).col(0);
}

/// Backward of decode_profiles: `d_profiles` is k x B; returns dL/dz2d (dz x B)
/// and accumulates decoder parameter gradients.
template <typename T>
Matrix<T> decode_profiles_backward(const Mlp<T> &phi_dec, const nn::ForwardCache<T> &cache,
                                   const Matrix<T> &d_profiles, nn::MlpGrads<T> &grads) {
    const Eigen::Index k = d_profiles.rows(), batch = d_profiles.cols();
    const Matrix<T> dy = Eigen::Map<const Matrix<T>>(d_profiles.data(), 1, k * batch);
    const Matrix<T> dx = nn::mlp_backward(phi_dec, cache, dy, grads);
    const Eigen::Index dz = dx.rows() - 1;
    Matrix<T> dz2d = Matrix<T>::Zero(dz, batch);
    for (Eigen::Index b = 0; b < batch; ++b) {
        for (Eigen::Index i = 0; i < k; ++i) {
            dz2d.col(b) += dx.block(1, b * k + i, dz, 1);
        }
    }
    return dz2d;
}

/// Frozen-Gaussian profile samples (identical for every primitive).
template <typename T> Vector<T> frozen_gaussian_profile(int k) {
    if (k < 2) {
        throw ConfigError("profile needs at least 2 samples, got " + std::to_string(k));
    }
    Vector<T> p(k);
    for (int i = 0; i < k; ++i) {
        const T r = T(i) / T(k - 1);
        p[i] = frozen_gaussian(r * r);
    }
    return p;
}

/// (slot, primitive, u, v, upstream) records awaiting a batched decoder backward.
template <typename T> struct DecoderBatch {
    std::vector<int> slot, splat;
    std::vector<T> u, v, dd;

    size_t size() const { return slot.size(); }
    void push(int s, int i, T u_, T v_, T dd_) {
        slot.push_back(s);
        splat.push_back(i);
        u.push_back(u_);
        v.push_back(v_);
        dd.push_back(dd_);
    }
    void clear() {
        slot.clear();
        splat.clear();
        u.clear();
        v.clear();
        dd.clear();
    }
};

/// Evaluates a (u, v, z) -> d decoder per pixel. The latent part of the first
/// layer is folded into a per-primitive bias `h0` so each pixel only pays for
/// the two coordinate columns and the remaining layers.
template <typename T> class PixelDecoder {
  public:
    static constexpr int kMaxWidth = 64;

    PixelDecoder() = default;
    explicit PixelDecoder(const Mlp<T> *net) : net_(net) {
        if (net_->input_dim() < 2) {
            throw ConfigError("pixel decoder needs (u, v) inputs");
        }
        for (const auto &l : net_->layers) {
            if (l.weight.rows() > kMaxWidth) {
                throw ConfigError("pixel decoder layer wider than " + std::to_string(kMaxWidth));
            }
        }
        if (net_->output_dim() != 1) {
            throw ConfigError("pixel decoder must have a single output");
        }
    }

    const Mlp<T> &net() const { return *net_; }
    int first_width() const { return int(net_->layers.front().weight.rows()); }
    int latent_dim() const { return net_->input_dim() - 2; }

    /// h0 = W1[:, 2:] z + b1.
    void precompute(std::span<const T> z, T *h0) const {
        const auto &l = net_->layers.front();
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            T acc = l.bias[r];
            for (size_t j = 0; j < z.size(); ++j) {
                acc += l.weight(r, Eigen::Index(2 + j)) * z[j];
            }
            h0[r] = acc;
        }
    }

    T eval(const T *h0, T u, T v) const {
        Buffers buf;
        return forward(h0, u, v, buf);
    }

    /// Backward for upstream dd. Adds dL/dh0 into `dh0`, returns dL/du, dL/dv,
    /// and accumulates gradients of every parameter except the latent columns
    /// and bias of layer 1 (those follow from the summed dh0 per primitive).
    /// Returns the decoder output of the recomputed forward pass.
    template <typename G>
    T backward(const T *h0, T u, T v, T dd, G *dh0, T &du, T &dv,
               nn::MlpGrads<G> &grads) const {
        Buffers buf;
        const T out = forward(h0, u, v, buf);
        const auto &layers = net_->layers;
        const size_t n = layers.size();
        const T slope = net_->leaky_slope;
        std::array<T, kMaxWidth> delta;
        std::array<T, kMaxWidth> next;
        T out_delta = dd;
        if (net_->final_sigmoid) {
            out_delta *= out * (T(1) - out);
        }
        delta[0] = out_delta;
        int width = 1;
        // Weights are column-major, so every inner loop runs down a column.
        for (size_t li = n; li-- > 0;) {
            const auto &l = layers[li];
            const int in_w = int(l.weight.cols());
            const T *w = l.weight.data();
            if (li + 1 < n) {
                for (int r = 0; r < width; ++r) {
                    if (!(buf.pre[li][size_t(r)] > T(0))) {
                        delta[size_t(r)] *= slope;
                    }
                }
            }
            if (li == 0) {
                G *gw = grads.weight[0].data();
                T gu = T(0), gv = T(0);
                for (int r = 0; r < width; ++r) {
                    const T d = delta[size_t(r)];
                    dh0[r] += G(d);
                    gw[r] += G(d * u);
                    gw[width + r] += G(d * v);
                    gu += w[r] * d;
                    gv += w[width + r] * d;
                }
                du = gu;
                dv = gv;
                return out;
            }
            const T *input = buf.act[li].data();
            G *gb = grads.bias[li].data();
            G *gw = grads.weight[li].data();
            for (int r = 0; r < width; ++r) {
                gb[r] += G(delta[size_t(r)]);
            }
            for (int c = 0; c < in_w; ++c) {
                const T x = input[c];
                G *gcol = gw + size_t(c) * size_t(width);
                for (int r = 0; r < width; ++r) {
                    gcol[r] += G(delta[size_t(r)] * x);
                }
                next[size_t(c)] = T(0);
            }
            // Row-outer order keeps the in_w accumulators independent.
            for (int r = 0; r < width; ++r) {
                const T d = delta[size_t(r)];
                for (int c = 0; c < in_w; ++c) {
                    next[size_t(c)] += w[size_t(c) * size_t(width) + size_t(r)] * d;
                }
            }
            width = in_w;
            std::copy(next.begin(), next.begin() + width, delta.begin());
        }
        return out;
    }

    /// Batched form of `backward` over queued pairs. Writes the decoder output,
    /// dL/du and dL/dv per pair, adds dL/dh0 of pair p into
    /// `dh0_base + slot[p] * dh0_stride`, and accumulates parameter gradients
    /// with the weight products formed in G.
    template <typename G>
    void backward_batch(const T *h0_all, const DecoderBatch<T> &b, G *dh0_base, int dh0_stride,
                        std::vector<T> &d, std::vector<T> &du, std::vector<T> &dv,
                        nn::MlpGrads<G> &grads) const {
        using Mat = Matrix<T>;
        const auto &layers = net_->layers;
        const size_t n = layers.size();
        const Eigen::Index P = Eigen::Index(b.size());
        const int h = first_width();
        const T slope = net_->leaky_slope;
        auto activate = [&](size_t li, const Mat &z) -> Mat {
            if (li + 1 < n) {
                return z.unaryExpr([slope](T x) { return x > T(0) ? x : x * slope; });
            }
            return net_->final_sigmoid ? Mat(z.unaryExpr([](T x) { return nn::sigmoid(x); })) : z;
        };
        std::vector<Mat> pre(n), act(n);
        const auto &w0 = layers.front().weight;
        pre[0].resize(h, P);
        for (Eigen::Index p = 0; p < P; ++p) {
            const T *h0 = h0_all + size_t(h) * size_t(b.splat[size_t(p)]);
            const T u = b.u[size_t(p)], v = b.v[size_t(p)];
            for (int r = 0; r < h; ++r) {
                pre[0](r, p) = h0[r] + w0(r, 0) * u + w0(r, 1) * v;
            }
        }
        act[0] = activate(0, pre[0]);
        for (size_t li = 1; li < n; ++li) {
            pre[li].noalias() = layers[li].weight * act[li - 1];
            pre[li].colwise() += layers[li].bias;
            act[li] = activate(li, pre[li]);
        }
        d.resize(size_t(P));
        du.resize(size_t(P));
        dv.resize(size_t(P));
        Mat delta(1, P);
        for (Eigen::Index p = 0; p < P; ++p) {
            const T out = act[n - 1](0, p);
            d[size_t(p)] = out;
            delta(0, p) = b.dd[size_t(p)] * (net_->final_sigmoid ? out * (T(1) - out) : T(1));
        }
        for (size_t li = n; li-- > 1;) {
            const Matrix<G> dg = delta.template cast<G>();
            grads.weight[li].noalias() += dg * act[li - 1].template cast<G>().transpose();
            grads.bias[li] += dg.rowwise().sum();
            Mat back = layers[li].weight.transpose() * delta;
            const Mat &z = pre[li - 1];
            for (Eigen::Index p = 0; p < P; ++p) {
                for (Eigen::Index r = 0; r < back.rows(); ++r) {
                    if (!(z(r, p) > T(0))) {
                        back(r, p) *= slope;
                    }
                }
            }
            delta = std::move(back);
        }
        G *gw = grads.weight[0].data();
        for (Eigen::Index p = 0; p < P; ++p) {
            const T u = b.u[size_t(p)], v = b.v[size_t(p)];
            G *dh0 = dh0_base + size_t(b.slot[size_t(p)]) * size_t(dh0_stride);
            T gu = T(0), gv = T(0);
            for (int r = 0; r < h; ++r) {
                const T dr = delta(r, p);
                dh0[r] += G(dr);
                gw[r] += G(dr * u);
                gw[h + r] += G(dr * v);
                gu += w0(r, 0) * dr;
                gv += w0(r, 1) * dr;
            }
            du[size_t(p)] = gu;
            dv[size_t(p)] = gv;
        }
    }

    /// Folds the per-primitive sum of dh0 into layer-1 latent/bias gradients
    /// and returns dL/dz through `dz` (accumulated).
    template <typename G>
    void finish_primitive(std::span<const T> z, const G *dh0_sum, std::span<T> dz,
                          nn::MlpGrads<G> &grads) const {
        const auto &l = net_->layers.front();
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            const G g = dh0_sum[r];
            if (g == G(0)) {
                continue;
            }
            grads.bias[0][r] += g;
            for (size_t j = 0; j < z.size(); ++j) {
                grads.weight[0](r, Eigen::Index(2 + j)) += g * G(z[j]);
                dz[j] += T(G(l.weight(r, Eigen::Index(2 + j))) * g);
            }
        }
    }

  private:
    struct Buffers {
        // Left uninitialized: every entry read is written first.
        std::array<std::array<T, kMaxWidth>, 8> pre;
        std::array<std::array<T, kMaxWidth>, 9> act;
    };

    T forward(const T *h0, T u, T v, Buffers &buf) const {
        const auto &layers = net_->layers;
        const size_t n = layers.size();
        const T slope = net_->leaky_slope;
        for (size_t li = 0; li < n; ++li) {
            const auto &l = layers[li];
            const int out_w = int(l.weight.rows());
            const int in_w = int(l.weight.cols());
            const T *w = l.weight.data();
            T *z = buf.pre[li].data();
            if (li == 0) {
                for (int r = 0; r < out_w; ++r) {
                    z[r] = h0[r] + w[r] * u + w[out_w + r] * v;
                }
            } else {
                const T *in = buf.act[li].data();
                for (int r = 0; r < out_w; ++r) {
                    z[r] = l.bias[r];
                }
                for (int c = 0; c < in_w; ++c) {
                    const T x = in[c];
                    const T *col = w + size_t(c) * size_t(out_w);
                    for (int r = 0; r < out_w; ++r) {
                        z[r] += col[r] * x;
                    }
                }
            }
            T *a = buf.act[li + 1].data();
            if (li + 1 < n) {
                for (int r = 0; r < out_w; ++r) {
                    a[r] = z[r] > T(0) ? z[r] : z[r] * slope;
                }
            } else {
                for (int r = 0; r < out_w; ++r) {
                    a[r] = net_->final_sigmoid ? nn::sigmoid(z[r]) : z[r];
                }
            }
        }
        return buf.act[n][0];
    }

    const Mlp<T> *net_ = nullptr;
};

/// d = Phi_planar_dec(u, v, z_after), zero outside the unit disk.
template <typename T>
T decode_planar(const Mlp<T> &phi_planar, T u, T v, std::span<const T> z_after) {
    if (phi_planar.input_dim() != 2 + int(z_after.size())) {
        throw ConfigError("planar decoder expects " + std::to_string(phi_planar.input_dim()) +
                          " inputs, got " + std::to_string(2 + z_after.size()));
    }
    if (u * u + v * v > T(1)) {
        return T(0);
    }
    Matrix<T> x(2 + Eigen::Index(z_after.size()), 1);
    x(0, 0) = u;
    x(1, 0) = v;
    for (size_t j = 0; j < z_after.size(); ++j) {
        x(Eigen::Index(2 + j), 0) = z_after[j];
    }
    return nn::mlp_forward(phi_planar, x)(0, 0);
}

} // namespace splatkern::kernel
