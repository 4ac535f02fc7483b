// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/error.hpp>

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace splatkern::nn {

template <typename T> using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T> using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T> struct DenseLayer {
    Matrix<T> weight; // out x in
    Vector<T> bias;   // out
};

/// Fully-connected network: leaky-ReLU after every layer except the last, and
/// an optional sigmoid on the output. Inputs are batched column-wise.
template <typename T> struct Mlp {
    std::vector<DenseLayer<T>> layers;
    T leaky_slope = T(0.01);
    bool final_sigmoid = false;

    int layer_count() const { return int(layers.size()); }
    int input_dim() const { return layers.empty() ? 0 : int(layers.front().weight.cols()); }
    int output_dim() const { return layers.empty() ? 0 : int(layers.back().weight.rows()); }

    std::vector<int> dims() const {
        std::vector<int> d;
        if (layers.empty()) {
            return d;
        }
        d.push_back(input_dim());
        for (const auto &l : layers) {
            d.push_back(int(l.weight.rows()));
        }
        return d;
    }

    size_t parameter_count() const {
        size_t n = 0;
        for (const auto &l : layers) {
            n += size_t(l.weight.size() + l.bias.size());
        }
        return n;
    }

    template <typename U> Mlp<U> cast() const {
        Mlp<U> out;
        out.leaky_slope = U(leaky_slope);
        out.final_sigmoid = final_sigmoid;
        for (const auto &l : layers) {
            out.layers.push_back({l.weight.template cast<U>(), l.bias.template cast<U>()});
        }
        return out;
    }

    /// Every parameter in a fixed order (layer by layer, weight row-major then bias).
    std::vector<T> flatten() const {
        std::vector<T> out;
        out.reserve(parameter_count());
        for (const auto &l : layers) {
            for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
                for (Eigen::Index c = 0; c < l.weight.cols(); ++c) {
                    out.push_back(l.weight(r, c));
                }
            }
            for (Eigen::Index r = 0; r < l.bias.size(); ++r) {
                out.push_back(l.bias[r]);
            }
        }
        return out;
    }

    /// Pointer to the i-th parameter in flatten() order.
    T &parameter(size_t index) {
        for (auto &l : layers) {
            const size_t nw = size_t(l.weight.size());
            if (index < nw) {
                const auto cols = size_t(l.weight.cols());
                return l.weight(Eigen::Index(index / cols), Eigen::Index(index % cols));
            }
            index -= nw;
            if (index < size_t(l.bias.size())) {
                return l.bias[Eigen::Index(index)];
            }
            index -= size_t(l.bias.size());
        }
        throw ShapeError("parameter index out of range");
    }

    void validate() const {
        if (layers.empty()) {
            throw ShapeError("network has no layers");
        }
        for (size_t i = 0; i < layers.size(); ++i) {
            const auto &l = layers[i];
            if (l.bias.size() != l.weight.rows()) {
                throw ShapeError("layer " + std::to_string(i) + " bias does not match weight rows");
            }
            if (i > 0 && layers[i - 1].weight.rows() != l.weight.cols()) {
                throw ShapeError("layer " + std::to_string(i) + " input does not chain");
            }
            if (!l.weight.allFinite() || !l.bias.allFinite()) {
                throw ShapeError("layer " + std::to_string(i) + " has non-finite parameters");
            }
        }
    }
};

/// Kaiming-normal initialization for leaky-ReLU (fan-in mode), zero biases.
template <typename T>
Mlp<T> mlp_new(std::span<const int> sizes, bool final_sigmoid, std::uint64_t seed,
               T leaky_slope = T(0.01)) {
    if (sizes.size() < 2) {
        throw ConfigError("network needs at least an input and an output size");
    }
    for (int s : sizes) {
        if (s <= 0) {
            throw ConfigError("network layer sizes must be positive");
        }
    }
    Mlp<T> net;
    net.leaky_slope = leaky_slope;
    net.final_sigmoid = final_sigmoid;
    std::mt19937_64 rng(seed);
    const double slope = double(leaky_slope);
    const double gain = std::sqrt(2.0 / (1.0 + slope * slope));
    for (size_t i = 0; i + 1 < sizes.size(); ++i) {
        const int fan_in = sizes[i];
        std::normal_distribution<double> normal(0.0, gain / std::sqrt(double(fan_in)));
        DenseLayer<T> layer{Matrix<T>(sizes[i + 1], fan_in), Vector<T>::Zero(sizes[i + 1])};
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) {
                layer.weight(r, c) = T(normal(rng));
            }
        }
        net.layers.push_back(std::move(layer));
    }
    return net;
}

template <typename T>
Mlp<T> mlp_new(std::initializer_list<int> sizes, bool final_sigmoid, std::uint64_t seed) {
    const std::vector<int> v(sizes);
    return mlp_new<T>(std::span<const int>(v), final_sigmoid, seed);
}

/// Intermediates of one batched forward call. post[0] is the input.
template <typename T> struct ForwardCache {
    std::vector<Matrix<T>> pre;
    std::vector<Matrix<T>> post;
};

template <typename T> T sigmoid(T z) {
    const T y = T(1) / (T(1) + std::exp(-z));
    // Keep the output strictly inside (0, 1) even when exp under/overflows.
    constexpr T lo = std::numeric_limits<T>::min();
    constexpr T hi = T(1) - std::numeric_limits<T>::epsilon();
    return y < lo ? lo : (y > hi ? hi : y);
}

/// Batched forward pass; columns of `x` are samples.
template <typename T>
Matrix<T> mlp_forward(const Mlp<T> &net, const Matrix<T> &x, ForwardCache<T> *cache = nullptr) {
    if (net.layers.empty() || x.rows() != net.input_dim()) {
        throw ShapeError("network input has " + std::to_string(x.rows()) + " rows, expected " +
                         std::to_string(net.input_dim()));
    }
    if (cache) {
        cache->pre.clear();
        cache->post.clear();
        cache->post.push_back(x);
    }
    Matrix<T> act = x;
    const size_t last = net.layers.size() - 1;
    for (size_t i = 0; i < net.layers.size(); ++i) {
        const auto &l = net.layers[i];
        Matrix<T> z = l.weight * act;
        z.colwise() += l.bias;
        if (i < last) {
            act = z.array().max(z.array() * net.leaky_slope).matrix();
        } else if (net.final_sigmoid) {
            act = z.unaryExpr([](T v) { return sigmoid(v); });
        } else {
            act = z;
        }
        if (cache) {
            cache->pre.push_back(std::move(z));
            cache->post.push_back(act);
        }
    }
    return act;
}

/// Per-layer parameter gradients, same shapes as the network.
template <typename T> struct MlpGrads {
    std::vector<Matrix<T>> weight;
    std::vector<Vector<T>> bias;

    template <typename U> static MlpGrads zeros_like(const Mlp<U> &net) {
        MlpGrads g;
        for (const auto &l : net.layers) {
            g.weight.push_back(Matrix<T>::Zero(l.weight.rows(), l.weight.cols()));
            g.bias.push_back(Vector<T>::Zero(l.bias.size()));
        }
        return g;
    }

    bool empty() const { return weight.empty(); }

    void set_zero() {
        for (auto &w : weight) {
            w.setZero();
        }
        for (auto &b : bias) {
            b.setZero();
        }
    }

    /// Adds gradients held at another precision.
    template <typename U> void add(const MlpGrads<U> &o) {
        for (size_t i = 0; i < weight.size(); ++i) {
            weight[i] += o.weight[i].template cast<T>();
            bias[i] += o.bias[i].template cast<T>();
        }
    }

    MlpGrads &operator+=(const MlpGrads &o) {
        for (size_t i = 0; i < weight.size(); ++i) {
            weight[i] += o.weight[i];
            bias[i] += o.bias[i];
        }
        return *this;
    }

    /// Same ordering as Mlp::flatten().
    std::vector<T> flatten() const {
        std::vector<T> out;
        for (size_t i = 0; i < weight.size(); ++i) {
            for (Eigen::Index r = 0; r < weight[i].rows(); ++r) {
                for (Eigen::Index c = 0; c < weight[i].cols(); ++c) {
                    out.push_back(weight[i](r, c));
                }
            }
            for (Eigen::Index r = 0; r < bias[i].size(); ++r) {
                out.push_back(bias[i][r]);
            }
        }
        return out;
    }

    bool all_finite() const {
        for (size_t i = 0; i < weight.size(); ++i) {
            if (!weight[i].allFinite() || !bias[i].allFinite()) {
                return false;
            }
        }
        return true;
    }
};

/// Reverse pass of mlp_forward. Parameter gradients are added into `grads`;
/// the input gradient is returned.
template <typename T>
Matrix<T> mlp_backward(const Mlp<T> &net, const ForwardCache<T> &cache, const Matrix<T> &dy,
                       MlpGrads<T> &grads) {
    if (cache.pre.size() != net.layers.size() || cache.post.size() != net.layers.size() + 1) {
        throw ShapeError("forward cache does not belong to this network");
    }
    if (grads.weight.size() != net.layers.size()) {
        grads = MlpGrads<T>::zeros_like(net);
    }
    const size_t last = net.layers.size() - 1;
    if (dy.rows() != net.output_dim() || dy.cols() != cache.post.back().cols()) {
        throw ShapeError("output gradient shape does not match the forward batch");
    }
    Matrix<T> delta;
    if (net.final_sigmoid) {
        const auto &y = cache.post.back();
        delta = (dy.array() * y.array() * (T(1) - y.array())).matrix();
    } else {
        delta = dy;
    }
    for (size_t i = net.layers.size(); i-- > 0;) {
        if (i < last) {
            const T slope = net.leaky_slope;
            delta = (cache.pre[i].array() > T(0)).select(delta.array(), delta.array() * slope).matrix();
        }
        grads.weight[i].noalias() += delta * cache.post[i].transpose();
        grads.bias[i] += delta.rowwise().sum();
        delta = net.layers[i].weight.transpose() * delta;
    }
    return delta;
}

/// Result of a single-sample backward call.
template <typename T> struct BackwardResult {
    Matrix<T> dx;
    MlpGrads<T> grads;
};

template <typename T>
BackwardResult<T> mlp_backward(const Mlp<T> &net, const ForwardCache<T> &cache,
                               const Matrix<T> &dy) {
    BackwardResult<T> out;
    out.grads = MlpGrads<T>::zeros_like(net);
    out.dx = mlp_backward(net, cache, dy, out.grads);
    return out;
}

} // namespace splatkern::nn
