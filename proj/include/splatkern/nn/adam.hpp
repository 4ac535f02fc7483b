// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/error.hpp>
#include <splatkern/nn/mlp.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace splatkern::nn {

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moments for one parameter group plus its step count.
template <typename T> struct AdamState {
    std::vector<T> m;
    std::vector<T> v;
    std::int64_t t = 0;

    void resize(size_t n) {
        m.resize(n, T(0));
        v.resize(n, T(0));
    }

    /// Clears moments of the entries [begin, begin + count).
    void reset_range(size_t begin, size_t count) {
        for (size_t i = begin; i < begin + count && i < m.size(); ++i) {
            m[i] = T(0);
            v[i] = T(0);
        }
    }
};

/// One bias-corrected Adam update. Throws GradientExplosionError naming
/// `group` when any gradient is non-finite; parameters are left untouched then.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T> &state, double lr,
               std::string_view group, const AdamHyper &hyper = {}) {
    if (params.size() != grads.size()) {
        throw ShapeError("adam: parameter and gradient sizes differ for group '" +
                         std::string(group) + "'");
    }
    for (size_t i = 0; i < grads.size(); ++i) {
        if (!std::isfinite(double(grads[i]))) {
            throw GradientExplosionError("non-finite gradient in parameter group '" +
                                         std::string(group) + "' at index " + std::to_string(i));
        }
    }
    if (state.m.size() != params.size()) {
        state.resize(params.size());
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(hyper.beta1, double(state.t));
    const double bc2 = 1.0 - std::pow(hyper.beta2, double(state.t));
    const T b1 = T(hyper.beta1), b2 = T(hyper.beta2);
    const T step = T(lr / bc1);
    const T inv_sqrt_bc2 = T(1.0 / std::sqrt(bc2));
    const T eps = T(hyper.eps);
    for (size_t i = 0; i < params.size(); ++i) {
        const T g = grads[i];
        state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
        state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
        params[i] -= step * state.m[i] / (std::sqrt(state.v[i]) * inv_sqrt_bc2 + eps);
    }
}

/// Exponential decay from lr_start (iter 0) to lr_end (iter == total_iters).
/// Both endpoints are reproduced exactly.
inline double lr_schedule(std::int64_t iter, double lr_start, double lr_end,
                          std::int64_t total_iters) {
    if (total_iters <= 0) {
        return lr_start;
    }
    const double t = std::clamp(double(iter) / double(total_iters), 0.0, 1.0);
    return std::pow(lr_start, 1.0 - t) * std::pow(lr_end, t);
}

/// Adam states for every tensor of a network.
template <typename T> class MlpOptimizer {
  public:
    MlpOptimizer() = default;
    explicit MlpOptimizer(const Mlp<T> &net) { reset(net); }

    void reset(const Mlp<T> &net) {
        states_.clear();
        for (const auto &l : net.layers) {
            states_.emplace_back();
            states_.back().resize(size_t(l.weight.size()));
            states_.emplace_back();
            states_.back().resize(size_t(l.bias.size()));
        }
    }

    void step(Mlp<T> &net, const MlpGrads<T> &grads, double lr, std::string_view group,
              const AdamHyper &hyper = {}) {
        if (states_.size() != 2 * net.layers.size()) {
            reset(net);
        }
        if (!grads.all_finite()) {
            throw GradientExplosionError("non-finite gradient in parameter group '" +
                                         std::string(group) + "'");
        }
        for (size_t i = 0; i < net.layers.size(); ++i) {
            auto &l = net.layers[i];
            adam_step(std::span<T>(l.weight.data(), size_t(l.weight.size())),
                      std::span<const T>(grads.weight[i].data(), size_t(grads.weight[i].size())),
                      states_[2 * i], lr, group, hyper);
            adam_step(std::span<T>(l.bias.data(), size_t(l.bias.size())),
                      std::span<const T>(grads.bias[i].data(), size_t(grads.bias[i].size())),
                      states_[2 * i + 1], lr, group, hyper);
        }
    }

    std::int64_t steps() const { return states_.empty() ? 0 : states_.front().t; }

  private:
    std::vector<AdamState<T>> states_;
};

} // namespace splatkern::nn
