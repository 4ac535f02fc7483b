// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/model.hpp>
#include <splatkern/nn/adam.hpp>
#include <splatkern/train/config.hpp>

#include <array>
#include <cstdint>

namespace splatkern::train {

/// Learning rates for one iteration.
struct IterationRates {
    std::array<double, kGroupCount> group{};
    double network = 0;
};

/// Group rates at `iter`. Only the position rate follows a schedule; it is
/// scaled by the scene extent. The network rate decays over the whole run.
inline IterationRates rates_at(int iter, int total_iters, const GroupRates &g,
                               const NetworkRates &net, double extent, double net_multiplier) {
    IterationRates r;
    const std::int64_t last = std::max(total_iters - 1, 1);
    r.group[size_t(Group::Position)] =
        extent * nn::lr_schedule(iter, g.position, g.position_final, last);
    r.group[size_t(Group::LogScale)] = g.log_scale;
    r.group[size_t(Group::Rotation)] = g.rotation;
    r.group[size_t(Group::Latent)] = g.latent;
    r.group[size_t(Group::OpacityLogit)] = g.opacity;
    r.group[size_t(Group::Color)] = g.color;
    r.network = net_multiplier * nn::lr_schedule(iter, net.start, net.end, last);
    return r;
}

/// Adam state for every primitive group and both networks.
template <typename T> class ModelOptimizer {
  public:
    ModelOptimizer() = default;
    explicit ModelOptimizer(const Model<T> &m) { reset(m); }

    void reset(const Model<T> &m) {
        for (Group g : kAllGroups) {
            groups_[size_t(g)] = {};
            groups_[size_t(g)].resize(m.prims.data[size_t(g)].size());
        }
        proj_.reset(m.proj);
        dec_.reset(m.dec);
    }

    /// Matches the state to a new primitive count; new entries start at zero.
    void resize(const Model<T> &m) {
        for (Group g : kAllGroups) {
            groups_[size_t(g)].resize(m.prims.data[size_t(g)].size());
        }
    }

    /// Zeroes the moments of primitive `i` in every group.
    void reset_primitive(const Model<T> &m, int i) {
        for (Group g : kAllGroups) {
            const size_t d = size_t(m.prims.dim(g));
            groups_[size_t(g)].reset_range(size_t(i) * d, d);
        }
    }

    void step_group(Model<T> &m, const ModelGrads<T> &grads, Group g, double lr) {
        nn::adam_step(m.prims.group(g), grads.prims.group(g), groups_[size_t(g)], lr,
                      group_name(g));
    }

    void step_networks(Model<T> &m, const ModelGrads<T> &grads, double lr) {
        if (!m.proj.layers.empty()) {
            proj_.step(m.proj, grads.proj, lr, "phi_proj");
        }
        if (!m.dec.layers.empty()) {
            dec_.step(m.dec, grads.dec, lr, "phi_dec");
        }
    }

    const nn::AdamState<T> &group_state(Group g) const { return groups_[size_t(g)]; }

  private:
    std::array<nn::AdamState<T>, kGroupCount> groups_;
    nn::MlpOptimizer<T> proj_, dec_;
};

} // namespace splatkern::train
