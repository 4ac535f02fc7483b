// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/error.hpp>
#include <splatkern/model.hpp>
#include <splatkern/nn/mlp.hpp>
#include <splatkern/train/config.hpp>
#include <splatkern/train/optimizer.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace splatkern::train {

/// One opacity split: `source` shares its opacity with `target`, which is
/// either a recycled dead primitive or a freshly appended clone.
struct RelocationEvent {
    int iter = 0;
    int source = 0;
    int target = 0;
    bool clone = false;
    double opacity_before = 0; // source opacity before the split
    double opacity_after = 0;  // opacity of both copies afterwards
};

struct DensityReport {
    int dead = 0;
    int relocated = 0;
    int added = 0;
    int count_after = 0;
    std::vector<RelocationEvent> events;
};

/// Opacity that leaves the composite of two stacked copies unchanged:
/// 1 - (1 - o_new)^2 = o_old.
inline double split_opacity(double o_old) { return 1.0 - std::sqrt(1.0 - o_old); }

inline double opacity_logit(double o) { return std::log(o) - std::log1p(-o); }

namespace detail {

/// Weighted sampling without replacement (exponential-key method). Returns up
/// to `m` entries of `items`, chosen with probability proportional to `weights`.
template <typename Rng>
std::vector<int> weighted_sample(const std::vector<int> &items, const std::vector<double> &weights,
                                 int m, Rng &rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<std::pair<double, int>> keys;
    keys.reserve(items.size());
    for (size_t i = 0; i < items.size(); ++i) {
        const double r = std::max(u(rng), 1e-300);
        keys.emplace_back(-std::log(r) / weights[i], items[i]);
    }
    const size_t take = std::min(keys.size(), size_t(std::max(m, 0)));
    std::partial_sort(keys.begin(), keys.begin() + std::ptrdiff_t(take), keys.end());
    std::vector<int> out;
    out.reserve(take);
    for (size_t i = 0; i < take; ++i) {
        out.push_back(keys[i].second);
    }
    return out;
}

} // namespace detail

/// Relocates dead primitives (opacity below the threshold) onto live ones
/// sampled proportionally to opacity, then appends clones the same way while
/// the count is below `budget`. Each live source is used at most once per
/// call; dead primitives left over wait for the next call. Adam moments of
/// every touched primitive are cleared.
template <typename T, typename Rng>
DensityReport density_control(Model<T> &m, ModelOptimizer<T> &opt, const DensityConfig &cfg,
                              int budget, int iter, Rng &rng) {
    DensityReport rep;
    const int n = m.size();
    std::vector<int> dead, live;
    std::vector<double> live_w;
    for (int i = 0; i < n; ++i) {
        const double o = nn::sigmoid(double(*m.prims.row(Group::OpacityLogit, i)));
        if (o < cfg.dead_opacity) {
            dead.push_back(i);
        } else {
            live.push_back(i);
            live_w.push_back(o);
        }
    }
    rep.dead = int(dead.size());
    if (live.empty()) {
        throw Error("density control at iteration " + std::to_string(iter) +
                    ": no live primitives left (all " + std::to_string(n) +
                    " opacities below " + std::to_string(cfg.dead_opacity) + ")");
    }

    const int room = std::max(budget - n, 0);
    const int want_add = std::min(room, std::max(1, int(std::floor(cfg.growth * double(n)))));
    const int want = int(dead.size()) + want_add;
    const auto sources = detail::weighted_sample(live, live_w, want, rng);
    const int n_reloc = std::min(int(dead.size()), int(sources.size()));
    const int n_add = std::min(want_add, int(sources.size()) - n_reloc);

    const int new_count = n + n_add;
    m.prims.resize(new_count);
    opt.resize(m);

    auto split = [&](int src, int dst, bool clone) {
        T *src_logit = m.prims.row(Group::OpacityLogit, src);
        // Keep o_old away from 1 so the split opacity has a finite logit.
        const double o_old = nn::sigmoid(double(*src_logit));
        const double o_new = split_opacity(std::min(o_old, 1.0 - 1e-7));
        m.prims.copy_row(src, dst);
        *src_logit = T(opacity_logit(o_new));
        *m.prims.row(Group::OpacityLogit, dst) = *src_logit;
        opt.reset_primitive(m, src);
        opt.reset_primitive(m, dst);
        RelocationEvent e;
        e.iter = iter;
        e.source = src;
        e.target = dst;
        e.clone = clone;
        e.opacity_before = o_old;
        e.opacity_after = nn::sigmoid(double(*src_logit));
        rep.events.push_back(e);
    };

    for (int j = 0; j < n_reloc; ++j) {
        split(sources[size_t(j)], dead[size_t(j)], false);
    }
    for (int j = 0; j < n_add; ++j) {
        split(sources[size_t(n_reloc + j)], n + j, true);
    }
    rep.relocated = n_reloc;
    rep.added = n_add;
    rep.count_after = new_count;
    return rep;
}

} // namespace splatkern::train
