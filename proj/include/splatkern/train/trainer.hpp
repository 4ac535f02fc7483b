// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/error.hpp>
#include <splatkern/geom/camera.hpp>
#include <splatkern/model.hpp>
#include <splatkern/raster/render.hpp>
#include <splatkern/raster/sh.hpp>
#include <splatkern/train/config.hpp>
#include <splatkern/train/density.hpp>
#include <splatkern/train/loss.hpp>
#include <splatkern/train/optimizer.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace splatkern::train {

struct View {
    std::string name;
    geom::Camera<float> camera;
    Image<float> image;
};

/// Posed images plus the initial point cloud. Colors may be empty.
struct SceneData {
    std::vector<View> train;
    std::vector<View> test;
    std::vector<geom::Vec3<float>> points;
    std::vector<std::array<float, 3>> colors;

    void validate() const {
        if (train.empty()) {
            throw ValidationError("scene has no training views");
        }
        if (points.empty()) {
            throw ValidationError("scene has no initial points");
        }
        if (!colors.empty() && colors.size() != points.size()) {
            throw ValidationError("point colors do not match the point count");
        }
        for (const auto *list : {&train, &test}) {
            for (const auto &v : *list) {
                v.camera.validate();
                if (v.image.width != v.camera.width || v.image.height != v.camera.height ||
                    v.image.channels != 3) {
                    throw ValidationError("image '" + v.name + "' is " +
                                          std::to_string(v.image.width) + "x" +
                                          std::to_string(v.image.height) + " but its camera is " +
                                          std::to_string(v.camera.width) + "x" +
                                          std::to_string(v.camera.height));
                }
            }
        }
    }
};

/// Pre-trained (or fresh) kernel networks.
struct KernelNetworks {
    nn::Mlp<float> proj;
    nn::Mlp<float> dec;
};

struct IterationInfo {
    int iter = 0;
    LossReport loss;
    IterationRates rates;
    int primitive_count = 0;
    bool networks_stepped = false;
    double psnr_test = std::numeric_limits<double>::quiet_NaN(); // only on evaluation iterations
    const DensityReport *density = nullptr;                       // only on density-control iterations
};

template <typename T>
using TrainObserver = std::function<void(const IterationInfo &, const Model<T> &)>;

struct TrainHooks {
    TrainObserver<float> observer;
    std::ostream *metrics_csv = nullptr;
};

struct EvalResult {
    double psnr = 0;
    double ssim = 0;
    double l1 = 0;
    int views = 0;
};

struct TrainResult {
    Model<float> model;
    EvalResult test;
    EvalResult train;
    int iterations = 0;
};

inline const char *metrics_header() {
    return "iter,total,l1,dssim,opacity_reg,scale_reg,psnr_test,primitive_count";
}

inline void write_metrics_row(std::ostream &os, const IterationInfo &info) {
    os << info.iter << ',' << info.loss.total << ',' << info.loss.image_l1 << ','
       << info.loss.dssim << ',' << info.loss.opacity_reg << ',' << info.loss.scale_reg << ',';
    if (!std::isnan(info.psnr_test)) {
        os << info.psnr_test;
    }
    os << ',' << info.primitive_count << '\n';
}

template <typename T>
raster::RenderOptions<T> render_options(int tile_size, const std::array<float, 3> &background) {
    raster::RenderOptions<T> o;
    o.raster.tile_size = tile_size;
    for (int c = 0; c < 3; ++c) {
        o.raster.background[size_t(c)] = T(background[size_t(c)]);
    }
    return o;
}

/// Mean PSNR, SSIM and L1 over `views`.
template <typename T>
EvalResult evaluate(const Model<T> &m, const std::vector<View> &views,
                    const raster::RenderOptions<T> &opts) {
    EvalResult r;
    for (const auto &v : views) {
        const auto cam = v.camera.template cast<T>();
        const auto st = raster::render_view(m, &cam, opts);
        r.psnr += psnr(st.color(), v.image);
        r.ssim += ssim(st.color(), v.image);
        r.l1 += l1(st.color(), v.image);
    }
    r.views = int(views.size());
    if (r.views > 0) {
        r.psnr /= r.views;
        r.ssim /= r.views;
        r.l1 /= r.views;
    }
    return r;
}

/// Radius of the camera centers around their mean, times 1.1.
inline double scene_extent(const std::vector<View> &views) {
    if (views.empty()) {
        return 1.0;
    }
    geom::Vec3<double> mean = geom::Vec3<double>::Zero();
    for (const auto &v : views) {
        mean += v.camera.center().cast<double>();
    }
    mean /= double(views.size());
    double r = 0;
    for (const auto &v : views) {
        r = std::max(r, (v.camera.center().cast<double>() - mean).norm());
    }
    return r > 0 ? 1.1 * r : 1.0;
}

/// Mean distance to the `k` nearest neighbors of every point (uniform grid search).
inline std::vector<double> mean_knn_distance(const std::vector<geom::Vec3<float>> &pts, int k = 3) {
    const size_t n = pts.size();
    std::vector<double> out(n, 0.0);
    if (n < 2) {
        std::fill(out.begin(), out.end(), 1.0);
        return out;
    }
    k = std::min<int>(k, int(n) - 1);
    geom::Vec3<double> lo = pts[0].cast<double>(), hi = lo;
    for (const auto &p : pts) {
        lo = lo.cwiseMin(p.cast<double>());
        hi = hi.cwiseMax(p.cast<double>());
    }
    const double span = std::max((hi - lo).maxCoeff(), 1e-9);
    const double cell = span / std::max(1.0, std::cbrt(double(n)));
    auto key = [&](int x, int y, int z) {
        return (std::int64_t(x) * 73856093) ^ (std::int64_t(y) * 19349663) ^
               (std::int64_t(z) * 83492791);
    };
    auto coord = [&](const geom::Vec3<float> &p) {
        return std::array<int, 3>{int(std::floor((p.x() - lo.x()) / cell)),
                                  int(std::floor((p.y() - lo.y()) / cell)),
                                  int(std::floor((p.z() - lo.z()) / cell))};
    };
    std::unordered_map<std::int64_t, std::vector<int>> grid;
    for (size_t i = 0; i < n; ++i) {
        const auto c = coord(pts[i]);
        grid[key(c[0], c[1], c[2])].push_back(int(i));
    }
    const int max_ring = int(std::ceil(span / cell)) + 1;
    std::vector<double> best;
    for (size_t i = 0; i < n; ++i) {
        const auto c = coord(pts[i]);
        best.clear();
        for (int ring = 0; ring <= max_ring; ++ring) {
            for (int dx = -ring; dx <= ring; ++dx) {
                for (int dy = -ring; dy <= ring; ++dy) {
                    for (int dz = -ring; dz <= ring; ++dz) {
                        if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring) {
                            continue;
                        }
                        const auto it = grid.find(key(c[0] + dx, c[1] + dy, c[2] + dz));
                        if (it == grid.end()) {
                            continue;
                        }
                        for (int j : it->second) {
                            if (size_t(j) != i) {
                                best.push_back((pts[size_t(j)] - pts[i]).cast<double>().norm());
                            }
                        }
                    }
                }
            }
            // Points beyond this ring are at least ring * cell away.
            if (int(best.size()) >= k) {
                std::partial_sort(best.begin(), best.begin() + k, best.end());
                best.resize(size_t(k));
                if (best.back() <= double(ring) * cell) {
                    break;
                }
            }
        }
        double sum = 0;
        for (double d : best) {
            sum += d;
        }
        out[i] = std::max(sum / double(best.size()), 1e-7);
    }
    return out;
}

/// Primitives seeded from the point cloud: support radius from the 3-NN
/// spacing, identity (volumetric) or random (planar) rotation, latents drawn
/// from N(0, latent_noise^2) (all zero when the noise is 0),
/// SH DC from the point colors (gray when absent).
inline Model<float> initial_scene_model(const SceneData &scene, const TrainConfig &cfg, Mode mode,
                                        const std::optional<KernelNetworks> &nets) {
    Model<float> m;
    m.spec = mode == Mode::Planar ? ModelSpec::planar(cfg.sh_degree)
                                  : ModelSpec::volumetric(cfg.k, cfg.sh_degree);
    m.spec.inputs = cfg.inputs;
    m.spec.source = cfg.source;
    m.spec.mu_scale = cfg.mu_scale;
    const int n = int(scene.points.size());
    m.prims.reset(m.spec, n);
    const auto nn_dist = mean_knn_distance(scene.points);
    std::mt19937_64 rng(cfg.seed * 6364136223846793005ULL + 1442695040888963407ULL);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const int sd = m.spec.scale_dim();
    const double o_logit = opacity_logit(cfg.init_opacity);
    for (int i = 0; i < n; ++i) {
        std::copy_n(scene.points[size_t(i)].data(), 3, m.prims.row(Group::Position, i));
        const float ls = float(std::log(cfg.init_scale_factor * nn_dist[size_t(i)]));
        std::fill_n(m.prims.row(Group::LogScale, i), sd, ls);
        float *q = m.prims.row(Group::Rotation, i);
        if (mode == Mode::Planar) {
            geom::Vec3<double> ax;
            double w = gauss(rng);
            ax << gauss(rng), gauss(rng), gauss(rng);
            const double norm = std::sqrt(w * w + ax.squaredNorm());
            q[0] = float(w / norm);
            for (int a = 0; a < 3; ++a) {
                q[a + 1] = float(ax[a] / norm);
            }
        } else {
            q[0] = 1.f;
        }
        *m.prims.row(Group::OpacityLogit, i) = float(o_logit);
        float *col = m.prims.row(Group::Color, i);
        for (int ch = 0; ch < 3; ++ch) {
            const double c = scene.colors.empty() ? 0.5 : double(scene.colors[size_t(i)][size_t(ch)]);
            col[ch] = float((c - 0.5) / raster::kShC0);
        }
    }
    if (cfg.latent_noise > 0) {
        std::mt19937_64 lat_rng(cfg.seed ^ 0x6a09e667f3bcc909ULL);
        std::normal_distribution<double> noise(0.0, cfg.latent_noise);
        for (auto &z : m.prims.group(Group::Latent)) {
            z = float(noise(lat_rng));
        }
    }
    if (nets) {
        m.proj = nets->proj;
        m.dec = nets->dec;
    } else {
        init_networks(m, cfg.seed);
    }
    if (!m.spec.uses_projection()) {
        m.proj = {};
    }
    if (!m.spec.uses_decoder()) {
        m.dec = {};
    }
    m.validate();
    return m;
}

namespace detail {

inline GradientExplosionError at_iteration(int iter, const std::string &what) {
    return GradientExplosionError("iteration " + std::to_string(iter) + ": " + what);
}

inline bool group_trains(Group g, const ModelSpec &spec, bool latents_frozen) {
    if (g == Group::Latent) {
        return spec.source == kernel::KernelSource::Learned && !latents_frozen;
    }
    return true;
}

} // namespace detail

/// Two-stage optimization of a 3D model: primitives only for the first
/// `freeze_iters` iterations, then primitives and both networks.
inline TrainResult train_model(Model<float> model, const SceneData &scene, const TrainConfig &cfg,
                               const TrainHooks &hooks = {}) {
    scene.validate();
    cfg.validate(model.size());
    model.validate();
    const auto opts = render_options<float>(cfg.tile_size, cfg.background);
    const double extent = scene_extent(scene.train);
    const bool learned = model.spec.source == kernel::KernelSource::Learned;
    std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
    std::uniform_int_distribution<size_t> pick(0, scene.train.size() - 1);

    ModelOptimizer<float> opt(model);
    auto grads = ModelGrads<float>::zeros_like(model);
    Image<float> d_image;
    if (hooks.metrics_csv) {
        *hooks.metrics_csv << metrics_header() << '\n';
    }
    for (int iter = 0; iter < cfg.total_iters; ++iter) {
        const View &view = scene.train[pick(rng)];
        grads.set_zero();
        const auto st = raster::render_view(model, &view.camera, opts);
        IterationInfo info;
        info.iter = iter;
        info.loss = compute_loss(st.color(), view.image, model, cfg.loss, d_image, grads);
        if (!std::isfinite(info.loss.total)) {
            throw detail::at_iteration(iter, "non-finite loss");
        }
        raster::render_view_backward(model, &view.camera, st, d_image, opts, grads);

        info.rates = rates_at(iter, cfg.total_iters, cfg.rates, cfg.net_rates, extent,
                              cfg.network_rate_multiplier());
        const bool in_freeze = iter < cfg.freeze_iters;
        try {
            for (Group g : kAllGroups) {
                if (detail::group_trains(g, model.spec, in_freeze && cfg.freeze_latents)) {
                    opt.step_group(model, grads, g, info.rates.group[size_t(g)]);
                }
            }
            if (learned && !in_freeze) {
                opt.step_networks(model, grads, info.rates.network);
                info.networks_stepped = true;
            }
        } catch (const GradientExplosionError &e) {
            throw detail::at_iteration(iter, e.what());
        }

        DensityReport density;
        if (cfg.density_enabled && iter > 0 && iter >= cfg.density.start_iter &&
            iter < cfg.density.stop_iter && iter % cfg.density.interval == 0) {
            density = density_control(model, opt, cfg.density, cfg.budget, iter, rng);
            grads = ModelGrads<float>::zeros_like(model);
            info.density = &density;
        }
        info.primitive_count = model.size();
        if ((iter + 1) % cfg.test_interval == 0 || iter + 1 == cfg.total_iters) {
            if (!scene.test.empty()) {
                info.psnr_test = evaluate(model, scene.test, opts).psnr;
            }
        }
        if (hooks.metrics_csv) {
            write_metrics_row(*hooks.metrics_csv, info);
        }
        if (hooks.observer) {
            hooks.observer(info, model);
        }
    }
    TrainResult r;
    r.test = evaluate(model, scene.test, opts);
    r.train = evaluate(model, scene.train, opts);
    r.iterations = cfg.total_iters;
    r.model = std::move(model);
    return r;
}

/// Volumetric training from the scene's point cloud.
inline TrainResult train_scene(const SceneData &scene, const TrainConfig &cfg,
                               const std::optional<KernelNetworks> &nets = std::nullopt,
                               const TrainHooks &hooks = {}) {
    scene.validate();
    return train_model(initial_scene_model(scene, cfg, Mode::Volumetric, nets), scene, cfg,
                       hooks);
}

/// Planar (oriented disk) training from the scene's point cloud.
inline TrainResult train_scene_planar(const SceneData &scene, const TrainConfig &cfg,
                                      const std::optional<KernelNetworks> &nets = std::nullopt,
                                      const TrainHooks &hooks = {}) {
    scene.validate();
    return train_model(initial_scene_model(scene, cfg, Mode::Planar, nets), scene, cfg, hooks);
}

/// Image-mode model with centers scattered uniformly over the canvas, support
/// radius proportional to the mean spacing sqrt(W H / n), colors sampled
/// from the target at each center, and zero latents.
inline Model<float> initial_image_model(const Image<float> &target, const FitImageConfig &cfg,
                                        const std::optional<nn::Mlp<float>> &decoder) {
    cfg.validate();
    if (target.width < 1 || target.height < 1 || target.channels != 3) {
        throw ShapeError("target must be a non-empty RGB image");
    }
    Model<float> m;
    m.spec = ModelSpec::image2d(target.width, target.height);
    m.spec.source = cfg.source;
    const int n = cfg.primitives;
    m.prims.reset(m.spec, n);
    std::mt19937_64 rng(cfg.seed * 2862933555777941757ULL + 3037000493ULL);
    std::uniform_real_distribution<double> ux(0.0, double(target.width));
    std::uniform_real_distribution<double> uy(0.0, double(target.height));
    std::uniform_real_distribution<double> angle(0.0, 3.14159265358979323846);
    const double spacing = std::sqrt(double(target.width) * double(target.height) / double(n));
    const float ls = float(std::log(cfg.init_scale_factor * spacing));
    const float o_logit = float(opacity_logit(cfg.init_opacity));
    for (int i = 0; i < n; ++i) {
        float *p = m.prims.row(Group::Position, i);
        p[0] = float(ux(rng));
        p[1] = float(uy(rng));
        m.prims.row(Group::LogScale, i)[0] = ls;
        m.prims.row(Group::LogScale, i)[1] = ls;
        *m.prims.row(Group::Rotation, i) = float(angle(rng));
        *m.prims.row(Group::OpacityLogit, i) = o_logit;
        const int px = std::clamp(int(p[0]), 0, target.width - 1);
        const int py = std::clamp(int(p[1]), 0, target.height - 1);
        for (int ch = 0; ch < 3; ++ch) {
            m.prims.row(Group::Color, i)[ch] = target.at(px, py, ch);
        }
    }
    if (m.spec.uses_decoder()) {
        if (decoder) {
            m.dec = *decoder;
        } else {
            init_networks(m, cfg.seed);
        }
    }
    m.validate();
    return m;
}

struct FitResult {
    Model<float> model;
    double psnr = 0;
    double ssim = 0;
};

using FitObserver = std::function<void(int iter, const LossReport &, const Model<float> &)>;

/// Optimizes an image-mode model against `target` with the scene loss.
inline FitResult fit_model(Model<float> model, const Image<float> &target,
                           const FitImageConfig &cfg, const FitObserver &observer = {}) {
    cfg.validate();
    model.validate();
    check_same_shape(Image<float>(model.spec.width, model.spec.height, 3), target);
    const auto opts = render_options<float>(cfg.tile_size, {0.f, 0.f, 0.f});
    const bool learned = model.spec.source == kernel::KernelSource::Learned;
    ModelOptimizer<float> opt(model);
    auto grads = ModelGrads<float>::zeros_like(model);
    Image<float> d_image;
    for (int iter = 0; iter < cfg.iters; ++iter) {
        grads.set_zero();
        const auto st = raster::render_view(model, nullptr, opts);
        const auto loss = compute_loss(st.color(), target, model, cfg.loss, d_image, grads);
        if (!std::isfinite(loss.total)) {
            throw detail::at_iteration(iter, "non-finite loss");
        }
        raster::render_view_backward(model, nullptr, st, d_image, opts, grads);
        const auto rates = rates_at(iter, cfg.iters, cfg.rates, cfg.net_rates, 1.0, 1.0);
        try {
            for (Group g : kAllGroups) {
                if (detail::group_trains(g, model.spec, false)) {
                    opt.step_group(model, grads, g, rates.group[size_t(g)]);
                }
            }
            if (learned && cfg.train_network) {
                opt.step_networks(model, grads, rates.network);
            }
        } catch (const GradientExplosionError &e) {
            throw detail::at_iteration(iter, e.what());
        }
        if (observer) {
            observer(iter, loss, model);
        }
    }
    FitResult r;
    const auto st = raster::render_view(model, nullptr, opts);
    r.psnr = psnr(st.color(), target);
    r.ssim = ssim(st.color(), target);
    r.model = std::move(model);
    return r;
}

/// Fits `cfg.primitives` image-mode primitives to `target`.
inline FitResult fit_image(const Image<float> &target, const FitImageConfig &cfg,
                           const std::optional<nn::Mlp<float>> &decoder = std::nullopt,
                           const FitObserver &observer = {}) {
    return fit_model(initial_image_model(target, cfg, decoder), target, cfg, observer);
}

} // namespace splatkern::train
