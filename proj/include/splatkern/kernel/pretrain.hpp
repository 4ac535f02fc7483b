// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/error.hpp>
#include <splatkern/geom/rotation.hpp>
#include <splatkern/kernel/field.hpp>
#include <splatkern/nn/adam.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

namespace splatkern::kernel {

/// Synthetic-geometry ranges and optimizer settings for pre-training.
struct PretrainConfig {
    int iters = 20000;
    int batch = 64;     // geometries per step
    int r_samples = 8;  // radial (or disk) samples per geometry
    int holdout = 256;  // held-out geometries
    double lr_start = 1e-3;
    double lr_end = 1e-5;
    int warm_restarts = 16;   // decoder-only warm-start candidates (0 disables)
    int warm_iters = 3000;
    double warm_lr_start = 1e-1;
    double warm_lr_end = 1e-3;
    std::uint64_t seed = 0;

    double xy_range = 3.0; // mu_cam x, y uniform in [-xy_range, xy_range]
    double z_min = 0.2, z_max = 10.0;
    double scale_min = 0.005, scale_max = 1.0; // log-uniform
    double latent_noise = 0.01;
    double mu_scale = 1.0;
};

struct PretrainResult {
    double initial_mse = 0.0;
    double final_mse = 0.0; // held out
    int steps = 0;
};

/// Called every `interval` steps with (step, held-out MSE).
using PretrainProgress = std::function<void(int, double)>;

namespace detail {

struct GeometryBatch {
    nn::Matrix<float> proj_in; // in_dim x B (empty in decoder-only mode)
    nn::Matrix<float> latent;  // latent_dim x B
};

inline geom::Mat3<double> random_rotation(std::mt19937_64 &rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    geom::Quaternion<double> q{n(rng), n(rng), n(rng), n(rng)};
    return geom::quat_to_rotation(q);
}

inline GeometryBatch sample_geometry(std::mt19937_64 &rng, const PretrainConfig &cfg,
                                     const ProjInputSet *set, int latent_dim, int scale_dim,
                                     int count) {
    std::uniform_real_distribution<double> uxy(-cfg.xy_range, cfg.xy_range);
    std::uniform_real_distribution<double> uz(cfg.z_min, cfg.z_max);
    std::uniform_real_distribution<double> ulog(std::log(cfg.scale_min), std::log(cfg.scale_max));
    std::normal_distribution<double> noise(0.0, cfg.latent_noise);
    GeometryBatch out;
    out.latent.resize(latent_dim, count);
    if (set) {
        out.proj_in.resize(set->dim(latent_dim, scale_dim), count);
    }
    std::vector<float> latent(static_cast<size_t>(latent_dim));
    std::vector<float> scale(static_cast<size_t>(scale_dim));
    for (int b = 0; b < count; ++b) {
        for (auto &v : latent) {
            v = float(noise(rng));
        }
        out.latent.col(b) = Eigen::Map<const nn::Vector<float>>(latent.data(), latent_dim);
        if (!set) {
            continue;
        }
        const geom::Vec3<float> mu(float(uxy(rng)), float(uxy(rng)), float(uz(rng)));
        for (auto &v : scale) {
            v = float(std::exp(ulog(rng)));
        }
        const geom::Mat3<float> rot = random_rotation(rng).cast<float>();
        ProjFeatures<float> f{latent, mu, scale, rot};
        write_proj_input(*set, f, float(cfg.mu_scale), out.proj_in.col(b).data());
    }
    return out;
}

/// Profile-decoder input with `r_samples` random radii per geometry, plus targets.
inline void radial_samples(std::mt19937_64 &rng, const nn::Matrix<float> &z2d, int r_samples,
                           ProfileTarget target, nn::Matrix<float> &x, nn::Matrix<float> &t) {
    std::uniform_real_distribution<double> ur(0.0, 1.0);
    const Eigen::Index dz = z2d.rows(), batch = z2d.cols();
    x.resize(1 + dz, batch * r_samples);
    t.resize(1, batch * r_samples);
    for (Eigen::Index b = 0; b < batch; ++b) {
        for (int i = 0; i < r_samples; ++i) {
            const double r = ur(rng);
            const Eigen::Index col = b * r_samples + i;
            x(0, col) = float(r * r);
            x.block(1, col, dz, 1) = z2d.col(b);
            t(0, col) = float(profile_target(target, r * r));
        }
    }
}

/// Planar-decoder input with points uniform in the unit disk, target exp(-4.5 (u^2 + v^2)).
inline void disk_samples(std::mt19937_64 &rng, const nn::Matrix<float> &z2d, int samples,
                         nn::Matrix<float> &x, nn::Matrix<float> &t) {
    std::uniform_real_distribution<double> ua(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> ur(0.0, 1.0);
    const Eigen::Index dz = z2d.rows(), batch = z2d.cols();
    x.resize(2 + dz, batch * samples);
    t.resize(1, batch * samples);
    for (Eigen::Index b = 0; b < batch; ++b) {
        for (int i = 0; i < samples; ++i) {
            const double rho = std::sqrt(ur(rng)), phi = ua(rng);
            const double u = rho * std::cos(phi), v = rho * std::sin(phi);
            const Eigen::Index col = b * samples + i;
            x(0, col) = float(u);
            x(1, col) = float(v);
            x.block(2, col, dz, 1) = z2d.col(b);
            t(0, col) = float(frozen_gaussian(u * u + v * v));
        }
    }
}

enum class DecoderKind { Radial, Planar };

/// Small sigmoid decoders often settle where the logit is linear in the
/// coordinates (no activation kink inside the support). The decoder alone is
/// first fit to the target on a fixed point set, together with a free shared
/// code vector, from several initializations. The best fit is kept and its code
/// is folded into the first-layer bias, so it reproduces the fit at code 0.
inline void warm_start_decoder(nn::Mlp<float> &dec, DecoderKind kind, ProfileTarget target,
                               const PretrainConfig &cfg, std::mt19937_64 &seeder) {
    const int coord_dim = kind == DecoderKind::Radial ? 1 : 2;
    const int code_dim = dec.input_dim() - coord_dim;
    nn::Matrix<float> x, t;
    const nn::Matrix<float> zero_code = nn::Matrix<float>::Zero(code_dim, 1);
    if (kind == DecoderKind::Radial) {
        const int n = 256;
        x = nn::Matrix<float>::Zero(dec.input_dim(), n);
        t.resize(1, n);
        for (int i = 0; i < n; ++i) {
            const double r = (i + 0.5) / n;
            x(0, i) = float(r * r);
            t(0, i) = float(profile_target(target, r * r));
        }
    } else {
        std::mt19937_64 grid_rng(cfg.seed ^ 0x94d049bb133111ebull);
        disk_samples(grid_rng, zero_code, 1024, x, t);
    }
    const Eigen::Index n = x.cols();

    double best_mse = std::numeric_limits<double>::infinity();
    nn::Mlp<float> best;
    nn::ForwardCache<float> cache;
    for (int cand = 0; cand < cfg.warm_restarts; ++cand) {
        nn::Mlp<float> net = cand == 0 ? dec
                                       : nn::mlp_new<float>(dec.dims(), dec.final_sigmoid,
                                                            seeder(), dec.leaky_slope);
        nn::Vector<float> code = nn::Vector<float>::Zero(code_dim);
        nn::MlpOptimizer<float> opt(net);
        nn::AdamState<float> code_state;
        double mse = 0.0;
        for (int s = 0; s <= cfg.warm_iters; ++s) {
            for (Eigen::Index i = 0; i < n; ++i) {
                x.block(coord_dim, i, code_dim, 1) = code;
            }
            const nn::Matrix<float> y = nn::mlp_forward(net, x, &cache);
            mse = double((y - t).template cast<double>().squaredNorm()) / double(n);
            if (s == cfg.warm_iters || !std::isfinite(mse)) {
                break;
            }
            const nn::Matrix<float> dy = (y - t) * (2.0f / float(n));
            auto grads = nn::MlpGrads<float>::zeros_like(net);
            const nn::Matrix<float> dx = nn::mlp_backward(net, cache, dy, grads);
            const nn::Vector<float> dcode = dx.bottomRows(code_dim).rowwise().sum();
            const double lr = nn::lr_schedule(s, cfg.warm_lr_start, cfg.warm_lr_end,
                                              std::max(cfg.warm_iters - 1, 1));
            opt.step(net, grads, lr, "decoder network");
            nn::adam_step<float>({code.data(), size_t(code_dim)},
                                 {dcode.data(), size_t(code_dim)}, code_state, lr,
                                 "decoder warm-start code");
        }
        if (std::isfinite(mse) && mse < best_mse) {
            best_mse = mse;
            auto &first = net.layers.front();
            first.bias += first.weight.rightCols(code_dim) * code;
            best = std::move(net);
        }
    }
    if (!best.layers.empty()) {
        dec = std::move(best);
    }
}

/// Shared loop: optional projection network feeding a decoder.
inline PretrainResult run_pretrain(nn::Mlp<float> *proj, nn::Mlp<float> &dec, DecoderKind kind,
                                   const ProjInputSet *set, int latent_dim, int scale_dim,
                                   ProfileTarget target, const PretrainConfig &cfg,
                                   const PretrainProgress &progress, int progress_interval) {
    if (cfg.iters < 1 || cfg.batch < 1 || cfg.r_samples < 1 || cfg.holdout < 1) {
        throw ConfigError("pre-training iteration and batch counts must be positive");
    }
    const int coord_dim = kind == DecoderKind::Radial ? 1 : 2;
    const int code_dim = proj ? proj->output_dim() : latent_dim;
    if (dec.input_dim() != coord_dim + code_dim) {
        throw ConfigError("decoder expects " + std::to_string(dec.input_dim()) +
                          " inputs but pre-training provides " +
                          std::to_string(coord_dim + code_dim));
    }
    if (proj && proj->input_dim() != set->dim(latent_dim, scale_dim)) {
        throw ConfigError("projection network input does not match the input set");
    }

    auto make_samples = [&](std::mt19937_64 &rng, const nn::Matrix<float> &code, int samples,
                            nn::Matrix<float> &x, nn::Matrix<float> &t) {
        if (kind == DecoderKind::Radial) {
            radial_samples(rng, code, samples, target, x, t);
        } else {
            disk_samples(rng, code, samples, x, t);
        }
    };

    // Held-out set, drawn from its own stream so it is independent of the step count.
    std::mt19937_64 hold_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
    const GeometryBatch hold = sample_geometry(hold_rng, cfg, set, latent_dim, scale_dim,
                                               cfg.holdout);
    const std::mt19937_64 hold_r_rng(cfg.seed ^ 0x2545f4914f6cdd1dull);
    auto heldout_mse = [&](const nn::Mlp<float> *p, const nn::Mlp<float> &d) {
        std::mt19937_64 r_rng = hold_r_rng;
        const nn::Matrix<float> code = p ? nn::mlp_forward(*p, hold.proj_in) : hold.latent;
        nn::Matrix<float> x, t;
        make_samples(r_rng, code, 32, x, t);
        const nn::Matrix<float> y = nn::mlp_forward(d, x);
        return double((y - t).template cast<double>().squaredNorm()) / double(t.size());
    };

    struct Candidate {
        nn::Mlp<float> proj, dec;
        nn::MlpOptimizer<float> opt_proj, opt_dec;
        std::mt19937_64 rng;
    };
    auto make_candidate = [&](nn::Mlp<float> p, nn::Mlp<float> d, std::uint64_t seed) {
        Candidate c{std::move(p), std::move(d), {}, {}, std::mt19937_64(seed)};
        if (proj) {
            c.opt_proj.reset(c.proj);
        }
        c.opt_dec.reset(c.dec);
        return c;
    };

    nn::ForwardCache<float> proj_cache, dec_cache;
    nn::MlpGrads<float> dec_grads, proj_grads;
    int global_step = 0;
    auto train = [&](Candidate &c, int steps, const std::function<double(int)> &lr_at) {
        for (int s = 0; s < steps; ++s) {
            const GeometryBatch g =
                sample_geometry(c.rng, cfg, set, latent_dim, scale_dim, cfg.batch);
            const nn::Matrix<float> code =
                proj ? nn::mlp_forward(c.proj, g.proj_in, &proj_cache) : g.latent;
            nn::Matrix<float> x, t;
            make_samples(c.rng, code, cfg.r_samples, x, t);
            const nn::Matrix<float> y = nn::mlp_forward(c.dec, x, &dec_cache);
            const nn::Matrix<float> dy = (y - t) * (2.0f / float(t.size()));

            dec_grads = nn::MlpGrads<float>::zeros_like(c.dec);
            const nn::Matrix<float> dx = nn::mlp_backward(c.dec, dec_cache, dy, dec_grads);
            const double lr = lr_at(s);
            if (proj) {
                nn::Matrix<float> dcode = nn::Matrix<float>::Zero(code.rows(), code.cols());
                for (Eigen::Index b = 0; b < code.cols(); ++b) {
                    for (int i = 0; i < cfg.r_samples; ++i) {
                        dcode.col(b) +=
                            dx.block(coord_dim, b * cfg.r_samples + i, code.rows(), 1);
                    }
                }
                proj_grads = nn::MlpGrads<float>::zeros_like(c.proj);
                nn::mlp_backward(c.proj, proj_cache, dcode, proj_grads);
                c.opt_proj.step(c.proj, proj_grads, lr, "projection network");
            }
            c.opt_dec.step(c.dec, dec_grads, lr, "decoder network");
            ++global_step;
            if (progress && progress_interval > 0 && global_step % progress_interval == 0) {
                progress(global_step, heldout_mse(proj ? &c.proj : nullptr, c.dec));
            }
        }
    };

    PretrainResult result;
    result.initial_mse = heldout_mse(proj, dec);

    std::mt19937_64 seeder(cfg.seed ^ 0xd1b54a32d192ed03ull);
    if (cfg.warm_restarts > 0) {
        warm_start_decoder(dec, kind, target, cfg, seeder);
        if (proj) {
            // Start the joint stage from a constant code; the decoder was fit at code 0.
            proj->layers.back().weight.setZero();
            proj->layers.back().bias.setZero();
        }
    }
    Candidate best = make_candidate(proj ? *proj : nn::Mlp<float>{}, dec, seeder());
    train(best, cfg.iters, [&](int s) {
        return nn::lr_schedule(s, cfg.lr_start, cfg.lr_end, std::max(cfg.iters - 1, 1));
    });
    result.steps = global_step;

    result.final_mse = heldout_mse(proj ? &best.proj : nullptr, best.dec);
    if (!std::isfinite(result.final_mse) || result.final_mse > result.initial_mse) {
        throw PretrainingError("pre-training diverged: held-out MSE " +
                               std::to_string(result.final_mse) + " exceeds initial " +
                               std::to_string(result.initial_mse));
    }
    if (proj) {
        *proj = std::move(best.proj);
    }
    dec = std::move(best.dec);
    return result;
}

} // namespace detail

/// Fits Phi_dec(r^2, Phi_proj(...)) to a 1D target profile over random geometry.
inline PretrainResult pretrain_volumetric(nn::Mlp<float> &phi_proj, nn::Mlp<float> &phi_dec,
                                          const ProjInputSet &set, int latent_dim,
                                          ProfileTarget target, const PretrainConfig &cfg,
                                          const PretrainProgress &progress = {},
                                          int progress_interval = 1000) {
    return detail::run_pretrain(&phi_proj, phi_dec, detail::DecoderKind::Radial, &set, latent_dim,
                                3, target, cfg, progress, progress_interval);
}

/// Planar networks: the projection network maps to the post-projection latent and
/// the planar decoder is fit to the 2D Gaussian surfel exp(-4.5 (u^2 + v^2)).
inline PretrainResult pretrain_planar(nn::Mlp<float> &phi_proj, nn::Mlp<float> &phi_planar,
                                      const ProjInputSet &set, int latent_dim,
                                      const PretrainConfig &cfg,
                                      const PretrainProgress &progress = {},
                                      int progress_interval = 1000) {
    return detail::run_pretrain(&phi_proj, phi_planar, detail::DecoderKind::Planar, &set,
                                latent_dim, 2, ProfileTarget::Gaussian, cfg, progress,
                                progress_interval);
}

/// Decoder-only variant for image fitting: latents are drawn directly.
inline PretrainResult pretrain_image_decoder(nn::Mlp<float> &phi_planar, int latent_dim,
                                             const PretrainConfig &cfg,
                                             const PretrainProgress &progress = {},
                                             int progress_interval = 1000) {
    return detail::run_pretrain(nullptr, phi_planar, detail::DecoderKind::Planar, nullptr,
                                latent_dim, 2, ProfileTarget::Gaussian, cfg, progress,
                                progress_interval);
}

} // namespace splatkern::kernel
