// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/error.hpp>
#include <splatkern/kernel/field.hpp>
#include <splatkern/kernel/inputs.hpp>
#include <splatkern/train/loss.hpp>

#include <array>
#include <cstdint>
#include <string>

namespace splatkern::train {

/// Per-group Adam learning rates. Position decays exponentially from
/// `position` to `position_final` and is multiplied by the scene extent.
struct GroupRates {
    double position = 1.6e-4;
    double position_final = 1.6e-6;
    double log_scale = 5e-3;
    double rotation = 1e-3;
    double latent = 1.6e-4;
    double opacity = 5e-2;
    double color = 2.5e-3;
};

struct NetworkRates {
    double start = 1.6e-4;
    double end = 1.6e-6;
};

struct DensityConfig {
    int interval = 100;
    int start_iter = 500;
    int stop_iter = 25000;
    double dead_opacity = 0.005;
    double growth = 0.05; // clones added per event, as a fraction of the current count
};

struct TrainConfig {
    int total_iters = 30000;
    int freeze_iters = 2000;
    int k = 2;
    int sh_degree = 0;
    int budget = 100000; // N_max
    std::uint64_t seed = 0;
    LossWeights loss;
    GroupRates rates;
    NetworkRates net_rates;
    DensityConfig density;
    bool density_enabled = true;
    bool no_pretrain = false;    // multiplies network rates by 10
    bool freeze_latents = false; // also hold latents during the network freeze
    kernel::KernelSource source = kernel::KernelSource::Learned;
    kernel::ProjInputSet inputs;
    double mu_scale = 1.0;
    double init_opacity = 0.1;
    double init_scale_factor = 2.0; // support radius in units of mean 3-NN spacing
    double latent_noise = 0.01;     // std of the z3d perturbation around zero
    int test_interval = 500;
    std::array<float, 3> background{0.f, 0.f, 0.f};
    int tile_size = 16;

    double network_rate_multiplier() const { return no_pretrain ? 10.0 : 1.0; }

    void validate(int initial_count) const {
        if (total_iters < 1) {
            throw ConfigError("total_iters must be positive");
        }
        if (freeze_iters < 0 || freeze_iters >= total_iters) {
            throw ConfigError("freeze_iters must lie in [0, total_iters), got " +
                              std::to_string(freeze_iters));
        }
        if (loss.ssim < 0 || loss.ssim > 1 || loss.opacity < 0 || loss.scale < 0) {
            throw ConfigError("loss weights must be non-negative (and the SSIM weight at most 1)");
        }
        if (budget < initial_count) {
            throw ConfigError("primitive budget " + std::to_string(budget) +
                              " is below the initial count " + std::to_string(initial_count));
        }
        if (density.interval < 1) {
            throw ConfigError("density-control interval must be positive");
        }
        if (k < 2) {
            throw ConfigError("k must be at least 2");
        }
        if (!(latent_noise >= 0)) {
            throw ConfigError("latent noise must be non-negative");
        }
        if (test_interval < 1) {
            throw ConfigError("test_interval must be positive");
        }
    }
};

/// Settings for 2D image fitting. Positions and scales are in pixels.
struct FitImageConfig {
    int iters = 2000;
    int primitives = 1000;
    std::uint64_t seed = 0;
    LossWeights loss{0.2, 0.0, 0.0};
    GroupRates rates{0.5, 0.005, 1e-2, 1e-2, 5e-3, 5e-2, 1e-2};
    NetworkRates net_rates{1e-3, 1e-5};
    bool train_network = true;
    kernel::KernelSource source = kernel::KernelSource::Learned;
    double init_opacity = 0.5;
    double init_scale_factor = 1.0; // support radius in units of the mean spacing
    int max_primitives = 1 << 22;
    int tile_size = 16;

    void validate() const {
        if (primitives < 1) {
            throw ConfigError("image fitting needs at least one primitive");
        }
        if (primitives > max_primitives) {
            throw ConfigError("primitive count " + std::to_string(primitives) +
                              " exceeds the memory budget of " + std::to_string(max_primitives));
        }
        if (iters < 1) {
            throw ConfigError("iters must be positive");
        }
    }
};

} // namespace splatkern::train
