// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/app/checkpoint.hpp>
#include <splatkern/app/gen_scene.hpp>
#include <splatkern/app/png_io.hpp>
#include <splatkern/app/scene_io.hpp>
#include <splatkern/gradcheck.hpp>
#include <splatkern/kernel/pretrain.hpp>
#include <splatkern/train/trainer.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace splatkern::app {

inline constexpr int kUsageExit = 2;

inline Mode parse_mode(const std::string &s) {
    if (s == "volumetric") {
        return Mode::Volumetric;
    }
    if (s == "planar") {
        return Mode::Planar;
    }
    if (s == "image") {
        return Mode::Image2D;
    }
    throw ConfigError("unknown mode '" + s + "'");
}

inline kernel::ProfileTarget parse_target(const std::string &s) {
    if (s == "cosine") {
        return kernel::ProfileTarget::Cosine;
    }
    if (s == "gaussian") {
        return kernel::ProfileTarget::Gaussian;
    }
    if (s == "polynomial") {
        return kernel::ProfileTarget::Polynomial;
    }
    if (s == "linear") {
        return kernel::ProfileTarget::Linear;
    }
    throw ConfigError("unknown pre-training target '" + s + "'");
}

inline kernel::KernelSource parse_kernel(const std::string &s) {
    if (s == "learned") {
        return kernel::KernelSource::Learned;
    }
    if (s == "gaussian") {
        return kernel::KernelSource::FrozenGaussian;
    }
    throw ConfigError("unknown kernel '" + s + "'");
}

/// Fresh networks for `mode`, pre-trained against `target` (planar and
/// image decoders always fit the Gaussian surfel).
inline NetworkFile pretrain_networks(Mode mode, kernel::ProfileTarget target,
                                     const kernel::ProjInputSet &inputs,
                                     const kernel::PretrainConfig &cfg, std::ostream *log,
                                     double *held_out_mse = nullptr) {
    Model<float> shape;
    shape.spec = mode == Mode::Volumetric ? ModelSpec::volumetric()
                 : mode == Mode::Planar   ? ModelSpec::planar()
                                          : ModelSpec::image2d(1, 1);
    shape.spec.inputs = inputs;
    init_networks(shape, cfg.seed);
    kernel::PretrainProgress progress;
    if (log) {
        progress = [log](int step, double mse) {
            *log << "pretrain step " << step << " held-out mse " << mse << '\n';
        };
    }
    kernel::PretrainResult r;
    switch (mode) {
    case Mode::Volumetric:
        r = kernel::pretrain_volumetric(shape.proj, shape.dec, inputs, shape.spec.latent_dim,
                                        target, cfg, progress, 5000);
        break;
    case Mode::Planar:
        r = kernel::pretrain_planar(shape.proj, shape.dec, inputs, shape.spec.latent_dim, cfg,
                                    progress, 5000);
        break;
    case Mode::Image2D:
        r = kernel::pretrain_image_decoder(shape.dec, shape.spec.latent_dim, cfg, progress, 5000);
        break;
    }
    if (held_out_mse) {
        *held_out_mse = r.final_mse;
    }
    NetworkFile nf;
    nf.mode = mode;
    nf.latent_dim = shape.spec.latent_dim;
    nf.code_dim = shape.spec.code_dim;
    nf.inputs = inputs;
    nf.proj = std::move(shape.proj);
    nf.dec = std::move(shape.dec);
    return nf;
}

namespace detail {

/// Turns a TOML file into "--key value" arguments for `sub`. Keys may sit at
/// the top level or under a table named after the subcommand.
inline std::vector<std::string> config_arguments(const std::string &path, const CLI::App &sub) {
    if (!std::filesystem::exists(path)) {
        throw ConfigError("config file '" + path + "' not found");
    }
    std::vector<CLI::ConfigItem> items;
    try {
        items = CLI::ConfigTOML().from_file(path);
    } catch (const CLI::Error &e) {
        throw ConfigError("config file '" + path + "': " + e.what());
    }
    std::vector<std::string> args;
    for (const auto &it : items) {
        if (it.name == "++" || it.name == "--") {
            continue;
        }
        if (!it.parents.empty() && !(it.parents.size() == 1 && it.parents[0] == sub.get_name())) {
            continue; // another subcommand's table
        }
        const std::string flag = "--" + it.name;
        if (it.name == "config" || !sub.get_option_no_throw(flag)) {
            throw ConfigError("config file '" + path + "': unknown key '" + it.name + "' for '" +
                              sub.get_name() + "'");
        }
        if (it.inputs.size() == 1) {
            args.push_back(flag + "=" + it.inputs[0]);
        } else {
            args.push_back(flag);
            args.insert(args.end(), it.inputs.begin(), it.inputs.end());
        }
    }
    return args;
}

inline std::string effective_config(const CLI::App &sub) {
    std::string s = "# splatkern " + sub.get_name() + "\n" + sub.config_to_str(true, false);
    if (s.size() > kConfigEchoBytes) {
        s.resize(kConfigEchoBytes);
    }
    return s;
}

inline void ensure_dir(const std::string &dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw Error("cannot create directory '" + dir + "': " + ec.message());
    }
}

inline std::optional<train::KernelNetworks> networks_for(Mode mode, const std::string &nets_path,
                                                         const train::TrainConfig &cfg,
                                                         int pretrain_iters,
                                                         kernel::ProfileTarget target,
                                                         std::ostream &log) {
    if (cfg.source == kernel::KernelSource::FrozenGaussian) {
        return std::nullopt;
    }
    if (!nets_path.empty()) {
        const NetworkFile nf = load_networks(nets_path);
        if (nf.mode != mode) {
            throw ConfigError("network file '" + nets_path + "' holds " + mode_name(nf.mode) +
                              " networks, this run needs " + mode_name(mode));
        }
        if (nf.inputs.bits() != cfg.inputs.bits()) {
            throw ConfigError("network file '" + nets_path +
                              "' was pre-trained with a different projection input set");
        }
        return train::KernelNetworks{nf.proj, nf.dec};
    }
    if (cfg.no_pretrain) {
        return std::nullopt; // fresh networks, faster network rates
    }
    kernel::PretrainConfig pc;
    pc.iters = pretrain_iters;
    pc.seed = cfg.seed;
    log << "no --nets given: pre-training " << mode_name(mode) << " networks for "
        << pretrain_iters << " steps\n";
    double mse = 0;
    auto nf = pretrain_networks(mode, target, cfg.inputs, pc, nullptr, &mse);
    log << "pre-training held-out mse " << mse << '\n';
    return train::KernelNetworks{std::move(nf.proj), std::move(nf.dec)};
}

inline geom::Camera<float> pick_camera(const std::string &camera_json, const std::string &scene,
                                       int index) {
    std::string path = camera_json;
    if (path.empty()) {
        if (scene.empty()) {
            throw ConfigError("rendering a 3D checkpoint needs --camera-json or --scene");
        }
        path = (std::filesystem::path(scene) / "cameras.json").string();
    }
    const auto recs = parse_cameras(app::detail::read_text(path), path);
    if (index < 0 || size_t(index) >= recs.size()) {
        throw ConfigError("camera index " + std::to_string(index) + " out of range: '" + path +
                          "' holds " + std::to_string(recs.size()) + " cameras");
    }
    auto cam = recs[size_t(index)].camera();
    cam.validate();
    return cam;
}

} // namespace detail

/// Shared training flags for `train` and `train-planar`.
struct TrainArgs {
    std::string scene, config, nets, out = "run";
    train::TrainConfig cfg;
    std::string kernel = "learned";
    std::string inputs = "z3d,mu_cam,s,r_cam";
    std::string target = "cosine";
    int pretrain_iters = 20000;
    bool no_density = false;
    bool quiet = false;
};

inline void add_train_options(CLI::App &sub, TrainArgs &a) {
    sub.add_option("--scene", a.scene, "Scene directory (cameras.json, images, points.txt)")
        ->required();
    sub.add_option("--config", a.config, "TOML file with any of these flags");
    sub.add_option("--nets", a.nets, "Pre-trained networks from `pretrain`");
    sub.add_option("--out", a.out, "Output directory for model.splk and metrics.csv");
    sub.add_option("--iters", a.cfg.total_iters, "Training iterations");
    sub.add_option("--freeze-iters", a.cfg.freeze_iters, "Iterations before networks train");
    sub.add_option("--k", a.cfg.k, "Profile samples per splat");
    sub.add_option("--sh-degree", a.cfg.sh_degree, "Spherical-harmonic degree");
    sub.add_option("--budget", a.cfg.budget, "Maximum primitive count");
    sub.add_option("--seed", a.cfg.seed, "Random seed");
    sub.add_option("--kernel", a.kernel, "learned or gaussian (frozen baseline)")
        ->check(CLI::IsMember({"learned", "gaussian"}));
    sub.add_option("--inputs", a.inputs, "Projection inputs: z3d,mu_cam,s,r_cam,omega_o");
    sub.add_option("--target", a.target, "Profile target when pre-training in-process")
        ->check(CLI::IsMember({"cosine", "gaussian", "polynomial", "linear"}));
    sub.add_option("--pretrain-iters", a.pretrain_iters, "In-process pre-training steps");
    sub.add_flag("--no-pretrain", a.cfg.no_pretrain, "Fresh networks with 10x network rates");
    sub.add_flag("--freeze-latents", a.cfg.freeze_latents, "Hold latents during the freeze");
    sub.add_flag("--no-density", a.no_density, "Disable density control");
    sub.add_option("--density-interval", a.cfg.density.interval);
    sub.add_option("--density-start", a.cfg.density.start_iter);
    sub.add_option("--density-stop", a.cfg.density.stop_iter);
    sub.add_option("--test-interval", a.cfg.test_interval, "Held-out evaluation interval");
    sub.add_option("--ssim-weight", a.cfg.loss.ssim);
    sub.add_option("--opacity-reg", a.cfg.loss.opacity);
    sub.add_option("--scale-reg", a.cfg.loss.scale);
    sub.add_option("--init-opacity", a.cfg.init_opacity);
    sub.add_option("--latent-noise", a.cfg.latent_noise, "Std of the initial latent perturbation");
    sub.add_option("--init-scale", a.cfg.init_scale_factor, "Initial radius / 3-NN spacing");
    sub.add_option("--lr-position", a.cfg.rates.position);
    sub.add_option("--lr-position-final", a.cfg.rates.position_final);
    sub.add_option("--lr-scale", a.cfg.rates.log_scale);
    sub.add_option("--lr-rotation", a.cfg.rates.rotation);
    sub.add_option("--lr-latent", a.cfg.rates.latent);
    sub.add_option("--lr-opacity", a.cfg.rates.opacity);
    sub.add_option("--lr-color", a.cfg.rates.color);
    sub.add_option("--lr-network", a.cfg.net_rates.start);
    sub.add_option("--lr-network-final", a.cfg.net_rates.end);
    sub.add_option("--tile-size", a.cfg.tile_size);
    sub.add_flag("--quiet", a.quiet, "Only print the final summary");
}

inline int run_train(const CLI::App &sub, TrainArgs &a, Mode mode) {
    a.cfg.source = parse_kernel(a.kernel);
    a.cfg.inputs = kernel::ProjInputSet::parse(a.inputs);
    a.cfg.density_enabled = !a.no_density;
    const auto scene = load_scene(a.scene);
    a.cfg.validate(int(scene.points.size())); // fail before any pre-training
    auto nets = detail::networks_for(mode, a.nets, a.cfg, a.pretrain_iters,
                                     parse_target(a.target), std::cerr);
    detail::ensure_dir(a.out);
    const std::string csv_path = (std::filesystem::path(a.out) / "metrics.csv").string();
    std::ofstream csv(csv_path);
    if (!csv) {
        throw Error("cannot write '" + csv_path + "'");
    }
    train::TrainHooks hooks;
    hooks.metrics_csv = &csv;
    const auto t0 = std::chrono::steady_clock::now();
    if (!a.quiet) {
        hooks.observer = [&](const train::IterationInfo &info, const Model<float> &) {
            if (!std::isnan(info.psnr_test)) {
                const double s =
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                std::cerr << "iter " << info.iter << "  loss " << info.loss.total << "  test psnr "
                          << info.psnr_test << "  primitives " << info.primitive_count << "  ("
                          << std::fixed << std::setprecision(1) << s << " s)"
                          << std::defaultfloat << std::setprecision(6) << '\n';
            }
        };
    }
    const auto r = mode == Mode::Planar ? train::train_scene_planar(scene, a.cfg, nets, hooks)
                                        : train::train_scene(scene, a.cfg, nets, hooks);
    const std::string ckpt = (std::filesystem::path(a.out) / "model.splk").string();
    save_checkpoint({r.model, detail::effective_config(sub)}, ckpt);
    std::cout << "test psnr " << r.test.psnr << "  ssim " << r.test.ssim << "  ("
              << r.test.views << " views), " << r.model.size() << " primitives\n"
              << "wrote " << ckpt << " and " << csv_path << '\n';
    return 0;
}

/// Parses and runs one CLI invocation. Usage errors return 2; any other
/// failure prints a one-line diagnostic and returns 1.
inline int run_cli(int argc, const char *const *argv, std::ostream &out = std::cout,
                   std::ostream &err = std::cerr) {
    CLI::App app{"Learned-kernel splatting: pre-training, training, fitting and rendering",
                 "splatkern"};
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast)->always_capture_default();
    app.require_subcommand(1, 1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    // pretrain
    auto *pre = app.add_subcommand("pretrain", "Pre-train kernel networks on a target profile");
    std::string pre_target = "cosine", pre_mode = "volumetric", pre_out = "nets.bin",
                pre_inputs = "z3d,mu_cam,s,r_cam", pre_config;
    kernel::PretrainConfig pre_cfg;
    pre->add_option("--target", pre_target, "cosine, gaussian, polynomial or linear")
        ->check(CLI::IsMember({"cosine", "gaussian", "polynomial", "linear"}));
    pre->add_option("--mode", pre_mode, "volumetric, planar or image")
        ->check(CLI::IsMember({"volumetric", "planar", "image"}));
    pre->add_option("--out", pre_out, "Network file to write");
    pre->add_option("--iters", pre_cfg.iters, "Optimizer steps");
    pre->add_option("--seed", pre_cfg.seed, "Random seed");
    pre->add_option("--inputs", pre_inputs, "Projection inputs");
    pre->add_option("--warm-restarts", pre_cfg.warm_restarts, "Decoder warm-start candidates");
    pre->add_option("--config", pre_config, "TOML file with any of these flags");

    // gen-scene
    auto *gen = app.add_subcommand("gen-scene", "Ray-cast a synthetic scene");
    GenSceneOptions gen_opts;
    std::string gen_out = "scene", gen_config;
    gen->add_option("--preset", gen_opts.preset, "boxes, spheres-gradient or textured-quad");
    gen->add_option("--views", gen_opts.views, "Number of cameras");
    gen->add_option("--res", gen_opts.resolution, "Image width and height");
    gen->add_option("--seed", gen_opts.seed, "Random seed");
    gen->add_option("--points", gen_opts.points, "Initial point count");
    gen->add_option("--supersample", gen_opts.supersample, "Samples per pixel side");
    gen->add_option("--out", gen_out, "Output directory");
    gen->add_option("--config", gen_config, "TOML file with any of these flags");

    // train / train-planar
    auto *tr = app.add_subcommand("train", "Train a volumetric model on a scene");
    TrainArgs tr_args;
    add_train_options(*tr, tr_args);
    auto *trp = app.add_subcommand("train-planar", "Train a planar (disk) model on a scene");
    TrainArgs trp_args;
    trp_args.target = "gaussian";
    add_train_options(*trp, trp_args);

    // fit-image
    auto *fit = app.add_subcommand("fit-image", "Fit image-space primitives to a PNG");
    std::string fit_input, fit_config, fit_nets, fit_out = "fit", fit_kernel = "learned";
    train::FitImageConfig fit_cfg;
    int fit_pretrain_iters = 20000;
    bool fit_quiet = false;
    fit->add_option("--input", fit_input, "Target PNG")->required();
    fit->add_option("--n", fit_cfg.primitives, "Primitive count");
    fit->add_option("--config", fit_config, "TOML file with any of these flags");
    fit->add_option("--nets", fit_nets, "Pre-trained image decoder from `pretrain --mode image`");
    fit->add_option("--out", fit_out, "Output directory for model.splk and fit.png");
    fit->add_option("--iters", fit_cfg.iters, "Optimizer steps");
    fit->add_option("--seed", fit_cfg.seed, "Random seed");
    fit->add_option("--kernel", fit_kernel, "learned or gaussian")
        ->check(CLI::IsMember({"learned", "gaussian"}));
    fit->add_option("--pretrain-iters", fit_pretrain_iters, "In-process decoder pre-training steps");
    fit->add_option("--init-scale", fit_cfg.init_scale_factor, "Initial radius / mean spacing");
    fit->add_option("--init-opacity", fit_cfg.init_opacity);
    fit->add_option("--ssim-weight", fit_cfg.loss.ssim);
    fit->add_option("--lr-position", fit_cfg.rates.position);
    fit->add_option("--lr-position-final", fit_cfg.rates.position_final);
    fit->add_option("--lr-scale", fit_cfg.rates.log_scale);
    fit->add_option("--lr-rotation", fit_cfg.rates.rotation);
    fit->add_option("--lr-latent", fit_cfg.rates.latent);
    fit->add_option("--lr-opacity", fit_cfg.rates.opacity);
    fit->add_option("--lr-color", fit_cfg.rates.color);
    fit->add_option("--lr-network", fit_cfg.net_rates.start);
    fit->add_option("--lr-network-final", fit_cfg.net_rates.end);
    fit->add_flag("--quiet", fit_quiet);

    // render
    auto *ren = app.add_subcommand("render", "Render a checkpoint to PNG");
    std::string ren_ckpt, ren_cams, ren_scene, ren_out = "render.png", ren_config;
    int ren_index = 0;
    ren->add_option("--checkpoint", ren_ckpt, "Checkpoint file")->required();
    ren->add_option("--camera-index", ren_index, "Index into the camera list");
    ren->add_option("--camera-json", ren_cams, "cameras.json to take the camera from");
    ren->add_option("--scene", ren_scene, "Scene directory whose cameras.json is used");
    ren->add_option("--out", ren_out, "PNG to write");
    ren->add_option("--config", ren_config, "TOML file with any of these flags");

    // eval
    auto *ev = app.add_subcommand("eval", "PSNR/SSIM of a checkpoint on a scene's views");
    std::string ev_ckpt, ev_scene, ev_split = "test", ev_config;
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required();
    ev->add_option("--scene", ev_scene, "Scene directory")->required();
    ev->add_option("--split", ev_split, "test, train or all")
        ->check(CLI::IsMember({"test", "train", "all"}));
    ev->add_option("--config", ev_config, "TOML file with any of these flags");

    // gradcheck
    auto *gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    std::uint64_t gc_seed = 0;
    std::string gc_config;
    gc->add_option("--seed", gc_seed, "Random seed for the test scenes");
    gc->add_option("--config", gc_config, "TOML file with any of these flags");

    // A --config file is expanded into flags placed before the command line,
    // so explicit flags win.
    std::vector<std::string> args(argv + 1, argv + argc);
    std::vector<std::string> final_args;
    try {
        CLI::App *target = nullptr;
        size_t sub_pos = 0;
        for (; sub_pos < args.size(); ++sub_pos) {
            for (auto *s : app.get_subcommands({})) {
                if (s->get_name() == args[sub_pos]) {
                    target = s;
                }
            }
            if (target) {
                break;
            }
        }
        std::string config_path;
        for (size_t i = sub_pos + 1; target && i < args.size(); ++i) {
            if (args[i] == "--config" && i + 1 < args.size()) {
                config_path = args[i + 1];
            } else if (args[i].rfind("--config=", 0) == 0) {
                config_path = args[i].substr(9);
            }
        }
        final_args.assign(args.begin(), args.begin() + std::ptrdiff_t(std::min(sub_pos + 1, args.size())));
        if (!config_path.empty()) {
            const auto extra = detail::config_arguments(config_path, *target);
            final_args.insert(final_args.end(), extra.begin(), extra.end());
        }
        if (sub_pos + 1 < args.size()) {
            final_args.insert(final_args.end(), args.begin() + std::ptrdiff_t(sub_pos + 1), args.end());
        }
        std::reverse(final_args.begin(), final_args.end());
        app.parse(final_args);
    } catch (const CLI::CallForHelp &) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp &) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError &e) {
        err << "splatkern: " << e.what() << '\n';
        const auto subs = app.get_subcommands();
        err << (subs.empty() ? app.help() : subs.front()->help());
        return kUsageExit;
    } catch (const ConfigError &e) {
        err << "splatkern: " << e.what() << '\n';
        return kUsageExit;
    }

    try {
        if (pre->parsed()) {
            const Mode mode = parse_mode(pre_mode);
            double mse = 0;
            const auto nf = pretrain_networks(mode, parse_target(pre_target),
                                              kernel::ProjInputSet::parse(pre_inputs), pre_cfg,
                                              &err, &mse);
            save_networks(nf, pre_out);
            out << "held-out mse " << mse << "\nwrote " << pre_out << '\n';
        } else if (gen->parsed()) {
            gen_scene(gen_opts, gen_out);
            out << "wrote " << gen_opts.views << " views of '" << gen_opts.preset << "' to "
                << gen_out << '\n';
        } else if (tr->parsed()) {
            return run_train(*tr, tr_args, Mode::Volumetric);
        } else if (trp->parsed()) {
            return run_train(*trp, trp_args, Mode::Planar);
        } else if (fit->parsed()) {
            fit_cfg.source = parse_kernel(fit_kernel);
            const auto target = read_png(fit_input);
            std::optional<nn::Mlp<float>> decoder;
            if (fit_cfg.source == kernel::KernelSource::Learned) {
                if (!fit_nets.empty()) {
                    const auto nf = load_networks(fit_nets);
                    if (nf.mode != Mode::Image2D) {
                        throw ConfigError("network file '" + fit_nets + "' is not an image decoder");
                    }
                    decoder = nf.dec;
                } else {
                    kernel::PretrainConfig pc;
                    pc.iters = fit_pretrain_iters;
                    pc.seed = fit_cfg.seed;
                    decoder = pretrain_networks(Mode::Image2D, kernel::ProfileTarget::Gaussian, {},
                                                pc, nullptr)
                                  .dec;
                }
            }
            train::FitObserver obs;
            if (!fit_quiet) {
                obs = [&](int iter, const train::LossReport &l, const Model<float> &) {
                    if (iter % 100 == 0 || iter + 1 == fit_cfg.iters) {
                        err << "iter " << iter << "  loss " << l.total << '\n';
                    }
                };
            }
            const auto r = train::fit_image(target, fit_cfg, decoder, obs);
            detail::ensure_dir(fit_out);
            const auto dir = std::filesystem::path(fit_out);
            save_checkpoint({r.model, detail::effective_config(*fit)},
                            (dir / "model.splk").string());
            const auto st = raster::render_view(
                r.model, nullptr, train::render_options<float>(fit_cfg.tile_size, {0, 0, 0}));
            write_png((dir / "fit.png").string(), st.color());
            out << "psnr " << r.psnr << "  ssim " << r.ssim << "\nwrote " << (dir / "model.splk")
                << " and " << (dir / "fit.png") << '\n';
        } else if (ren->parsed()) {
            const auto ck = load_checkpoint(ren_ckpt);
            const auto opts = train::render_options<float>(16, {0, 0, 0});
            if (ck.model.spec.mode == Mode::Image2D) {
                write_png(ren_out, raster::render_view(ck.model, nullptr, opts).color());
            } else {
                const auto cam = detail::pick_camera(ren_cams, ren_scene, ren_index);
                write_png(ren_out, raster::render_view(ck.model, &cam, opts).color());
            }
            out << "wrote " << ren_out << '\n';
        } else if (ev->parsed()) {
            const auto ck = load_checkpoint(ev_ckpt);
            if (ck.model.spec.mode == Mode::Image2D) {
                throw ConfigError("eval needs a volumetric or planar checkpoint");
            }
            const auto scene = load_scene(ev_scene);
            std::vector<train::View> views;
            if (ev_split != "train") {
                views.insert(views.end(), scene.test.begin(), scene.test.end());
            }
            if (ev_split != "test") {
                views.insert(views.end(), scene.train.begin(), scene.train.end());
            }
            const auto opts = train::render_options<float>(16, {0, 0, 0});
            out << std::left << std::setw(28) << "view" << std::right << std::setw(10) << "psnr"
                << std::setw(10) << "ssim" << '\n';
            out << std::fixed;
            for (const auto &v : views) {
                const auto e = train::evaluate(ck.model, {v}, opts);
                out << std::left << std::setw(28) << v.name << std::right << std::setprecision(3)
                    << std::setw(10) << e.psnr << std::setprecision(4) << std::setw(10) << e.ssim
                    << '\n';
            }
            const auto mean = train::evaluate(ck.model, views, opts);
            out << std::left << std::setw(28) << "mean" << std::right << std::setprecision(3)
                << std::setw(10) << mean.psnr << std::setprecision(4) << std::setw(10) << mean.ssim
                << '\n';
        } else if (gc->parsed()) {
            bool ok = true;
            std::vector<std::pair<std::string, ModelSpec>> specs;
            specs.emplace_back("volumetric", ModelSpec::volumetric());
            specs.emplace_back("planar", ModelSpec::planar());
            specs.emplace_back("image2d", ModelSpec::image2d(32, 32));
            out << std::left << std::setw(12) << "mode" << std::setw(16) << "group" << std::right
                << std::setw(8) << "params" << std::setw(14) << "rel err f64" << std::setw(14)
                << "rel err f32" << '\n';
            for (const auto &[name, spec] : specs) {
                RandomSceneParams p;
                p.seed = gc_seed;
                const auto rep = gradient_check(spec, p);
                for (const auto &g : rep.groups) {
                    out << std::left << std::setw(12) << name << std::setw(16) << g.name
                        << std::right << std::setw(8) << g.count << std::scientific
                        << std::setprecision(2) << std::setw(14) << g.wide_error << std::setw(14)
                        << g.standard_error << std::defaultfloat << '\n';
                }
                ok = ok && rep.passed();
            }
            if (!ok) {
                err << "splatkern: gradient check failed (tolerances 1e-5 wide, 1e-3 float)\n";
                return 1;
            }
            out << "all gradient groups within tolerance\n";
        }
    } catch (const std::exception &e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        err << "splatkern: error: " << msg << '\n';
        return 1;
    }
    return 0;
}

} // namespace splatkern::app
