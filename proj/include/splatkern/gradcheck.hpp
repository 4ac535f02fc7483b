// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/model.hpp>
#include <splatkern/random_scene.hpp>
#include <splatkern/raster/render.hpp>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace splatkern {

struct GradCheckGroup {
    std::string name;
    size_t count = 0;
    double wide_error = 0;     // double analytic vs double central differences
    double standard_error = 0; // float analytic vs the same double reference
};

struct GradCheckReport {
    std::string mode;
    std::vector<GradCheckGroup> groups;
    int masked_pixels = 0;
    int total_pixels = 0;

    bool passed(double wide_tol = 1e-5, double standard_tol = 1e-3) const {
        for (const auto &g : groups) {
            if (!(g.wide_error <= wide_tol) || !(g.standard_error <= standard_tol)) {
                return false;
            }
        }
        return !groups.empty();
    }
};

/// Norm-wise relative error |a - b| / max(|b|, floor).
inline double relative_error(const std::vector<double> &a, const std::vector<double> &b,
                             double floor = 1e-12) {
    double diff = 0, ref = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        ref += b[i] * b[i];
    }
    return std::sqrt(diff) / std::max(std::sqrt(ref), floor);
}

/// Pixels whose centre lies within half a pixel of some splat's support
/// boundary. The rendered image is discontinuous there, so central
/// differences are meaningless and those pixels get zero loss weight.
template <typename T>
std::vector<std::uint8_t> support_boundary_mask(const Model<T> &model,
                                                const raster::ViewState<T> &st, int width,
                                                int height) {
    std::vector<std::uint8_t> mask(size_t(width) * size_t(height), 0);
    auto mark = [&](const raster::PixelRect &r, auto &&near_boundary) {
        for (int y = r.y0; y < r.y1; ++y) {
            for (int x = r.x0; x < r.x1; ++x) {
                if (near_boundary(x, y)) {
                    mask[size_t(y) * size_t(width) + size_t(x)] = 1;
                }
            }
        }
    };
    switch (model.spec.mode) {
    case Mode::Volumetric: {
        const auto &ker = st.volumetric.kernel;
        for (int i = 0; i < ker.size(); ++i) {
            const auto &q = ker.conics[size_t(i)];
            Eigen::Matrix2d conic;
            conic << double(q.a), double(q.b), double(q.b), double(q.c);
            // |grad_pixel r| <= sqrt(lambda_max(conic)) = 1 / minor axis in pixels
            const double slope = std::sqrt(Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(
                                               conic, Eigen::EigenvaluesOnly)
                                               .eigenvalues()
                                               .maxCoeff());
            mark(ker.rect(i), [&](int x, int y) {
                const double r = std::sqrt(double(ker.r_sq(i, x, y)));
                return std::abs(r - 1.0) < 0.5 * slope;
            });
        }
        break;
    }
    case Mode::Image2D: {
        const auto &ker = st.image.kernel;
        for (int i = 0; i < ker.size(); ++i) {
            const double slope =
                1.0 / double(std::min(ker.su[size_t(i)], ker.sv[size_t(i)]));
            mark(ker.rect(i), [&](int x, int y) {
                T u, v;
                ker.local(i, x, y, u, v);
                const double r = std::sqrt(double(u * u + v * v));
                return std::abs(r - 1.0) < 0.5 * slope;
            });
        }
        break;
    }
    case Mode::Planar: {
        // No closed-form slope under perspective: probe a ring of radius 0.5 px.
        const auto &ker = st.planar.kernel;
        for (int i = 0; i < ker.size(); ++i) {
            auto inside = [&](double fx, double fy) {
                const auto dir = ker.cam.ray_direction(T(fx), T(fy));
                const auto s = geom::intersect_disk_cam(dir, ker.mu_cam[size_t(i)],
                                                        ker.tu_cam[size_t(i)],
                                                        ker.tv_cam[size_t(i)]);
                return s && s->hit.u * s->hit.u + s->hit.v * s->hit.v <= T(1);
            };
            mark(ker.rect(i), [&](int x, int y) {
                const double cx = x + 0.5, cy = y + 0.5;
                const bool centre = inside(cx, cy);
                for (int a = 0; a < 16; ++a) {
                    const double phi = a * 3.14159265358979323846 / 8.0;
                    if (inside(cx + 0.5 * std::cos(phi), cy + 0.5 * std::sin(phi)) != centre) {
                        return true;
                    }
                }
                return false;
            });
        }
        break;
    }
    }
    return mask;
}

namespace detail {

/// Mutable views of every checked parameter group of a model, in a fixed order.
template <typename T> struct ParamGroups {
    std::vector<std::string> names;
    std::vector<std::vector<T *>> params;
};

template <typename T> ParamGroups<T> param_groups(Model<T> &m) {
    ParamGroups<T> out;
    for (Group g : kAllGroups) {
        if (g == Group::Latent && !m.spec.uses_decoder()) {
            continue; // latents are unused by the frozen baseline
        }
        std::vector<T *> ptrs;
        for (auto &v : m.prims.data[size_t(g)]) {
            ptrs.push_back(&v);
        }
        out.names.emplace_back(group_name(g));
        out.params.push_back(std::move(ptrs));
    }
    auto add_net = [&](nn::Mlp<T> &net, const char *name) {
        if (net.layers.empty()) {
            return;
        }
        std::vector<T *> ptrs;
        for (size_t i = 0; i < net.parameter_count(); ++i) {
            ptrs.push_back(&net.parameter(i));
        }
        out.names.emplace_back(name);
        out.params.push_back(std::move(ptrs));
    };
    add_net(m.proj, "phi_proj");
    add_net(m.dec, "phi_dec");
    return out;
}

template <typename T> std::vector<std::vector<double>> flatten_grads(ModelGrads<T> &g,
                                                                     const Model<T> &m) {
    std::vector<std::vector<double>> out;
    for (Group grp : kAllGroups) {
        if (grp == Group::Latent && !m.spec.uses_decoder()) {
            continue;
        }
        const auto &d = g.prims.data[size_t(grp)];
        out.emplace_back(d.begin(), d.end());
    }
    if (!m.proj.layers.empty()) {
        const auto f = g.proj.flatten();
        out.emplace_back(f.begin(), f.end());
    }
    if (!m.dec.layers.empty()) {
        const auto f = g.dec.flatten();
        out.emplace_back(f.begin(), f.end());
    }
    return out;
}

template <typename T>
double weighted_loss(const raster::Image<T> &img, const raster::Image<double> &w) {
    double acc = 0;
    for (size_t i = 0; i < img.data.size(); ++i) {
        acc += double(img.data[i]) * w.data[i];
    }
    return acc;
}

} // namespace detail

/// Checks the analytic gradient of L = sum(w * image) for a random scene
/// against central differences on every parameter group.
inline GradCheckReport gradient_check(const ModelSpec &spec, const RandomSceneParams &params,
                                      double step = 1e-6) {
    auto scene = random_scene<double>(spec, params);
    auto &model = scene.model;
    const auto &cam = scene.camera;
    const auto *cam_ptr = spec.mode == Mode::Image2D ? nullptr : &cam;
    const int width = params.width, height = params.height;
    raster::RenderOptions<double> opts;

    GradCheckReport report;
    report.mode = mode_name(spec.mode);
    report.total_pixels = width * height;

    const auto base = raster::render_view(model, cam_ptr, opts);
    const auto mask = support_boundary_mask(model, base, width, height);
    raster::Image<double> weights(width, height, 3);
    std::mt19937_64 rng(params.seed ^ 0x5eedULL);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const bool masked = mask[size_t(y) * size_t(width) + size_t(x)] != 0;
            report.masked_pixels += masked ? 1 : 0;
            for (int ch = 0; ch < 3; ++ch) {
                const double w = unit(rng);
                weights.at(x, y, ch) = masked ? 0.0 : w;
            }
        }
    }

    auto grads = ModelGrads<double>::zeros_like(model);
    raster::render_view_backward(model, cam_ptr, base, weights, opts, grads);
    const auto wide = detail::flatten_grads(grads, model);

    const auto model_f = model.cast<float>();
    const auto cam_f = cam.cast<float>();
    const auto *cam_f_ptr = spec.mode == Mode::Image2D ? nullptr : &cam_f;
    raster::RenderOptions<float> opts_f;
    const auto base_f = raster::render_view(model_f, cam_f_ptr, opts_f);
    auto grads_f = ModelGrads<float>::zeros_like(model_f);
    raster::render_view_backward(model_f, cam_f_ptr, base_f, weights.cast<float>(), opts_f,
                                 grads_f);
    const auto standard = detail::flatten_grads(grads_f, model_f);

    auto groups = detail::param_groups(model);
    for (size_t g = 0; g < groups.names.size(); ++g) {
        std::vector<double> fd(groups.params[g].size());
        for (size_t i = 0; i < fd.size(); ++i) {
            double &p = *groups.params[g][i];
            const double saved = p;
            p = saved + step;
            const double plus =
                detail::weighted_loss(raster::render_view(model, cam_ptr, opts).color(), weights);
            p = saved - step;
            const double minus =
                detail::weighted_loss(raster::render_view(model, cam_ptr, opts).color(), weights);
            p = saved;
            fd[i] = (plus - minus) / (2 * step);
        }
        GradCheckGroup r;
        r.name = groups.names[g];
        r.count = fd.size();
        r.wide_error = relative_error(wide[g], fd);
        r.standard_error = relative_error(standard[g], fd);
        report.groups.push_back(r);
    }
    return report;
}

} // namespace splatkern
