// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/error.hpp>
#include <splatkern/kernel/field.hpp>
#include <splatkern/kernel/inputs.hpp>
#include <splatkern/nn/mlp.hpp>
#include <splatkern/raster/sh.hpp>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace splatkern {

enum class Mode : std::uint32_t { Volumetric = 0, Planar = 1, Image2D = 2 };

inline const char *mode_name(Mode m) {
    switch (m) {
    case Mode::Volumetric:
        return "volumetric";
    case Mode::Planar:
        return "planar";
    case Mode::Image2D:
        return "image2d";
    }
    return "unknown";
}

/// Per-primitive parameter groups. Each has its own optimizer state and rate.
enum class Group : int { Position = 0, LogScale, Rotation, Latent, OpacityLogit, Color };
inline constexpr int kGroupCount = 6;
inline constexpr std::array<Group, kGroupCount> kAllGroups = {
    Group::Position, Group::LogScale,     Group::Rotation,
    Group::Latent,   Group::OpacityLogit, Group::Color};

inline const char *group_name(Group g) {
    switch (g) {
    case Group::Position:
        return "position";
    case Group::LogScale:
        return "log_scale";
    case Group::Rotation:
        return "rotation";
    case Group::Latent:
        return "latent";
    case Group::OpacityLogit:
        return "opacity_logit";
    case Group::Color:
        return "color";
    }
    return "unknown";
}

/// Shape of a model: everything needed to interpret the parameter arrays.
struct ModelSpec {
    Mode mode = Mode::Volumetric;
    int latent_dim = 5; // z3d (volumetric), pre-projection latent (planar), latent (image2d)
    int code_dim = 5;   // decoder-side latent: z2d, or z_after for planar
    int sh_degree = 0;
    int k = 2;
    kernel::ProjInputSet inputs;
    kernel::KernelSource source = kernel::KernelSource::Learned;
    double mu_scale = 1.0;
    int width = 0, height = 0; // canvas size in image2d mode

    static ModelSpec volumetric(int k = 2, int sh_degree = 0) {
        ModelSpec s;
        s.k = k;
        s.sh_degree = sh_degree;
        return s;
    }
    static ModelSpec planar(int sh_degree = 0) {
        ModelSpec s;
        s.mode = Mode::Planar;
        s.latent_dim = 10;
        s.code_dim = 10;
        s.sh_degree = sh_degree;
        return s;
    }
    static ModelSpec image2d(int width, int height) {
        ModelSpec s;
        s.mode = Mode::Image2D;
        s.latent_dim = 10;
        s.code_dim = 10;
        s.width = width;
        s.height = height;
        return s;
    }

    int scale_dim() const { return mode == Mode::Volumetric ? 3 : 2; }

    int group_dim(Group g) const {
        switch (g) {
        case Group::Position:
            return mode == Mode::Image2D ? 2 : 3;
        case Group::LogScale:
            return scale_dim();
        case Group::Rotation:
            return mode == Mode::Image2D ? 1 : 4;
        case Group::Latent:
            return latent_dim;
        case Group::OpacityLogit:
            return 1;
        case Group::Color:
            return mode == Mode::Image2D ? 3 : 3 * raster::sh_coeff_count(sh_degree);
        }
        return 0;
    }

    bool uses_projection() const {
        return mode != Mode::Image2D && source == kernel::KernelSource::Learned;
    }
    bool uses_decoder() const { return source == kernel::KernelSource::Learned; }

    int proj_input_dim() const { return inputs.dim(latent_dim, scale_dim()); }

    void validate() const {
        if (latent_dim < 1 || code_dim < 1) {
            throw ConfigError("latent dimensions must be positive");
        }
        if (mode == Mode::Volumetric && k < 2) {
            throw ConfigError("profile needs at least 2 samples, got " + std::to_string(k));
        }
        raster::sh_coeff_count(sh_degree);
        if (mode == Mode::Image2D) {
            if (width < 1 || height < 1) {
                throw ConfigError("image canvas must be non-empty");
            }
            if (code_dim != latent_dim) {
                throw ConfigError("image mode decodes the latent directly (code_dim == latent_dim)");
            }
        }
    }
};

/// Structure-of-arrays primitive storage, one contiguous array per group.
template <typename T> struct PrimitiveTable {
    int count = 0;
    std::array<int, kGroupCount> dims{};
    std::array<std::vector<T>, kGroupCount> data;

    void reset(const ModelSpec &spec, int n) {
        count = n;
        for (Group g : kAllGroups) {
            const auto gi = size_t(g);
            dims[gi] = spec.group_dim(g);
            data[gi].assign(size_t(n) * size_t(dims[gi]), T(0));
        }
    }

    int dim(Group g) const { return dims[size_t(g)]; }
    T *row(Group g, int i) { return data[size_t(g)].data() + size_t(i) * size_t(dim(g)); }
    const T *row(Group g, int i) const {
        return data[size_t(g)].data() + size_t(i) * size_t(dim(g));
    }
    std::span<T> group(Group g) { return data[size_t(g)]; }
    std::span<const T> group(Group g) const { return data[size_t(g)]; }

    void resize(int n) {
        count = n;
        for (Group g : kAllGroups) {
            data[size_t(g)].resize(size_t(n) * size_t(dim(g)), T(0));
        }
    }

    /// Copies every group of primitive `src` over primitive `dst`.
    void copy_row(int src, int dst) {
        for (Group g : kAllGroups) {
            const int d = dim(g);
            std::copy_n(row(g, src), d, row(g, dst));
        }
    }

    template <typename U> PrimitiveTable<U> cast() const {
        PrimitiveTable<U> out;
        out.count = count;
        out.dims = dims;
        for (size_t g = 0; g < data.size(); ++g) {
            out.data[g].assign(data[g].begin(), data[g].end());
        }
        return out;
    }
};

template <typename T> struct Model {
    ModelSpec spec;
    PrimitiveTable<T> prims;
    nn::Mlp<T> proj; // empty when the mode or kernel source does not use it
    nn::Mlp<T> dec;

    int size() const { return prims.count; }

    template <typename U> Model<U> cast() const {
        Model<U> out;
        out.spec = spec;
        out.prims = prims.template cast<U>();
        out.proj = proj.template cast<U>();
        out.dec = dec.template cast<U>();
        return out;
    }

    /// Every network parameter, projection network first.
    std::vector<T> network_parameters() const {
        std::vector<T> out = proj.flatten();
        const auto d = dec.flatten();
        out.insert(out.end(), d.begin(), d.end());
        return out;
    }

    void validate() const {
        spec.validate();
        for (Group g : kAllGroups) {
            if (prims.dim(g) != spec.group_dim(g) ||
                prims.data[size_t(g)].size() != size_t(prims.count) * size_t(prims.dim(g))) {
                throw ShapeError(std::string("parameter group '") + group_name(g) +
                                 "' does not match the model shape");
            }
        }
        if (spec.uses_projection()) {
            proj.validate();
            if (proj.input_dim() != spec.proj_input_dim() || proj.output_dim() != spec.code_dim) {
                throw ConfigError("projection network is " + std::to_string(proj.input_dim()) +
                                  " -> " + std::to_string(proj.output_dim()) + ", expected " +
                                  std::to_string(spec.proj_input_dim()) + " -> " +
                                  std::to_string(spec.code_dim));
            }
        }
        if (spec.uses_decoder()) {
            dec.validate();
            const int coords = spec.mode == Mode::Volumetric ? 1 : 2;
            if (dec.input_dim() != coords + spec.code_dim || dec.output_dim() != 1) {
                throw ConfigError("decoder network has input " + std::to_string(dec.input_dim()) +
                                  ", expected " + std::to_string(coords + spec.code_dim));
            }
        }
    }
};

/// Fresh networks for a spec (Kaiming init); empty when unused.
template <typename T> void init_networks(Model<T> &model, std::uint64_t seed) {
    const auto &s = model.spec;
    model.proj = {};
    model.dec = {};
    if (s.uses_projection()) {
        model.proj = kernel::make_projection_net<T>(s.proj_input_dim(), s.code_dim, seed);
    }
    if (s.uses_decoder()) {
        model.dec = s.mode == Mode::Volumetric
                        ? kernel::make_decoder_net<T>(s.code_dim, seed + 1)
                        : kernel::make_planar_decoder_net<T>(s.code_dim, seed + 1);
    }
}

/// Gradients with the same layout as a model.
template <typename T> struct ModelGrads {
    PrimitiveTable<T> prims;
    nn::MlpGrads<T> proj;
    nn::MlpGrads<T> dec;

    static ModelGrads zeros_like(const Model<T> &m) {
        ModelGrads g;
        g.prims.reset(m.spec, m.prims.count);
        g.proj = nn::MlpGrads<T>::zeros_like(m.proj);
        g.dec = nn::MlpGrads<T>::zeros_like(m.dec);
        return g;
    }

    void set_zero() {
        for (auto &d : prims.data) {
            std::fill(d.begin(), d.end(), T(0));
        }
        proj.set_zero();
        dec.set_zero();
    }
};

} // namespace splatkern
