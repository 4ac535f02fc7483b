// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/error.hpp>
#include <splatkern/geom/camera.hpp>
#include <splatkern/model.hpp>
#include <splatkern/raster/common.hpp>
#include <splatkern/raster/image2d.hpp>
#include <splatkern/raster/planar.hpp>
#include <splatkern/raster/volumetric.hpp>

#include <type_traits>

namespace splatkern::raster {

/// Result of one forward render. Holds pointers into the model's networks,
/// so it must not outlive the model it was rendered from.
template <typename T> struct ViewState {
    Mode mode = Mode::Volumetric;
    VolumetricView<T> volumetric;
    PlanarView<T> planar;
    Image2DView<T> image;
    RenderBuffers<T> buffers;
    RenderStats stats;

    const Image<T> &color() const { return buffers.color; }
};

/// Renders `model` from `cam`. Image mode ignores the camera (pass nullptr)
/// and renders onto the model's canvas.
template <typename T>
ViewState<T> render_view(const Model<T> &model, const std::type_identity_t<geom::Camera<T>> *cam,
                         const RenderOptions<T> &opts = {}) {
    ViewState<T> st;
    st.mode = model.spec.mode;
    switch (model.spec.mode) {
    case Mode::Volumetric:
    case Mode::Planar: {
        if (!cam) {
            throw ConfigError(std::string(mode_name(model.spec.mode)) + " rendering needs a camera");
        }
        cam->validate();
        if (model.spec.mode == Mode::Volumetric) {
            prepare_volumetric(model, *cam, opts, st.volumetric, st.stats);
            st.buffers = rasterize(st.volumetric.kernel, st.volumetric.bins, cam->width,
                                   cam->height, opts);
        } else {
            prepare_planar(model, *cam, opts, st.planar, st.stats);
            st.buffers =
                rasterize(st.planar.kernel, st.planar.bins, cam->width, cam->height, opts);
        }
        break;
    }
    case Mode::Image2D:
        prepare_image2d(model, opts, st.image, st.stats);
        st.buffers = rasterize(st.image.kernel, st.image.bins, model.spec.width,
                               model.spec.height, opts);
        break;
    }
    return st;
}

/// Accumulates dL/dparameters for an upstream image gradient into `grads`.
template <typename T>
void render_view_backward(const Model<T> &model,
                          const std::type_identity_t<geom::Camera<T>> *cam,
                          const ViewState<T> &st, const Image<T> &d_image,
                          const RenderOptions<T> &opts, ModelGrads<T> &grads) {
    if (st.mode != model.spec.mode) {
        throw ShapeError("view state was rendered in a different mode");
    }
    switch (st.mode) {
    case Mode::Volumetric: {
        const auto s =
            rasterize_backward(st.volumetric.kernel, st.volumetric.bins, st.buffers, d_image, opts);
        volumetric_backward(model, *cam, st.volumetric, s, grads);
        break;
    }
    case Mode::Planar: {
        const auto s =
            rasterize_backward(st.planar.kernel, st.planar.bins, st.buffers, d_image, opts);
        planar_backward(model, *cam, st.planar, s, grads);
        break;
    }
    case Mode::Image2D: {
        const auto s = rasterize_backward(st.image.kernel, st.image.bins, st.buffers, d_image, opts);
        image2d_backward(model, st.image, s, grads);
        break;
    }
    }
}

} // namespace splatkern::raster
