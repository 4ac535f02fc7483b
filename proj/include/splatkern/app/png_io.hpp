// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/error.hpp>
#include <splatkern/raster/composite.hpp>

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

namespace splatkern::app {

/// Loads an 8- or 16-bit PNG as linear RGB in [0, 1]. Gray and palette
/// images are expanded; alpha is dropped.
inline raster::Image<float> read_png(const std::string &path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str())) {
        throw ParseError("cannot read PNG '" + path + "': " + img.message);
    }
    img.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw ParseError("cannot decode PNG '" + path + "': " + msg);
    }
    raster::Image<float> out(int(img.width), int(img.height), 3);
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = float(buf[i]) / 255.f;
    }
    return out;
}

/// Writes an RGB image, clamping to [0, 1] and rounding to 8 bits.
template <typename T> void write_png(const std::string &path, const raster::Image<T> &image) {
    if (image.channels != 3 || image.width < 1 || image.height < 1) {
        throw ShapeError("write_png needs a non-empty RGB image");
    }
    std::vector<unsigned char> buf(image.data.size());
    for (size_t i = 0; i < buf.size(); ++i) {
        const double v = std::clamp(double(image.data[i]), 0.0, 1.0);
        buf[i] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = png_uint_32(image.width);
    img.height = png_uint_32(image.height);
    img.format = PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
        throw Error("cannot write PNG '" + path + "': " + img.message);
    }
}

} // namespace splatkern::app
