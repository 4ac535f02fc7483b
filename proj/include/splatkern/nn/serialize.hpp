// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/binary_io.hpp>
#include <splatkern/nn/mlp.hpp>

namespace splatkern::nn {

/// Layout: u32 layer count, u32 dims[layer count + 1], then per layer the
/// row-major weight and the bias as little-endian f32. Activations are not
/// stored; they are implied by the network's role.
inline void write_mlp(std::ostream &os, const Mlp<float> &net) {
    io::write_u32(os, std::uint32_t(net.layer_count()));
    for (int d : net.dims()) {
        io::write_u32(os, std::uint32_t(d));
    }
    for (const auto &l : net.layers) {
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) {
                io::write_f32(os, l.weight(r, c));
            }
        }
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) {
            io::write_f32(os, l.bias[r]);
        }
    }
}

inline size_t serialized_mlp_bytes(const Mlp<float> &net) {
    return 4 * (1 + net.dims().size() + net.parameter_count());
}

inline Mlp<float> read_mlp(std::istream &is, bool final_sigmoid) {
    const std::uint32_t count = io::read_u32(is);
    if (count == 0 || count > 64) {
        throw ShapeError("implausible network layer count " + std::to_string(count));
    }
    std::vector<int> dims(count + 1);
    for (auto &d : dims) {
        d = int(io::read_u32(is));
        if (d <= 0 || d > 65536) {
            throw ShapeError("implausible network width " + std::to_string(d));
        }
    }
    Mlp<float> net;
    net.final_sigmoid = final_sigmoid;
    for (std::uint32_t i = 0; i < count; ++i) {
        DenseLayer<float> l{Matrix<float>(dims[i + 1], dims[i]), Vector<float>(dims[i + 1])};
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) {
                l.weight(r, c) = io::read_f32(is);
            }
        }
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) {
            l.bias[r] = io::read_f32(is);
        }
        net.layers.push_back(std::move(l));
    }
    return net;
}

} // namespace splatkern::nn
