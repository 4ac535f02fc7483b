// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <span>

namespace splatkern::kernel {

/// Opacity of a radially symmetric kernel given its k uniform samples in r
/// (r_i = i / (k - 1)), linearly interpolated in r. Zero outside r^2 > 1.
template <typename T> T eval_kernel(std::span<const T> profile, T r_sq) {
    if (r_sq > T(1)) {
        return T(0);
    }
    const int k = int(profile.size());
    const T r = std::sqrt(std::max(r_sq, T(0)));
    const T pos = r * T(k - 1);
    const int c = std::min(int(pos), k - 2);
    const T lambda = pos - T(c);
    return (T(1) - lambda) * profile[c] + lambda * profile[c + 1];
}

template <typename T> struct KernelGrad {
    int segment = 0; // index c of the left sample
    T d_left = T(0);  // dL/dd_c
    T d_right = T(0); // dL/dd_{c+1}
    T d_r_sq = T(0);
};

/// Backward of eval_kernel for an upstream gradient `dd`. The r^2 gradient
/// is defined as zero at r^2 = 0, where the square root is not differentiable.
template <typename T> KernelGrad<T> eval_kernel_backward(std::span<const T> profile, T r_sq, T dd) {
    KernelGrad<T> g;
    if (r_sq > T(1)) {
        return g;
    }
    const int k = int(profile.size());
    const T r = std::sqrt(std::max(r_sq, T(0)));
    const T pos = r * T(k - 1);
    const int c = std::min(int(pos), k - 2);
    const T lambda = pos - T(c);
    g.segment = c;
    g.d_left = (T(1) - lambda) * dd;
    g.d_right = lambda * dd;
    if (r > T(0)) {
        const T slope = (profile[c + 1] - profile[c]) * T(k - 1); // dd/dr
        g.d_r_sq = dd * slope / (T(2) * r);
    }
    return g;
}

} // namespace splatkern::kernel
