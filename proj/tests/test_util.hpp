// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/geom/rotation.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace splatkern::testing {

/// Central difference of a scalar function of one perturbed variable.
inline double central_diff(const std::function<double(double)> &f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

/// ||a - b|| / max(||b||, floor), the norm-wise relative error of a gradient block.
inline double relative_error(const std::vector<double> &a, const std::vector<double> &b,
                             double floor = 1e-12) {
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    return std::sqrt(num) / std::max(std::sqrt(den), floor);
}

inline geom::Quaternion<double> random_quat(std::mt19937_64 &rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    geom::Quaternion<double> q{n(rng), n(rng), n(rng), n(rng)};
    return q.normalized();
}

inline double uniform(std::mt19937_64 &rng, double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

} // namespace splatkern::testing
