// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/app/png_io.hpp>
#include <splatkern/app/scene_io.hpp>
#include <splatkern/error.hpp>
#include <splatkern/geom/camera.hpp>
#include <splatkern/raster/composite.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace splatkern::app {

using Vec3d = geom::Vec3<double>;

/// Analytic solids for the ray-cast ground truth. World z is up.
struct Box {
    Vec3d center;
    Vec3d half;
    double yaw = 0; // rotation about z
    Vec3d albedo;
};

struct Sphere {
    Vec3d center;
    double radius = 1;
    Vec3d albedo_low, albedo_high; // blended by the surface normal's z
};

/// Axis-aligned square in the plane z = height with a checker texture.
struct CheckerQuad {
    double half = 0.8;
    double height = 0;
    int cells = 8;
    Vec3d color_a{0.9, 0.85, 0.2};
    Vec3d color_b{0.15, 0.25, 0.7};

    /// Texture color at a point on the quad (x, y in [-half, half]).
    Vec3d texture(double x, double y) const {
        const double cell = 2 * half / cells;
        const int i = std::clamp(int(std::floor((x + half) / cell)), 0, cells - 1);
        const int j = std::clamp(int(std::floor((y + half) / cell)), 0, cells - 1);
        return (i + j) % 2 == 0 ? color_a : color_b;
    }
};

struct AnalyticScene {
    std::vector<Box> boxes;
    std::vector<Sphere> spheres;
    std::optional<CheckerQuad> quad;
    Vec3d bounds_lo{-1, -1, 0}, bounds_hi{1, 1, 1};
    Vec3d light = Vec3d(0.4, -0.3, 0.85).normalized();
    double ambient = 0.35;
};

struct Hit {
    double t = std::numeric_limits<double>::infinity();
    Vec3d normal = Vec3d::UnitZ();
    Vec3d albedo = Vec3d::Zero();
    bool shaded = true; // the quad is unlit so its texture is exact
};

inline void intersect(const Box &b, const Vec3d &o, const Vec3d &d, Hit &hit) {
    const double c = std::cos(b.yaw), s = std::sin(b.yaw);
    // World -> box frame (rotation by -yaw about z).
    auto to_local = [&](const Vec3d &v) { return Vec3d(c * v.x() + s * v.y(), -s * v.x() + c * v.y(), v.z()); };
    const Vec3d lo = to_local(o - b.center), ld = to_local(d);
    double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
    int axis = -1;
    double sign = 0;
    for (int a = 0; a < 3; ++a) {
        if (std::abs(ld[a]) < 1e-12) {
            if (std::abs(lo[a]) > b.half[a]) {
                return;
            }
            continue;
        }
        double ta = (-b.half[a] - lo[a]) / ld[a], tb = (b.half[a] - lo[a]) / ld[a];
        double sa = -1;
        if (ta > tb) {
            std::swap(ta, tb);
            sa = 1;
        }
        if (ta > t0) {
            t0 = ta;
            axis = a;
            sign = sa;
        }
        t1 = std::min(t1, tb);
    }
    if (axis < 0 || t0 > t1 || t0 <= 1e-9 || t0 >= hit.t) {
        return;
    }
    Vec3d ln = Vec3d::Zero();
    ln[axis] = sign;
    hit.t = t0;
    hit.normal = Vec3d(c * ln.x() - s * ln.y(), s * ln.x() + c * ln.y(), ln.z());
    hit.albedo = b.albedo;
    hit.shaded = true;
}

inline void intersect(const Sphere &sp, const Vec3d &o, const Vec3d &d, Hit &hit) {
    const Vec3d oc = o - sp.center;
    const double b = oc.dot(d), cc = oc.squaredNorm() - sp.radius * sp.radius;
    const double disc = b * b - cc;
    if (disc < 0) {
        return;
    }
    const double t = -b - std::sqrt(disc);
    if (t <= 1e-9 || t >= hit.t) {
        return;
    }
    hit.t = t;
    hit.normal = (o + t * d - sp.center) / sp.radius;
    const double w = 0.5 * (hit.normal.z() + 1);
    hit.albedo = (1 - w) * sp.albedo_low + w * sp.albedo_high;
    hit.shaded = true;
}

inline void intersect(const CheckerQuad &q, const Vec3d &o, const Vec3d &d, Hit &hit) {
    if (std::abs(d.z()) < 1e-12) {
        return;
    }
    const double t = (q.height - o.z()) / d.z();
    if (t <= 1e-9 || t >= hit.t) {
        return;
    }
    const Vec3d p = o + t * d;
    if (std::abs(p.x()) > q.half || std::abs(p.y()) > q.half) {
        return;
    }
    hit.t = t;
    hit.normal = Vec3d::UnitZ();
    hit.albedo = q.texture(p.x(), p.y());
    hit.shaded = false;
}

/// Radiance along a ray: Lambert plus ambient, black background.
inline Vec3d trace(const AnalyticScene &scene, const Vec3d &o, const Vec3d &d) {
    Hit hit;
    for (const auto &b : scene.boxes) {
        intersect(b, o, d, hit);
    }
    for (const auto &s : scene.spheres) {
        intersect(s, o, d, hit);
    }
    if (scene.quad) {
        intersect(*scene.quad, o, d, hit);
    }
    if (!std::isfinite(hit.t)) {
        return Vec3d::Zero();
    }
    if (!hit.shaded) {
        return hit.albedo;
    }
    const double lambert = std::max(0.0, hit.normal.dot(scene.light));
    return hit.albedo * (scene.ambient + (1 - scene.ambient) * lambert);
}

/// Ray-cast image with `ss` x `ss` samples per pixel on a regular grid.
inline raster::Image<float> ray_cast(const AnalyticScene &scene, const geom::Camera<double> &cam,
                                     int ss = 3) {
    raster::Image<float> img(cam.width, cam.height, 3);
    const Vec3d origin = cam.center();
    const geom::Mat3<double> cam_to_world = cam.rotation.transpose();
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            Vec3d acc = Vec3d::Zero();
            for (int sy = 0; sy < ss; ++sy) {
                for (int sx = 0; sx < ss; ++sx) {
                    const double px = x + (sx + 0.5) / ss, py = y + (sy + 0.5) / ss;
                    const Vec3d d = (cam_to_world * cam.ray_direction(px, py)).normalized();
                    acc += trace(scene, origin, d);
                }
            }
            acc /= double(ss * ss);
            for (int ch = 0; ch < 3; ++ch) {
                img.at(x, y, ch) = float(std::clamp(acc[ch], 0.0, 1.0));
            }
        }
    }
    return img;
}

inline const std::vector<std::string> &scene_presets() {
    static const std::vector<std::string> names = {"boxes", "spheres-gradient", "textured-quad"};
    return names;
}

inline AnalyticScene make_preset(const std::string &name) {
    AnalyticScene s;
    if (name == "boxes") {
        s.boxes.push_back({{0, 0, -0.05}, {1.0, 1.0, 0.05}, 0.0, {0.55, 0.55, 0.5}});
        s.boxes.push_back({{-0.45, -0.35, 0.25}, {0.25, 0.2, 0.25}, 0.4, {0.85, 0.25, 0.2}});
        s.boxes.push_back({{0.4, -0.3, 0.15}, {0.2, 0.3, 0.15}, -0.3, {0.2, 0.6, 0.3}});
        s.boxes.push_back({{0.1, 0.45, 0.35}, {0.18, 0.18, 0.35}, 0.9, {0.25, 0.35, 0.85}});
        s.boxes.push_back({{-0.5, 0.45, 0.1}, {0.15, 0.25, 0.1}, 0.2, {0.9, 0.8, 0.3}});
        s.bounds_lo = {-1.0, -1.0, -0.1};
        s.bounds_hi = {1.0, 1.0, 0.75};
    } else if (name == "spheres-gradient") {
        s.boxes.push_back({{0, 0, -0.05}, {1.0, 1.0, 0.05}, 0.0, {0.5, 0.5, 0.55}});
        s.spheres.push_back({{-0.4, -0.2, 0.35}, 0.35, {0.6, 0.1, 0.1}, {1.0, 0.7, 0.3}});
        s.spheres.push_back({{0.45, -0.1, 0.25}, 0.25, {0.1, 0.2, 0.6}, {0.4, 0.9, 1.0}});
        s.spheres.push_back({{0.0, 0.5, 0.3}, 0.3, {0.1, 0.5, 0.1}, {0.8, 1.0, 0.4}});
        s.bounds_lo = {-1.0, -1.0, -0.1};
        s.bounds_hi = {1.0, 1.0, 0.8};
    } else if (name == "textured-quad") {
        s.quad = CheckerQuad{};
        s.bounds_lo = {-0.8, -0.8, -0.05};
        s.bounds_hi = {0.8, 0.8, 0.05};
    } else {
        std::string list;
        for (const auto &p : scene_presets()) {
            list += (list.empty() ? "" : ", ") + p;
        }
        throw ConfigError("unknown scene preset '" + name + "' (expected one of: " + list + ")");
    }
    return s;
}

struct GenSceneOptions {
    std::string preset = "boxes";
    int views = 25;
    int resolution = 64;
    std::uint64_t seed = 1;
    int points = 1000;
    double distance = 3.2;
    double fov_degrees = 45;
    int supersample = 3;
    int test_every = 5; // every n-th view (1-based) goes to the test split
};

/// Cameras on the upper hemisphere (elevation 15 to 75 degrees) looking at the origin.
inline std::vector<geom::Camera<double>> hemisphere_cameras(const GenSceneOptions &o) {
    std::mt19937_64 rng(o.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double lo = std::sin(15.0 * M_PI / 180), hi = std::sin(75.0 * M_PI / 180);
    const double focal = 0.5 * o.resolution / std::tan(0.5 * o.fov_degrees * M_PI / 180);
    std::vector<geom::Camera<double>> cams;
    for (int i = 0; i < o.views; ++i) {
        // Uniform in solid angle over the elevation band.
        const double z = lo + (hi - lo) * u(rng);
        const double phi = 2 * M_PI * u(rng);
        const double r = std::sqrt(1 - z * z);
        const Vec3d eye = o.distance * Vec3d(r * std::cos(phi), r * std::sin(phi), z);
        cams.push_back(geom::look_at<double>(eye, Vec3d(0, 0, 0.2), Vec3d::UnitZ(), o.resolution,
                                             o.resolution, focal));
    }
    return cams;
}

/// Renders a preset and writes cameras.json, images/*.png and points.txt.
inline void gen_scene(const GenSceneOptions &o, const std::string &out_dir) {
    namespace fs = std::filesystem;
    const AnalyticScene scene = make_preset(o.preset);
    if (o.views < 1 || o.resolution < 1 || o.points < 1 || o.supersample < 1) {
        throw ConfigError("views, resolution, points and supersample must be positive");
    }
    fs::create_directories(fs::path(out_dir) / "images");
    const auto cams = hemisphere_cameras(o);
    std::vector<CameraRecord> records;
    for (size_t i = 0; i < cams.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof name, "images/view_%03zu.png", i);
        write_png((fs::path(out_dir) / name).string(), ray_cast(scene, cams[i], o.supersample));
        const bool test = o.test_every > 0 && (i + 1) % size_t(o.test_every) == 0;
        records.push_back(CameraRecord::from_camera(cams[i], name, test ? "test" : "train"));
    }
    {
        std::ofstream os(fs::path(out_dir) / "cameras.json", std::ios::binary);
        os << serialize_cameras(records);
        if (!os) {
            throw Error("cannot write cameras.json in '" + out_dir + "'");
        }
    }
    std::mt19937_64 rng(o.seed ^ 0xA5A5A5A5ULL);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<geom::Vec3<float>> pts;
    for (int i = 0; i < o.points; ++i) {
        const Vec3d p = scene.bounds_lo.array() +
                        (scene.bounds_hi - scene.bounds_lo).array() * Vec3d(u(rng), u(rng), u(rng)).array();
        pts.push_back(p.cast<float>());
    }
    write_points((fs::path(out_dir) / "points.txt").string(), pts, {});
}

} // namespace splatkern::app
