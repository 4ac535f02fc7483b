// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/app/png_io.hpp>
#include <splatkern/error.hpp>
#include <splatkern/geom/camera.hpp>
#include <splatkern/train/trainer.hpp>

#include <json.hpp>

#include <array>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace splatkern::app {

/// One entry of cameras.json.
struct CameraRecord {
    std::string image; // relative to the scene directory
    int width = 0, height = 0;
    double fx = 0, fy = 0, cx = 0, cy = 0;
    std::array<double, 16> world_to_cam{};
    std::string split = "train";

    geom::Camera<float> camera() const {
        geom::Camera<float> c;
        c.width = width;
        c.height = height;
        c.fx = float(fx);
        c.fy = float(fy);
        c.cx = float(cx);
        c.cy = float(cy);
        std::array<float, 16> m{};
        for (size_t i = 0; i < 16; ++i) {
            m[i] = float(world_to_cam[i]);
        }
        c.set_world_to_cam(m);
        return c;
    }

    static CameraRecord from_camera(const geom::Camera<double> &c, std::string image,
                                    std::string split) {
        CameraRecord r;
        r.image = std::move(image);
        r.split = std::move(split);
        r.width = c.width;
        r.height = c.height;
        r.fx = c.fx;
        r.fy = c.fy;
        r.cx = c.cx;
        r.cy = c.cy;
        r.world_to_cam = c.world_to_cam();
        return r;
    }

    bool operator==(const CameraRecord &) const = default;
};

namespace detail {

/// "path:line:col" for a byte offset into `text`.
inline std::string position(const std::string &path, const std::string &text, size_t byte) {
    size_t line = 1, col = 1;
    for (size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return path + ":" + std::to_string(line) + ":" + std::to_string(col);
}

inline std::string read_text(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw ParseError("cannot open '" + path + "'");
    }
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

} // namespace detail

/// Parses a cameras.json document. `path` is only used in messages.
inline std::vector<CameraRecord> parse_cameras(const std::string &text,
                                               const std::string &path = "cameras.json") {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error &e) {
        throw ParseError(detail::position(path, text, e.byte == 0 ? 0 : e.byte - 1) +
                         ": malformed JSON: " + e.what());
    }
    if (!doc.is_array()) {
        throw ParseError(path + ": expected a list of cameras");
    }
    std::vector<CameraRecord> out;
    for (size_t i = 0; i < doc.size(); ++i) {
        const auto &e = doc[i];
        const std::string where = path + ": camera " + std::to_string(i);
        try {
            CameraRecord r;
            r.image = e.at("image").get<std::string>();
            r.width = e.at("width").get<int>();
            r.height = e.at("height").get<int>();
            r.fx = e.at("fx").get<double>();
            r.fy = e.at("fy").get<double>();
            r.cx = e.at("cx").get<double>();
            r.cy = e.at("cy").get<double>();
            const auto &m = e.at("world_to_cam");
            if (!m.is_array() || m.size() != 16) {
                throw ParseError(where + ": world_to_cam must hold 16 numbers");
            }
            for (size_t k = 0; k < 16; ++k) {
                r.world_to_cam[k] = m[k].get<double>();
            }
            r.split = e.value("split", std::string("train"));
            if (r.split != "train" && r.split != "test") {
                throw ParseError(where + ": split must be \"train\" or \"test\", got \"" + r.split +
                                 "\"");
            }
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception &ex) {
            throw ParseError(where + ": " + ex.what());
        }
    }
    return out;
}

inline std::string serialize_cameras(const std::vector<CameraRecord> &cams) {
    nlohmann::json doc = nlohmann::json::array();
    for (const auto &r : cams) {
        nlohmann::json e;
        e["image"] = r.image;
        e["width"] = r.width;
        e["height"] = r.height;
        e["fx"] = r.fx;
        e["fy"] = r.fy;
        e["cx"] = r.cx;
        e["cy"] = r.cy;
        e["world_to_cam"] = r.world_to_cam;
        e["split"] = r.split;
        doc.push_back(std::move(e));
    }
    return doc.dump(2) + "\n";
}

/// points.txt: one "x y z [r g b]" line per point, '#' starts a comment.
inline void read_points(const std::string &path, std::vector<geom::Vec3<float>> &points,
                        std::vector<std::array<float, 3>> &colors) {
    std::ifstream is(path);
    if (!is) {
        throw ParseError("cannot open '" + path + "'");
    }
    points.clear();
    colors.clear();
    std::string line;
    int line_no = 0;
    bool any_color = false, all_color = true;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.resize(hash);
        }
        std::istringstream ls(line);
        std::vector<double> v;
        double x;
        while (ls >> x) {
            v.push_back(x);
        }
        if (!ls.eof()) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": not a number");
        }
        if (v.empty()) {
            continue;
        }
        if (v.size() != 3 && v.size() != 6) {
            throw ParseError(path + ":" + std::to_string(line_no) +
                             ": expected 3 or 6 numbers, got " + std::to_string(v.size()));
        }
        points.emplace_back(float(v[0]), float(v[1]), float(v[2]));
        if (v.size() == 6) {
            any_color = true;
            colors.push_back({float(v[3]), float(v[4]), float(v[5])});
        } else {
            all_color = false;
            colors.push_back({0.5f, 0.5f, 0.5f});
        }
    }
    if (!any_color || !all_color) {
        colors.clear();
    }
}

inline void write_points(const std::string &path, const std::vector<geom::Vec3<float>> &points,
                         const std::vector<std::array<float, 3>> &colors) {
    std::ofstream os(path);
    if (!os) {
        throw Error("cannot write '" + path + "'");
    }
    os << "# x y z" << (colors.empty() ? "" : " r g b") << "\n";
    os.precision(9);
    for (size_t i = 0; i < points.size(); ++i) {
        os << points[i].x() << ' ' << points[i].y() << ' ' << points[i].z();
        if (!colors.empty()) {
            os << ' ' << colors[i][0] << ' ' << colors[i][1] << ' ' << colors[i][2];
        }
        os << '\n';
    }
}

/// Loads <dir>/cameras.json, the PNGs it names and <dir>/points.txt.
inline train::SceneData load_scene(const std::string &dir) {
    namespace fs = std::filesystem;
    const fs::path root(dir);
    const fs::path cams_path = root / "cameras.json";
    if (!fs::exists(cams_path)) {
        throw ParseError(cams_path.string() + ": file not found");
    }
    const auto records = parse_cameras(detail::read_text(cams_path.string()), cams_path.string());
    if (records.empty()) {
        throw ParseError(cams_path.string() + ": no cameras");
    }
    train::SceneData scene;
    for (const auto &r : records) {
        train::View v;
        v.name = r.image;
        v.camera = r.camera();
        try {
            v.camera.validate();
        } catch (const Error &e) {
            throw ValidationError("camera for '" + r.image + "': " + e.what());
        }
        v.image = read_png((root / r.image).string());
        if (v.image.width != r.width || v.image.height != r.height) {
            throw ValidationError("image '" + r.image + "' is " + std::to_string(v.image.width) +
                                  "x" + std::to_string(v.image.height) +
                                  " but its camera declares " + std::to_string(r.width) + "x" +
                                  std::to_string(r.height));
        }
        (r.split == "test" ? scene.test : scene.train).push_back(std::move(v));
    }
    const fs::path pts = root / "points.txt";
    if (fs::exists(pts)) {
        read_points(pts.string(), scene.points, scene.colors);
    }
    scene.validate();
    return scene;
}

} // namespace splatkern::app
