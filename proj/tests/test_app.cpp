// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#include <splatkern/app/checkpoint.hpp>
#include <splatkern/app/gen_scene.hpp>
#include <splatkern/app/png_io.hpp>
#include <splatkern/app/scene_io.hpp>
#include <splatkern/random_scene.hpp>

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>

using namespace splatkern;
namespace fs = std::filesystem;

namespace {

/// Fresh scratch directory per test, removed on destruction.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string &tag) {
        path = fs::temp_directory_path() /
               ("splatkern_" + tag + "_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                "_" + std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string operator/(const std::string &rel) const { return (path / rel).string(); }
};

std::string slurp(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void spit(const std::string &path, const std::string &bytes) {
    std::ofstream os(path, std::ios::binary);
    os << bytes;
}

app::Checkpoint sample_checkpoint(ModelSpec spec, int count, std::uint64_t seed) {
    RandomSceneParams p;
    p.count = count;
    p.seed = seed;
    app::Checkpoint ck;
    ck.model = random_scene<float>(spec, p).model;
    ck.config_echo = "seed = " + std::to_string(seed) + "\n";
    return ck;
}

CheckpointError::Kind load_error_kind(const std::string &path) {
    try {
        app::load_checkpoint(path);
    } catch (const CheckpointError &e) {
        return e.kind();
    }
    ADD_FAILURE() << "load_checkpoint accepted " << path;
    return CheckpointError::Kind::Io;
}

bool same_bits(std::span<const float> a, std::span<const float> b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

} // namespace

TEST(Checkpoint, RoundTripIsBitExactForEveryMode) {
    TempDir dir("ckpt");
    std::vector<ModelSpec> specs = {ModelSpec::volumetric(2, 1), ModelSpec::volumetric(4, 0)};
    ModelSpec planar;
    planar.mode = Mode::Planar;
    specs.push_back(planar);
    ModelSpec img;
    img.mode = Mode::Image2D;
    specs.push_back(img);
    ModelSpec frozen = ModelSpec::volumetric();
    frozen.source = kernel::KernelSource::FrozenGaussian;
    specs.push_back(frozen);
    for (size_t i = 0; i < specs.size(); ++i) {
        const auto ck = sample_checkpoint(specs[i], 7, i + 1);
        const std::string path = dir / ("m" + std::to_string(i) + ".splk");
        app::save_checkpoint(ck, path);
        const auto back = app::load_checkpoint(path);
        EXPECT_EQ(back.config_echo, ck.config_echo);
        EXPECT_EQ(back.model.spec.mode, ck.model.spec.mode);
        EXPECT_EQ(back.model.spec.k, ck.model.spec.k);
        EXPECT_EQ(back.model.spec.inputs.bits(), ck.model.spec.inputs.bits());
        EXPECT_EQ(back.model.size(), 7);
        for (Group g : kAllGroups) {
            EXPECT_TRUE(same_bits(back.model.prims.group(g), ck.model.prims.group(g))) << group_name(g);
        }
        EXPECT_TRUE(same_bits(back.model.network_parameters(), ck.model.network_parameters()));
        // Writing the loaded model again reproduces the file byte for byte.
        std::ostringstream os;
        app::write_checkpoint(os, back);
        EXPECT_EQ(os.str(), slurp(path));
    }
}

TEST(Checkpoint, SizeFormulaMatchesFile) {
    TempDir dir("ckpt");
    for (int count : {1, 13, 200}) {
        const auto ck = sample_checkpoint(ModelSpec::volumetric(2, 2), count, 3);
        const std::string path = dir / "m.splk";
        app::save_checkpoint(ck, path);
        const size_t expected = app::kCheckpointHeaderBytes +
                                size_t(count) * app::checkpoint_record_bytes(ck.model.spec) +
                                app::network_blob_bytes(ck.model.proj) +
                                app::network_blob_bytes(ck.model.dec) + app::kConfigEchoBytes;
        EXPECT_EQ(fs::file_size(path), expected);
        EXPECT_EQ(app::checkpoint_size(ck.model), expected);
    }
}

TEST(Checkpoint, SizeDoesNotDependOnK) {
    TempDir dir("ckpt");
    std::vector<std::uintmax_t> sizes;
    for (int k : {2, 4, 8}) {
        const auto ck = sample_checkpoint(ModelSpec::volumetric(k), 25, 9);
        app::save_checkpoint(ck, dir / "m.splk");
        sizes.push_back(fs::file_size(dir / "m.splk"));
    }
    EXPECT_EQ(sizes[0], sizes[1]);
    EXPECT_EQ(sizes[0], sizes[2]);
}

TEST(Checkpoint, CorruptFilesRaiseDistinctErrors) {
    TempDir dir("ckpt");
    const auto ck = sample_checkpoint(ModelSpec::volumetric(), 5, 4);
    const std::string good = dir / "good.splk";
    app::save_checkpoint(ck, good);
    const std::string bytes = slurp(good);

    for (size_t cut : {size_t(0), size_t(3), size_t(20), bytes.size() / 2, bytes.size() - 1}) {
        spit(dir / "cut.splk", bytes.substr(0, cut));
        EXPECT_EQ(load_error_kind(dir / "cut.splk"), CheckpointError::Kind::Truncated) << cut;
    }

    std::string magic = bytes;
    magic[0] = 'X';
    spit(dir / "magic.splk", magic);
    EXPECT_EQ(load_error_kind(dir / "magic.splk"), CheckpointError::Kind::BadMagic);

    std::string version = bytes;
    version[4] = 9;
    spit(dir / "version.splk", version);
    EXPECT_EQ(load_error_kind(dir / "version.splk"), CheckpointError::Kind::VersionMismatch);

    std::string dims = bytes;
    dims[4 + 4 * 12] = 7; // position group claims 7 floats per primitive
    spit(dir / "dims.splk", dims);
    EXPECT_EQ(load_error_kind(dir / "dims.splk"), CheckpointError::Kind::CountMismatch);

    spit(dir / "trailing.splk", bytes + "extra");
    EXPECT_EQ(load_error_kind(dir / "trailing.splk"), CheckpointError::Kind::CountMismatch);

    EXPECT_EQ(load_error_kind(dir / "missing.splk"), CheckpointError::Kind::Io);
}

TEST(Checkpoint, NetworkFileRoundTrip) {
    TempDir dir("nets");
    const auto ck = sample_checkpoint(ModelSpec::volumetric(), 1, 5);
    app::NetworkFile nf;
    nf.proj = ck.model.proj;
    nf.dec = ck.model.dec;
    app::save_networks(nf, dir / "n.bin");
    const auto back = app::load_networks(dir / "n.bin");
    EXPECT_EQ(back.mode, Mode::Volumetric);
    EXPECT_TRUE(same_bits(back.proj.flatten(), nf.proj.flatten()));
    EXPECT_TRUE(same_bits(back.dec.flatten(), nf.dec.flatten()));
}

TEST(Cameras, ParseSerializeIsAFixedPoint) {
    app::GenSceneOptions o;
    o.views = 4;
    o.resolution = 40;
    std::vector<app::CameraRecord> recs;
    for (const auto &c : app::hemisphere_cameras(o)) {
        recs.push_back(app::CameraRecord::from_camera(c, "images/a.png", recs.size() % 2 ? "test" : "train"));
    }
    const std::string once = app::serialize_cameras(recs);
    const auto parsed = app::parse_cameras(once);
    EXPECT_EQ(parsed, recs);
    EXPECT_EQ(app::serialize_cameras(parsed), once);
}

TEST(Cameras, MalformedJsonNamesPathAndLine) {
    const std::string text = "[\n  {\"image\": \"a.png\",\n   \"width\": 4,,\n";
    try {
        app::parse_cameras(text, "scene/cameras.json");
        FAIL();
    } catch (const ParseError &e) {
        EXPECT_NE(std::string(e.what()).find("scene/cameras.json:3:"), std::string::npos) << e.what();
    }
    EXPECT_THROW(app::parse_cameras("{}", "x"), ParseError);
    EXPECT_THROW(app::parse_cameras("[{\"image\": \"a.png\"}]", "x"), ParseError);
    EXPECT_THROW(app::parse_cameras(R"([{"image":"a","width":1,"height":1,"fx":1,"fy":1,"cx":0,"cy":0,
        "world_to_cam":[1,0,0,0,0,1,0,0,0,0,1,0,0,0,0,1],"split":"val"}])",
                                     "x"),
                 ParseError);
}

TEST(Png, RoundTripsEightBitValues) {
    TempDir dir("png");
    raster::Image<float> img(5, 3, 3);
    for (size_t i = 0; i < img.data.size(); ++i) {
        img.data[i] = float(i * 17 % 256) / 255.f;
    }
    app::write_png(dir / "a.png", img);
    const auto back = app::read_png(dir / "a.png");
    ASSERT_EQ(back.width, 5);
    ASSERT_EQ(back.height, 3);
    EXPECT_EQ(back.data, img.data);
    EXPECT_THROW(app::read_png(dir / "missing.png"), ParseError);
}

TEST(LoadScene, EmptyDirectoryIsAParseError) {
    TempDir dir("empty");
    EXPECT_THROW(app::load_scene(dir.path.string()), ParseError);
}

TEST(LoadScene, GeneratedToySceneHasTwentyFiveViews) {
    TempDir dir("toy");
    app::GenSceneOptions o;
    o.resolution = 24;
    o.supersample = 1;
    app::gen_scene(o, dir.path.string());
    const auto scene = app::load_scene(dir.path.string());
    EXPECT_EQ(scene.train.size(), 20u);
    EXPECT_EQ(scene.test.size(), 5u);
    EXPECT_EQ(scene.points.size(), size_t(o.points));
    EXPECT_EQ(scene.train[0].image.width, 24);
}

TEST(LoadScene, DimensionMismatchNamesTheImage) {
    TempDir dir("mismatch");
    app::GenSceneOptions o;
    o.views = 2;
    o.resolution = 16;
    o.supersample = 1;
    app::gen_scene(o, dir.path.string());
    auto recs = app::parse_cameras(slurp(dir / "cameras.json"));
    recs[1].width = 17;
    spit(dir / "cameras.json", app::serialize_cameras(recs));
    try {
        app::load_scene(dir.path.string());
        FAIL();
    } catch (const ValidationError &e) {
        EXPECT_NE(std::string(e.what()).find(recs[1].image), std::string::npos) << e.what();
    }
}

TEST(GenScene, UnknownPresetIsAConfigError) {
    TempDir dir("bad");
    app::GenSceneOptions o;
    o.preset = "teapot";
    EXPECT_THROW(app::gen_scene(o, dir.path.string()), ConfigError);
}

TEST(GenScene, OutputIsByteIdenticalAcrossRuns) {
    TempDir a("det_a"), b("det_b");
    app::GenSceneOptions o;
    o.views = 5;
    o.resolution = 32;
    app::gen_scene(o, a.path.string());
    app::gen_scene(o, b.path.string());
    size_t files = 0;
    for (const auto &e : fs::recursive_directory_iterator(a.path)) {
        if (!e.is_regular_file()) {
            continue;
        }
        ++files;
        const auto rel = fs::relative(e.path(), a.path);
        EXPECT_EQ(slurp(e.path().string()), slurp((b.path / rel).string())) << rel;
    }
    EXPECT_EQ(files, 5u + 2u);
}

TEST(GenScene, CamerasAreRigidAndAboveTheGround) {
    app::GenSceneOptions o;
    o.views = 50;
    o.seed = 11;
    for (const auto &c : app::hemisphere_cameras(o)) {
        const auto r = c.rotation;
        EXPECT_LT((r * r.transpose() - geom::Mat3<double>::Identity()).cwiseAbs().maxCoeff(), 1e-6);
        EXPECT_NEAR(r.determinant(), 1.0, 1e-6);
        EXPECT_GT(c.center().z(), 0.0);
        // The optical axis points back towards the scene.
        EXPECT_LT(c.center().normalized().dot(r.row(2).transpose()), -0.9);
    }
}

TEST(GenScene, TexturedQuadShowsCheckerWhereCellsProject) {
    app::GenSceneOptions o;
    o.preset = "textured-quad";
    o.views = 3;
    o.resolution = 96;
    o.seed = 2;
    const app::CheckerQuad quad;
    const auto scene = app::make_preset(o.preset);
    int checked_inside = 0, checked_outside = 0;
    for (const auto &cam : app::hemisphere_cameras(o)) {
        const auto img = app::ray_cast(scene, cam, 3);
        auto project = [&](double x, double y) {
            const auto p = cam.to_camera({x, y, quad.height});
            return Eigen::Vector2d(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy);
        };
        // Convex polygon test on the projected corners of a world-space square.
        auto inside = [&](const std::array<Eigen::Vector2d, 4> &poly, Eigen::Vector2d q) {
            int sign = 0;
            for (int i = 0; i < 4; ++i) {
                const auto e = poly[(i + 1) % 4] - poly[i], v = q - poly[i];
                const double cross = e.x() * v.y() - e.y() * v.x();
                const int s = cross > 0 ? 1 : -1;
                if (sign != 0 && s != sign) {
                    return false;
                }
                sign = s;
            }
            return true;
        };
        auto pixel_inside = [&](const std::array<Eigen::Vector2d, 4> &poly, int x, int y) {
            for (double dy : {0.0, 1.0}) {
                for (double dx : {0.0, 1.0}) {
                    if (!inside(poly, {x + dx, y + dy})) {
                        return false;
                    }
                }
            }
            return true;
        };
        const double cell = 2 * quad.half / quad.cells;
        std::array<Eigen::Vector2d, 4> whole = {project(-quad.half, -quad.half), project(quad.half, -quad.half),
                                                project(quad.half, quad.half), project(-quad.half, quad.half)};
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                bool touches = false;
                for (double dy : {0.0, 1.0}) {
                    for (double dx : {0.0, 1.0}) {
                        touches |= inside(whole, {x + dx, y + dy});
                    }
                }
                if (!touches) {
                    for (int ch = 0; ch < 3; ++ch) {
                        EXPECT_EQ(img.at(x, y, ch), 0.f);
                    }
                    ++checked_outside;
                }
            }
        }
        for (int ci = 0; ci < quad.cells; ++ci) {
            for (int cj = 0; cj < quad.cells; ++cj) {
                const double x0 = -quad.half + ci * cell, y0 = -quad.half + cj * cell;
                std::array<Eigen::Vector2d, 4> poly = {project(x0, y0), project(x0 + cell, y0),
                                                       project(x0 + cell, y0 + cell), project(x0, y0 + cell)};
                const auto &want = (ci + cj) % 2 == 0 ? quad.color_a : quad.color_b;
                for (int y = 0; y < img.height; ++y) {
                    for (int x = 0; x < img.width; ++x) {
                        if (!pixel_inside(poly, x, y)) {
                            continue;
                        }
                        for (int ch = 0; ch < 3; ++ch) {
                            EXPECT_NEAR(img.at(x, y, ch), want[ch], 1e-6);
                        }
                        ++checked_inside;
                    }
                }
            }
        }
    }
    EXPECT_GT(checked_inside, 500);
    EXPECT_GT(checked_outside, 500);
}
