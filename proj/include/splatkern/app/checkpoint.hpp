// Copyright Contributors to the splatkern Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <splatkern/binary_io.hpp>
#include <splatkern/error.hpp>
#include <splatkern/model.hpp>
#include <splatkern/nn/serialize.hpp>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace splatkern::app {

/// Checkpoint layout (all little-endian):
///
///   char[4]  "SPLK"
///   u32      format version
///   u32      mode, kernel source, primitive count N
///   u32      latent dim, code dim, SH degree, k, projection input bits
///   f32      mu_scale
///   u32      canvas width, canvas height (image mode, else 0)
///   u32[6]   per-group dims (position, log-scale, rotation, latent, opacity, color)
///   f32[]    the six group arrays in that order, N * dim each
///   u32 + [] projection network blob (byte length, then nn::write_mlp)
///   u32 + [] decoder network blob
///   char[4096] config echo, NUL padded
///
/// k is a header field only, so the size is header + N * record + networks.
inline constexpr char kCheckpointMagic[4] = {'S', 'P', 'L', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr size_t kConfigEchoBytes = 4096;
inline constexpr size_t kCheckpointHeaderBytes = 4 + 4 * 12 + 4 * kGroupCount;

struct Checkpoint {
    Model<float> model;
    std::string config_echo;
};

inline size_t checkpoint_record_bytes(const ModelSpec &spec) {
    size_t floats = 0;
    for (Group g : kAllGroups) {
        floats += size_t(spec.group_dim(g));
    }
    return 4 * floats;
}

inline size_t network_blob_bytes(const nn::Mlp<float> &net) {
    return 4 + (net.layers.empty() ? 0 : nn::serialized_mlp_bytes(net));
}

/// Exact size save_checkpoint writes for `m`.
inline size_t checkpoint_size(const Model<float> &m) {
    return kCheckpointHeaderBytes + size_t(m.size()) * checkpoint_record_bytes(m.spec) +
           network_blob_bytes(m.proj) + network_blob_bytes(m.dec) + kConfigEchoBytes;
}

namespace detail {

inline void write_blob(std::ostream &os, const nn::Mlp<float> &net) {
    if (net.layers.empty()) {
        io::write_u32(os, 0);
        return;
    }
    io::write_u32(os, std::uint32_t(nn::serialized_mlp_bytes(net)));
    nn::write_mlp(os, net);
}

inline nn::Mlp<float> read_blob(std::istream &is, bool final_sigmoid, const std::string &path) {
    const std::uint32_t bytes = io::read_u32(is);
    if (bytes == 0) {
        return {};
    }
    const auto start = is.tellg();
    auto net = nn::read_mlp(is, final_sigmoid);
    if (size_t(is.tellg() - start) != bytes || nn::serialized_mlp_bytes(net) != bytes) {
        throw CheckpointError(CheckpointError::Kind::CountMismatch,
                              path + ": network blob length does not match its header");
    }
    return net;
}

/// Writes through a temporary file and renames it into place.
template <typename Fn> void write_atomically(const std::string &path, Fn &&fn) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) {
            throw CheckpointError(CheckpointError::Kind::Io, "cannot open '" + tmp + "' for writing");
        }
        fn(os);
        os.flush();
        if (!os) {
            throw CheckpointError(CheckpointError::Kind::Io, "write to '" + tmp + "' failed");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw CheckpointError(CheckpointError::Kind::Io,
                              "cannot move checkpoint into place at '" + path + "'");
    }
}

} // namespace detail

inline void write_checkpoint(std::ostream &os, const Checkpoint &ck) {
    const auto &m = ck.model;
    m.validate();
    if (ck.config_echo.size() > kConfigEchoBytes) {
        throw ConfigError("config echo is " + std::to_string(ck.config_echo.size()) +
                          " bytes, the checkpoint holds at most " +
                          std::to_string(kConfigEchoBytes));
    }
    const auto &s = m.spec;
    os.write(kCheckpointMagic, 4);
    io::write_u32(os, kCheckpointVersion);
    io::write_u32(os, std::uint32_t(s.mode));
    io::write_u32(os, std::uint32_t(s.source));
    io::write_u32(os, std::uint32_t(m.size()));
    io::write_u32(os, std::uint32_t(s.latent_dim));
    io::write_u32(os, std::uint32_t(s.code_dim));
    io::write_u32(os, std::uint32_t(s.sh_degree));
    io::write_u32(os, std::uint32_t(s.k));
    io::write_u32(os, s.inputs.bits());
    io::write_f32(os, float(s.mu_scale));
    io::write_u32(os, std::uint32_t(s.width));
    io::write_u32(os, std::uint32_t(s.height));
    for (Group g : kAllGroups) {
        io::write_u32(os, std::uint32_t(m.prims.dim(g)));
    }
    for (Group g : kAllGroups) {
        for (float v : m.prims.group(g)) {
            io::write_f32(os, v);
        }
    }
    detail::write_blob(os, m.proj);
    detail::write_blob(os, m.dec);
    std::string echo = ck.config_echo;
    echo.resize(kConfigEchoBytes, '\0');
    os.write(echo.data(), std::streamsize(echo.size()));
}

inline Checkpoint read_checkpoint(std::istream &is, const std::string &path = "<stream>") {
    using Kind = CheckpointError::Kind;
    Checkpoint ck;
    try {
        char magic[4] = {};
        if (!is.read(magic, 4)) {
            throw io::TruncatedStream("no magic");
        }
        if (!std::equal(magic, magic + 4, kCheckpointMagic)) {
            throw CheckpointError(Kind::BadMagic, path + ": not a splatkern checkpoint (bad magic)");
        }
        const std::uint32_t version = io::read_u32(is);
        if (version != kCheckpointVersion) {
            throw CheckpointError(Kind::VersionMismatch,
                                  path + ": checkpoint format version " + std::to_string(version) +
                                      ", this build reads version " +
                                      std::to_string(kCheckpointVersion));
        }
        auto &m = ck.model;
        auto &s = m.spec;
        const std::uint32_t mode = io::read_u32(is);
        const std::uint32_t source = io::read_u32(is);
        if (mode > 2 || source > 1) {
            throw CheckpointError(Kind::CountMismatch, path + ": unknown mode or kernel source");
        }
        s.mode = Mode(mode);
        s.source = kernel::KernelSource(source);
        const std::uint32_t count = io::read_u32(is);
        s.latent_dim = int(io::read_u32(is));
        s.code_dim = int(io::read_u32(is));
        s.sh_degree = int(io::read_u32(is));
        s.k = int(io::read_u32(is));
        s.inputs = kernel::ProjInputSet::from_bits(io::read_u32(is));
        s.mu_scale = double(io::read_f32(is));
        s.width = int(io::read_u32(is));
        s.height = int(io::read_u32(is));
        try {
            s.validate();
        } catch (const Error &e) {
            throw CheckpointError(Kind::CountMismatch, path + ": inconsistent header: " + e.what());
        }
        for (Group g : kAllGroups) {
            const std::uint32_t d = io::read_u32(is);
            if (int(d) != s.group_dim(g)) {
                throw CheckpointError(Kind::CountMismatch,
                                      path + ": group '" + group_name(g) + "' has dimension " +
                                          std::to_string(d) + ", header implies " +
                                          std::to_string(s.group_dim(g)));
            }
        }
        // Reject counts the file cannot possibly hold before allocating.
        const auto here = is.tellg();
        is.seekg(0, std::ios::end);
        const auto end = is.tellg();
        is.seekg(here);
        if (here >= 0 && end >= 0 &&
            double(count) * double(checkpoint_record_bytes(s)) > double(end - here)) {
            throw io::TruncatedStream("primitive arrays");
        }
        m.prims.reset(s, int(count));
        for (Group g : kAllGroups) {
            for (float &v : m.prims.group(g)) {
                v = io::read_f32(is);
            }
        }
        m.proj = detail::read_blob(is, false, path);
        m.dec = detail::read_blob(is, true, path);
        std::string echo(kConfigEchoBytes, '\0');
        if (!is.read(echo.data(), std::streamsize(echo.size()))) {
            throw io::TruncatedStream("config echo");
        }
        echo.resize(echo.find('\0') == std::string::npos ? echo.size() : echo.find('\0'));
        ck.config_echo = echo;
        if (is.peek() != std::char_traits<char>::eof()) {
            throw CheckpointError(Kind::CountMismatch, path + ": trailing bytes after the checkpoint");
        }
        try {
            m.validate();
        } catch (const Error &e) {
            throw CheckpointError(Kind::CountMismatch, path + ": " + e.what());
        }
    } catch (const io::TruncatedStream &) {
        throw CheckpointError(Kind::Truncated, path + ": checkpoint is truncated");
    } catch (const ShapeError &e) {
        throw CheckpointError(Kind::CountMismatch, path + ": " + e.what());
    }
    return ck;
}

inline void save_checkpoint(const Checkpoint &ck, const std::string &path) {
    detail::write_atomically(path, [&](std::ostream &os) { write_checkpoint(os, ck); });
}

inline Checkpoint load_checkpoint(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw CheckpointError(CheckpointError::Kind::Io, "cannot open checkpoint '" + path + "'");
    }
    return read_checkpoint(is, path);
}

/// Pre-trained networks on disk: "SPKN", u32 version, u32 mode, u32 latent
/// dim, u32 code dim, u32 projection input bits, then the two network blobs.
inline constexpr char kNetworksMagic[4] = {'S', 'P', 'K', 'N'};

struct NetworkFile {
    Mode mode = Mode::Volumetric;
    int latent_dim = 5;
    int code_dim = 5;
    kernel::ProjInputSet inputs;
    nn::Mlp<float> proj;
    nn::Mlp<float> dec;
};

inline void save_networks(const NetworkFile &nf, const std::string &path) {
    detail::write_atomically(path, [&](std::ostream &os) {
        os.write(kNetworksMagic, 4);
        io::write_u32(os, kCheckpointVersion);
        io::write_u32(os, std::uint32_t(nf.mode));
        io::write_u32(os, std::uint32_t(nf.latent_dim));
        io::write_u32(os, std::uint32_t(nf.code_dim));
        io::write_u32(os, nf.inputs.bits());
        detail::write_blob(os, nf.proj);
        detail::write_blob(os, nf.dec);
    });
}

inline NetworkFile load_networks(const std::string &path) {
    using Kind = CheckpointError::Kind;
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw CheckpointError(Kind::Io, "cannot open network file '" + path + "'");
    }
    NetworkFile nf;
    try {
        char magic[4] = {};
        if (!is.read(magic, 4)) {
            throw io::TruncatedStream("no magic");
        }
        if (!std::equal(magic, magic + 4, kNetworksMagic)) {
            throw CheckpointError(Kind::BadMagic, path + ": not a splatkern network file");
        }
        const std::uint32_t version = io::read_u32(is);
        if (version != kCheckpointVersion) {
            throw CheckpointError(Kind::VersionMismatch,
                                  path + ": network file version " + std::to_string(version));
        }
        const std::uint32_t mode = io::read_u32(is);
        if (mode > 2) {
            throw CheckpointError(Kind::CountMismatch, path + ": unknown mode");
        }
        nf.mode = Mode(mode);
        nf.latent_dim = int(io::read_u32(is));
        nf.code_dim = int(io::read_u32(is));
        nf.inputs = kernel::ProjInputSet::from_bits(io::read_u32(is));
        nf.proj = detail::read_blob(is, false, path);
        nf.dec = detail::read_blob(is, true, path);
    } catch (const io::TruncatedStream &) {
        throw CheckpointError(Kind::Truncated, path + ": network file is truncated");
    } catch (const ShapeError &e) {
        throw CheckpointError(Kind::CountMismatch, path + ": " + e.what());
    }
    return nf;
}

} // namespace splatkern::app
