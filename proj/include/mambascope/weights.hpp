#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mambascope/config.hpp"
#include "mambascope/vim.hpp"

namespace mambascope {

// Weight file: magic "MSCP", u32-LE version = 1, u32-LE tensor count, then
// per tensor: u32-LE name length, UTF-8 name, u32-LE rank, u32-LE dims,
// raw float32-LE payload.

namespace wire {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f32(std::ostream& os, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(os, v);
}

struct Reader {
    std::istream& in;
    std::size_t offset = 0;

    std::uint32_t get_u32() {
        unsigned char b[4];
        in.read(reinterpret_cast<char*>(b), 4);
        if (in.gcount() != 4) throw Truncated("unexpected end of file", offset);
        offset += 4;
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) |
               (static_cast<std::uint32_t>(b[3]) << 24);
    }

    float get_f32() {
        std::uint32_t v = get_u32();
        float f;
        std::memcpy(&f, &v, 4);
        return f;
    }

    std::string get_bytes(std::size_t n) {
        std::string s(n, '\0');
        in.read(s.data(), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n)
            throw Truncated("unexpected end of file", offset);
        offset += n;
        return s;
    }
};

}  // namespace wire

inline void write_weight_map(const std::map<std::string, Tensor>& tensors,
                             std::ostream& os) {
    os.write("MSCP", 4);
    wire::put_u32(os, 1);
    wire::put_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        wire::put_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        wire::put_u32(os, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.dims) wire::put_u32(os, static_cast<std::uint32_t>(d));
        for (float v : t.data) wire::put_f32(os, v);
    }
}

inline std::map<std::string, Tensor> read_weight_map(std::istream& in) {
    wire::Reader r{in};
    std::string magic = r.get_bytes(4);
    if (magic != "MSCP") throw BadMagic("bad magic: expected MSCP");
    std::uint32_t version = r.get_u32();
    if (version != 1)
        throw VersionMismatch("unsupported weight file version " +
                              std::to_string(version));
    std::uint32_t count = r.get_u32();
    std::map<std::string, Tensor> tensors;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint32_t name_len = r.get_u32();
        std::string name = r.get_bytes(name_len);
        if (tensors.count(name)) throw LoadError("duplicate tensor name: " + name);
        std::uint32_t rank = r.get_u32();
        if (rank > 4) throw LoadError("tensor " + name + " has rank > 4");
        std::vector<std::size_t> dims(rank);
        std::size_t numel = 1;
        for (std::uint32_t j = 0; j < rank; ++j) {
            dims[j] = r.get_u32();
            if (dims[j] == 0) throw LoadError("tensor " + name + " has zero extent");
            numel *= dims[j];
        }
        Tensor t(dims);
        for (std::size_t j = 0; j < numel; ++j) t.data[j] = r.get_f32();
        tensors.emplace(std::move(name), std::move(t));
    }
    return tensors;
}

inline std::map<std::string, Tensor> to_weight_map(const EncoderParams& params) {
    std::map<std::string, Tensor> m;
    m["patch_embed.w"] = params.patch_embed;
    m["cls"] = params.cls_token;
    m["pos_coarse"] = params.pos_coarse;
    m["pos_fine"] = params.pos_fine;
    m["head.w"] = params.head_w;
    m["head.b"] = params.head_b;
    m["reuse_mlp.0.w"] = params.reuse_mlp.w0;
    m["reuse_mlp.0.b"] = params.reuse_mlp.b0;
    m["reuse_mlp.1.w"] = params.reuse_mlp.w1;
    m["reuse_mlp.1.b"] = params.reuse_mlp.b1;
    for (std::size_t i = 0; i < params.blocks.size(); ++i) {
        const BlockParams& blk = params.blocks[i];
        const std::string base = "blocks." + std::to_string(i) + ".";
        m[base + "in_proj"] = blk.in_proj;
        m[base + "out_proj"] = blk.out_proj;
        const DirectionParams* dirs[2] = {&blk.fwd, &blk.bwd};
        const char* tags[2] = {"fwd.", "bwd."};
        for (int k = 0; k < 2; ++k) {
            m[base + tags[k] + "a"] = dirs[k]->ssm.a;
            m[base + tags[k] + "delta_proj"] = dirs[k]->ssm.delta_proj;
            m[base + tags[k] + "b_proj"] = dirs[k]->ssm.b_proj;
            m[base + tags[k] + "c_proj"] = dirs[k]->ssm.c_proj;
            m[base + tags[k] + "gate"] = dirs[k]->gate_proj;
        }
    }
    return m;
}

inline EncoderParams from_weight_map(std::map<std::string, Tensor> m,
                                     const ModelConfig& cfg) {
    EncoderParams params;
    auto take = [&](const std::string& name) {
        auto it = m.find(name);
        if (it == m.end()) throw LoadError("missing tensor: " + name);
        Tensor t = std::move(it->second);
        m.erase(it);
        return t;
    };
    params.patch_embed = take("patch_embed.w");
    params.cls_token = take("cls");
    params.pos_coarse = take("pos_coarse");
    params.pos_fine = take("pos_fine");
    params.head_w = take("head.w");
    params.head_b = take("head.b");
    params.reuse_mlp.w0 = take("reuse_mlp.0.w");
    params.reuse_mlp.b0 = take("reuse_mlp.0.b");
    params.reuse_mlp.w1 = take("reuse_mlp.1.w");
    params.reuse_mlp.b1 = take("reuse_mlp.1.b");
    params.blocks.resize(cfg.depth);
    for (std::size_t i = 0; i < cfg.depth; ++i) {
        const std::string base = "blocks." + std::to_string(i) + ".";
        BlockParams& blk = params.blocks[i];
        blk.in_proj = take(base + "in_proj");
        blk.out_proj = take(base + "out_proj");
        DirectionParams* dirs[2] = {&blk.fwd, &blk.bwd};
        const char* tags[2] = {"fwd.", "bwd."};
        for (int k = 0; k < 2; ++k) {
            dirs[k]->ssm.a = take(base + tags[k] + "a");
            dirs[k]->ssm.delta_proj = take(base + tags[k] + "delta_proj");
            dirs[k]->ssm.b_proj = take(base + tags[k] + "b_proj");
            dirs[k]->ssm.c_proj = take(base + tags[k] + "c_proj");
            dirs[k]->gate_proj = take(base + tags[k] + "gate");
        }
    }
    if (!m.empty()) {
        std::string unknown;
        for (const auto& [name, t] : m)
            unknown += (unknown.empty() ? "" : ", ") + name;
        throw LoadError("unknown tensor names: " + unknown);
    }
    // shape sanity against the config
    if (params.patch_embed.dims !=
        std::vector<std::size_t>{cfg.patch_fine * cfg.patch_fine * cfg.channels,
                                 cfg.dim})
        throw LoadError("patch_embed.w shape mismatch with config");
    if (params.head_w.dims != std::vector<std::size_t>{cfg.dim, cfg.classes})
        throw LoadError("head.w shape mismatch with config");
    if (params.pos_coarse.dims != std::vector<std::size_t>{cfg.n_coarse() + 1, cfg.dim})
        throw LoadError("pos_coarse shape mismatch with config");
    if (params.pos_fine.dims !=
        std::vector<std::size_t>{cfg.n_fine_full() + 1, cfg.dim})
        throw LoadError("pos_fine shape mismatch with config");
    return params;
}

inline void save_weights(const EncoderParams& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw LoadError("cannot open for writing: " + path);
    write_weight_map(to_weight_map(params), os);
    if (!os) throw LoadError("write failure: " + path);
}

inline EncoderParams load_weights(const std::string& path, const ModelConfig& cfg) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open: " + path);
    return from_weight_map(read_weight_map(in), cfg);
}

}  // namespace mambascope
