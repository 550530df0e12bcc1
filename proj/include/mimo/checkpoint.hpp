#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "mimo/adam.hpp"
#include "mimo/model.hpp"

namespace mimo {

// Checkpoint container: magic, format version, model configuration, then
// each named parameter as (name, 4 dims, little-endian f32 payload). An
// optional trailing section stores the Adam moments and the training
// position for bit-exact resumption.

namespace ckpt_detail {

inline constexpr char kMagic[8] = {'M', 'I', 'M', 'O', 'U', 'C', 'K', 'P'};
inline constexpr std::uint32_t kVersion = 1;

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
    put_u32(os, static_cast<std::uint32_t>(v));
    put_u32(os, static_cast<std::uint32_t>(v >> 32));
}

inline void put_f32(std::ostream& os, float f) {
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(os, v);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("checkpoint: unexpected end of file");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint64_t get_u64(std::istream& is) {
    std::uint64_t lo = get_u32(is);
    std::uint64_t hi = get_u32(is);
    return lo | (hi << 32);
}

inline float get_f32(std::istream& is) {
    std::uint32_t v = get_u32(is);
    float f;
    std::memcpy(&f, &v, 4);
    return f;
}

template <typename T>
void put_payload(std::ostream& os, const std::vector<T>& data) {
    for (T v : data) put_f32(os, static_cast<float>(v));
}

template <typename T>
void get_payload(std::istream& is, std::vector<T>& data) {
    for (auto& v : data) v = static_cast<T>(get_f32(is));
}

inline void put_config(std::ostream& os, const ModelConfig& c) {
    put_u32(os, static_cast<std::uint32_t>(c.base_channels));
    put_u32(os, static_cast<std::uint32_t>(c.num_resblocks));
    std::uint32_t flags = (c.enable_mise ? 1u : 0u) | (c.enable_mosd ? 2u : 0u) |
                          (c.enable_aff ? 4u : 0u);
    put_u32(os, flags);
    put_u32(os, static_cast<std::uint32_t>(c.fusion));
}

inline ModelConfig get_config(std::istream& is) {
    ModelConfig c;
    c.base_channels = static_cast<int>(get_u32(is));
    c.num_resblocks = static_cast<int>(get_u32(is));
    std::uint32_t flags = get_u32(is);
    c.enable_mise = flags & 1u;
    c.enable_mosd = flags & 2u;
    c.enable_aff = flags & 4u;
    std::uint32_t fusion = get_u32(is);
    if (fusion > 2) throw IoError("checkpoint: bad fusion mode " + std::to_string(fusion));
    c.fusion = static_cast<FusionMode>(fusion);
    return c;
}

}  // namespace ckpt_detail

template <typename T>
struct LoadedCheckpoint {
    ModelConfig config;
    std::unique_ptr<MimoUNet<T>> model;
    bool has_optimizer = false;
    AdamState<T> adam;
    std::uint64_t global_step = 0;
    std::uint64_t epoch = 0;
};

template <typename T>
void save_checkpoint(const std::string& path, const MimoUNet<T>& model,
                     const AdamState<T>* adam = nullptr, std::uint64_t global_step = 0,
                     std::uint64_t epoch = 0) {
    namespace d = ckpt_detail;
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write(d::kMagic, 8);
    d::put_u32(os, d::kVersion);
    d::put_config(os, model.config());
    const auto& params = model.parameters();
    d::put_u32(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        d::put_u32(os, static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        const Shape s = p.tensor.shape();
        d::put_u32(os, static_cast<std::uint32_t>(s.n));
        d::put_u32(os, static_cast<std::uint32_t>(s.c));
        d::put_u32(os, static_cast<std::uint32_t>(s.h));
        d::put_u32(os, static_cast<std::uint32_t>(s.w));
        d::put_payload(os, p.tensor.values());
    }
    if (adam) {
        os.put(1);
        d::put_u64(os, adam->step);
        d::put_u64(os, global_step);
        d::put_u64(os, epoch);
        for (std::size_t i = 0; i < params.size(); ++i) {
            d::put_payload(os, adam->m[i]);
            d::put_payload(os, adam->v[i]);
        }
    } else {
        os.put(0);
    }
    if (!os) throw IoError("checkpoint write failed: " + path);
}

// Loads a checkpoint, reconstructing the model from the stored config.
// When `expected` is given, a differing stored config is rejected. Every
// parameter is validated by name and shape; mismatches name the tensor.
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path, const ModelConfig* expected = nullptr) {
    namespace d = ckpt_detail;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, d::kMagic, 8) != 0)
        throw IoError("not a checkpoint file: " + path);
    const std::uint32_t version = d::get_u32(is);
    if (version != d::kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));

    LoadedCheckpoint<T> out;
    out.config = d::get_config(is);
    if (expected && !(*expected == out.config))
        throw IoError("checkpoint config does not match the requested model configuration (" +
                      path + ")");
    out.model = std::make_unique<MimoUNet<T>>(out.config);
    auto& params = out.model->parameters();

    const std::uint32_t count = d::get_u32(is);
    if (count != params.size())
        throw IoError("checkpoint holds " + std::to_string(count) + " tensors, model expects " +
                      std::to_string(params.size()));
    for (auto& p : params) {
        const std::uint32_t name_len = d::get_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw IoError("checkpoint: unexpected end of file");
        if (name != p.name)
            throw IoError("checkpoint tensor '" + name + "' does not match expected '" + p.name +
                          "'");
        Shape s;
        s.n = d::get_u32(is);
        s.c = d::get_u32(is);
        s.h = d::get_u32(is);
        s.w = d::get_u32(is);
        if (!(s == p.tensor.shape()))
            throw IoError("checkpoint tensor '" + name + "' has shape " + s.str() +
                          ", expected " + p.tensor.shape().str());
        d::get_payload(is, p.tensor.values());
    }

    const int flag = is.get();
    if (flag == 1) {
        out.has_optimizer = true;
        out.adam = AdamState<T>::init(params);
        out.adam.step = d::get_u64(is);
        out.global_step = d::get_u64(is);
        out.epoch = d::get_u64(is);
        for (std::size_t i = 0; i < params.size(); ++i) {
            d::get_payload(is, out.adam.m[i]);
            d::get_payload(is, out.adam.v[i]);
        }
        if (!is) throw IoError("checkpoint: unexpected end of file in optimizer state");
    } else if (flag != 0) {
        throw IoError("checkpoint: corrupt optimizer flag");
    }
    return out;
}

}  // namespace mimo
