#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "mrovseg/params.hpp"
#include "mrovseg/tensor.hpp"

namespace mrovseg {

// Tensor file format: 8-byte magic "MRTENSR1", u32 rank, rank x u32 dims,
// then a raw little-endian f32 payload. Double tensors are stored as f32.
inline constexpr char kTensorMagic[8] = {'M', 'R', 'T', 'E', 'N', 'S', 'R', '1'};

namespace detail {

inline void write_u32(std::ostream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t read_u32(std::istream& in, const std::string& what) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) throw IoError("truncated tensor file (" + what + ")");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_f32(std::ostream& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(out, bits);
}

inline float read_f32(std::istream& in, const std::string& what) {
    uint32_t bits = read_u32(in, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace detail

template <class S>
void save_tensor_stream(std::ostream& out, const TensorT<S>& t) {
    out.write(kTensorMagic, 8);
    detail::write_u32(out, static_cast<uint32_t>(t.rank()));
    for (int d : t.shape) detail::write_u32(out, static_cast<uint32_t>(d));
    for (int64_t i = 0; i < t.numel(); ++i) detail::write_f32(out, static_cast<float>(t[i]));
}

template <class S>
TensorT<S> load_tensor_stream(std::istream& in, const std::string& what = "tensor") {
    char magic[8];
    in.read(magic, 8);
    if (in.gcount() != 8 || std::memcmp(magic, kTensorMagic, 8) != 0)
        throw IoError("bad tensor magic in " + what);
    uint32_t rank = detail::read_u32(in, what);
    if (rank < 1 || rank > 8) throw IoError("implausible tensor rank in " + what);
    std::vector<int> shape(rank);
    for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(detail::read_u32(in, what));
    TensorT<S> t(shape);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(detail::read_f32(in, what));
    return t;
}

template <class S>
void save_tensor(const std::string& path, const TensorT<S>& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write tensor file: " + path);
    save_tensor_stream(out, t);
    if (!out) throw IoError("failed writing tensor file: " + path);
}

template <class S>
TensorT<S> load_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open tensor file: " + path);
    return load_tensor_stream<S>(in, path);
}

// Checkpoint directory: manifest.json (names, shapes, frozen flags) plus one
// tensor file per parameter.
inline std::string sanitize_param_name(const std::string& name) {
    std::string out = name;
    for (char& c : out)
        if (c == '/' || c == '\\' || c == ':') c = '_';
    return out;
}

template <class S>
void save_checkpoint(const std::string& dir, const ParameterStoreT<S>& store,
                     const nlohmann::json& extra = {}) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    nlohmann::json manifest;
    manifest["format"] = "MRTENSR1";
    manifest["tensors"] = nlohmann::json::array();
    for (const auto& name : store.names()) {
        const auto& t = store.at(name);
        std::string file = sanitize_param_name(name) + ".mrt";
        save_tensor(dir + "/" + file, t);
        manifest["tensors"].push_back({{"name", name},
                                       {"file", file},
                                       {"shape", t.shape},
                                       {"frozen", store.is_frozen(name)}});
    }
    if (!extra.is_null()) manifest["extra"] = extra;
    std::ofstream out(dir + "/manifest.json");
    if (!out) throw IoError("cannot write checkpoint manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

// Loads tensors into an already-built store; shapes and frozen flags must
// match the live parameters.
template <class S>
nlohmann::json load_checkpoint(const std::string& dir, ParameterStoreT<S>& store) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) throw IoError("cannot open checkpoint manifest in " + dir);
    nlohmann::json manifest;
    try {
        in >> manifest;
    } catch (const std::exception& e) {
        throw IoError("bad checkpoint manifest: " + std::string(e.what()));
    }
    for (const auto& entry : manifest.at("tensors")) {
        std::string name = entry.at("name");
        if (!store.has(name)) throw ContractError("checkpoint names unknown parameter: " + name);
        auto t = load_tensor<S>(dir + "/" + entry.at("file").get<std::string>());
        auto& dst = store.at(name);
        if (t.shape != dst.shape)
            throw DimensionError("checkpoint parameter " + name + " has shape " +
                                 shape_str(t.shape) + ", model expects " + shape_str(dst.shape));
        std::copy(t.ptr(), t.ptr() + t.numel(), dst.ptr());
    }
    return manifest.contains("extra") ? manifest["extra"] : nlohmann::json{};
}

}  // namespace mrovseg
