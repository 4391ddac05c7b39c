#include "mrovseg/image_io.hpp"

#include <fstream>

namespace mrovseg {

namespace {

// Reads the next header token, skipping whitespace and '#' comment lines.
std::string next_token(std::istream& in, const std::string& path) {
    std::string tok;
    int c;
    while ((c = in.get()) != EOF) {
        if (c == '#') {
            while ((c = in.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw IoError("truncated header in " + path);
    return tok;
}

int parse_dim(const std::string& tok, const std::string& path) {
    try {
        int v = std::stoi(tok);
        if (v < 1) throw IoError("bad dimension in " + path);
        return v;
    } catch (const std::exception&) {
        throw IoError("bad header field '" + tok + "' in " + path);
    }
}

}  // namespace

Tensor read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image: " + path);
    if (next_token(in, path) != "P6") throw IoError("not a binary PPM (P6): " + path);
    int w = parse_dim(next_token(in, path), path);
    int h = parse_dim(next_token(in, path), path);
    int maxval = parse_dim(next_token(in, path), path);
    if (maxval != 255) throw IoError("unsupported PPM maxval (want 255): " + path);
    std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
        throw IoError("truncated pixel data in " + path);
    Tensor img({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img[(static_cast<int64_t>(c) * h + y) * w + x] =
                    static_cast<float>(raw[(static_cast<size_t>(y) * w + x) * 3 + c]) / 255.0f;
    return img;
}

void write_ppm(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || img.dim(0) != 3)
        throw DimensionError("write_ppm: expected [3,H,W], got " + shape_str(img.shape));
    int h = img.dim(1), w = img.dim(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image: " + path);
    out << "P6\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                float v = img[(static_cast<int64_t>(c) * h + y) * w + x];
                v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
                raw[(static_cast<size_t>(y) * w + x) * 3 + c] =
                    static_cast<unsigned char>(v * 255.0f + 0.5f);
            }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("failed writing " + path);
}

GrayImage read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image: " + path);
    if (next_token(in, path) != "P5") throw IoError("not a binary PGM (P5): " + path);
    GrayImage img;
    img.width = parse_dim(next_token(in, path), path);
    img.height = parse_dim(next_token(in, path), path);
    int maxval = parse_dim(next_token(in, path), path);
    if (maxval != 255) throw IoError("unsupported PGM maxval (want 255): " + path);
    img.pixels.resize(static_cast<size_t>(img.width) * img.height);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
        throw IoError("truncated pixel data in " + path);
    return img;
}

void write_pgm(const std::string& path, const GrayImage& img) {
    if (img.pixels.size() != static_cast<size_t>(img.width) * img.height)
        throw DimensionError("write_pgm: pixel buffer does not match dimensions");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image: " + path);
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw IoError("failed writing " + path);
}

}  // namespace mrovseg
