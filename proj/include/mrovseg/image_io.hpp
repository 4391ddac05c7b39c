#pragma once

#include <string>
#include <vector>

#include "mrovseg/tensor.hpp"

namespace mrovseg {

// Binary PPM (P6, maxval 255) <-> float image [3,H,W] in [0,1].
Tensor read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& img);

// Binary PGM (P5, maxval 255): label / grayscale maps.
struct GrayImage {
    int height = 0, width = 0;
    std::vector<uint8_t> pixels;  // row-major
};

GrayImage read_pgm(const std::string& path);
void write_pgm(const std::string& path, const GrayImage& img);

}  // namespace mrovseg
