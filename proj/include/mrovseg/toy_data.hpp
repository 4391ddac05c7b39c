#pragma once

#include <array>
#include <string>
#include <vector>

#include "mrovseg/metrics.hpp"
#include "mrovseg/tensor.hpp"

namespace mrovseg {

// Synthetic training data: colored rectangles and ellipses on a textured
// background. class id = shape + 2 * color bucket; instances never overlap.
struct ToyInstance {
    int class_id = 0;
    std::vector<uint8_t> mask;  // h*w
};

struct ToySample {
    Tensor image;                  // [3,h,w] in [0,1]
    std::vector<ToyInstance> instances;
    std::vector<int> semantic;     // h*w labels; background = kIgnoreLabel
    int height = 0, width = 0;
};

inline std::vector<std::string> toy_class_names(int n_classes) {
    static const char* shapes[2] = {"rectangle", "ellipse"};
    static const char* colors[4] = {"red", "blue", "green", "yellow"};
    if (n_classes < 1 || n_classes > 8)
        throw ContractError("toy_class_names: supports 1..8 classes");
    std::vector<std::string> names;
    for (int c = 0; c < n_classes; ++c)
        names.push_back(std::string(colors[(c / 2) % 4]) + " " + shapes[c % 2]);
    return names;
}

inline std::vector<ToySample> make_toy_dataset(uint64_t seed, int n_images, int hw, int n_classes) {
    if (n_images < 1 || hw < 16) throw ContractError("make_toy_dataset: bad size arguments");
    if (n_classes < 1 || n_classes > 8) throw ContractError("make_toy_dataset: 1..8 classes");
    const double palette[4][3] = {
        {0.85, 0.15, 0.15}, {0.15, 0.25, 0.85}, {0.10, 0.75, 0.20}, {0.90, 0.85, 0.10}};
    Rng rng(seed);
    std::vector<ToySample> out;
    out.reserve(static_cast<size_t>(n_images));
    for (int img_i = 0; img_i < n_images; ++img_i) {
        ToySample s;
        s.height = hw;
        s.width = hw;
        s.image = Tensor({3, hw, hw});
        s.semantic.assign(static_cast<size_t>(hw) * hw, kIgnoreLabel);
        // textured background: soft gradient plus value noise
        double gx = rng.uniform(-0.1, 0.1), gy = rng.uniform(-0.1, 0.1);
        for (int y = 0; y < hw; ++y)
            for (int x = 0; x < hw; ++x) {
                double base = 0.4 + gx * (static_cast<double>(x) / hw - 0.5) +
                              gy * (static_cast<double>(y) / hw - 0.5);
                for (int c = 0; c < 3; ++c)
                    s.image[(static_cast<int64_t>(c) * hw + y) * hw + x] =
                        static_cast<float>(base + rng.uniform(-0.04, 0.04));
            }
        int want = rng.uniform_int(1, 4);
        std::vector<std::array<int, 4>> boxes;  // y0,x0,y1,x1
        for (int inst = 0; inst < want; ++inst) {
            int side_min = hw / 5, side_max = static_cast<int>(hw * 0.45);
            std::array<int, 4> box{};
            bool placed = false;
            for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
                int bh = rng.uniform_int(side_min, side_max);
                int bw = rng.uniform_int(side_min, side_max);
                int y0 = rng.uniform_int(1, hw - bh - 1);
                int x0 = rng.uniform_int(1, hw - bw - 1);
                box = {y0, x0, y0 + bh, x0 + bw};
                placed = true;
                for (const auto& other : boxes)
                    if (!(box[2] <= other[0] || other[2] <= box[0] || box[3] <= other[1] ||
                          other[3] <= box[1])) {
                        placed = false;
                        break;
                    }
            }
            if (!placed) continue;
            boxes.push_back(box);
            int class_id = rng.uniform_int(0, n_classes - 1);
            bool ellipse = (class_id % 2) == 1;
            const double* col = palette[(class_id / 2) % 4];
            double jitter[3] = {rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                                rng.uniform(-0.05, 0.05)};
            ToyInstance ti;
            ti.class_id = class_id;
            ti.mask.assign(static_cast<size_t>(hw) * hw, 0);
            int64_t area = 0;
            double cy = 0.5 * (box[0] + box[2]), cx = 0.5 * (box[1] + box[3]);
            double ry = 0.5 * (box[2] - box[0]), rx = 0.5 * (box[3] - box[1]);
            for (int y = box[0]; y < box[2]; ++y)
                for (int x = box[1]; x < box[3]; ++x) {
                    if (ellipse) {
                        double dy = (y + 0.5 - cy) / ry, dx = (x + 0.5 - cx) / rx;
                        if (dy * dy + dx * dx > 1.0) continue;
                    }
                    ti.mask[static_cast<size_t>(y) * hw + x] = 1;
                    ++area;
                    s.semantic[static_cast<size_t>(y) * hw + x] = class_id;
                    for (int c = 0; c < 3; ++c)
                        s.image[(static_cast<int64_t>(c) * hw + y) * hw + x] =
                            static_cast<float>(col[c] + jitter[c] + rng.uniform(-0.02, 0.02));
                }
            if (area > 0) s.instances.push_back(std::move(ti));
        }
        // keep at least one instance per image
        if (s.instances.empty()) {
            --img_i;  // regenerate with advanced rng state
            continue;
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace mrovseg
