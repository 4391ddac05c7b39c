#pragma once

#include <cstdint>
#include <vector>

#include "mrovseg/common.hpp"

namespace mrovseg {

constexpr int kIgnoreLabel = 255;

// K x K pixel-count matrix (ground-truth row, prediction column) with an
// ignore label. Accumulators from shards merge exactly.
class ConfusionAccumulator {
public:
    explicit ConfusionAccumulator(int num_classes, int ignore_label = kIgnoreLabel);

    void update(const std::vector<int>& pred, const std::vector<int>& gt);
    void merge(const ConfusionAccumulator& other);

    int num_classes() const { return k_; }
    int64_t at(int gt, int pred) const { return counts_[static_cast<size_t>(gt) * k_ + pred]; }
    int64_t total() const;

private:
    int k_;
    int ignore_;
    std::vector<int64_t> counts_;
};

struct IouReport {
    std::vector<double> per_class;   // valid where present[c]
    std::vector<bool> present;       // class appears in ground truth
    double miou = 0.0;
    int classes_counted = 0;
    bool has_classes = false;        // false when every pixel was ignored
};

IouReport miou_from_confusion(const ConfusionAccumulator& acc);
IouReport compute_miou(const std::vector<int>& pred, const std::vector<int>& gt, int num_classes,
                       int ignore_label = kIgnoreLabel);

// Panoptic quality over (class, binary mask) segment lists.
struct Segment {
    int class_id = 0;
    std::vector<uint8_t> mask;  // row-major h*w, nonzero = inside
};

struct PanopticStats {
    int tp = 0, fp = 0, fn = 0;
    double iou_sum = 0.0;

    void merge(const PanopticStats& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        iou_sum += o.iou_sum;
    }
    double pq() const;
    double sq() const;
    double rq() const;
};

// Matches predictions to ground truth per class at IoU > 0.5 (strict).
// Prediction masks must be mutually disjoint.
PanopticStats panoptic_stats(const std::vector<Segment>& pred, const std::vector<Segment>& gt,
                             int height, int width);

struct PanopticResult {
    double pq = 0.0, sq = 0.0, rq = 0.0;
    PanopticStats stats;
};

PanopticResult panoptic_quality(const std::vector<Segment>& pred, const std::vector<Segment>& gt,
                                int height, int width);

}  // namespace mrovseg
