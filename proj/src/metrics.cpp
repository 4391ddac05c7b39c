#include "mrovseg/metrics.hpp"

#include <string>

namespace mrovseg {

ConfusionAccumulator::ConfusionAccumulator(int num_classes, int ignore_label)
    : k_(num_classes), ignore_(ignore_label),
      counts_(static_cast<size_t>(num_classes) * num_classes, 0) {
    if (num_classes < 1) throw ContractError("ConfusionAccumulator: need >= 1 class");
}

void ConfusionAccumulator::update(const std::vector<int>& pred, const std::vector<int>& gt) {
    if (pred.size() != gt.size())
        throw DimensionError("confusion update: map sizes differ (" + std::to_string(pred.size()) +
                             " vs " + std::to_string(gt.size()) + ")");
    for (size_t i = 0; i < pred.size(); ++i) {
        int g = gt[i];
        if (g == ignore_) continue;
        int p = pred[i];
        if (g < 0 || g >= k_)
            throw ContractError("confusion update: ground-truth label " + std::to_string(g) +
                                " out of range [0," + std::to_string(k_) + ")");
        if (p < 0 || p >= k_)
            throw ContractError("confusion update: predicted label " + std::to_string(p) +
                                " out of range [0," + std::to_string(k_) + ")");
        ++counts_[static_cast<size_t>(g) * k_ + p];
    }
}

void ConfusionAccumulator::merge(const ConfusionAccumulator& other) {
    if (other.k_ != k_) throw ContractError("confusion merge: class count mismatch");
    for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

int64_t ConfusionAccumulator::total() const {
    int64_t t = 0;
    for (int64_t c : counts_) t += c;
    return t;
}

IouReport miou_from_confusion(const ConfusionAccumulator& acc) {
    int k = acc.num_classes();
    IouReport rep;
    rep.per_class.assign(static_cast<size_t>(k), 0.0);
    rep.present.assign(static_cast<size_t>(k), false);
    double sum = 0.0;
    for (int c = 0; c < k; ++c) {
        int64_t tp = acc.at(c, c);
        int64_t fn = 0, fp = 0;
        for (int j = 0; j < k; ++j) {
            if (j == c) continue;
            fn += acc.at(c, j);
            fp += acc.at(j, c);
        }
        if (tp + fn == 0) continue;  // class absent from ground truth
        rep.present[static_cast<size_t>(c)] = true;
        double iou = (tp + fp + fn) > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp + fn) : 0.0;
        rep.per_class[static_cast<size_t>(c)] = iou;
        sum += iou;
        ++rep.classes_counted;
    }
    rep.has_classes = rep.classes_counted > 0;
    rep.miou = rep.has_classes ? sum / rep.classes_counted : 0.0;
    return rep;
}

IouReport compute_miou(const std::vector<int>& pred, const std::vector<int>& gt, int num_classes,
                       int ignore_label) {
    ConfusionAccumulator acc(num_classes, ignore_label);
    acc.update(pred, gt);
    return miou_from_confusion(acc);
}

double PanopticStats::pq() const {
    double denom = tp + 0.5 * fp + 0.5 * fn;
    return denom > 0 ? iou_sum / denom : 0.0;
}

double PanopticStats::sq() const { return tp > 0 ? iou_sum / tp : 0.0; }

double PanopticStats::rq() const {
    double denom = tp + 0.5 * fp + 0.5 * fn;
    return denom > 0 ? tp / denom : 0.0;
}

namespace {

double mask_iou(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b) {
    int64_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        bool ia = a[i] != 0, ib = b[i] != 0;
        inter += (ia && ib) ? 1 : 0;
        uni += (ia || ib) ? 1 : 0;
    }
    return uni > 0 ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
}

}  // namespace

PanopticStats panoptic_stats(const std::vector<Segment>& pred, const std::vector<Segment>& gt,
                             int height, int width) {
    size_t npix = static_cast<size_t>(height) * static_cast<size_t>(width);
    for (const auto& s : pred)
        if (s.mask.size() != npix) throw DimensionError("panoptic: prediction mask size mismatch");
    for (const auto& s : gt)
        if (s.mask.size() != npix) throw DimensionError("panoptic: ground-truth mask size mismatch");
    // Prediction masks must not overlap.
    std::vector<uint8_t> seen(npix, 0);
    for (const auto& s : pred)
        for (size_t i = 0; i < npix; ++i)
            if (s.mask[i]) {
                if (seen[i]) throw ContractError("panoptic: overlapping prediction masks");
                seen[i] = 1;
            }

    PanopticStats st;
    std::vector<bool> pred_used(pred.size(), false);
    std::vector<bool> gt_used(gt.size(), false);
    // IoU > 0.5 makes matches unique for disjoint predictions; a greedy pass
    // over all qualifying pairs is exact.
    for (size_t gi = 0; gi < gt.size(); ++gi) {
        double best = 0.5;  // strict threshold
        int best_pi = -1;
        for (size_t pi = 0; pi < pred.size(); ++pi) {
            if (pred_used[pi] || pred[pi].class_id != gt[gi].class_id) continue;
            double iou = mask_iou(pred[pi].mask, gt[gi].mask);
            if (iou > best) {
                best = iou;
                best_pi = static_cast<int>(pi);
            }
        }
        if (best_pi >= 0) {
            pred_used[static_cast<size_t>(best_pi)] = true;
            gt_used[gi] = true;
            ++st.tp;
            st.iou_sum += best;
        }
    }
    for (size_t pi = 0; pi < pred.size(); ++pi)
        if (!pred_used[pi]) ++st.fp;
    for (size_t gi = 0; gi < gt.size(); ++gi)
        if (!gt_used[gi]) ++st.fn;
    return st;
}

PanopticResult panoptic_quality(const std::vector<Segment>& pred, const std::vector<Segment>& gt,
                                int height, int width) {
    PanopticResult res;
    res.stats = panoptic_stats(pred, gt, height, width);
    res.pq = res.stats.pq();
    res.sq = res.stats.sq();
    res.rq = res.stats.rq();
    return res;
}

}  // namespace mrovseg
