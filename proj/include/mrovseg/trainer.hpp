#pragma once

#include <fstream>
#include <functional>

#include "mrovseg/metrics.hpp"
#include "mrovseg/model.hpp"
#include "mrovseg/optim.hpp"
#include "mrovseg/toy_data.hpp"

namespace mrovseg {

struct StepLog {
    int step = 0;
    double lr = 0.0;
    double total = 0.0;
    LossBreakdown terms;
    double grad_norm = 0.0;
};

struct TrainResult {
    std::vector<StepLog> log;
    double train_miou = 0.0;
    uint64_t frozen_before = 0, frozen_after = 0;
};

// Nearest-neighbor downsample of a binary mask to the prediction resolution.
template <class S>
TensorT<S> downsample_mask_nearest(const std::vector<uint8_t>& mask, int h, int w, int oh, int ow) {
    TensorT<S> out({oh, ow});
    for (int y = 0; y < oh; ++y) {
        int sy = static_cast<int>((static_cast<int64_t>(y) * h + h / 2) / oh);
        sy = std::min(sy, h - 1);
        for (int x = 0; x < ow; ++x) {
            int sx = static_cast<int>((static_cast<int64_t>(x) * w + w / 2) / ow);
            sx = std::min(sx, w - 1);
            out[static_cast<int64_t>(y) * ow + x] =
                mask[static_cast<size_t>(sy) * w + sx] ? S(1) : S(0);
        }
    }
    return out;
}

// Single-sample-per-step training loop over the synthetic dataset. Backbone
// features are cached per image (the encoder is frozen, so they are
// constants), which keeps the step cost at the trainable path only.
template <class S>
class ToyTrainerT {
public:
    ToyTrainerT(SegModelT<S>& model, std::vector<ToySample> data,
                std::vector<std::string> class_names)
        : model_(model), data_(std::move(data)), class_names_(std::move(class_names)) {
        if (data_.empty()) throw ContractError("trainer: empty dataset");
        TextEmbedder embedder(model_.config().backbone.embed_dim, model_.config().text_seed());
        text_base_ = embedder.embed_vocabulary_tensor<S>(class_names_);
        for (const auto& s : data_) {
            feats_.push_back(model_.encode(cast_tensor<float, S>(s.image)));
            targets_.push_back({});
        }
    }

    // progress callback: (step, log) -> void; may be empty
    TrainResult train(std::function<void(const StepLog&)> on_step = {}) {
        const auto& tc = model_.config().train;
        auto& store = model_.store();
        AdamWConfig ocfg;
        ocfg.base_lr = tc.base_lr;
        ocfg.weight_decay = tc.weight_decay;
        ocfg.poly_power = tc.poly_power;
        ocfg.total_steps = tc.steps;
        ocfg.clip_norm = tc.clip_norm;
        AdamWT<S> opt(ocfg);

        TrainResult res;
        res.frozen_before = store.frozen_checksum();
        for (int step = 0; step < tc.steps; ++step) {
            int idx = step % static_cast<int>(data_.size());
            StepLog lg;
            lg.step = step;
            lg.lr = opt.current_lr();

            TapeT<S> tape;
            std::map<std::string, TensorT<S>> grads;
            {
                typename TapeT<S>::Scope scope(tape);
                store.watch_trainable(tape);
                auto fw = model_.forward(feats_[static_cast<size_t>(idx)], text_base_);
                ensure_targets(idx, fw.masks.height, fw.masks.width);
                auto logits_full = model_.classifier().logits_with_no_object(fw.class_logits);
                auto assignment = match_targets(logits_full, fw.masks.mask_logits,
                                                targets_[static_cast<size_t>(idx)], tc.loss);
                auto loss = set_loss(logits_full, fw.masks.mask_logits,
                                     targets_[static_cast<size_t>(idx)], assignment, tc.loss,
                                     &lg.terms);
                lg.total = static_cast<double>(loss.item());
                if (!std::isfinite(lg.total))
                    throw NumericError("training aborted: non-finite loss at step " +
                                       std::to_string(step));
                tape.backward(loss);
                grads = store.pull_grads(tape);
            }
            lg.grad_norm = opt.clip_gradients(grads);
            opt.step(store, grads);
            res.log.push_back(lg);
            if (on_step) on_step(lg);
        }
        res.frozen_after = store.frozen_checksum();
        res.train_miou = eval_train_miou();
        return res;
    }

    // Semantic mIoU over the training images at full image resolution
    // (background pixels carry the ignore label).
    double eval_train_miou() {
        int K = static_cast<int>(class_names_.size());
        ConfusionAccumulator acc(K);
        for (size_t i = 0; i < data_.size(); ++i) {
            auto out = infer_sample(i);
            acc.update(out.label_map, data_[i].semantic);
        }
        auto rep = miou_from_confusion(acc);
        return rep.has_classes ? rep.miou : 0.0;
    }

    SegmentationOutputT<S> infer_sample(size_t idx) {
        const auto& s = data_[idx];
        auto fw = model_.forward(feats_[idx], text_base_);
        auto up = resize_bilinear(fw.masks.mask_logits, s.height, s.width);
        int K = fw.class_logits.dim(1);
        auto full = model_.classifier().logits_with_no_object(fw.class_logits);
        return compose_segmentation(full, up, false, model_.config().classifier, K);
    }

    const std::vector<ToySample>& data() const { return data_; }
    const TensorT<S>& text_embeddings() const { return text_base_; }

private:
    void ensure_targets(int idx, int mh, int mw) {
        auto& t = targets_[static_cast<size_t>(idx)];
        if (!t.classes.empty() || data_[static_cast<size_t>(idx)].instances.empty()) return;
        const auto& s = data_[static_cast<size_t>(idx)];
        for (const auto& inst : s.instances) {
            t.classes.push_back(inst.class_id);
            t.masks.push_back(downsample_mask_nearest<S>(inst.mask, s.height, s.width, mh, mw));
        }
    }

    SegModelT<S>& model_;
    std::vector<ToySample> data_;
    std::vector<std::string> class_names_;
    TensorT<S> text_base_;
    std::vector<MultiResFeaturesT<S>> feats_;
    std::vector<SampleTargets<S>> targets_;
};

inline void write_train_csv(const std::string& path, const std::vector<StepLog>& log) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write training log: " + path);
    out << "step,lr,loss,ce,bce,dice,grad_norm\n";
    for (const auto& l : log)
        out << l.step << "," << l.lr << "," << l.total << "," << l.terms.ce << "," << l.terms.bce
            << "," << l.terms.dice << "," << l.grad_norm << "\n";
}

using ToyTrainer = ToyTrainerT<float>;

}  // namespace mrovseg
