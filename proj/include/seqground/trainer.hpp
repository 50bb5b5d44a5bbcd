#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqground/metrics.hpp"
#include "seqground/optim.hpp"

namespace seqground {

enum class Label : std::uint8_t { negative, positive, ignore };

/// labels[j][i]: phrase j (lexical) against box i of the stage's box set.
using LabelGrid = std::vector<std::vector<Label>>;

struct TrainConfig {
    int stage = 1;
    double pos_iou = 0.7;
    double neg_iou = 0.3;
    double neg_ratio = 3.0;
    std::size_t batch_scenes = 10;
    double learning_rate = 1e-3;
    double grad_clip = 2.0;
    std::size_t epochs = 10;
    std::uint64_t seed = 1;
    // Hard-negative fine-tuning after stage 2.
    bool hard_negatives = true;
    double hard_negative_lr = 1e-4;

    static TrainConfig for_stage(int stage) {
        TrainConfig c;
        c.stage = stage;
        c.learning_rate = stage == 1 ? 1e-3 : 1e-4;
        return c;
    }

    BoxSource source() const { return stage == 1 ? BoxSource::ground_truth : BoxSource::proposals; }

    void validate() const {
        if (stage != 1 && stage != 2) throw ConfigError("stage must be 1 or 2");
        if (!(0.0 <= neg_iou && neg_iou < pos_iou && pos_iou <= 1.0))
            throw ConfigError("IoU bands must satisfy 0 <= neg_iou < pos_iou <= 1");
        if (neg_ratio < 1.0) throw ConfigError("neg_ratio must be >= 1");
        if (batch_scenes == 0) throw ConfigError("batch_scenes must be positive");
        if (!(learning_rate > 0.0) || !(hard_negative_lr > 0.0)) throw ConfigError("learning rates must be positive");
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"stage", c.stage},
         {"pos_iou", c.pos_iou},
         {"neg_iou", c.neg_iou},
         {"neg_ratio", c.neg_ratio},
         {"batch_scenes", c.batch_scenes},
         {"learning_rate", c.learning_rate},
         {"grad_clip", c.grad_clip},
         {"epochs", c.epochs},
         {"seed", c.seed},
         {"hard_negatives", c.hard_negatives},
         {"hard_negative_lr", c.hard_negative_lr}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d = TrainConfig::for_stage(j.value("stage", 1));
    c.stage = d.stage;
    c.pos_iou = j.value("pos_iou", d.pos_iou);
    c.neg_iou = j.value("neg_iou", d.neg_iou);
    c.neg_ratio = j.value("neg_ratio", d.neg_ratio);
    c.batch_scenes = j.value("batch_scenes", d.batch_scenes);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.grad_clip = j.value("grad_clip", d.grad_clip);
    c.epochs = j.value("epochs", d.epochs);
    c.seed = j.value("seed", d.seed);
    c.hard_negatives = j.value("hard_negatives", d.hard_negatives);
    c.hard_negative_lr = j.value("hard_negative_lr", d.hard_negative_lr);
}

/// Stage 1: the boxes are the gt objects themselves; a box is positive for a
/// phrase iff the phrase is annotated with it.
inline LabelGrid assign_labels_identity(const SceneRecord& s) {
    LabelGrid out;
    for (const auto& ph : s.phrases) {
        std::vector<Label> row(s.gt_boxes.size(), Label::negative);
        if (ph.groundable)
            for (auto i : ph.gt) row.at(i) = Label::positive;
        out.push_back(std::move(row));
    }
    return out;
}

/// Stage 2 banding of one proposal against a phrase's gt boxes.
inline Label band_label(double max_iou, double pos_iou, double neg_iou) {
    if (max_iou >= pos_iou) return Label::positive;
    if (max_iou < neg_iou) return Label::negative;
    return Label::ignore;
}

/// Stage 2: proposals are labeled by their best IoU with the phrase's gt
/// boxes. Phrases without gt (intermediate words) are negative everywhere.
inline LabelGrid assign_labels_iou(const SceneRecord& s, double pos_iou, double neg_iou) {
    if (s.gt_boxes.empty()) throw InputError("scene '" + s.scene_id + "' has no annotations");
    LabelGrid out;
    for (std::size_t j = 0; j < s.phrases.size(); ++j) {
        auto gt = s.phrase_gt_boxes(j);
        std::vector<Label> row;
        for (const auto& p : s.proposals) {
            double best = 0.0;
            for (const auto& g : gt) best = std::max(best, iou(p.box, g));
            row.push_back(gt.empty() ? Label::negative : band_label(best, pos_iou, neg_iou));
        }
        out.push_back(std::move(row));
    }
    return out;
}

inline LabelGrid assign_labels(const SceneRecord& s, const TrainConfig& cfg) {
    return cfg.stage == 1 ? assign_labels_identity(s) : assign_labels_iou(s, cfg.pos_iou, cfg.neg_iou);
}

/// Loss mask over a batch's flattened decisions. Every positive is kept and
/// negatives are subsampled to neg_ratio per positive; when there are not
/// enough negatives, or no positives at all, every negative is kept.
/// Entries flagged in `forced` (mined hard negatives) are always kept, on
/// top of the sampled ones. Ignore-labeled entries get weight 0.
inline std::vector<double> sample_mask(const std::vector<Label>& labels, double neg_ratio, std::mt19937_64& rng,
                                       const std::vector<char>& forced = {}) {
    std::vector<double> mask(labels.size(), 0.0);
    std::vector<std::size_t> negatives;
    std::size_t positives = 0;
    for (std::size_t k = 0; k < labels.size(); ++k) {
        if (labels[k] == Label::positive) {
            mask[k] = 1.0;
            ++positives;
        } else if (labels[k] == Label::negative) {
            if (!forced.empty() && forced[k])
                mask[k] = 1.0;
            else
                negatives.push_back(k);
        }
    }
    auto quota = static_cast<std::size_t>(std::floor(neg_ratio * static_cast<double>(positives)));
    if (positives == 0 || negatives.size() <= quota) {
        for (auto k : negatives) mask[k] = 1.0;
        return mask;
    }
    // Partial Fisher-Yates: the first `quota` entries become a uniform sample.
    for (std::size_t a = 0; a < quota; ++a) {
        std::uniform_int_distribution<std::size_t> pick(a, negatives.size() - 1);
        std::swap(negatives[a], negatives[pick(rng)]);
        mask[negatives[a]] = 1.0;
    }
    return mask;
}

/// Mean BCE over the masked decisions.
inline Tensor masked_bce(const Tensor& probs, const std::vector<double>& labels, const std::vector<double>& mask) {
    double n = std::accumulate(mask.begin(), mask.end(), 0.0);
    if (n == 0.0) return scale(sum(probs), 0.0);
    std::vector<double> w(mask.size());
    for (std::size_t k = 0; k < mask.size(); ++k) w[k] = mask[k] / n;
    return binary_cross_entropy(probs, labels, w);
}

inline DecisionLabels gold_decisions(const LabelGrid& g) {
    DecisionLabels out;
    for (const auto& row : g) {
        std::vector<int> r;
        for (auto l : row) r.push_back(l == Label::positive ? 1 : 0);
        out.push_back(std::move(r));
    }
    return out;
}

/// Hard negatives: mined[scene][phrase] lists box indices to force into the
/// negative pool.
using MinedNegatives = std::vector<std::vector<std::vector<std::size_t>>>;

/// Flattened decisions of one scene, in the row order produced by
/// teacher_forced(): step by step, boxes left to right.
struct SceneBatchPart {
    std::vector<Label> labels;
    std::vector<char> forced;
};

inline SceneBatchPart flatten_scene(const Workspace& ws, const LabelGrid& labels,
                                    const std::vector<std::vector<std::size_t>>* mined) {
    SceneBatchPart part;
    for (std::size_t t = 0; t < ws.num_steps(); ++t) {
        std::size_t j = ws.order[t];
        std::vector<char> hard(ws.num_boxes(), 0);
        if (mined)
            for (auto i : mined->at(j)) hard.at(i) = 1;
        for (std::size_t r = 0; r < ws.num_boxes(); ++r) {
            std::size_t i = ws.box_order[r];
            part.labels.push_back(labels.at(j).at(i));
            part.forced.push_back(hard[i]);
        }
    }
    return part;
}

struct BatchLoss {
    double loss = 0.0;
    std::size_t decisions = 0;
};

/// One optimizer update on a batch of scenes with teacher forcing.
inline BatchLoss train_step(const GroundingModel& model, Adam& opt, const std::vector<const SceneRecord*>& batch,
                            const std::vector<const LabelGrid*>& labels, const TrainConfig& cfg, std::mt19937_64& rng,
                            const std::vector<const std::vector<std::vector<std::size_t>>*>& mined = {}) {
    opt.zero_grad();
    Tape tape;
    Mode mode = Mode::train(rng);
    std::vector<Tensor> probs;
    std::vector<Label> flat;
    std::vector<char> forced;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& s = *batch[b];
        auto tf = teacher_forced(model, scene_input(s, cfg.source()), s.phrase_tokens(), gold_decisions(*labels[b]),
                                 mode);
        auto part = flatten_scene(tf.workspace, *labels[b], mined.empty() ? nullptr : mined[b]);
        probs.insert(probs.end(), tf.step_probs.begin(), tf.step_probs.end());
        flat.insert(flat.end(), part.labels.begin(), part.labels.end());
        forced.insert(forced.end(), part.forced.begin(), part.forced.end());
    }
    auto mask = sample_mask(flat, cfg.neg_ratio, rng, forced);
    std::vector<double> y(flat.size());
    for (std::size_t k = 0; k < flat.size(); ++k) y[k] = flat[k] == Label::positive ? 1.0 : 0.0;
    auto loss = masked_bce(concat_rows(probs), y, mask);
    tape.backward(loss);
    clip_global_norm(opt.parameters(), cfg.grad_clip);
    opt.step();
    return {loss.item(), static_cast<std::size_t>(std::accumulate(mask.begin(), mask.end(), 0.0))};
}

struct EpochLog {
    int stage = 1;
    std::string phase;  // "train" or "hard-negative"
    std::size_t epoch = 0;
    double loss = 0.0;
    double val_accuracy = -1.0;  // negative when no validation set was given
};

struct TrainResult {
    std::vector<EpochLog> log;
    std::size_t mined = 0;
};

inline std::string training_log_csv(const std::vector<EpochLog>& log) {
    std::string s = "stage,phase,epoch,loss,val_accuracy\n";
    for (const auto& e : log) {
        char buf[160];
        std::snprintf(buf, sizeof buf, "%d,%s,%zu,%.10g,%.6f\n", e.stage, e.phase.c_str(), e.epoch, e.loss,
                      e.val_accuracy);
        s += buf;
    }
    return s;
}

/// Runs one epoch over `scenes` in a shuffled order. Returns the mean batch loss.
inline double train_epoch(const GroundingModel& model, Adam& opt, const std::vector<SceneRecord>& scenes,
                          const std::vector<LabelGrid>& labels, const TrainConfig& cfg, std::mt19937_64& rng,
                          const MinedNegatives* mined, int stage, std::size_t epoch) {
    std::vector<std::size_t> order(scenes.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_scenes) {
        std::vector<const SceneRecord*> bs;
        std::vector<const LabelGrid*> bl;
        std::vector<const std::vector<std::vector<std::size_t>>*> bm;
        for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch_scenes); ++k) {
            bs.push_back(&scenes[order[k]]);
            bl.push_back(&labels[order[k]]);
            if (mined) bm.push_back(&(*mined)[order[k]]);
        }
        try {
            total += train_step(model, opt, bs, bl, cfg, rng, bm).loss;
        } catch (const NumericError& e) {
            std::string ids;
            for (const auto* s : bs) ids += (ids.empty() ? "" : ",") + s->scene_id;
            throw NumericError("non-finite training state at stage " + std::to_string(stage) + ", epoch " +
                               std::to_string(epoch) + ", batch scenes [" + ids + "]: " + e.what());
        }
        ++batches;
    }
    return batches ? total / static_cast<double>(batches) : 0.0;
}

/// One pass over the training scenes (eval mode, teacher forced). For each
/// phrase, negatives predicted with probability >= 0.5 are mined, highest
/// first (ties: lower box index), up to neg_ratio * max(1, positives).
inline MinedNegatives mine_hard_negatives(const GroundingModel& model, const std::vector<SceneRecord>& scenes,
                                          const std::vector<LabelGrid>& labels, const TrainConfig& cfg,
                                          std::size_t* count = nullptr) {
    MinedNegatives out;
    std::size_t n = 0;
    for (std::size_t s = 0; s < scenes.size(); ++s) {
        const auto& scene = scenes[s];
        auto probs = teacher_forced_probs(model, scene_input(scene, cfg.source()), scene.phrase_tokens(),
                                          gold_decisions(labels[s]));
        std::vector<std::vector<std::size_t>> per_phrase;
        for (std::size_t j = 0; j < probs.size(); ++j) {
            const auto& row = labels[s][j];
            std::size_t pos = std::count(row.begin(), row.end(), Label::positive);
            std::vector<std::size_t> cand;
            for (std::size_t i = 0; i < row.size(); ++i)
                if (row[i] == Label::negative && probs[j][i] >= 0.5) cand.push_back(i);
            std::stable_sort(cand.begin(), cand.end(),
                             [&](std::size_t a, std::size_t b) { return probs[j][a] > probs[j][b]; });
            auto cap = static_cast<std::size_t>(cfg.neg_ratio * static_cast<double>(std::max<std::size_t>(1, pos)));
            if (cand.size() > cap) cand.resize(cap);
            std::sort(cand.begin(), cand.end());
            n += cand.size();
            per_phrase.push_back(std::move(cand));
        }
        out.push_back(std::move(per_phrase));
    }
    if (count) *count = n;
    return out;
}

/// Trains one stage. Stage 2 ends with hard-negative mining and one
/// fine-tuning epoch when enabled and anything was mined.
inline TrainResult train_stage(GroundingModel& model, const std::vector<SceneRecord>& train,
                               const std::vector<SceneRecord>& val, const TrainConfig& cfg,
                               const std::function<void(const EpochLog&)>& on_epoch = {}) {
    cfg.validate();
    if (train.empty()) throw InputError("no training scenes");
    std::vector<LabelGrid> labels;
    for (const auto& s : train) labels.push_back(assign_labels(s, cfg));
    std::mt19937_64 rng(cfg.seed);
    Adam opt(model.parameters(), cfg.learning_rate);
    TrainResult result;
    EvalOptions eval_opt;
    eval_opt.source = cfg.source();
    auto val_accuracy = [&] { return val.empty() ? -1.0 : evaluate(model, val, eval_opt).accuracy(); };
    auto record = [&](EpochLog e) {
        result.log.push_back(e);
        if (on_epoch) on_epoch(e);
    };
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        double loss = train_epoch(model, opt, train, labels, cfg, rng, nullptr, cfg.stage, epoch);
        record({cfg.stage, "train", epoch, loss, val_accuracy()});
    }
    if (cfg.stage == 2 && cfg.hard_negatives) {
        auto mined = mine_hard_negatives(model, train, labels, cfg, &result.mined);
        if (result.mined > 0) {
            opt.set_learning_rate(cfg.hard_negative_lr);
            double loss = train_epoch(model, opt, train, labels, cfg, rng, &mined, cfg.stage, cfg.epochs);
            record({cfg.stage, "hard-negative", cfg.epochs, loss, val_accuracy()});
        }
    }
    return result;
}

}  // namespace seqground
