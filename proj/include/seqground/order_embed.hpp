#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "seqground/encoders.hpp"
#include "seqground/optim.hpp"

namespace seqground {

/// Order-embedding similarity F(p, b) = -||max(0, b - p)||^2. Never
/// positive; zero exactly when b <= p elementwise.
inline Tensor similarity(const Tensor& phrase, const Tensor& box) {
    if (phrase.numel() != box.numel()) throw InputError("similarity: phrase and box dimensions differ");
    return neg(squared_l2(relu(sub(box, phrase))));
}

inline double similarity(std::span<const double> phrase, std::span<const double> box) {
    if (phrase.size() != box.size()) throw InputError("similarity: phrase and box dimensions differ");
    double s = 0.0;
    for (std::size_t i = 0; i < phrase.size(); ++i) {
        double v = box[i] - phrase[i];
        if (v > 0.0) s += v * v;
    }
    return -s;
}

/// Similarity of every phrase row against every box row: n x m.
inline Tensor similarity_matrix(const Tensor& phrases, const Tensor& boxes) {
    return neg(order_violation(phrases, boxes));
}

/// Max-margin ranking loss with explicitly sampled contrastives:
///   sum_k [ mean_c max(0, α - T_k + Fb_kc) + mean_c max(0, α - T_k + Fp_kc) ]
/// true_sim is K x 1, box_contrast / phrase_contrast are K x C similarities of
/// contrastive boxes (with the true phrase) and contrastive phrases (with the
/// true box).
inline Tensor ranking_loss(const Tensor& true_sim, const Tensor& box_contrast, const Tensor& phrase_contrast,
                           double margin) {
    if (margin < 0.0) throw ConfigError("ranking margin must be non-negative");
    if (true_sim.cols() != 1 || box_contrast.rows() != true_sim.rows() || phrase_contrast.rows() != true_sim.rows())
        throw DimensionError("ranking_loss: one row of contrastives per true pair is required");
    auto gap = add_scalar(neg(true_sim), margin);
    auto box_terms = scale(sum(relu(add(box_contrast, gap))), 1.0 / static_cast<double>(box_contrast.cols()));
    auto phrase_terms = scale(sum(relu(add(phrase_contrast, gap))), 1.0 / static_cast<double>(phrase_contrast.cols()));
    return add(box_terms, phrase_terms);
}

/// Ranking loss where row k of phrases/boxes is a true pair and every other
/// row of the batch serves as a contrastive (B - 1 per positive).
inline Tensor in_batch_ranking_loss(const Tensor& phrases, const Tensor& boxes, double margin) {
    if (margin < 0.0) throw ConfigError("ranking margin must be non-negative");
    std::size_t b = phrases.rows();
    if (boxes.rows() != b) throw DimensionError("in_batch_ranking_loss: phrase and box batches differ in size");
    if (b < 2) throw ConfigError("a batch of at least 2 pairs is needed to draw contrastives");
    auto sim = similarity_matrix(phrases, boxes);  // [k][j] = F(p_k, b_j)
    auto gap = add_scalar(neg(diag(sim)), margin);
    auto box_terms = relu(add(sim, gap));
    auto phrase_terms = relu(add(transpose(sim), gap));
    std::vector<double> mask(b * b, 1.0 / static_cast<double>(b - 1));
    for (std::size_t k = 0; k < b; ++k) mask[k * b + k] = 0.0;
    return sum(apply_mask(add(box_terms, phrase_terms), Tensor({b, b}, std::move(mask))));
}

struct PretrainConfig {
    double margin = 0.05;
    std::size_t batch_size = 32;
    double learning_rate = 1e-4;
    double grad_clip = 2.0;
    std::size_t epochs = 20;
    std::uint64_t seed = 1;

    void validate() const {
        if (margin < 0.0) throw ConfigError("pretrain margin must be >= 0");
        if (batch_size < 2) throw ConfigError("pretrain batch size must be >= 2");
        if (learning_rate <= 0.0) throw ConfigError("pretrain learning rate must be positive");
    }
};

/// A ground-truth phrase/box pair.
struct PretrainPair {
    std::vector<std::string> tokens;
    std::vector<double> box_feature;
};

struct PretrainResult {
    // Mean loss per pair for every epoch.
    std::vector<double> epoch_loss;
};

/// Contrastive pretraining of both encoders with in-batch negatives, Adam and
/// global-norm gradient clipping. A trailing batch with a single pair is
/// dropped since it has no contrastives.
inline PretrainResult pretrain(Encoders& enc, const std::vector<PretrainPair>& pairs, const PretrainConfig& cfg,
                               const std::function<void(std::size_t, double)>& on_epoch = {}) {
    cfg.validate();
    if (pairs.empty()) throw InputError("pretraining needs at least one pair");
    if (pairs.size() < 2) throw ConfigError("pretraining needs at least two pairs to form contrastives");
    std::mt19937_64 rng(cfg.seed);
    Adam opt(enc.parameters(), cfg.learning_rate);
    PretrainResult result;
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        std::size_t counted = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::size_t n = std::min(cfg.batch_size, order.size() - start);
            if (n < 2) break;
            std::vector<std::vector<std::string>> tokens;
            std::vector<double> features;
            for (std::size_t k = 0; k < n; ++k) {
                const auto& p = pairs[order[start + k]];
                tokens.push_back(p.tokens);
                features.insert(features.end(), p.box_feature.begin(), p.box_feature.end());
            }
            opt.zero_grad();
            Tape tape;
            Mode mode = Mode::train(rng);
            auto phrases = encode_phrases(enc, tokens, mode);
            auto boxes = encode_boxes(enc, Tensor({n, enc.visual_dim()}, std::move(features)), mode);
            auto loss = in_batch_ranking_loss(phrases, boxes, cfg.margin);
            tape.backward(loss);
            clip_global_norm(opt.parameters(), cfg.grad_clip);
            opt.step();
            total += loss.item();
            counted += n;
        }
        double mean = counted ? total / static_cast<double>(counted) : 0.0;
        result.epoch_loss.push_back(mean);
        if (on_epoch) on_epoch(epoch, mean);
    }
    return result;
}

/// One retrieval query: a phrase, its candidate boxes, and which is true.
struct RecallQuery {
    std::vector<std::string> tokens;
    std::vector<std::vector<double>> candidates;
    std::size_t truth = 0;
};

/// Fraction of queries whose true box has the highest similarity (ties go to
/// the lowest index).
inline double recall_at_1(const Encoders& enc, const std::vector<RecallQuery>& queries) {
    if (queries.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& q : queries) {
        auto p = encode_phrase(enc, q.tokens);
        std::size_t best = 0;
        double best_sim = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < q.candidates.size(); ++i) {
            auto b = encode_box(enc, q.candidates[i]);
            double s = similarity(p.data(), b.data());
            if (s > best_sim) {
                best_sim = s;
                best = i;
            }
        }
        hits += best == q.truth;
    }
    return static_cast<double>(hits) / static_cast<double>(queries.size());
}

}  // namespace seqground
