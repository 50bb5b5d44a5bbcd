#pragma once

// Finite-difference check of the two training losses on a fixed toy problem:
// the pretraining ranking loss through both encoders, and the grounding BCE
// through all three stacks and the decision head. Used by `seqground
// gradcheck` and the acceptance run.

#include <memory>
#include <random>

#include "seqground/decision.hpp"
#include "seqground/grad_check.hpp"
#include "seqground/order_embed.hpp"

namespace seqground {

struct GradientFidelity {
    GradCheckReport pretrain;
    GradCheckReport grounding;

    bool passed() const { return pretrain.passed && grounding.passed; }
    double max_rel_error() const { return std::max(pretrain.max_rel_error, grounding.max_rel_error); }
};

namespace selfcheck_detail {

inline std::shared_ptr<EmbeddingTable> toy_table(std::mt19937_64& rng) {
    std::vector<std::string> words{"a", "dog", "the", "red", "ball", "left", "of", "cat"};
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<std::vector<double>> vecs(words.size(), std::vector<double>(6));
    for (auto& v : vecs)
        for (auto& x : v) x = n(rng);
    return std::make_shared<EmbeddingTable>(words, vecs);
}

inline std::vector<double> toy_feature(std::size_t dv, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> f(dv);
    for (auto& x : f) x = u(rng);
    return f;
}

}  // namespace selfcheck_detail

/// Two phrases, three boxes, 64-bit, dropout off.
inline GradientFidelity gradient_fidelity(std::uint64_t seed = 31, double eps = 1e-5, double tol = 1e-4) {
    using namespace selfcheck_detail;
    std::mt19937_64 rng(seed);
    constexpr std::size_t dv = 4;
    ModelConfig cfg;
    cfg.encoder.widths = {10, 8};
    cfg.lstm_hidden = 5;
    cfg.head_hidden = {7, 6};
    cfg.ablation = AblationConfig::preset("SeqGROUND");
    GroundingModel model(toy_table(rng), dv, cfg, seed);

    SceneInput scene;
    scene.width = 100;
    scene.height = 80;
    scene.boxes = {{5, 10, 30, 60}, {40, 5, 70, 40}, {60, 30, 95, 75}};
    for (std::size_t i = 0; i < scene.boxes.size(); ++i) scene.features.push_back(toy_feature(dv, rng));
    scene.image_feature = toy_feature(dv, rng);
    std::vector<std::vector<std::string>> phrases{{"a", "dog"}, {"the", "red", "ball", "left", "of", "cat"}};
    DecisionLabels labels{{1, 0, 0}, {0, 1, 1}};

    GradientFidelity out;
    {
        auto params = model.parameters();
        auto f = [&] {
            auto tf = teacher_forced(model, scene, phrases, labels, Mode::eval());
            std::vector<double> y, w;
            for (std::size_t t = 0; t < tf.step_probs.size(); ++t) {
                const auto& row = labels[tf.workspace.order[t]];
                for (std::size_t i = 0; i < row.size(); ++i) {
                    y.push_back(row[tf.workspace.box_order[i]]);
                    w.push_back(1.0);
                }
            }
            return binary_cross_entropy(concat_rows(tf.step_probs), y, w);
        };
        out.grounding = grad_check(f, params.tensors(), eps, tol);
    }
    {
        const auto& enc = model.encoders();
        auto params = enc.parameters();
        std::vector<double> feats;
        for (const auto& v : scene.features) feats.insert(feats.end(), v.begin(), v.end());
        Tensor box_features({scene.boxes.size(), dv}, feats);
        std::vector<std::vector<std::string>> three{phrases[0], phrases[1], {"cat"}};
        auto f = [&] {
            return in_batch_ranking_loss(encode_phrases(enc, three), encode_boxes(enc, box_features), 0.05);
        };
        out.pretrain = grad_check(f, params.tensors(), eps, tol);
    }
    return out;
}

}  // namespace seqground
