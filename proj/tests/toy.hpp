#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "seqground/decision.hpp"

namespace toy {

using namespace seqground;

inline std::shared_ptr<EmbeddingTable> table(std::size_t dim = 6, std::uint64_t seed = 3) {
    std::vector<std::string> words{"a", "dog", "cat", "red", "blue", "left", "right", "of", "and", "ball", "man", "the"};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<std::vector<double>> vecs;
    for (std::size_t i = 0; i < words.size(); ++i) {
        std::vector<double> v(dim);
        for (auto& x : v) x = n(rng);
        vecs.push_back(v);
    }
    return std::make_shared<EmbeddingTable>(words, vecs);
}

inline ModelConfig small_config(const std::string& preset = "SeqGROUND") {
    ModelConfig c;
    c.encoder.widths = {10, 8};
    c.lstm_hidden = 5;
    c.head_hidden = {7, 6};
    c.ablation = AblationConfig::preset(preset);
    return c;
}

inline SceneInput scene(std::size_t m, std::size_t dv, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SceneInput s;
    s.width = 100;
    s.height = 80;
    for (std::size_t i = 0; i < m; ++i) {
        double x = 5 + 90 * u(rng), y = 5 + 70 * u(rng);
        double w = 2 + (95 - x) * u(rng), h = 2 + (75 - y) * u(rng);
        s.boxes.push_back({x - 4, y - 4, std::min(100.0, x + w), std::min(80.0, y + h)});
        std::vector<double> f(dv);
        for (auto& v : f) v = u(rng) * 2 - 1;
        s.features.push_back(f);
    }
    s.image_feature.resize(dv);
    for (auto& v : s.image_feature) v = u(rng);
    return s;
}

inline std::vector<std::vector<std::string>> phrases(std::size_t n, std::mt19937_64& rng) {
    static const std::vector<std::vector<std::string>> pool{
        {"a", "dog"}, {"the", "red", "ball"}, {"and"}, {"a", "man"}, {"of"}, {"blue", "cat"}, {"left", "of"}, {"zebra"}};
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::vector<std::vector<std::string>> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(pool[pick(rng)]);
    return out;
}

inline DecisionLabels labels(std::size_t n, std::size_t m, std::mt19937_64& rng) {
    std::bernoulli_distribution b(0.35);
    DecisionLabels out(n, std::vector<int>(m));
    for (auto& row : out)
        for (auto& v : row) v = b(rng) ? 1 : 0;
    return out;
}

}  // namespace toy
