#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "seqground/pipeline.hpp"
#include "toy.hpp"

using namespace seqground;

namespace {

WorldSpec tiny_world(std::uint64_t seed = 3) {
    WorldSpec w;
    w.word_dim = 6;
    w.visual_dim = 8;
    w.train_scenes = 50;
    w.val_scenes = 10;
    w.test_scenes = 10;
    w.seed = seed;
    return w;
}

ModelConfig tiny_model() {
    ModelConfig c;
    c.encoder.widths = {12, 8};
    c.lstm_hidden = 6;
    c.head_hidden = {8, 6};
    return c;
}

std::size_t count(const std::vector<Label>& v, Label l) { return std::count(v.begin(), v.end(), l); }

}  // namespace

TEST(Labels, BandingExamples) {
    EXPECT_EQ(band_label(0.75, 0.7, 0.3), Label::positive);
    EXPECT_EQ(band_label(0.7, 0.7, 0.3), Label::positive);
    EXPECT_EQ(band_label(0.5, 0.7, 0.3), Label::ignore);
    EXPECT_EQ(band_label(0.3, 0.7, 0.3), Label::ignore);
    EXPECT_EQ(band_label(0.2, 0.7, 0.3), Label::negative);
}

TEST(Labels, StageTwoUsesBestIouPerPhrase) {
    auto ds = World(tiny_world()).generate();
    for (const auto& s : ds.train) {
        auto g = assign_labels_iou(s, 0.7, 0.3);
        ASSERT_EQ(g.size(), s.phrases.size());
        for (std::size_t j = 0; j < s.phrases.size(); ++j) {
            for (std::size_t i = 0; i < s.proposals.size(); ++i) {
                double best = 0.0;
                for (auto k : s.phrases[j].gt) best = std::max(best, iou(s.proposals[i].box, s.gt_boxes[k].box));
                Label want = !s.phrases[j].groundable ? Label::negative
                             : best >= 0.7           ? Label::positive
                             : best < 0.3            ? Label::negative
                                                     : Label::ignore;
                EXPECT_EQ(g[j][i], want);
            }
        }
    }
    SceneRecord bare = ds.train[0];
    bare.gt_boxes.clear();
    for (auto& p : bare.phrases) p.gt.clear();
    EXPECT_THROW(assign_labels_iou(bare, 0.7, 0.3), InputError);
}

TEST(Labels, StageOneIgnoresGeometry) {
    auto ds = World(tiny_world()).generate();
    auto s = ds.train[1];
    auto before = assign_labels_identity(s);
    for (auto& g : s.gt_boxes) g.box = {0, 0, 1, 1};  // every box now overlaps every other
    EXPECT_EQ(assign_labels_identity(s), before);
    for (std::size_t j = 0; j < s.phrases.size(); ++j)
        for (std::size_t i = 0; i < s.gt_boxes.size(); ++i) {
            bool linked = std::find(s.phrases[j].gt.begin(), s.phrases[j].gt.end(), i) != s.phrases[j].gt.end();
            EXPECT_EQ(before[j][i] == Label::positive, linked);
        }
}

TEST(Sampling, Examples) {
    std::mt19937_64 rng(1);
    std::vector<Label> a(2, Label::positive);
    a.insert(a.end(), 10, Label::negative);
    auto m = sample_mask(a, 3.0, rng);
    EXPECT_EQ(std::accumulate(m.begin(), m.end(), 0.0), 8.0);
    EXPECT_EQ(m[0] + m[1], 2.0);
    std::vector<Label> b(2, Label::positive);
    b.insert(b.end(), 4, Label::negative);
    auto mb = sample_mask(b, 3.0, rng);
    EXPECT_EQ(std::accumulate(mb.begin(), mb.end(), 0.0), 6.0);
    std::vector<Label> c(5, Label::negative);
    auto mc = sample_mask(c, 3.0, rng);
    EXPECT_EQ(std::accumulate(mc.begin(), mc.end(), 0.0), 5.0);
}

TEST(Sampling, RatioPropertyOverRandomPatterns) {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> kind(0, 2);
    for (int trial = 0; trial < 2000; ++trial) {
        std::size_t n = 1 + trial % 60;
        std::vector<Label> l(n);
        for (auto& x : l) x = static_cast<Label>(kind(rng));
        auto m = sample_mask(l, 3.0, rng);
        std::size_t pos = count(l, Label::positive), neg = count(l, Label::negative);
        std::size_t kept_pos = 0, kept_neg = 0;
        for (std::size_t k = 0; k < n; ++k) {
            if (l[k] == Label::ignore) {
                EXPECT_EQ(m[k], 0.0);
            }
            if (l[k] == Label::positive) kept_pos += m[k] == 1.0;
            if (l[k] == Label::negative) kept_neg += m[k] == 1.0;
        }
        EXPECT_EQ(kept_pos, pos);
        if (pos == 0 || neg <= 3 * pos) {
            EXPECT_EQ(kept_neg, neg);
        } else {
            EXPECT_EQ(kept_neg, 3 * pos);
        }
    }
}

TEST(Sampling, ForcedNegativesAugmentTheSample) {
    std::mt19937_64 rng(3);
    std::vector<Label> l{Label::positive};
    l.insert(l.end(), 10, Label::negative);
    std::vector<char> forced(l.size(), 0);
    forced[10] = 1;
    auto m = sample_mask(l, 3.0, rng, forced);
    EXPECT_EQ(m[10], 1.0);
    EXPECT_EQ(std::accumulate(m.begin(), m.end(), 0.0), 5.0);
}

TEST(Loss, Examples) {
    auto one = masked_bce(Tensor({1, 1}, {0.5}), {1.0}, {1.0});
    EXPECT_NEAR(one.item(), std::log(2.0), 1e-15);
    auto perfect = masked_bce(Tensor({2, 1}, {1.0 - 1e-12, 1e-12}), {1.0, 0.0}, {1.0, 1.0});
    EXPECT_LT(perfect.item(), 1e-11);
}

TEST(Loss, IgnoreBandIsBitIdenticalUnderPerturbation) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.01, 0.99);
    std::uniform_int_distribution<int> kind(0, 2);
    for (int trial = 0; trial < 500; ++trial) {
        std::size_t n = 3 + trial % 20;
        std::vector<Label> l(n);
        std::vector<double> p(n), y(n);
        for (std::size_t k = 0; k < n; ++k) {
            l[k] = static_cast<Label>(kind(rng));
            p[k] = u(rng);
            y[k] = l[k] == Label::positive;
        }
        std::mt19937_64 r1(trial), r2(trial);
        auto m1 = sample_mask(l, 3.0, r1), m2 = sample_mask(l, 3.0, r2);
        auto q = p;
        for (std::size_t k = 0; k < n; ++k)
            if (l[k] == Label::ignore) q[k] = u(rng);
        double a = masked_bce(Tensor({n, 1}, p), y, m1).item();
        double b = masked_bce(Tensor({n, 1}, q), y, m2).item();
        EXPECT_EQ(std::bit_cast<std::uint64_t>(a), std::bit_cast<std::uint64_t>(b));
    }
}

TEST(HardNegatives, UniformHalfPicksLowestIndices) {
    // A zeroed head outputs exactly 0.5 everywhere.
    auto ds = World(tiny_world()).generate();
    GroundingModel model(ds.embeddings, ds.visual_dim(), tiny_model(), 1);
    auto head = model.head().parameters();
    for (const auto& [name, t] : head.entries()) {
        Tensor h = t;
        for (auto& v : h.mutable_data()) v = 0.0;
    }
    auto cfg = TrainConfig::for_stage(2);
    std::vector<SceneRecord> scenes(ds.train.begin(), ds.train.begin() + 5);
    std::vector<LabelGrid> labels;
    for (const auto& s : scenes) labels.push_back(assign_labels(s, cfg));
    std::size_t n = 0;
    auto mined = mine_hard_negatives(model, scenes, labels, cfg, &n);
    EXPECT_GT(n, 0u);
    for (std::size_t s = 0; s < scenes.size(); ++s)
        for (std::size_t j = 0; j < labels[s].size(); ++j) {
            const auto& row = labels[s][j];
            std::vector<std::size_t> negs;
            for (std::size_t i = 0; i < row.size(); ++i)
                if (row[i] == Label::negative) negs.push_back(i);
            std::size_t pos = count(row, Label::positive);
            std::size_t cap = 3 * std::max<std::size_t>(1, pos);
            if (negs.size() > cap) negs.resize(cap);
            EXPECT_EQ(mined[s][j], negs);
        }
}

TEST(HardNegatives, NothingAboveHalfMinesNothing) {
    auto ds = World(tiny_world()).generate();
    GroundingModel model(ds.embeddings, ds.visual_dim(), tiny_model(), 1);
    Tensor b = model.head().layers.back().bias;
    b.mutable_data()[0] = -40.0;
    auto cfg = TrainConfig::for_stage(2);
    std::vector<LabelGrid> labels;
    for (const auto& s : ds.train) labels.push_back(assign_labels(s, cfg));
    std::size_t n = 1;
    mine_hard_negatives(model, ds.train, labels, cfg, &n);
    EXPECT_EQ(n, 0u);
    cfg.epochs = 0;
    auto r = train_stage(model, ds.train, {}, cfg);
    EXPECT_EQ(r.mined, 0u);
    EXPECT_TRUE(r.log.empty());
}

TEST(Training, SmokeRunLossDecreases) {
    auto ds = World(tiny_world()).generate();
    auto mc = tiny_model();
    mc.encoder.dropout = mc.stack_dropout = mc.head_dropout = 0.0;
    mc.ablation = AblationConfig::preset("SPvBvNH");
    GroundingModel model(ds.embeddings, ds.visual_dim(), mc, 5);
    auto cfg = TrainConfig::for_stage(1);
    cfg.epochs = 3;
    auto r = train_stage(model, ds.train, {}, cfg);
    ASSERT_EQ(r.log.size(), 3u);
    EXPECT_LT(r.log[1].loss, r.log[0].loss);
    EXPECT_LT(r.log[2].loss, r.log[1].loss);
}

TEST(Training, FixedSeedGivesBitIdenticalCheckpoints) {
    auto ds = World(tiny_world()).generate();
    auto run = [&](const std::string& path) {
        GroundingModel model(ds.embeddings, ds.visual_dim(), tiny_model(), 9);
        auto c1 = TrainConfig::for_stage(1);
        c1.epochs = 1;
        train_stage(model, ds.train, {}, c1);
        auto c2 = TrainConfig::for_stage(2);
        c2.epochs = 1;
        train_stage(model, ds.train, {}, c2);
        save_model(path, model);
        std::ifstream is(path, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(is), {});
    };
    auto dir = std::filesystem::temp_directory_path();
    auto a = run((dir / "sg_det_a.ckpt").string()), b = run((dir / "sg_det_b.ckpt").string());
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, b);
}

TEST(TrainConfig, Validation) {
    auto c = TrainConfig::for_stage(2);
    EXPECT_EQ(c.learning_rate, 1e-4);
    EXPECT_EQ(TrainConfig::for_stage(1).learning_rate, 1e-3);
    c.neg_iou = 0.8;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig::for_stage(1);
    c.neg_ratio = 0.5;
    EXPECT_THROW(c.validate(), ConfigError);
}
