// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only when
// every criterion passes. Usage: acceptance <path to seqground cli> [criteria]
// where criteria is an optional comma-separated subset such as "1,4,6".

#include <chrono>
#include <cmath>
#include <cstring>
#include <map>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "seqground/seqground.hpp"
#include "../oracles.hpp"
#include "../toy.hpp"

namespace fs = std::filesystem;
using namespace seqground;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// 1. Finite differences against tape gradients for both losses.
Outcome gradient_fidelity_criterion() {
    auto t0 = std::chrono::steady_clock::now();
    auto r = gradient_fidelity();
    double t = seconds_since(t0);
    bool pass = r.passed() && r.pretrain.valid && r.grounding.valid && t < 60.0;
    return {pass, fmt("max rel error %.2e (pretrain %.2e, grounding %.2e), tol 1e-4, %.1f s (limit 60 s)",
                      r.max_rel_error(), r.pretrain.max_rel_error, r.grounding.max_rel_error, t)};
}

// 2. log P(D) from one teacher-forced pass versus a per-decision sum where
// every step is recomputed from scratch.
Outcome chain_rule_criterion() {
    std::mt19937_64 rng(2024);
    auto model = GroundingModel(toy::table(), 4, toy::small_config("SeqGROUND"), 77);
    double worst = 0.0;
    std::uniform_int_distribution<std::size_t> boxes(1, 6), phrases(1, 5);
    for (int k = 0; k < 100; ++k) {
        auto s = toy::scene(boxes(rng), 4, rng);
        auto ph = toy::phrases(phrases(rng), rng);
        auto labels = toy::labels(ph.size(), s.boxes.size(), rng);
        double whole = sequence_log_prob(teacher_forced_probs(model, s, ph, labels), labels).value;
        double parts = 0.0;
        auto order = phrase_processing_order(ph.size(), model.ablation());
        for (std::size_t t = 0; t < ph.size(); ++t) {
            auto p = oracle::probs_from_scratch(model, s, ph, labels, t);
            const auto& y = labels[order[t]];
            for (std::size_t i = 0; i < p.size(); ++i) parts += std::log(y[i] ? p[i] : 1.0 - p[i]);
        }
        worst = std::max(worst, std::abs(whole - parts));
    }
    return {worst <= 1e-9, fmt("100 scenes, max |log P(D) - sum of step terms| = %.2e (tol 1e-9)", worst)};
}

// 3. F <= 0, F = 0 exactly on dominance, zero ranking loss when every
// margin holds.
Outcome order_embedding_criterion() {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> dim(1, 16);
    std::size_t vectors = 0, violations = 0;
    // Random pairs, and pairs pushed into dominance.
    for (int k = 0; k < 2500; ++k) {
        int d = dim(rng);
        std::vector<double> p(d), b(d), dom(d);
        for (int i = 0; i < d; ++i) {
            p[i] = n(rng);
            b[i] = n(rng);
            dom[i] = p[i] - std::abs(n(rng)) * (k % 3 == 0 ? 0.0 : 1.0);
        }
        double f = similarity(p, b), fd = similarity(p, dom);
        bool dominated = true;
        for (int i = 0; i < d; ++i) dominated = dominated && b[i] <= p[i];
        if (f > 0.0 || (f == 0.0) != dominated) ++violations;
        if (fd != 0.0) ++violations;
        vectors += 4;
    }
    // Batches built so true pairs dominate and every cross pair misses by
    // at least the margin.
    const double margin = 0.05;
    std::size_t batches = 0;
    while (vectors < 12500) {
        std::size_t b = 2 + batches % 7, d = b + static_cast<std::size_t>(dim(rng) % 4);
        std::vector<double> pv(b * d), bv(b * d);
        for (std::size_t r = 0; r < b; ++r) {
            double s = 0.5 + 1.5 * u(rng);
            for (std::size_t c = 0; c < d; ++c) {
                double base = 0.1 * u(rng);
                pv[r * d + c] = base + (c == r ? s : 0.0);
                bv[r * d + c] = base * u(rng) + (c == r ? s : 0.0);
            }
        }
        double loss = in_batch_ranking_loss(Tensor({b, d}, pv), Tensor({b, d}, bv), margin).item();
        if (loss != 0.0) ++violations;
        vectors += 2 * b;
        ++batches;
    }
    return {violations == 0, fmt("%zu vectors, %zu violations", vectors, violations)};
}

// 4. Exact region IoU against rasterization; NMS against the quadratic
// reference.
Outcome geometry_criterion() {
    std::mt19937_64 rng(4);
    std::uniform_int_distribution<int> count(1, 4);
    double worst = 0.0;
    for (int k = 0; k < 1000; ++k) {
        auto a = oracle::random_region(rng, count(rng), 1.0), b = oracle::random_region(rng, count(rng), 1.0);
        worst = std::max(worst, std::abs(region_iou(a, b).value - oracle::raster_region_iou(a, b, 1.0, 1000)));
    }
    std::size_t mismatches = 0;
    std::uniform_int_distribution<int> size(1, 60);
    std::uniform_int_distribution<int> score(0, 20);
    std::uniform_real_distribution<double> thr(0.1, 0.9);
    for (int k = 0; k < 1000; ++k) {
        std::vector<Box> boxes;
        std::vector<double> scores;
        int m = size(rng);
        for (int i = 0; i < m; ++i) {
            boxes.push_back(oracle::random_box(rng, 100, 100));
            scores.push_back(score(rng) / 20.0);  // coarse scores force ties
        }
        double t = k % 2 ? 0.3 : thr(rng);
        if (nms(boxes, scores, t) != oracle::brute_force_nms(boxes, scores, t)) ++mismatches;
    }
    bool pass = worst <= 1e-2 && mismatches == 0;
    return {pass, fmt("region IoU max |exact - raster| = %.2e over 1000 regions (tol 1e-2); NMS mismatches %zu/1000",
                      worst, mismatches)};
}

// 5. Pretraining alone makes similarity retrieve the true box.
Outcome pretraining_criterion() {
    auto t0 = std::chrono::steady_clock::now();
    WorldSpec w;
    auto ds = World(w).generate();
    auto pairs = pretrain_pairs(ds.train);
    if (pairs.size() < 2000) return {false, fmt("only %zu pairs available", pairs.size())};
    pairs.resize(2000);
    ModelConfig mc;
    mc.encoder.widths = {96, 64, 48};
    auto enc = make_encoders(ds, mc, 11);
    PretrainConfig pc;
    pc.epochs = 20;
    pc.seed = 12;
    pretrain(enc, pairs, pc);
    double recall = recall_at_1(enc, recall_queries(ds.val));
    double t = seconds_since(t0);
    return {recall >= 0.90 && t < 300.0,
            fmt("2000 pairs, 20 epochs, held-out recall@1 %.4f (need >= 0.90), %.1f s (limit 300 s)", recall, t)};
}

// Desk-scale run used for the architecture comparison. Dropout is off: at
// this size and epoch budget the default rates keep every sequential model
// near chance.
RunConfig architecture_config() {
    RunConfig cfg;
    cfg.seed = 7;
    cfg.world.ambiguity_rate = 0.5;
    cfg.apply_seed();
    cfg.model.encoder.widths = {96, 64, 48};
    cfg.model.lstm_hidden = 48;
    cfg.model.head_hidden = {64, 32};
    cfg.model.encoder.dropout = cfg.model.stack_dropout = cfg.model.head_dropout = 0.0;
    cfg.stage1.epochs = 40;
    cfg.stage2.epochs = 40;
    cfg.eval.unguided = true;
    cfg.presets = {"MSB", "MSBs", "NH", "SeqGROUND"};
    return cfg;
}

// 6. Full model against MSBs overall and against NH on ambiguous phrases.
Outcome architecture_criterion() {
    auto t0 = std::chrono::steady_clock::now();
    auto cfg = architecture_config();
    auto ds = World(cfg.world).generate();
    auto enc = make_encoders(ds, cfg.model, cfg.seed);
    pretrain_encoders(enc, ds, cfg.pretrain);
    auto suite = run_ablation_suite(ds, cfg, enc, [&](const AblationConfig& a) -> std::optional<GroundingModel> {
        auto mc = cfg.model;
        mc.ablation = a;
        auto m = model_from_encoders(ds, mc, cfg.seed, &enc);
        train_grounding(m, ds, cfg, false);
        return m;
    });
    std::map<std::string, const AccuracyReport*> by;
    for (const auto& r : suite.rows) by[r.name] = &r.report;
    double full = by["SeqGROUND"]->accuracy(), msbs = by["MSBs"]->accuracy();
    double full_amb = by["SeqGROUND"]->ambiguous.accuracy(), nh_amb = by["NH"]->ambiguous.accuracy();
    double t = seconds_since(t0);
    std::printf("%s", ablation_markdown(suite.rows).c_str());
    bool pass = full - msbs >= 0.10 && full_amb - nh_amb >= 0.05 && t < 1800.0;
    return {pass, fmt("full %.4f vs MSBs %.4f (need +0.10, got %+.4f); ambiguous full %.4f vs NH %.4f (need +0.05, "
                      "got %+.4f); %.0f s (limit 1800 s)",
                      full, msbs, full - msbs, full_amb, nh_amb, full_amb - nh_amb, t)};
}

// 7. Label banding, sampling ratio and fallback, ignore-band invariance.
Outcome label_criterion() {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::size_t failures = 0;
    for (int k = 0; k < 10000; ++k) {
        double v = u(rng);
        Label want = v >= 0.7 ? Label::positive : v < 0.3 ? Label::negative : Label::ignore;
        failures += band_label(v, 0.7, 0.3) != want;
    }
    for (double edge : {0.7, 0.3, 0.2999999999, 0.6999999999}) {
        Label want = edge >= 0.7 ? Label::positive : edge < 0.3 ? Label::negative : Label::ignore;
        failures += band_label(edge, 0.7, 0.3) != want;
    }
    // Mostly negatives, as in real proposal sets, so both regimes occur often.
    std::discrete_distribution<int> kind({0.7, 0.1, 0.2});
    std::size_t sampled = 0, fallback = 0;
    for (int trial = 0; trial < 5000; ++trial) {
        std::size_t n = 1 + trial % 50;
        std::vector<Label> l(n);
        for (auto& x : l) x = static_cast<Label>(kind(rng));
        auto m = sample_mask(l, 3.0, rng);
        std::size_t pos = 0, neg = 0, kept_pos = 0, kept_neg = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (l[i] == Label::positive) ++pos, kept_pos += m[i] == 1.0;
            if (l[i] == Label::negative) ++neg, kept_neg += m[i] == 1.0;
            if (l[i] == Label::ignore && m[i] != 0.0) ++failures;
        }
        bool feasible = pos > 0 && neg > 3 * pos;
        failures += kept_pos != pos;
        failures += kept_neg != (feasible ? 3 * pos : neg);
        (feasible ? sampled : fallback) += 1;
        // Ignore entries never reach the loss.
        std::vector<double> p(n), q(n), y(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = 0.01 + 0.98 * u(rng);
            q[i] = l[i] == Label::ignore ? 0.01 + 0.98 * u(rng) : p[i];
            y[i] = l[i] == Label::positive;
        }
        double a = masked_bce(Tensor({n, 1}, p), y, m).item(), b = masked_bce(Tensor({n, 1}, q), y, m).item();
        if (std::memcmp(&a, &b, sizeof a) != 0) ++failures;
    }
    return {failures == 0, fmt("banding 10004 values, %zu sampled and %zu fallback patterns, %zu failures", sampled,
                               fallback, failures)};
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(is), {});
}

// 8. Two full CLI runs from the same config and seed, compared byte for byte.
Outcome determinism_criterion(const std::string& cli) {
    auto root = fs::temp_directory_path() / "seqground_acceptance_determinism";
    fs::remove_all(root);
    const std::string small =
        " --seed 5 --set world.train_scenes=60 --set world.val_scenes=15 --set world.test_scenes=15"
        " --set model.encoder_widths=[24,16] --set model.lstm_hidden=8 --set model.head_hidden=[12,8]"
        " --set pretrain.epochs=2 --set stage1.epochs=2 --set stage2.epochs=2";
    const std::vector<std::string> steps{
        "gen-data --out data" + small,
        "pretrain --data data --out pre" + small,
        "train --data data --init pre/encoders.ckpt --out model" + small,
        "eval --data data --model model/model.ckpt --out eval --unguided" + small,
        "ground --data data --model model/model.ckpt --out ground" + small,
    };
    for (const char* run : {"a", "b"}) {
        auto dir = root / run;
        fs::create_directories(dir);
        for (const auto& step : steps) {
            std::string cmd = "cd '" + dir.string() + "' && '" + cli + "' " + step + " > log.txt 2>&1";
            if (std::system(cmd.c_str()) != 0) return {false, "command failed: " + step};
        }
    }
    std::size_t files = 0, differing = 0;
    for (const auto& e : fs::recursive_directory_iterator(root / "a")) {
        if (!e.is_regular_file()) continue;
        auto rel = fs::relative(e.path(), root / "a");
        ++files;
        if (slurp(e.path()) != slurp(root / "b" / rel)) {
            ++differing;
            std::printf("  differs: %s\n", rel.string().c_str());
        }
    }
    fs::remove_all(root);
    return {files > 10 && differing == 0,
            fmt("gen-data, pretrain, train, eval, ground run twice: %zu files, %zu differ", files, differing)};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: %s <seqground cli> [criteria]\n", argv[0]);
        return 2;
    }
    std::string cli = fs::absolute(argv[1]).string();
    std::set<int> only;
    if (argc > 2) {
        std::stringstream ss(argv[2]);
        std::string item;
        while (std::getline(ss, item, ',')) only.insert(std::stoi(item));
    }
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"gradient fidelity", gradient_fidelity_criterion},
        {"chain-rule identity", chain_rule_criterion},
        {"order-embedding properties", order_embedding_criterion},
        {"geometry oracles", geometry_criterion},
        {"pretraining sanity", pretraining_criterion},
        {"architecture value", architecture_criterion},
        {"label-assignment contract", label_criterion},
        {"determinism", [&] { return determinism_criterion(cli); }},
    };
    bool all = true;
    for (std::size_t k = 0; k < criteria.size(); ++k) {
        int id = static_cast<int>(k + 1);
        if (!only.empty() && !only.count(id)) continue;
        auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[k].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        all = all && o.pass;
        std::printf("[%s] %d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, criteria[k].first.c_str(),
                    o.detail.c_str(), seconds_since(t0));
        std::fflush(stdout);
    }
    return all ? 0 : 1;
}
