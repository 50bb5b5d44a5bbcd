#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqground/decision.hpp"

namespace seqground {

inline constexpr double kAccuracyIou = 0.5;

struct PhraseOutcome {
    std::string scene_id;
    std::size_t phrase_index = 0;
    // 1-based position among the sentence's groundable phrases.
    std::size_t position = 0;
    std::string category;
    bool ambiguous = false;
    double iou = 0.0;
    bool correct = false;
};

struct Tally {
    std::size_t correct = 0;
    std::size_t total = 0;
    double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
    void add(bool ok) {
        correct += ok;
        ++total;
    }
};

struct AccuracyReport {
    Tally overall;
    Tally ambiguous;
    std::map<std::string, Tally> by_category;
    std::map<std::size_t, Tally> by_position;
    std::vector<PhraseOutcome> outcomes;

    void add(const PhraseOutcome& o) {
        overall.add(o.correct);
        if (o.ambiguous) ambiguous.add(o.correct);
        by_category[o.category].add(o.correct);
        by_position[o.position].add(o.correct);
        outcomes.push_back(o);
    }

    double accuracy() const { return overall.accuracy(); }

    nlohmann::json to_json() const {
        auto tally = [](const Tally& t) {
            return nlohmann::json{{"accuracy", t.accuracy()}, {"correct", t.correct}, {"total", t.total}};
        };
        nlohmann::json j;
        j["overall"] = tally(overall);
        j["ambiguous"] = tally(ambiguous);
        j["by_category"] = nlohmann::json::object();
        for (const auto& [k, v] : by_category) j["by_category"][k.empty() ? "uncategorized" : k] = tally(v);
        j["by_position"] = nlohmann::json::object();
        for (const auto& [k, v] : by_position) j["by_position"][std::to_string(k)] = tally(v);
        return j;
    }
};

/// Scores one scene's (already NMS-filtered) groundings. Only groundable
/// phrases count; a phrase is correct when the union of its predicted boxes
/// overlaps the union of its gt boxes with IoU >= 0.5. `boxes` are the
/// geometries the result indexes into.
inline void score_scene(AccuracyReport& report, const SceneRecord& scene, const GroundingResult& result,
                        const std::vector<Box>& boxes) {
    if (result.phrases.size() != scene.phrases.size())
        throw InputError("scene '" + scene.scene_id + "': result has a different number of phrases");
    std::size_t position = 0;
    for (std::size_t j = 0; j < scene.phrases.size(); ++j) {
        const auto& ph = scene.phrases[j];
        if (!ph.groundable) continue;
        ++position;
        std::vector<Box> pred;
        for (auto i : result.phrases[j].boxes) pred.push_back(boxes.at(i));
        auto gt = scene.phrase_gt_boxes(j);
        auto r = region_iou(pred, gt);
        report.add({scene.scene_id, j, position, ph.category, ph.ambiguous, r.value, r.value >= kAccuracyIou});
    }
}

inline std::vector<Box> source_boxes(const SceneRecord& s, BoxSource source) {
    return source == BoxSource::ground_truth ? s.gt_geometry() : s.proposal_geometry();
}

struct EvalOptions {
    BoxSource source = BoxSource::proposals;
    DecodeOptions decode;
    double nms_iou = 0.3;
    bool use_nms = true;
};

inline GroundingResult ground_scene(const GroundingModel& model, const SceneRecord& scene, const EvalOptions& opt) {
    auto r = greedy_decode(model, scene, opt.source, opt.decode);
    if (opt.use_nms) r = apply_nms(r, source_boxes(scene, opt.source), opt.nms_iou);
    return r;
}

/// Decodes and scores every scene.
inline AccuracyReport evaluate(const GroundingModel& model, const std::vector<SceneRecord>& scenes,
                               const EvalOptions& opt = {}) {
    AccuracyReport report;
    for (const auto& s : scenes) score_scene(report, s, ground_scene(model, s, opt), source_boxes(s, opt.source));
    return report;
}

}  // namespace seqground
