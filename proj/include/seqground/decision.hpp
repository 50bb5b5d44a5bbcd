#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqground/model.hpp"

namespace seqground {

/// Decisions for one phrase. boxes index the scene input; probs run parallel
/// to them. all_probs holds every box's probability in input order.
struct PhraseGrounding {
    std::size_t phrase_index = 0;
    std::size_t step = 0;
    std::vector<std::size_t> boxes;
    std::vector<double> probs;
    std::vector<double> all_probs;
};

struct GroundingResult {
    std::string scene_id;
    // Indexed by lexical phrase position.
    std::vector<PhraseGrounding> phrases;
};

struct DecodeOptions {
    double threshold = 0.5;
    // Guided: phrases known not to be groundable get no boxes and push no
    // history, and a groundable phrase with no box above threshold takes its
    // most probable box. Unguided: the raw thresholded decisions are used for
    // every phrase.
    bool guided = false;
};

/// Positions whose probability exceeds the threshold, ascending.
inline std::vector<std::size_t> threshold_decisions(std::span<const double> probs, double threshold = 0.5) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < probs.size(); ++i)
        if (probs[i] > threshold) out.push_back(i);
    return out;
}

/// Greedy decoding over the phrase stack order. Boxes with probability above
/// the threshold are grounded and pushed to history left to right (pre-NMS).
/// `groundable` is consulted only in guided mode.
inline GroundingResult greedy_decode(const GroundingModel& model, const SceneInput& scene,
                                     const std::vector<std::vector<std::string>>& phrases,
                                     const std::vector<bool>& groundable = {}, const DecodeOptions& opt = {}) {
    if (opt.guided && groundable.size() != phrases.size())
        throw InputError("guided decoding needs a groundable flag per phrase");
    Mode mode = Mode::eval();
    auto ws = model.prepare(scene, phrases, mode);
    GroundingResult result;
    result.phrases.resize(phrases.size());
    for (std::size_t t = 0; t < ws.num_steps(); ++t) {
        std::size_t j = ws.order[t];
        auto probs = model.decide_step(ws, t, mode).to_vector();
        std::vector<std::size_t> chosen;  // spatial positions, ascending
        if (!opt.guided || groundable[j]) {
            chosen = threshold_decisions(probs, opt.threshold);
            if (opt.guided && chosen.empty()) {
                std::size_t best = 0;
                for (std::size_t i = 1; i < probs.size(); ++i)
                    if (probs[i] > probs[best]) best = i;
                chosen.push_back(best);
            }
        }
        auto& pg = result.phrases[j];
        pg.phrase_index = j;
        pg.step = t;
        pg.all_probs.assign(probs.size(), 0.0);
        for (std::size_t i = 0; i < probs.size(); ++i) pg.all_probs[ws.box_order[i]] = probs[i];
        for (auto i : chosen) {
            pg.boxes.push_back(ws.box_order[i]);
            pg.probs.push_back(probs[i]);
        }
        model.push_history(ws, t, chosen, mode);
    }
    return result;
}

inline GroundingResult greedy_decode(const GroundingModel& model, const SceneRecord& scene, BoxSource source,
                                     const DecodeOptions& opt = {}) {
    std::vector<bool> groundable;
    for (const auto& p : scene.phrases) groundable.push_back(p.groundable);
    auto r = greedy_decode(model, scene_input(scene, source), scene.phrase_tokens(), groundable, opt);
    r.scene_id = scene.scene_id;
    return r;
}

/// Filters every phrase's grounded boxes with greedy NMS.
inline GroundingResult apply_nms(const GroundingResult& r, const std::vector<Box>& boxes, double iou_threshold = 0.3) {
    GroundingResult out = r;
    for (auto& pg : out.phrases) {
        std::vector<Box> geo;
        for (auto i : pg.boxes) geo.push_back(boxes.at(i));
        auto keep = nms(geo, pg.probs, iou_threshold);
        std::vector<std::size_t> kb;
        std::vector<double> kp;
        for (auto k : keep) {
            kb.push_back(pg.boxes[k]);
            kp.push_back(pg.probs[k]);
        }
        pg.boxes = std::move(kb);
        pg.probs = std::move(kp);
    }
    return out;
}

/// Gold decisions: labels[j][i] for lexical phrase j and input box i.
using DecisionLabels = std::vector<std::vector<int>>;

/// Runs the network with teacher forcing: the history at each step holds the
/// gold pairs of all earlier steps. Returns per-step probabilities (M x 1,
/// spatial order) plus the workspace used.
struct TeacherForced {
    Workspace workspace;
    std::vector<Tensor> step_probs;
};

inline TeacherForced teacher_forced(const GroundingModel& model, const SceneInput& scene,
                                    const std::vector<std::vector<std::string>>& phrases, const DecisionLabels& labels,
                                    const Mode& mode) {
    if (labels.size() != phrases.size()) throw InputError("one label row per phrase is required");
    TeacherForced tf{model.prepare(scene, phrases, mode), {}};
    auto& ws = tf.workspace;
    auto rank = ws.box_rank();
    for (std::size_t t = 0; t < ws.num_steps(); ++t) {
        tf.step_probs.push_back(model.decide_step(ws, t, mode));
        const auto& row = labels[ws.order[t]];
        if (row.size() != ws.num_boxes()) throw InputError("one label per box is required");
        std::vector<std::size_t> gold;
        for (std::size_t i = 0; i < row.size(); ++i)
            if (row[i] == 1) gold.push_back(rank[i]);
        std::sort(gold.begin(), gold.end());
        model.push_history(ws, t, gold, mode);
    }
    return tf;
}

struct SequenceLogProb {
    double value = 0.0;
    // Set when some probability had to be clamped away from 0 or 1.
    bool clamped = false;
};

/// log P(D) = sum over steps and boxes of the Bernoulli log-likelihood of
/// the gold decision. probs[j][i] and labels[j][i] share indexing.
inline SequenceLogProb sequence_log_prob(const std::vector<std::vector<double>>& probs, const DecisionLabels& labels) {
    if (probs.size() != labels.size()) throw InputError("probabilities and labels differ in length");
    constexpr double eps = 1e-12;
    SequenceLogProb r;
    for (std::size_t t = 0; t < probs.size(); ++t) {
        if (probs[t].size() != labels[t].size()) throw InputError("probabilities and labels differ in length");
        for (std::size_t i = 0; i < probs[t].size(); ++i) {
            int y = labels[t][i];
            if (y != 0 && y != 1) throw InputError("labels must be binary");
            double p = y ? probs[t][i] : 1.0 - probs[t][i];
            if (p < eps) {
                p = eps;
                r.clamped = true;
            }
            r.value += std::log(p);
        }
    }
    return r;
}

/// Teacher-forced probabilities rearranged as probs[j][i] (lexical phrase,
/// input box) so they line up with labels.
inline std::vector<std::vector<double>> teacher_forced_probs(const GroundingModel& model, const SceneInput& scene,
                                                             const std::vector<std::vector<std::string>>& phrases,
                                                             const DecisionLabels& labels) {
    auto tf = teacher_forced(model, scene, phrases, labels, Mode::eval());
    std::vector<std::vector<double>> out(phrases.size());
    for (std::size_t t = 0; t < tf.step_probs.size(); ++t) {
        auto p = tf.step_probs[t].to_vector();
        auto& row = out[tf.workspace.order[t]];
        row.assign(p.size(), 0.0);
        for (std::size_t i = 0; i < p.size(); ++i) row[tf.workspace.box_order[i]] = p[i];
    }
    return out;
}

inline nlohmann::json grounding_to_json(const GroundingResult& r, const SceneRecord& scene,
                                        const std::vector<Box>& boxes) {
    nlohmann::json j;
    j["scene_id"] = r.scene_id;
    auto& arr = j["phrases"] = nlohmann::json::array();
    for (const auto& pg : r.phrases) {
        nlohmann::json bs = nlohmann::json::array();
        for (auto i : pg.boxes) bs.push_back(box_to_json(boxes.at(i)));
        arr.push_back({{"phrase_index", pg.phrase_index},
                       {"text", scene.phrases.at(pg.phrase_index).text()},
                       {"boxes", bs},
                       {"probs", pg.probs}});
    }
    return j;
}

}  // namespace seqground
