#pragma once

#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "seqground/metrics.hpp"
#include "seqground/order_embed.hpp"

namespace seqground {

/// Similarity baselines over pretrained encoders. Single mode takes the most
/// similar box per phrase (ties: lowest index); multi mode adds every box
/// whose similarity is strictly within `slack` of the best. No sequencing,
/// no history.
inline GroundingResult msb_ground(const Encoders& enc, const SceneRecord& scene, BoxSource source, bool multi,
                                  double slack = 0.0) {
    if (slack < 0.0) throw ConfigError("MSBs slack must be non-negative");
    auto in = scene_input(scene, source);
    GroundingResult r;
    r.scene_id = scene.scene_id;
    if (in.boxes.empty()) throw InputError("scene '" + scene.scene_id + "' has no boxes");
    std::vector<double> feats;
    for (const auto& f : in.features) feats.insert(feats.end(), f.begin(), f.end());
    auto phrases = encode_phrases(enc, scene.phrase_tokens());
    auto boxes = encode_boxes(enc, Tensor({in.boxes.size(), enc.visual_dim()}, std::move(feats)));
    auto sim = similarity_matrix(phrases, boxes);
    for (std::size_t j = 0; j < scene.phrases.size(); ++j) {
        PhraseGrounding pg;
        pg.phrase_index = j;
        pg.step = j;
        std::size_t best = 0;
        for (std::size_t i = 0; i < sim.cols(); ++i) {
            pg.all_probs.push_back(sim.at(j, i));
            if (sim.at(j, i) > sim.at(j, best)) best = i;
        }
        if (multi) {
            // The argmax always, plus boxes strictly inside the slack window.
            double cut = sim.at(j, best) - slack;
            for (std::size_t i = 0; i < sim.cols(); ++i)
                if (i == best || sim.at(j, i) > cut) {
                    pg.boxes.push_back(i);
                    pg.probs.push_back(sim.at(j, i));
                }
        } else {
            pg.boxes.push_back(best);
            pg.probs.push_back(sim.at(j, best));
        }
        r.phrases.push_back(std::move(pg));
    }
    return r;
}

inline AccuracyReport evaluate_msb(const Encoders& enc, const std::vector<SceneRecord>& scenes, BoxSource source,
                                   bool multi, double slack = 0.0, double nms_iou = 0.3) {
    AccuracyReport report;
    for (const auto& s : scenes) {
        auto boxes = source_boxes(s, source);
        auto r = msb_ground(enc, s, source, multi, slack);
        if (multi) r = apply_nms(r, boxes, nms_iou);
        score_scene(report, s, r, boxes);
    }
    return report;
}

/// Picks the MSBs slack with the best validation accuracy (ties: smaller).
inline double tune_msbs_slack(const Encoders& enc, const std::vector<SceneRecord>& val, BoxSource source,
                              const std::vector<double>& grid, double nms_iou = 0.3) {
    if (grid.empty()) throw ConfigError("empty slack grid");
    double best = grid.front(), best_acc = -1.0;
    for (double d : grid) {
        double acc = evaluate_msb(enc, val, source, true, d, nms_iou).accuracy();
        if (acc > best_acc) {
            best_acc = acc;
            best = d;
        }
    }
    return best;
}

inline std::vector<double> default_slack_grid() {
    return {0.0, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0};
}

struct AblationRow {
    std::string name;
    AblationConfig config;
    bool present = false;
    AccuracyReport report;
    std::string note;
};

inline std::string component_label(const AblationConfig& c) {
    std::ostringstream os;
    os << (c.visual_context == VisualContext::global ? "global" : "none") << " | "
       << (c.box == BoxEncoding::bilstm ? "bi-LSTM" : "simple") << " | "
       << (c.phrase == PhraseEncoding::lstm ? "LSTM" : "simple") << " | "
       << (c.history == HistoryMode::lstm ? "LSTM" : "none");
    return os.str();
}

inline std::string ablation_markdown(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "| Method | Visual context | Box | Phrase | History | Accuracy | Ambiguous subset |\n";
    os << "|---|---|---|---|---|---|---|\n";
    for (const auto& r : rows) {
        os << "| " << r.name << " | " << component_label(r.config);
        if (r.present) {
            char buf[96];
            std::snprintf(buf, sizeof buf, " | %.2f | %.2f (%zu) |", 100.0 * r.report.accuracy(),
                          100.0 * r.report.ambiguous.accuracy(), r.report.ambiguous.total);
            os << buf << "\n";
        } else {
            os << " | absent | absent |" << (r.note.empty() ? "" : " " + r.note) << "\n";
        }
    }
    return os.str();
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "method,visual_context,box,phrase,history,present,accuracy,ambiguous_accuracy,ambiguous_total\n";
    for (const auto& r : rows) {
        const auto& c = r.config;
        os << r.name << "," << (c.visual_context == VisualContext::global ? "global" : "none") << ","
           << (c.box == BoxEncoding::bilstm ? "bi-LSTM" : "simple") << ","
           << (c.phrase == PhraseEncoding::lstm ? "LSTM" : "simple") << ","
           << (c.history == HistoryMode::lstm ? "LSTM" : "none") << "," << (r.present ? 1 : 0) << ",";
        if (r.present)
            os << r.report.accuracy() << "," << r.report.ambiguous.accuracy() << "," << r.report.ambiguous.total;
        else
            os << ",,";
        os << "\n";
    }
    return os.str();
}

/// Accuracy per position among noun phrases: position,accuracy,count,config.
inline std::string position_csv(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << "position,accuracy,count,config\n";
    for (const auto& r : rows) {
        if (!r.present) continue;
        for (const auto& [pos, t] : r.report.by_position)
            os << pos << "," << t.accuracy() << "," << t.total << "," << r.name << "\n";
    }
    return os.str();
}

}  // namespace seqground
