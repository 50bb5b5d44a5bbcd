#pragma once

#include <algorithm>
#include <memory>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "seqground/dataset.hpp"
#include "seqground/encoders.hpp"
#include "seqground/stacks.hpp"

namespace seqground {

enum class VisualContext { none, global };
enum class BoxEncoding { simple, bilstm };
enum class PhraseEncoding { simple, lstm };
enum class HistoryMode { none, lstm };
enum class PhraseOrder { l2r, r2l, random };

NLOHMANN_JSON_SERIALIZE_ENUM(VisualContext, {{VisualContext::none, "none"}, {VisualContext::global, "global"}})
NLOHMANN_JSON_SERIALIZE_ENUM(BoxEncoding, {{BoxEncoding::simple, "simple"}, {BoxEncoding::bilstm, "bi-LSTM"}})
NLOHMANN_JSON_SERIALIZE_ENUM(PhraseEncoding, {{PhraseEncoding::simple, "simple"}, {PhraseEncoding::lstm, "LSTM"}})
NLOHMANN_JSON_SERIALIZE_ENUM(HistoryMode, {{HistoryMode::none, "none"}, {HistoryMode::lstm, "LSTM"}})
NLOHMANN_JSON_SERIALIZE_ENUM(PhraseOrder, {{PhraseOrder::l2r, "l2r"}, {PhraseOrder::r2l, "r2l"}, {PhraseOrder::random, "random"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Normalization, {{Normalization::l2, "l2"}, {Normalization::none, "none"}})

/// Which architectural components are enabled, and the phrase order.
struct AblationConfig {
    std::string name = "SeqGROUND";
    VisualContext visual_context = VisualContext::global;
    BoxEncoding box = BoxEncoding::bilstm;
    PhraseEncoding phrase = PhraseEncoding::lstm;
    HistoryMode history = HistoryMode::lstm;
    PhraseOrder order = PhraseOrder::r2l;
    // Fixes the permutation used by PhraseOrder::random.
    std::uint64_t order_seed = 0;

    bool same_components(const AblationConfig& o) const {
        return visual_context == o.visual_context && box == o.box && phrase == o.phrase && history == o.history;
    }

    // The similarity baselines share the component grid of SPvBvNH minus the
    // image; they are not trained grounding networks.
    bool is_similarity_baseline() const { return name == "MSB" || name == "MSBs"; }

    static std::vector<std::string> preset_names() {
        return {"MSB", "MSBs", "NH", "NI", "SPv", "SBv", "SPvBv", "SPvBvNH", "SeqGROUND"};
    }

    static AblationConfig preset(std::string_view name) {
        using V = VisualContext;
        using B = BoxEncoding;
        using P = PhraseEncoding;
        using H = HistoryMode;
        auto make = [&](std::string n, V v, B b, P p, H h) {
            AblationConfig c;
            c.name = std::move(n);
            c.visual_context = v;
            c.box = b;
            c.phrase = p;
            c.history = h;
            return c;
        };
        if (name == "MSB") return make("MSB", V::none, B::simple, P::simple, H::none);
        if (name == "MSBs") return make("MSBs", V::none, B::simple, P::simple, H::none);
        if (name == "NH") return make("NH", V::global, B::bilstm, P::lstm, H::none);
        if (name == "NI") return make("NI", V::none, B::bilstm, P::lstm, H::lstm);
        if (name == "SPv") return make("SPv", V::global, B::bilstm, P::simple, H::lstm);
        if (name == "SBv") return make("SBv", V::global, B::simple, P::lstm, H::lstm);
        if (name == "SPvBv") return make("SPvBv", V::global, B::simple, P::simple, H::lstm);
        if (name == "SPvBvNH" || name == "SBvPvNH") return make("SPvBvNH", V::global, B::simple, P::simple, H::none);
        if (name == "SeqGROUND" || name == "full") return make("SeqGROUND", V::global, B::bilstm, P::lstm, H::lstm);
        throw ConfigError("unknown ablation preset '" + std::string(name) + "'");
    }
};

inline void to_json(nlohmann::json& j, const AblationConfig& c) {
    j = {{"name", c.name},          {"visual_context", c.visual_context}, {"box", c.box},
         {"phrase", c.phrase},      {"history", c.history},               {"order", c.order},
         {"order_seed", c.order_seed}};
}

inline void from_json(const nlohmann::json& j, AblationConfig& c) {
    AblationConfig d;
    c.name = j.value("name", d.name);
    c.visual_context = j.value("visual_context", d.visual_context);
    c.box = j.value("box", d.box);
    c.phrase = j.value("phrase", d.phrase);
    c.history = j.value("history", d.history);
    c.order = j.value("order", d.order);
    c.order_seed = j.value("order_seed", d.order_seed);
}

struct ModelConfig {
    EncoderConfig encoder;
    std::size_t lstm_hidden = 500;
    double stack_dropout = 0.25;
    std::vector<std::size_t> head_hidden{500, 500};
    double head_dropout = 0.4;
    AblationConfig ablation;

    void validate() const {
        if (encoder.widths.empty()) throw ConfigError("encoder needs at least one layer");
        if (lstm_hidden == 0) throw ConfigError("lstm_hidden must be positive");
        for (double r : {encoder.dropout, stack_dropout, head_dropout})
            if (r < 0.0 || r >= 1.0) throw ConfigError("dropout rates must lie in [0, 1)");
    }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"encoder_widths", c.encoder.widths},
         {"encoder_dropout", c.encoder.dropout},
         {"normalization", c.encoder.normalization},
         {"lstm_hidden", c.lstm_hidden},
         {"stack_dropout", c.stack_dropout},
         {"head_hidden", c.head_hidden},
         {"head_dropout", c.head_dropout},
         {"ablation", c.ablation}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
    c.encoder.widths = j.value("encoder_widths", d.encoder.widths);
    c.encoder.dropout = j.value("encoder_dropout", d.encoder.dropout);
    c.encoder.normalization = j.value("normalization", d.encoder.normalization);
    c.lstm_hidden = j.value("lstm_hidden", d.lstm_hidden);
    c.stack_dropout = j.value("stack_dropout", d.stack_dropout);
    c.head_hidden = j.value("head_hidden", d.head_hidden);
    c.head_dropout = j.value("head_dropout", d.head_dropout);
    c.ablation = j.value("ablation", d.ablation);
}

inline constexpr std::size_t kLocationDim = 5;

/// Order in which phrases are grounded: order[t] is the lexical index of the
/// phrase handled at step t. Random order is a fixed permutation per
/// sentence length, derived from the ablation's order_seed.
inline std::vector<std::size_t> phrase_processing_order(std::size_t n, const AblationConfig& cfg) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    switch (cfg.order) {
        case PhraseOrder::l2r:
            break;
        case PhraseOrder::r2l:
            std::reverse(order.begin(), order.end());
            break;
        case PhraseOrder::random: {
            std::seed_seq seq{static_cast<std::uint32_t>(cfg.order_seed), static_cast<std::uint32_t>(cfg.order_seed >> 32),
                              static_cast<std::uint32_t>(n)};
            std::mt19937_64 rng(seq);
            std::shuffle(order.begin(), order.end(), rng);
            break;
        }
    }
    return order;
}

/// Boxes (with features) and the full-image feature fed to the network.
struct SceneInput {
    std::vector<Box> boxes;
    std::vector<std::vector<double>> features;
    std::vector<double> image_feature;
    double width = 1.0;
    double height = 1.0;
};

enum class BoxSource { ground_truth, proposals };

inline SceneInput scene_input(const SceneRecord& s, BoxSource source) {
    SceneInput in;
    in.width = s.width;
    in.height = s.height;
    in.image_feature = s.image_feature;
    if (source == BoxSource::ground_truth) {
        for (const auto& g : s.gt_boxes) {
            in.boxes.push_back(g.box);
            in.features.push_back(g.feature);
        }
    } else {
        for (const auto& p : s.proposals) {
            in.boxes.push_back(p.box);
            in.features.push_back(p.feature);
        }
    }
    return in;
}

/// Decision workspace for one scene and sentence: the three stacks plus the
/// encoded image. Box and phrase stacks are computed once; only the history
/// changes while decoding.
struct Workspace {
    std::vector<std::size_t> order;      // order[t]: lexical phrase index at step t
    std::vector<std::size_t> box_order;  // box_order[i]: input index of the i-th box left to right
    Tensor phrases;                      // N x E, lexical order
    Tensor boxes;                        // M x E, spatial order
    Tensor locations;                    // M x 5, spatial order
    std::vector<Tensor> phrase_states;   // per step
    Tensor box_states;                   // M x box width, spatial order
    Tensor image;                        // 1 x E, undefined without visual context
    HistoryStack history;

    std::size_t num_steps() const { return order.size(); }
    std::size_t num_boxes() const { return box_order.size(); }

    // Spatial position of every input box.
    std::vector<std::size_t> box_rank() const {
        std::vector<std::size_t> rank(box_order.size());
        for (std::size_t i = 0; i < box_order.size(); ++i) rank[box_order[i]] = i;
        return rank;
    }
};

/// Encoders, the three recurrent stacks, and the sigmoid decision head.
/// Components disabled by the ablation config are not instantiated.
class GroundingModel {
  public:
    GroundingModel(std::shared_ptr<const EmbeddingTable> table, std::size_t visual_dim, ModelConfig cfg,
                   std::uint64_t seed)
        : cfg_(std::move(cfg)) {
        cfg_.validate();
        std::mt19937_64 rng(seed);
        encoders_ = Encoders(std::move(table), visual_dim, cfg_.encoder, rng);
        std::size_t e = encoders_.embed_dim(), h = cfg_.lstm_hidden;
        const auto& ab = cfg_.ablation;
        std::size_t psi = 0;
        if (ab.phrase == PhraseEncoding::lstm) {
            phrase_stack_ = TwoLayerLstm(e, h, cfg_.stack_dropout, rng);
            psi += h;
        } else {
            psi += e;
        }
        if (ab.box == BoxEncoding::bilstm) {
            box_forward_ = LstmCell(e + kLocationDim, h, rng);
            box_backward_ = LstmCell(e + kLocationDim, h, rng);
            psi += 2 * h;
        } else {
            psi += e + kLocationDim;
        }
        if (ab.history == HistoryMode::lstm) {
            history_stack_ = TwoLayerLstm(2 * e + kLocationDim, h, cfg_.stack_dropout, rng);
            psi += h;
        }
        if (ab.visual_context == VisualContext::global) psi += e;
        auto widths = cfg_.head_hidden;
        widths.push_back(1);
        head_ = Mlp(psi, widths, false, rng);
    }

    const ModelConfig& config() const { return cfg_; }
    const AblationConfig& ablation() const { return cfg_.ablation; }
    const Encoders& encoders() const { return encoders_; }
    Encoders& encoders() { return encoders_; }
    const Mlp& head() const { return head_; }
    std::size_t decision_input_dim() const { return head_.layers.front().in_dim(); }

    ParameterSet parameters() const {
        ParameterSet ps = encoders_.parameters();
        const auto& ab = cfg_.ablation;
        if (ab.phrase == PhraseEncoding::lstm) ps.extend("phrase_stack.", phrase_stack_.parameters());
        if (ab.box == BoxEncoding::bilstm) {
            ps.extend("box_stack.fwd.", box_forward_.parameters());
            ps.extend("box_stack.bwd.", box_backward_.parameters());
        }
        if (ab.history == HistoryMode::lstm) ps.extend("history_stack.", history_stack_.parameters());
        ps.extend("head.", head_.parameters());
        return ps;
    }

    nlohmann::json metadata() const {
        return {{"model", cfg_}, {"visual_dim", encoders_.visual_dim()}, {"word_dim", encoders_.table->dim()}};
    }

    /// Encodes the scene and sentence, sorts the boxes left to right and
    /// builds the phrase and box stacks. History starts empty.
    Workspace prepare(const SceneInput& scene, const std::vector<std::vector<std::string>>& phrases,
                      const Mode& mode) const {
        if (phrases.empty()) throw InputError("sentence has no phrases");
        if (scene.boxes.empty()) throw InputError("scene has no boxes");
        if (scene.features.size() != scene.boxes.size()) throw InputError("one feature vector per box is required");
        Workspace ws;
        ws.order = phrase_processing_order(phrases.size(), cfg_.ablation);
        ws.box_order = spatial_order(scene.boxes);
        std::size_t m = scene.boxes.size(), dv = encoders_.visual_dim();
        std::vector<double> feats, locs;
        feats.reserve(m * dv);
        for (auto i : ws.box_order) {
            const auto& f = scene.features[i];
            if (f.size() != dv) throw InputError("box feature dimension mismatch");
            feats.insert(feats.end(), f.begin(), f.end());
            auto loc = location_features(scene.boxes[i], scene.width, scene.height);
            locs.insert(locs.end(), loc.begin(), loc.end());
        }
        ws.phrases = encode_phrases(encoders_, phrases, mode);
        ws.boxes = encode_boxes(encoders_, Tensor({m, dv}, std::move(feats)), mode);
        ws.locations = Tensor({m, kLocationDim}, std::move(locs));
        const auto& ab = cfg_.ablation;
        if (ab.phrase == PhraseEncoding::lstm) {
            ws.phrase_states = build_phrase_stack(phrase_stack_, gather_rows(ws.phrases, ws.order), mode);
        } else {
            for (auto j : ws.order) ws.phrase_states.push_back(slice_rows(ws.phrases, j, 1));
        }
        if (ab.box == BoxEncoding::bilstm) {
            ws.box_states = build_box_stack(box_forward_, box_backward_, ws.boxes, ws.locations);
        } else {
            require_spatial_order(ws.locations);
            ws.box_states = concat_cols({ws.boxes, ws.locations});
        }
        if (ab.visual_context == VisualContext::global) ws.image = encode_image(encoders_, scene.image_feature, mode);
        if (ab.history == HistoryMode::lstm) ws.history = HistoryStack(&history_stack_);
        return ws;
    }

    /// Decision probabilities for every box (spatial order, M x 1) for the
    /// phrase handled at step t, given the current history.
    Tensor decide_step(const Workspace& ws, std::size_t t, const Mode& mode) const {
        if (t >= ws.num_steps()) throw InputError("step " + std::to_string(t) + " out of range");
        std::size_t m = ws.num_boxes();
        const auto& ab = cfg_.ablation;
        std::vector<Tensor> parts{repeat_rows(ws.phrase_states[t], m), ws.box_states};
        if (ab.history == HistoryMode::lstm) parts.push_back(repeat_rows(ws.history.top(), m));
        if (ab.visual_context == VisualContext::global) parts.push_back(repeat_rows(ws.image, m));
        auto psi = dropout(concat_cols(parts), cfg_.head_dropout, mode.training, mode.rng);
        return sigmoid(head_.forward(psi));
    }

    /// Pushes the pairs (phrase at step t, box) for the given spatial box
    /// positions, which must be ascending.
    void push_history(Workspace& ws, std::size_t t, const std::vector<std::size_t>& spatial_boxes,
                      const Mode& mode) const {
        if (cfg_.ablation.history != HistoryMode::lstm || spatial_boxes.empty()) return;
        if (!std::is_sorted(spatial_boxes.begin(), spatial_boxes.end()))
            throw InputError("history entries must be pushed left to right");
        ws.history.push(slice_rows(ws.phrases, ws.order.at(t), 1), ws.boxes, ws.locations, spatial_boxes, mode);
    }

  private:
    ModelConfig cfg_;
    Encoders encoders_;
    TwoLayerLstm phrase_stack_;
    LstmCell box_forward_, box_backward_;
    TwoLayerLstm history_stack_;
    Mlp head_;
};

}  // namespace seqground
