#pragma once

// Run configuration: one JSON document with a section per stage of the
// pipeline. Command-line overrides use dotted keys, e.g.
// `stage1.epochs=3` or `model.ablation.order="l2r"`.

#include <fstream>
#include <string>

#include <json.hpp>

#include "seqground/baselines.hpp"
#include "seqground/synth.hpp"
#include "seqground/trainer.hpp"

namespace seqground {

inline void to_json(nlohmann::json& j, const PretrainConfig& c) {
    j = {{"margin", c.margin},       {"batch_size", c.batch_size}, {"learning_rate", c.learning_rate},
         {"grad_clip", c.grad_clip}, {"epochs", c.epochs},         {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, PretrainConfig& c) {
    PretrainConfig d;
    c.margin = j.value("margin", d.margin);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.grad_clip = j.value("grad_clip", d.grad_clip);
    c.epochs = j.value("epochs", d.epochs);
    c.seed = j.value("seed", d.seed);
}

struct EvalConfig {
    double threshold = 0.5;
    double nms_iou = 0.3;
    bool unguided = false;
    BoxSource source = BoxSource::proposals;

    EvalOptions options() const {
        EvalOptions o;
        o.source = source;
        o.decode.threshold = threshold;
        o.decode.guided = !unguided;
        o.nms_iou = nms_iou;
        return o;
    }
};

NLOHMANN_JSON_SERIALIZE_ENUM(BoxSource, {{BoxSource::ground_truth, "gt"}, {BoxSource::proposals, "proposals"}})

inline void to_json(nlohmann::json& j, const EvalConfig& c) {
    j = {{"threshold", c.threshold}, {"nms_iou", c.nms_iou}, {"unguided", c.unguided}, {"source", c.source}};
}

inline void from_json(const nlohmann::json& j, EvalConfig& c) {
    EvalConfig d;
    c.threshold = j.value("threshold", d.threshold);
    c.nms_iou = j.value("nms_iou", d.nms_iou);
    c.unguided = j.value("unguided", d.unguided);
    c.source = j.value("source", d.source);
}

struct RunConfig {
    std::uint64_t seed = 7;
    WorldSpec world;
    ModelConfig model;
    PretrainConfig pretrain;
    TrainConfig stage1 = TrainConfig::for_stage(1);
    TrainConfig stage2 = TrainConfig::for_stage(2);
    EvalConfig eval;
    std::vector<std::string> presets = AblationConfig::preset_names();
    std::vector<double> slack_grid = default_slack_grid();

    /// Derives every component seed from the run seed.
    void apply_seed() {
        world.seed = seed;
        pretrain.seed = seed + 1;
        stage1.seed = seed + 2;
        stage2.seed = seed + 3;
        model.ablation.order_seed = seed + 4;
    }

    void validate() const {
        world.validate();
        model.validate();
        pretrain.validate();
        stage1.validate();
        stage2.validate();
        if (stage1.stage != 1 || stage2.stage != 2) throw ConfigError("stage1/stage2 sections carry the wrong stage");
        if (eval.nms_iou < 0.0 || eval.nms_iou > 1.0) throw ConfigError("nms_iou must lie in [0, 1]");
    }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
    j = {{"seed", c.seed},       {"world", c.world},   {"model", c.model},     {"pretrain", c.pretrain},
         {"stage1", c.stage1},   {"stage2", c.stage2}, {"eval", c.eval},       {"presets", c.presets},
         {"slack_grid", c.slack_grid}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
    RunConfig d;
    c.seed = j.value("seed", d.seed);
    c.world = j.value("world", d.world);
    c.model = j.value("model", d.model);
    c.pretrain = j.value("pretrain", d.pretrain);
    c.stage1 = j.value("stage1", d.stage1);
    c.stage2 = j.value("stage2", d.stage2);
    c.eval = j.value("eval", d.eval);
    c.presets = j.value("presets", d.presets);
    c.slack_grid = j.value("slack_grid", d.slack_grid);
}

/// Applies `a.b.c=value`. The value is parsed as JSON when possible and
/// taken as a string otherwise.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
    std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
    nlohmann::json value;
    try {
        value = nlohmann::json::parse(raw);
    } catch (const nlohmann::json::exception&) {
        value = raw;
    }
    nlohmann::json* node = &j;
    std::size_t start = 0;
    while (true) {
        auto dot = key.find('.', start);
        std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
        if (!node->is_object()) throw ConfigError("override key '" + key + "' descends into a non-object");
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        if (node->is_null()) *node = nlohmann::json::object();
        start = dot + 1;
    }
}

inline nlohmann::json load_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path + "'");
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
}

inline void save_json_file(const std::string& path, const nlohmann::json& j) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write '" + path + "'");
    os << j.dump(2) << '\n';
}

/// Rejects keys that the canonical document does not have, so a typo in a
/// file or override cannot be silently ignored.
inline void check_known_keys(const nlohmann::json& given, const nlohmann::json& canonical,
                             const std::string& path = "") {
    if (!given.is_object() || !canonical.is_object()) return;
    for (const auto& [key, value] : given.items()) {
        std::string name = path.empty() ? key : path + "." + key;
        if (!canonical.contains(key)) throw ConfigError("unknown config key '" + name + "'");
        check_known_keys(value, canonical.at(key), name);
    }
}

/// Resolves a config from an optional file plus overrides. Values parsed
/// from the file or overrides are checked by RunConfig::validate().
inline RunConfig resolve_config(const nlohmann::json& file, const std::vector<std::string>& overrides) {
    const nlohmann::json canonical = RunConfig{};
    nlohmann::json j = canonical;
    j.merge_patch(file);
    for (const auto& o : overrides) apply_override(j, o);
    check_known_keys(j, canonical);
    RunConfig c;
    try {
        c = j.get<RunConfig>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid config: ") + e.what());
    }
    return c;
}

}  // namespace seqground
